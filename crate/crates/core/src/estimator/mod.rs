//! Scale, gravity and base-trajectory recovery from scale-ambiguous camera
//! poses.
//!
//! The camera pose in the gravity-aligned metric frame is obtained from a VO
//! pose as `(R_vo·R_c, λ·R_vo·t_c)`. The base is a cumulative B-spline whose
//! control poses, together with `λ` and `R_vo`, are chosen so that the
//! acceleration predicted from the base-to-camera deformation matches the
//! scaled VO acceleration.

mod init;
mod perturb;
mod solve;

pub use init::{initialize, nominal_offset};
pub use perturb::{perturb, PerturbConfig, Perturbed};
pub use solve::{jacobian_mismatch, solve, IterationRecord, Solution, SolverConfig};

use crate::dfn::AccelerationModel;
use crate::dynamics::GravityVector;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Rotation, Vec3, Vec6};
use crate::spline::{fit_with, FitOptions, KinematicSample, SplineTrajectory, DEFAULT_ORDER};

/// Scale-ambiguous camera track with its kinematics.
#[derive(Clone, Debug)]
pub struct VoTrack {
    /// Input poses in the VO frame.
    pub poses: Vec<(f64, Pose)>,
    /// Smoothing spline through `poses`, when the kinematics come from a fit.
    pub spline: Option<SplineTrajectory>,
    pub fit_rms: Option<f64>,
    /// Pose, world linear acceleration and body angular acceleration at each
    /// timestamp of `poses`.
    pub samples: Vec<KinematicSample>,
}

impl VoTrack {
    /// Fits a cubic spline with knot spacing `knot_dt` and differentiates it
    /// at every input timestamp.
    pub fn fit(poses: Vec<(f64, Pose)>, knot_dt: f64) -> Result<Self> {
        let fit = fit_with(&poses, DEFAULT_ORDER, knot_dt, &FitOptions::default())?;
        if !fit.converged {
            log::warn!("camera spline fit did not converge (rms {:.3e})", fit.rms);
        }
        let samples = poses
            .iter()
            .map(|(t, _)| fit.spline.derivatives(*t))
            .collect::<Result<Vec<_>>>()?;
        Ok(VoTrack {
            poses,
            spline: Some(fit.spline),
            fit_rms: Some(fit.rms),
            samples,
        })
    }

    /// Track whose kinematics are known exactly.
    pub fn from_samples(samples: Vec<KinematicSample>) -> Self {
        VoTrack {
            poses: samples.iter().map(|s| (s.t, s.pose)).collect(),
            spline: None,
            fit_rms: None,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.t, self.samples.last()?.t))
    }

    /// Sum over axes of the variance of the linear acceleration.
    pub fn acceleration_variance(&self) -> f64 {
        let n = self.samples.len().max(1) as f64;
        let mean: Vec3 = self.samples.iter().map(|s| s.acceleration).sum::<Vec3>() / n;
        self.samples.iter().map(|s| (s.acceleration - mean).norm_squared()).sum::<f64>() / n
    }
}

/// The optimization variables.
#[derive(Clone, Debug)]
pub struct EstimatorState {
    pub lambda: f64,
    pub r_vo: Rotation,
    pub base: SplineTrajectory,
}

impl EstimatorState {
    pub fn new(lambda: f64, r_vo: Rotation, base: SplineTrajectory) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("scale must be positive, got {lambda}")));
        }
        Ok(EstimatorState { lambda, r_vo, base })
    }

    /// Gravity direction expressed in the VO frame.
    pub fn gravity_in_vo(&self, g: &GravityVector) -> Vec3 {
        self.r_vo.inverse() * g.vector()
    }
}

/// Knot grid used for the base spline of a track: starts at the first sample
/// and covers the last one.
pub fn base_grid(track: &VoTrack, knot_dt: f64) -> Result<(f64, usize)> {
    let (a, b) = track
        .time_span()
        .ok_or_else(|| Error::invalid("empty VO track"))?;
    let segments = SplineTrajectory::knots_for_duration(DEFAULT_ORDER, knot_dt, b - a) + 1 - DEFAULT_ORDER;
    Ok((a, segments))
}

/// Maps a VO pose into the gravity-aligned metric frame.
pub fn camera_pose_opt(state: &EstimatorState, vo: &Pose) -> Pose {
    Pose::new(state.r_vo * vo.rotation, state.r_vo * vo.translation * state.lambda)
}

/// Six-vector residual `(linear, angular)` of one sample: predicted minus
/// observed acceleration, both in the metric frame.
pub fn residual<M: AccelerationModel + ?Sized>(
    state: &EstimatorState,
    sample: &KinematicSample,
    model: &M,
    g: &GravityVector,
) -> Result<Vec6> {
    let tb = state.base.evaluate(sample.t)?;
    let tc = camera_pose_opt(state, &sample.pose);
    let n = model.predict(&(tb.inverse() * tc).log().to_vector());
    let rc = tc.rotation;
    let lin = rc * Vec3::new(n[0], n[1], n[2]) + g.vector() - state.r_vo * sample.acceleration * state.lambda;
    let ang = rc * (Vec3::new(n[3], n[4], n[5]) - sample.angular_acceleration);
    let mut r = Vec6::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&lin);
    r.fixed_rows_mut::<3>(3).copy_from(&ang);
    Ok(r)
}

#[cfg(test)]
mod tests;
