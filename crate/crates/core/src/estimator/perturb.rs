use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use super::VoTrack;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Rotation, Twist, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    /// Noise amplitude S: translation noise std is `S × bbox diagonal`,
    /// rotation noise std is `S` radians, per axis.
    pub noise: f64,
    /// Fraction of poses corrupted by outliers.
    pub outlier_ratio: f64,
    /// Outlier size, in meters for translation and radians for rotation.
    pub outlier_magnitude: f64,
    pub seed: u64,
    /// Global scale applied to the track; drawn log-uniform in [0.05, 0.6]
    /// when absent.
    pub global_scale: Option<f64>,
    /// Global rotation (axis-angle); uniformly random when absent.
    pub global_rotation: Option<Vec3>,
    /// Knot spacing of the camera smoothing spline (s).
    pub camera_knot_dt: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            noise: 0.0,
            outlier_ratio: 0.0,
            outlier_magnitude: 0.25,
            seed: 0,
            global_scale: None,
            global_rotation: None,
            camera_knot_dt: 0.1,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise amplitude must be non-negative"));
        }
        if !(0.0..=0.5).contains(&self.outlier_ratio) {
            return Err(Error::invalid("outlier ratio must be in [0, 0.5]"));
        }
        if !(self.outlier_magnitude >= 0.0 && self.outlier_magnitude.is_finite()) {
            return Err(Error::invalid("outlier magnitude must be non-negative"));
        }
        if let Some(s) = self.global_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("global scale must be positive"));
            }
        }
        if !(self.camera_knot_dt > 0.0) {
            return Err(Error::invalid("camera knot spacing must be positive"));
        }
        Ok(())
    }
}

/// A simulated VO track together with the transform that produced it.
#[derive(Clone, Debug)]
pub struct Perturbed {
    pub track: VoTrack,
    /// Scale `s` applied to metric translations; the true λ is `1/s`.
    pub scale: f64,
    /// Rotation applied to the metric frame; the true `R_vo` is its inverse.
    pub rotation: Rotation,
    /// Indices of the corrupted poses, ascending.
    pub outliers: Vec<usize>,
}

impl Perturbed {
    pub fn true_lambda(&self) -> f64 {
        1.0 / self.scale
    }
}

fn bbox_diagonal(poses: &[(f64, Pose)]) -> f64 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for (_, p) in poses {
        lo = lo.inf(&p.translation);
        hi = hi.sup(&p.translation);
    }
    (hi - lo).norm()
}

fn normal3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::from_fn(|_, _| rng.sample(StandardNormal))
}

fn unit3(rng: &mut ChaCha8Rng) -> Vec3 {
    let v: [f64; 3] = UnitSphere.sample(rng);
    Vec3::from(v)
}

/// Turns metric ground-truth camera poses into a noisy, scale-ambiguous,
/// arbitrarily rotated VO track.
pub fn perturb(gt: &[(f64, Pose)], cfg: &PerturbConfig) -> Result<Perturbed> {
    cfg.validate()?;
    if gt.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    let diag = bbox_diagonal(gt);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(1);
    let mut outlier_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    outlier_rng.set_stream(2);
    let mut global_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    global_rng.set_stream(3);

    let mut poses: Vec<(f64, Pose)> = gt
        .iter()
        .map(|(t, p)| {
            let rot = normal3(&mut noise_rng) * cfg.noise;
            let trans = normal3(&mut noise_rng) * (cfg.noise * diag);
            if cfg.noise == 0.0 {
                (*t, *p)
            } else {
                (*t, *p * Pose::exp(&Twist::new(rot, trans)))
            }
        })
        .collect();

    let count = (cfg.outlier_ratio * gt.len() as f64).round() as usize;
    let mut outliers = rand::seq::index::sample(&mut outlier_rng, gt.len(), count).into_vec();
    outliers.sort_unstable();
    for &i in &outliers {
        let rot = unit3(&mut outlier_rng) * cfg.outlier_magnitude;
        let trans = unit3(&mut outlier_rng) * cfg.outlier_magnitude;
        poses[i].1 = poses[i].1 * Pose::exp(&Twist::new(rot, trans));
    }

    let scale = match cfg.global_scale {
        Some(s) => s,
        None => (global_rng.random_range(0.05f64.ln()..0.6f64.ln())).exp(),
    };
    let rotation = match cfg.global_rotation {
        Some(v) => Rotation::exp(&v),
        None => {
            let q: [f64; 4] = std::array::from_fn(|_| global_rng.sample(StandardNormal));
            let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
            Rotation::from_quaternion(&q)
        }
    };
    for (_, p) in &mut poses {
        *p = Pose::new(rotation * p.rotation, rotation * p.translation * scale);
    }
    let track = VoTrack::fit(poses, cfg.camera_knot_dt)?;
    Ok(Perturbed {
        track,
        scale,
        rotation,
        outliers,
    })
}
