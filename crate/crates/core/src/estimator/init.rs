use nalgebra::Matrix6;

use rayon::prelude::*;

use super::solve::{median, run_phase, Problem};
use super::{base_grid, EstimatorState, SolverConfig, VoTrack};
use crate::dfn::AccelerationModel;
use crate::dynamics::GravityVector;
use crate::error::{Error, Result};
use crate::geometry::{rotation_between, Pose, Rotation, Twist, Vec3, Vec6};
use crate::spline::{fit_with, FitOptions, KinematicSample, SplineTrajectory, DEFAULT_ORDER};

const LOG10_LAMBDA_RANGE: (f64, f64) = (-4.0, 2.0);

fn static_balance<M: AccelerationModel + ?Sized>(model: &M, g: &Vec3, x: &Vec6) -> Vec6 {
    let n = model.predict(x);
    let gc = Rotation::exp(&Vec3::new(x[0], x[1], x[2])).inverse() * *g;
    Vec6::new(n[0] + gc[0], n[1] + gc[1], n[2] + gc[2], n[3], n[4], n[5])
}

/// Camera pose relative to an upright, static base at which the model
/// predicts a camera at rest: `N(Δ) = (−R(Δ)ᵀg, 0)`.
pub fn nominal_offset<M: AccelerationModel + ?Sized>(model: &M, g: &GravityVector, start: &Vec6) -> Result<Pose> {
    let g = g.vector();
    let mut x = *start;
    let mut f = static_balance(model, &g, &x);
    let mut mu = 1e-3;
    for _ in 0..200 {
        if f.norm() < 1e-12 {
            break;
        }
        let h = 1e-6;
        let mut j = Matrix6::zeros();
        for c in 0..6 {
            let mut a = x;
            let mut b = x;
            a[c] += h;
            b[c] -= h;
            j.set_column(c, &((static_balance(model, &g, &a) - static_balance(model, &g, &b)) / (2.0 * h)));
        }
        let jtj = j.transpose() * j;
        let jtf = j.transpose() * f;
        let mut improved = false;
        while mu < 1e10 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&-jtf)) else {
                mu *= 10.0;
                continue;
            };
            let trial = x + step;
            let ft = static_balance(model, &g, &trial);
            if ft.norm() < f.norm() {
                x = trial;
                f = ft;
                mu = (mu / 10.0).max(1e-12);
                improved = true;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let scale = 1.0 + g.norm();
    if !(f.norm() < 1e-3 * scale) {
        return Err(Error::InitializationFailed(format!(
            "the acceleration model has no static balance near the starting offset (residual {:.3e})",
            f.norm()
        )));
    }
    Ok(Pose::exp(&Twist::from_vector(&x)))
}

struct ScaleProbe<'a, M: AccelerationModel + ?Sized> {
    vo: &'a VoTrack,
    model: &'a M,
    g: f64,
    offset: Pose,
    /// Camera relative to the low-passed track, in VO units.
    high_pass: Vec<Pose>,
    ang_w: f64,
}

impl<M: AccelerationModel + ?Sized> ScaleProbe<'_, M> {
    /// Cost at scale `λ` with `R_vo` chosen optimally, normalized so that
    /// the linear part is measured in VO units.
    fn evaluate(&self, lambda: f64) -> (f64, Vec3) {
        let mut sum_u = Vec3::zeros();
        let mut sum_sq = 0.0;
        let mut ang = 0.0;
        for (s, hf) in self.vo.samples.iter().zip(&self.high_pass) {
            let rel = self.offset * Pose::new(hf.rotation, hf.translation * lambda);
            let n = self.model.predict(&rel.log().to_vector());
            let u = s.pose.rotation * Vec3::new(n[0], n[1], n[2]) - s.acceleration * lambda;
            sum_u += u;
            sum_sq += u.norm_squared();
            ang += (Vec3::new(n[3], n[4], n[5]) - s.angular_acceleration).norm_squared();
        }
        let n = self.vo.samples.len() as f64;
        let lin = sum_sq + n * self.g * self.g - 2.0 * self.g * sum_u.norm();
        (lin / (lambda * lambda) + self.ang_w * self.ang_w * ang, sum_u)
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > 1e-6 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Initial scale, VO-to-metric rotation and base knots.
///
/// The base is taken to follow a low-passed copy of the camera track, offset
/// by the model's static balance pose. For each candidate scale the camera's
/// high-frequency motion about that track sets the deformation, and the
/// scale (log-grid over `[1e-4, 1e2]`, then refined) is the one whose
/// predicted accelerations best explain the VO accelerations. The rotation
/// aligns the mean residual acceleration with gravity; yaw is left at the
/// minimal rotation.
pub fn initialize<M: AccelerationModel + ?Sized>(
    vo: &VoTrack,
    model: &M,
    g: &GravityVector,
    cfg: &SolverConfig,
) -> Result<EstimatorState> {
    cfg.validate()?;
    if vo.len() < 2 * DEFAULT_ORDER {
        return Err(Error::InitializationFailed(format!("only {} VO samples", vo.len())));
    }
    let (a, b) = vo.time_span().expect("non-empty");
    let span = (b - a).max(f64::MIN_POSITIVE);
    let typical_accel = vo.samples.iter().map(|s| s.pose.translation.norm()).fold(0.0, f64::max) / (span * span);
    if !(vo.acceleration_variance() > 1e-12 * (1.0 + typical_accel * typical_accel)) {
        return Err(Error::InitializationFailed(
            "the camera track has (near) zero acceleration variance; scale and gravity are unobservable \
             without excitation, record a sequence with richer motion"
                .into(),
        ));
    }
    let start = cfg.init_offset.unwrap_or_else(Vec6::zeros);
    let offset = nominal_offset(model, g, &start)?;

    let (t0, segments) = base_grid(vo, cfg.knot_dt)?;
    let camera: Vec<(f64, Pose)> = vo.samples.iter().map(|s| (s.t, s.pose)).collect();
    let opts = FitOptions {
        t0: Some(t0),
        segments: Some(segments),
        ..FitOptions::default()
    };
    let low_pass = fit_with(&camera, DEFAULT_ORDER, cfg.knot_dt, &opts)?.spline;
    let high_pass = camera
        .iter()
        .map(|(t, p)| Ok(low_pass.evaluate(*t)?.inverse() * *p))
        .collect::<Result<Vec<_>>>()?;

    let probe = ScaleProbe {
        vo,
        model,
        g: g.vector().norm(),
        offset,
        high_pass,
        ang_w: cfg.angular_weight,
    };
    let inv_offset = offset.inverse();
    let seed = |lambda: f64| -> Result<EstimatorState> {
        let r_vo = match cfg.init_r_vo {
            Some(v) => Rotation::exp(&v),
            None => {
                let (_, sum_u) = probe.evaluate(lambda);
                if !(sum_u.norm() > 1e-12) {
                    return Err(Error::InitializationFailed(
                        "mean specific force vanishes; gravity direction undetermined".into(),
                    ));
                }
                rotation_between(&sum_u, &(-g.vector()))
            }
        };
        let knots = low_pass
            .knots()
            .iter()
            .map(|k| Pose::new(r_vo * k.rotation, r_vo * k.translation * lambda) * inv_offset)
            .collect();
        let base = SplineTrajectory::new(DEFAULT_ORDER, cfg.knot_dt, t0, knots)?;
        EstimatorState::new(lambda, r_vo, base)
    };
    if let Some(l) = cfg.init_lambda {
        return seed(l);
    }

    let (lo, hi) = LOG10_LAMBDA_RANGE;
    let n = cfg.lambda_grid;
    let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let costs: Vec<f64> = grid.iter().map(|&e| probe.evaluate(10f64.powf(e)).0).collect();
    let best = argmin(&costs).ok_or_else(|| Error::InitializationFailed("scale search produced no finite cost".into()))?;
    let left = grid[best.saturating_sub(1)];
    let right = grid[(best + 1).min(n - 1)];
    let coarse = golden_section(|e| probe.evaluate(10f64.powf(e)).0, left, right);
    log::debug!("coarse initial scale {:.6}", 10f64.powf(coarse));
    if cfg.profile_points == 0 {
        return seed(10f64.powf(coarse));
    }

    // refine by solving for the base and rotation at fixed scale on a thinned track
    let stride = ((vo.len() - 1) as f64 / span / cfg.profile_rate).round().max(1.0) as usize;
    let thinned: Vec<&KinematicSample> = vo.samples.iter().step_by(stride).collect();
    let inner = SolverConfig {
        max_iters: cfg.profile_iterations,
        ..cfg.clone()
    };
    let profile = |log_l: f64| -> Option<(f64, EstimatorState)> {
        let lambda = 10f64.powf(log_l);
        let state = seed(lambda).ok()?;
        // linear rows in VO units so that costs compare across scales
        let problem = Problem {
            samples: thinned.clone(),
            model,
            g: g.vector(),
            ang_w: cfg.angular_weight,
            vo_units: true,
        };
        let delta = if cfg.huber {
            (cfg.huber_k * median(&mut problem.norms(&state).ok()?)).max(1e-12)
        } else {
            f64::INFINITY
        };
        let fit = run_phase(&problem, state, delta, &inner, 0, true, &mut Vec::new()).ok()?;
        let mut sq: Vec<f64> = problem.norms(&fit.state).ok()?.iter().map(|r| r * r).collect();
        sq.sort_by(f64::total_cmp);
        let keep = (sq.len() * 9 / 10).max(1);
        let cost = sq[..keep].iter().sum::<f64>() / keep as f64;
        cost.is_finite().then_some((cost, fit.state))
    };
    let m = cfg.profile_points;
    let half = 8f64.log10();
    let offsets: Vec<f64> = if m == 1 {
        vec![coarse]
    } else {
        (0..m).map(|i| coarse - half + 2.0 * half * i as f64 / (m - 1) as f64).collect()
    };
    let results: Vec<Option<(f64, EstimatorState)>> = offsets.par_iter().map(|&x| profile(x)).collect();
    let costs: Vec<f64> = results.iter().map(|r| r.as_ref().map_or(f64::INFINITY, |r| r.0)).collect();
    let Some(best) = argmin(&costs) else {
        return seed(10f64.powf(coarse));
    };
    let mut choice = results[best].clone().expect("finite cost");
    if best > 0 && best + 1 < m && costs[best - 1].is_finite() && costs[best + 1].is_finite() {
        let (c0, c1, c2) = (costs[best - 1], costs[best], costs[best + 1]);
        let h = offsets[1] - offsets[0];
        let curvature = c0 - 2.0 * c1 + c2;
        if curvature > 0.0 {
            let x = offsets[best] + 0.5 * h * (c0 - c2) / curvature;
            if let Some(refined) = profile(x) {
                if refined.0 < choice.0 {
                    choice = refined;
                }
            }
        }
    }
    log::info!("initial scale {:.6}", choice.1.lambda);
    Ok(choice.1)
}

fn argmin(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_finite())
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
}
