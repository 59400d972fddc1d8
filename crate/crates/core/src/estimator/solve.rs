use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};

use super::{camera_pose_opt, EstimatorState, VoTrack};
use crate::dfn::AccelerationModel;
use crate::dynamics::GravityVector;
use crate::error::{Error, Result};
use crate::geometry::{hat, se3_left_jacobian_inv, se3_right_jacobian_inv, Mat3, Mat6, Rotation, Vec3, Vec6};
use crate::spline::KinematicSample;

const GLOBALS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Relative cost decrease below which the solve stops.
    pub tol_cost: f64,
    /// Gradient infinity-norm below which the solve stops.
    pub tol_grad: f64,
    /// Use a Huber loss (scale from the median residual) instead of squares.
    pub huber: bool,
    pub huber_k: f64,
    /// Base spline knot spacing (s).
    pub knot_dt: f64,
    /// Use every `stride`-th VO sample.
    pub stride: usize,
    /// Weight of the angular residual rows.
    pub angular_weight: f64,
    /// Keep λ at its initial value (known scale).
    pub fix_scale: bool,
    /// Divide the linear residual rows by λ, measuring them in VO units.
    /// Noise in the VO accelerations then cannot be traded against scale.
    pub vo_units: bool,
    /// Damping above which the solve gives up.
    pub max_damping: f64,
    /// Points of the initial log-scale grid over λ ∈ [1e-4, 1e2].
    pub lambda_grid: usize,
    pub init_lambda: Option<f64>,
    /// Initial `R_vo` as axis-angle.
    pub init_r_vo: Option<Vec3>,
    /// Starting point (relative-pose log) of the static-balance search.
    pub init_offset: Option<Vec6>,
    /// Scale candidates refined by a fixed-scale solve during
    /// initialization, on a log grid spanning a factor 8 either side of the
    /// coarse estimate.
    pub profile_points: usize,
    /// Iterations of each fixed-scale solve.
    pub profile_iterations: usize,
    /// Sample rate (Hz) the track is thinned to for those solves.
    pub profile_rate: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 200,
            tol_cost: 1e-10,
            tol_grad: 1e-8,
            huber: true,
            huber_k: 1.345,
            knot_dt: 0.5,
            stride: 1,
            angular_weight: 0.3,
            fix_scale: false,
            vo_units: true,
            max_damping: 1e8,
            lambda_grid: 61,
            init_lambda: None,
            init_r_vo: None,
            init_offset: None,
            profile_points: 13,
            profile_iterations: 5,
            profile_rate: 20.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        if !(self.knot_dt > 0.0) {
            return Err(Error::invalid("knot spacing must be positive"));
        }
        if !(self.tol_cost >= 0.0 && self.tol_grad >= 0.0) {
            return Err(Error::invalid("tolerances must be non-negative"));
        }
        if !(self.huber_k > 0.0) || !(self.angular_weight >= 0.0) {
            return Err(Error::invalid("huber_k must be positive and angular_weight non-negative"));
        }
        if !(self.profile_rate > 0.0) {
            return Err(Error::invalid("profile_rate must be positive"));
        }
        if self.lambda_grid < 3 {
            return Err(Error::invalid("lambda_grid needs at least 3 points"));
        }
        if let Some(l) = self.init_lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::invalid("init_lambda must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// 0 before the robust scale is re-estimated, 1 after.
    pub phase: usize,
    pub cost: f64,
    pub lambda: f64,
    pub damping: f64,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub state: EstimatorState,
    /// Accepted iterations; within a phase the cost never increases.
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations: usize,
    pub final_cost: f64,
    pub huber_delta: Option<f64>,
    pub rms_linear: f64,
    pub rms_angular: f64,
    pub samples_used: usize,
    pub samples_skipped: usize,
}

impl Solution {
    pub fn to_json(&self, knots_path: &str) -> serde_json::Value {
        let q = self.state.r_vo.to_quaternion();
        serde_json::json!({
            "lambda": self.state.lambda,
            "r_vo_opt": [q.i, q.j, q.k, q.w],
            "knots": knots_path,
            "knot_dt": self.state.base.dt(),
            "knot_t0": self.state.base.t0(),
            "iterations": self.iterations,
            "converged": self.converged,
            "final_cost": self.final_cost,
            "huber_delta": self.huber_delta,
            "rms_linear": self.rms_linear,
            "rms_angular": self.rms_angular,
            "samples_used": self.samples_used,
            "samples_skipped": self.samples_skipped,
            "cost_history": self.history.iter().map(|h| h.cost).collect::<Vec<_>>(),
        })
    }
}

pub(crate) struct Linearized {
    pub r: Vec6,
    pub globals: SMatrix<f64, 6, GLOBALS>,
    pub segment: usize,
    pub knots: Vec<Mat6>,
}

fn block_rotate(r: &Mat3, ang_w: f64) -> Mat6 {
    let mut m = Mat6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(r * ang_w));
    m
}

pub(crate) fn weighted_residual<M: AccelerationModel + ?Sized>(
    state: &EstimatorState,
    s: &KinematicSample,
    model: &M,
    g: &Vec3,
    ang_w: f64,
) -> Result<Vec6> {
    let tb = state.base.evaluate(s.t)?;
    let tc = camera_pose_opt(state, &s.pose);
    let n = model.predict(&(tb.inverse() * tc).log().to_vector());
    let rc = tc.rotation;
    let lin = rc * Vec3::new(n[0], n[1], n[2]) + g - state.r_vo * s.acceleration * state.lambda;
    let ang = rc * (Vec3::new(n[3], n[4], n[5]) - s.angular_acceleration) * ang_w;
    let mut r = Vec6::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&lin);
    r.fixed_rows_mut::<3>(3).copy_from(&ang);
    Ok(r)
}

/// Residual and its Jacobian w.r.t. `(log λ, η, ε_knots)` where `R_vo ← Exp(η)R_vo`
/// and `K_j ← K_j Exp(ε_j)`.
pub(crate) fn linearize<M: AccelerationModel + ?Sized>(
    state: &EstimatorState,
    s: &KinematicSample,
    model: &M,
    g: &Vec3,
    ang_w: f64,
) -> Result<Linearized> {
    let pj = state.base.pose_jacobian(s.t)?;
    let tc = camera_pose_opt(state, &s.pose);
    let delta = (pj.pose.inverse() * tc).log();
    let x = delta.to_vector();
    let n = model.predict(&x);
    let jn = model.input_jacobian(&x);
    let rc = *tc.rotation.matrix();
    let n_lin = Vec3::new(n[0], n[1], n[2]);
    let n_ang = Vec3::new(n[3], n[4], n[5]);
    let a_opt = state.r_vo * s.acceleration * state.lambda;
    let r_lin = rc * n_lin + g - a_opt;
    let r_ang = rc * (n_ang - s.angular_acceleration) * ang_w;

    let dr_ddelta = block_rotate(&rc, ang_w) * jn;
    let via_camera = dr_ddelta * se3_right_jacobian_inv(&delta);

    let mut globals = SMatrix::<f64, 6, GLOBALS>::zeros();
    // log λ scales the camera translation: right perturbation (0, R_cᵀ t_c)
    let mut zeta = Vec6::zeros();
    zeta.fixed_rows_mut::<3>(3).copy_from(&(rc.transpose() * tc.translation));
    let mut col = via_camera * zeta;
    for i in 0..3 {
        col[i] -= a_opt[i];
    }
    globals.set_column(0, &col);
    // η rotates the camera about the origin: right perturbation Ad(T_c⁻¹)(η, 0)
    let ad = tc.inverse().adjoint();
    let mut jeta = via_camera * ad.fixed_view::<6, 3>(0, 0);
    let lin_extra = -hat(&(rc * n_lin)) + hat(&a_opt);
    let ang_extra = -hat(&r_ang);
    jeta.fixed_view_mut::<3, 3>(0, 0).add_assign(&lin_extra);
    jeta.fixed_view_mut::<3, 3>(3, 0).add_assign(&ang_extra);
    globals.fixed_view_mut::<6, 3>(0, 1).copy_from(&jeta);

    let via_base = -(dr_ddelta * se3_left_jacobian_inv(&delta));
    let knots = pj.blocks.iter().map(|b| via_base * b).collect();

    let mut r = Vec6::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&r_lin);
    r.fixed_rows_mut::<3>(3).copy_from(&r_ang);
    Ok(Linearized {
        r,
        globals,
        segment: pj.segment,
        knots,
    })
}

trait AddAssignView {
    fn add_assign(&mut self, m: &Mat3);
}

impl<S> AddAssignView for nalgebra::Matrix<f64, nalgebra::U3, nalgebra::U3, S>
where
    S: nalgebra::StorageMut<f64, nalgebra::U3, nalgebra::U3>,
{
    fn add_assign(&mut self, m: &Mat3) {
        for r in 0..3 {
            for c in 0..3 {
                self[(r, c)] += m[(r, c)];
            }
        }
    }
}

fn huber(norm: f64, delta: f64) -> f64 {
    if norm <= delta {
        norm * norm
    } else {
        2.0 * delta * norm - delta * delta
    }
}

fn huber_weight(norm: f64, delta: f64) -> f64 {
    if norm <= delta {
        1.0
    } else {
        delta / norm
    }
}

/// Linear rows of a residual divided by λ.
pub(crate) fn to_vo_units(r: &mut Vec6, lambda: f64) {
    for i in 0..3 {
        r[i] /= lambda;
    }
}

/// `to_vo_units` applied to a linearization, including the extra
/// `−r_lin/λ` term of the `log λ` column.
pub(crate) fn linearized_to_vo_units(lin: &mut Linearized, lambda: f64) {
    for i in 0..3 {
        lin.globals[(i, 0)] -= lin.r[i];
        for c in 0..GLOBALS {
            lin.globals[(i, c)] /= lambda;
        }
        for b in lin.knots.iter_mut() {
            for c in 0..6 {
                b[(i, c)] /= lambda;
            }
        }
    }
    to_vo_units(&mut lin.r, lambda);
}

pub(crate) struct Problem<'a, M: AccelerationModel + ?Sized> {
    pub samples: Vec<&'a KinematicSample>,
    pub model: &'a M,
    pub g: Vec3,
    pub ang_w: f64,
    pub vo_units: bool,
}

impl<'a, M: AccelerationModel + ?Sized> Problem<'a, M> {
    pub fn new(vo: &'a VoTrack, model: &'a M, g: &GravityVector, cfg: &SolverConfig, state: &EstimatorState) -> (Self, usize) {
        let (lo, hi) = state.base.domain();
        let mut skipped = 0;
        let samples = vo
            .samples
            .iter()
            .step_by(cfg.stride)
            .filter(|s| {
                let ok = state.base.contains(s.t);
                if !ok {
                    skipped += 1;
                }
                ok
            })
            .collect();
        if skipped > 0 {
            log::warn!("{skipped} VO samples fall outside the base spline domain [{lo}, {hi}] and are ignored");
        }
        (
            Problem {
                samples,
                model,
                g: g.vector(),
                ang_w: cfg.angular_weight,
                vo_units: cfg.vo_units,
            },
            skipped,
        )
    }

    fn residual(&self, state: &EstimatorState, s: &KinematicSample) -> Result<Vec6> {
        let mut r = weighted_residual(state, s, self.model, &self.g, self.ang_w)?;
        if self.vo_units {
            to_vo_units(&mut r, state.lambda);
        }
        Ok(r)
    }

    pub fn norms(&self, state: &EstimatorState) -> Result<Vec<f64>> {
        self.samples.iter().map(|s| Ok(self.residual(state, s)?.norm())).collect()
    }

    pub fn cost(&self, state: &EstimatorState, delta: f64) -> Result<f64> {
        let mut c = 0.0;
        for s in &self.samples {
            c += huber(self.residual(state, s)?.norm(), delta);
        }
        Ok(c)
    }

    fn normal_equations(&self, state: &EstimatorState, delta: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let nk = state.base.knots().len();
        let k = state.base.order();
        let p = GLOBALS + 6 * nk;
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut grad = DVector::<f64>::zeros(p);
        let width = GLOBALS + 6 * k;
        let mut j = DMatrix::<f64>::zeros(6, width);
        for s in &self.samples {
            let mut lin = linearize(state, s, self.model, &self.g, self.ang_w)?;
            if self.vo_units {
                linearized_to_vo_units(&mut lin, state.lambda);
            }
            let w = huber_weight(lin.r.norm(), delta);
            j.view_mut((0, 0), (6, GLOBALS)).copy_from(&lin.globals);
            for (m, b) in lin.knots.iter().enumerate() {
                j.view_mut((0, GLOBALS + 6 * m), (6, 6)).copy_from(b);
            }
            let jtj = j.transpose() * &j * w;
            let jtr = j.transpose() * lin.r * w;
            let index = |c: usize| if c < GLOBALS { c } else { GLOBALS + 6 * lin.segment + (c - GLOBALS) };
            for a in 0..width {
                let ia = index(a);
                grad[ia] += jtr[a];
                for b in 0..width {
                    h[(ia, index(b))] += jtj[(a, b)];
                }
            }
        }
        Ok((h, grad))
    }
}

/// Largest difference between the analytic residual Jacobian and central
/// differences (step `h`) over `samples`, relative to the largest
/// finite-difference entry of each sample.
pub fn jacobian_mismatch<M: AccelerationModel + ?Sized>(
    state: &EstimatorState,
    samples: &[KinematicSample],
    model: &M,
    g: &GravityVector,
    cfg: &SolverConfig,
    h: f64,
) -> Result<f64> {
    let g = g.vector();
    let p = GLOBALS + 6 * state.base.knots().len();
    let res = |st: &EstimatorState, s: &KinematicSample| -> Result<Vec6> {
        let mut r = weighted_residual(st, s, model, &g, cfg.angular_weight)?;
        if cfg.vo_units {
            to_vo_units(&mut r, st.lambda);
        }
        Ok(r)
    };
    let mut worst = 0.0f64;
    for s in samples {
        let mut lin = linearize(state, s, model, &g, cfg.angular_weight)?;
        if cfg.vo_units {
            linearized_to_vo_units(&mut lin, state.lambda);
        }
        let mut dense = DMatrix::<f64>::zeros(6, p);
        dense.view_mut((0, 0), (6, GLOBALS)).copy_from(&lin.globals);
        for (m, b) in lin.knots.iter().enumerate() {
            dense.view_mut((0, GLOBALS + 6 * (lin.segment + m)), (6, 6)).copy_from(b);
        }
        let mut fd = DMatrix::<f64>::zeros(6, p);
        for c in 0..p {
            let mut e = DVector::zeros(p);
            e[c] = h;
            let d = (res(&retract(state, &e), s)? - res(&retract(state, &(-e)), s)?) / (2.0 * h);
            fd.set_column(c, &d);
        }
        let scale = fd.amax().max(f64::MIN_POSITIVE);
        worst = worst.max((&dense - &fd).amax() / scale);
    }
    Ok(worst)
}

pub(crate) fn retract(state: &EstimatorState, step: &DVector<f64>) -> EstimatorState {
    let mut out = state.clone();
    out.lambda = (state.lambda.ln() + step[0]).exp();
    out.r_vo = Rotation::exp(&Vec3::new(step[1], step[2], step[3])) * state.r_vo;
    out.base.retract(&step.as_slice()[GLOBALS..]);
    out
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub(crate) struct PhaseResult {
    pub state: EstimatorState,
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub(crate) fn run_phase<M: AccelerationModel + ?Sized>(
    problem: &Problem<M>,
    init: EstimatorState,
    delta: f64,
    cfg: &SolverConfig,
    phase: usize,
    freeze_scale: bool,
    history: &mut Vec<IterationRecord>,
) -> Result<PhaseResult> {
    let mut state = init;
    let mut cost = problem.cost(&state, delta)?;
    if !cost.is_finite() {
        return Err(Error::invalid("initial cost is not finite"));
    }
    history.push(IterationRecord {
        iteration: 0,
        phase,
        cost,
        lambda: state.lambda,
        damping: 0.0,
    });
    let mut mu = 1e-4;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let (mut h, mut grad) = problem.normal_equations(&state, delta)?;
        if freeze_scale {
            h.row_mut(0).fill(0.0);
            h.column_mut(0).fill(0.0);
            h[(0, 0)] = 1.0;
            grad[0] = 0.0;
        }
        // the cost is Σρ, whose gradient is twice Jᵀr
        if 2.0 * grad.amax() < cfg.tol_grad {
            converged = true;
            break;
        }
        let p = h.nrows();
        let max_diag = (0..p).map(|i| h[(i, i)]).fold(0.0, f64::max).max(1e-300);
        let mut scale: Vec<f64> = (0..p).map(|i| h[(i, i)].max(1e-9 * max_diag)).collect();
        // isotropic damping on the rotation block keeps the solve equivariant
        // under rotations of the metric frame
        let rot = (scale[1] + scale[2] + scale[3]) / 3.0;
        scale[1..4].fill(rot);
        let rhs = -&grad;
        iterations += 1;
        let mut accepted = false;
        loop {
            let mut hd = h.clone();
            for i in 0..p {
                hd[(i, i)] += mu * scale[i];
            }
            let step = match hd.cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    mu *= 10.0;
                    if mu > cfg.max_damping {
                        break;
                    }
                    continue;
                }
            };
            let trial = retract(&state, &step);
            let trial_cost = problem.cost(&trial, delta)?;
            if trial_cost.is_finite() && trial_cost <= cost {
                let rel = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                state = trial;
                cost = trial_cost;
                mu = (mu / 3.0).max(1e-12);
                history.push(IterationRecord {
                    iteration: iterations,
                    phase,
                    cost,
                    lambda: state.lambda,
                    damping: mu,
                });
                accepted = true;
                if rel < cfg.tol_cost {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
            if mu > cfg.max_damping {
                break;
            }
        }
        if !accepted {
            log::warn!("damping exceeded {:.0e}; returning best state", cfg.max_damping);
            break;
        }
        if converged {
            break;
        }
    }
    Ok(PhaseResult {
        state,
        cost,
        converged,
        iterations,
    })
}

/// Levenberg–Marquardt over `(log λ, R_vo, base knots)`.
pub fn solve<M: AccelerationModel + ?Sized>(
    vo: &VoTrack,
    model: &M,
    g: &GravityVector,
    init: &EstimatorState,
    cfg: &SolverConfig,
) -> Result<Solution> {
    cfg.validate()?;
    let (problem, skipped) = Problem::new(vo, model, g, cfg, init);
    if problem.samples.is_empty() {
        return Err(Error::invalid("no VO samples inside the base spline domain"));
    }
    let mut history = Vec::new();
    let (result, delta) = if cfg.huber {
        let mut norms = problem.norms(init)?;
        let d0 = (cfg.huber_k * median(&mut norms)).max(1e-12);
        let first = run_phase(&problem, init.clone(), d0, cfg, 0, cfg.fix_scale, &mut history)?;
        let mut norms = problem.norms(&first.state)?;
        let d1 = (cfg.huber_k * median(&mut norms)).max(1e-12);
        let iters = first.iterations;
        let mut second = run_phase(&problem, first.state, d1, cfg, 1, cfg.fix_scale, &mut history)?;
        second.iterations += iters;
        second.converged &= first.converged || second.iterations > iters;
        (second, Some(d1))
    } else {
        (run_phase(&problem, init.clone(), f64::INFINITY, cfg, 0, cfg.fix_scale, &mut history)?, None)
    };

    let mut lin = 0.0;
    let mut ang = 0.0;
    for s in &problem.samples {
        let r = weighted_residual(&result.state, s, model, &problem.g, 1.0)?;
        lin += r.fixed_rows::<3>(0).norm_squared();
        ang += r.fixed_rows::<3>(3).norm_squared();
    }
    let n = problem.samples.len() as f64;
    Ok(Solution {
        state: result.state,
        history,
        converged: result.converged,
        iterations: result.iterations,
        final_cost: result.cost,
        huber_delta: delta,
        rms_linear: (lin / n).sqrt(),
        rms_angular: (ang / n).sqrt(),
        samples_used: problem.samples.len(),
        samples_skipped: skipped,
    })
}
