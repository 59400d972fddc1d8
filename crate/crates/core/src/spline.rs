//! Cumulative B-splines on SE(3) with uniform knots.
//!
//! A spline of order `k` over control poses `K_0 … K_N` is evaluated on
//! segment `i` (covering `[t0 + iΔt, t0 + (i+1)Δt)`) as
//!
//! ```text
//! T(t) = K_i · Π_{j=1}^{k-1} Exp(B̃_j(u) · Log(K_{i+j-1}⁻¹ K_{i+j})),   u = (t - t_i)/Δt
//! ```
//!
//! where `B̃_j` are the cumulative basis functions given by the blending matrix.

use nalgebra::{DMatrix, Matrix4};

use crate::error::{Error, Result};
use crate::geometry::{
    se3_left_jacobian_inv, se3_right_jacobian, se3_right_jacobian_inv, vee, Mat3, Mat6, Pose,
    Twist, Vec3, Vec6,
};
use crate::linalg::BandedSpd;

pub const DEFAULT_ORDER: usize = 4;
pub const MAX_ORDER: usize = 8;

/// Uniform-knot blending matrix. Row `s` holds the polynomial coefficients
/// (ascending powers of `u`) of basis function `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendingMatrix {
    order: usize,
    basis: DMatrix<f64>,
    cumulative: DMatrix<f64>,
}

fn binomial(n: i128, r: i128) -> i128 {
    if r < 0 || r > n {
        return 0;
    }
    let mut acc = 1i128;
    for i in 0..r {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

impl BlendingMatrix {
    pub fn new(order: usize) -> Result<Self> {
        if !(2..=MAX_ORDER).contains(&order) {
            return Err(Error::invalid(format!(
                "spline order must be in 2..={MAX_ORDER}, got {order}"
            )));
        }
        let k = order as i128;
        let fact: i128 = (1..k).product();
        // integer numerators, divided once at the end so entries are correctly rounded
        let mut num = vec![vec![0i128; order]; order];
        for (s, row) in num.iter_mut().enumerate() {
            let s = s as i128;
            for (n, entry) in row.iter_mut().enumerate() {
                let n = n as i128;
                let mut sum = 0i128;
                for l in s..k {
                    let sign = if (l - s) % 2 == 0 { 1 } else { -1 };
                    sum += sign * binomial(k, l - s) * (k - 1 - l).pow((k - 1 - n) as u32);
                }
                *entry = binomial(k - 1, n) * sum;
            }
        }
        let mut cum = num.clone();
        for s in (0..order - 1).rev() {
            for n in 0..order {
                cum[s][n] += cum[s + 1][n];
            }
        }
        let to_matrix = |v: &Vec<Vec<i128>>| {
            DMatrix::from_fn(order, order, |r, c| v[r][c] as f64 / fact as f64)
        };
        Ok(BlendingMatrix {
            order,
            basis: to_matrix(&num),
            cumulative: to_matrix(&cum),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn basis_matrix(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn cumulative_matrix(&self) -> &DMatrix<f64> {
        &self.cumulative
    }

    fn eval_rows(m: &DMatrix<f64>, u: f64, deriv: usize) -> [f64; MAX_ORDER] {
        let k = m.nrows();
        let mut out = [0.0; MAX_ORDER];
        for (s, o) in out.iter_mut().enumerate().take(k) {
            let mut acc = 0.0;
            // Horner on the `deriv`-th derivative of Σ_n m[s,n] u^n
            for n in (deriv..k).rev() {
                let mut c = m[(s, n)];
                for d in 0..deriv {
                    c *= (n - d) as f64;
                }
                acc = acc * u + c;
            }
            *o = acc;
        }
        out
    }

    /// Non-cumulative basis values at `u ∈ [0, 1]`.
    pub fn basis(&self, u: f64) -> Vec<f64> {
        Self::eval_rows(&self.basis, u, 0)[..self.order].to_vec()
    }

    /// Cumulative basis values at `u ∈ [0, 1]`.
    pub fn cumulative(&self, u: f64) -> Vec<f64> {
        Self::eval_rows(&self.cumulative, u, 0)[..self.order].to_vec()
    }

    fn cumulative_with_derivatives(&self, u: f64) -> [[f64; MAX_ORDER]; 3] {
        [
            Self::eval_rows(&self.cumulative, u, 0),
            Self::eval_rows(&self.cumulative, u, 1),
            Self::eval_rows(&self.cumulative, u, 2),
        ]
    }
}

pub fn blending_matrix(order: usize) -> Result<BlendingMatrix> {
    BlendingMatrix::new(order)
}

/// Pose and world/body-frame derivatives at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KinematicSample {
    pub t: f64,
    pub pose: Pose,
    /// World-frame linear velocity (m/s).
    pub velocity: Vec3,
    /// World-frame linear acceleration (m/s²).
    pub acceleration: Vec3,
    /// Body-frame angular velocity (rad/s).
    pub angular_velocity: Vec3,
    /// Body-frame angular acceleration (rad/s²).
    pub angular_acceleration: Vec3,
}

impl KinematicSample {
    pub fn at_rest(t: f64, pose: Pose) -> Self {
        KinematicSample {
            t,
            pose,
            ..Default::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        let p = &self.pose;
        p.translation
            .iter()
            .chain(p.rotation.matrix().iter())
            .chain(self.velocity.iter())
            .chain(self.acceleration.iter())
            .chain(self.angular_velocity.iter())
            .chain(self.angular_acceleration.iter())
            .all(|x| x.is_finite())
            && self.t.is_finite()
    }
}

/// Sensitivity of `T(t)` to right-perturbations of the active control poses.
///
/// Perturbing `K_{segment+m} ← K_{segment+m} · Exp(ε_m)` moves the spline to
/// `T(t) · Exp(Σ_m blocks[m] · ε_m)` to first order.
#[derive(Clone, Debug)]
pub struct PoseJacobian {
    pub segment: usize,
    pub pose: Pose,
    pub blocks: Vec<Mat6>,
}

#[derive(Clone, Debug)]
pub struct SplineTrajectory {
    order: usize,
    dt: f64,
    t0: f64,
    knots: Vec<Pose>,
    blend: BlendingMatrix,
}

impl SplineTrajectory {
    pub fn new(order: usize, dt: f64, t0: f64, knots: Vec<Pose>) -> Result<Self> {
        let blend = BlendingMatrix::new(order)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("knot spacing must be positive, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("start time must be finite"));
        }
        if knots.len() < order {
            return Err(Error::invalid(format!(
                "order-{order} spline needs at least {order} control poses, got {}",
                knots.len()
            )));
        }
        if let Some(i) = knots.iter().position(|k| !k.is_valid()) {
            return Err(Error::invalid(format!("control pose {i} is not a valid rigid transform")));
        }
        Ok(SplineTrajectory {
            order,
            dt,
            t0,
            knots,
            blend,
        })
    }

    /// Number of control poses needed so that `[t0, t0 + duration]` lies in the domain.
    pub fn knots_for_duration(order: usize, dt: f64, duration: f64) -> usize {
        let segments = ((duration / dt) - 1e-9).ceil().max(1.0) as usize;
        segments + order - 1
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn knots(&self) -> &[Pose] {
        &self.knots
    }

    pub fn blending(&self) -> &BlendingMatrix {
        &self.blend
    }

    /// Replaces the control poses, keeping order and knot grid.
    pub fn with_knots(&self, knots: Vec<Pose>) -> Result<Self> {
        if knots.len() != self.knots.len() {
            return Err(Error::invalid("knot count mismatch"));
        }
        SplineTrajectory::new(self.order, self.dt, self.t0, knots)
    }

    pub fn num_segments(&self) -> usize {
        self.knots.len() + 1 - self.order
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.num_segments() as f64 * self.dt
    }

    /// Evaluation interval. The right end point is accepted and evaluates the
    /// last segment at `u = 1`.
    pub fn domain(&self) -> (f64, f64) {
        (self.t0, self.t_end())
    }

    pub fn contains(&self, t: f64) -> bool {
        self.locate(t).is_ok()
    }

    /// Time most strongly associated with control pose `j`.
    pub fn knot_time(&self, j: usize) -> f64 {
        self.t0 + (j as f64 - (self.order as f64 - 2.0) / 2.0) * self.dt
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let (start, end) = self.domain();
        let slack = 1e-9 * self.dt;
        if !(t >= start - slack && t <= end + slack) {
            return Err(Error::Domain { t, start, end });
        }
        let x = ((t - self.t0) / self.dt).max(0.0);
        let nseg = self.num_segments();
        let seg = (x.floor() as usize).min(nseg - 1);
        let u = (x - seg as f64).min(1.0);
        Ok((seg, u))
    }

    fn increments(&self, seg: usize) -> [Twist; MAX_ORDER] {
        let mut d = [Twist::zero(); MAX_ORDER];
        for j in 1..self.order {
            d[j] = (self.knots[seg + j - 1].inverse() * self.knots[seg + j]).log();
        }
        d
    }

    pub fn evaluate(&self, t: f64) -> Result<Pose> {
        let (seg, u) = self.locate(t)?;
        let b = self.blend.cumulative_with_derivatives(u)[0];
        let d = self.increments(seg);
        let mut pose = self.knots[seg];
        for j in 1..self.order {
            pose = pose * Pose::exp(&d[j].scaled(b[j]));
        }
        Ok(pose)
    }

    /// Pose with first and second time derivatives, from the product rule over
    /// the factors `A_j(t) = Exp(B̃_j(u) d_j)`.
    pub fn derivatives(&self, t: f64) -> Result<KinematicSample> {
        let (seg, u) = self.locate(t)?;
        let [b, db, ddb] = self.blend.cumulative_with_derivatives(u);
        let inv_dt = 1.0 / self.dt;
        let d = self.increments(seg);

        let mut p = self.knots[seg].to_matrix();
        let mut dp = Matrix4::<f64>::zeros();
        let mut ddp = Matrix4::<f64>::zeros();
        for j in 1..self.order {
            let a = Pose::exp(&d[j].scaled(b[j])).to_matrix();
            let dh = d[j].hat();
            let rate = db[j] * inv_dt;
            let accel = ddb[j] * inv_dt * inv_dt;
            let ad = a * dh;
            let da = ad * rate;
            let dda = ad * dh * (rate * rate) + ad * accel;
            ddp = ddp * a + dp * da * 2.0 + p * dda;
            dp = dp * a + p * da;
            p *= a;
        }

        let pose = Pose::from_matrix_unchecked(&p);
        let r: Mat3 = p.fixed_view::<3, 3>(0, 0).into();
        let dr: Mat3 = dp.fixed_view::<3, 3>(0, 0).into();
        let ddr: Mat3 = ddp.fixed_view::<3, 3>(0, 0).into();
        Ok(KinematicSample {
            t,
            pose,
            velocity: dp.fixed_view::<3, 1>(0, 3).into(),
            acceleration: ddp.fixed_view::<3, 1>(0, 3).into(),
            angular_velocity: vee(&(r.transpose() * dr)),
            angular_acceleration: vee(&(dr.transpose() * dr + r.transpose() * ddr)),
        })
    }

    pub fn pose_jacobian(&self, t: f64) -> Result<PoseJacobian> {
        let (seg, u) = self.locate(t)?;
        let k = self.order;
        let b = self.blend.cumulative_with_derivatives(u)[0];
        let d = self.increments(seg);

        let mut a = [Pose::identity(); MAX_ORDER];
        for j in 1..k {
            a[j] = Pose::exp(&d[j].scaled(b[j]));
        }
        // suffix[j] = A_j · … · A_{k-1}, suffix[k] = I
        let mut suffix = [Pose::identity(); MAX_ORDER + 1];
        for j in (1..k).rev() {
            suffix[j] = a[j] * suffix[j + 1];
        }
        let pose = self.knots[seg] * suffix[1];

        // G_j = Ad(suffix_{j+1}⁻¹) · b_j · Jr(b_j d_j)
        let mut g = [Mat6::zeros(); MAX_ORDER];
        for j in 1..k {
            g[j] = suffix[j + 1].inverse().adjoint() * se3_right_jacobian(&d[j].scaled(b[j])) * b[j];
        }
        let mut blocks = vec![Mat6::zeros(); k];
        blocks[0] = suffix[1].inverse().adjoint();
        for j in 1..k {
            // δd_j = Jr⁻¹(d_j) ε_j − Jl⁻¹(d_j) ε_{j-1}
            blocks[j] += g[j] * se3_right_jacobian_inv(&d[j]);
            blocks[j - 1] -= g[j] * se3_left_jacobian_inv(&d[j]);
        }
        Ok(PoseJacobian {
            segment: seg,
            pose,
            blocks,
        })
    }

    /// Applies `K_j ← K_j · Exp(δ_j)` with `δ` stacked as 6-vectors per knot.
    pub fn retract(&mut self, delta: &[f64]) {
        for (j, knot) in self.knots.iter_mut().enumerate() {
            let v = Vec6::from_column_slice(&delta[6 * j..6 * j + 6]);
            *knot = *knot * Pose::exp(&Twist::from_vector(&v));
        }
    }

    /// Left-multiplies every control pose by `g`.
    pub fn transformed(&self, g: &Pose) -> Self {
        let mut out = self.clone();
        for k in &mut out.knots {
            *k = g * k;
        }
        out
    }
}

pub fn evaluate(spline: &SplineTrajectory, t: f64) -> Result<Pose> {
    spline.evaluate(t)
}

pub fn derivatives(spline: &SplineTrajectory, t: f64) -> Result<KinematicSample> {
    spline.derivatives(t)
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease falls below this.
    pub tolerance: f64,
    /// Knot grid start; defaults to the first sample time.
    pub t0: Option<f64>,
    /// Number of segments; defaults to the fewest covering the samples.
    pub segments: Option<usize>,
    /// Optional initial control poses (must match the knot count).
    pub initial: Option<Vec<Pose>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 50,
            tolerance: 1e-14,
            t0: None,
            segments: None,
            initial: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub spline: SplineTrajectory,
    /// `sqrt(mean ‖Log(T(t_i)⁻¹ S_i)‖²)` at the returned control poses.
    pub rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn fit(samples: &[(f64, Pose)], order: usize, dt: f64) -> Result<FitResult> {
    fit_with(samples, order, dt, &FitOptions::default())
}

fn fit_cost(spline: &SplineTrajectory, samples: &[(f64, Pose)]) -> Result<f64> {
    let mut cost = 0.0;
    for (t, s) in samples {
        let r = (spline.evaluate(*t)?.inverse() * *s).log();
        cost += r.to_vector().norm_squared();
    }
    Ok(cost)
}

/// Least-squares fit of control poses to timestamped pose samples, by
/// Levenberg-damped Gauss-Newton on right perturbations of the knots.
pub fn fit_with(
    samples: &[(f64, Pose)],
    order: usize,
    dt: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    BlendingMatrix::new(order)?;
    if !(dt > 0.0) {
        return Err(Error::invalid("knot spacing must be positive"));
    }
    if samples.len() < 2 {
        return Err(Error::invalid("need at least two samples to fit a spline"));
    }
    if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::invalid("samples must be strictly increasing in time"));
    }
    let first = samples[0].0;
    let last = samples[samples.len() - 1].0;
    let t0 = opts.t0.unwrap_or(first);
    if t0 > first + 1e-9 * dt {
        return Err(Error::invalid("knot grid starts after the first sample"));
    }
    let segments = match opts.segments {
        Some(s) => s,
        None => SplineTrajectory::knots_for_duration(order, dt, last - t0) + 1 - order,
    };
    if opts.t0.is_none() && opts.segments.is_none() && last - first < order as f64 * dt {
        return Err(Error::invalid(format!(
            "sample span {:.4} s is shorter than order × knot spacing = {:.4} s",
            last - first,
            order as f64 * dt
        )));
    }
    let nknots = segments + order - 1;
    let mut counts = vec![0usize; segments];
    for (t, _) in samples {
        let x = ((t - t0) / dt).max(0.0);
        let seg = x.floor() as usize;
        let seg = if seg >= segments && *t <= t0 + segments as f64 * dt * (1.0 + 1e-12) + 1e-9 * dt {
            segments - 1
        } else {
            seg
        };
        if seg >= segments {
            return Err(Error::invalid("samples extend beyond the requested knot grid"));
        }
        counts[seg] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!(
            "knot interval {empty} contains no samples; use a larger knot spacing"
        )));
    }

    let knots = match &opts.initial {
        Some(init) if init.len() == nknots => init.clone(),
        Some(init) => {
            return Err(Error::invalid(format!(
                "initial guess has {} poses, expected {nknots}",
                init.len()
            )))
        }
        None => {
            let proto = SplineTrajectory::new(order, dt, t0, vec![Pose::identity(); nknots])?;
            let mut idx = 0usize;
            (0..nknots)
                .map(|j| {
                    let tau = proto.knot_time(j);
                    while idx + 1 < samples.len()
                        && (samples[idx + 1].0 - tau).abs() <= (samples[idx].0 - tau).abs()
                    {
                        idx += 1;
                    }
                    samples[idx].1
                })
                .collect()
        }
    };
    let mut spline = SplineTrajectory::new(order, dt, t0, knots)?;
    let n = 6 * nknots;
    let mut cost = fit_cost(&spline, samples)?;
    let mut damping = 1e-6;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let mut h = BandedSpd::zeros(n, 6 * order);
        let mut grad = vec![0.0; n];
        for (t, s) in samples {
            let jac = spline.pose_jacobian(*t)?;
            let r = (jac.pose.inverse() * *s).log();
            let jl_inv = se3_left_jacobian_inv(&r);
            let rv = r.to_vector();
            // dr/dε_m = −Jl⁻¹(r) · blocks[m]
            let cols: Vec<Mat6> = jac.blocks.iter().map(|b| -(jl_inv * b)).collect();
            let base = 6 * jac.segment;
            for (a, ja) in cols.iter().enumerate() {
                let ga = ja.transpose() * rv;
                for p in 0..6 {
                    grad[base + 6 * a + p] += ga[p];
                }
                for (b, jb) in cols.iter().enumerate().take(a + 1) {
                    let blk = ja.transpose() * jb;
                    for p in 0..6 {
                        for q in 0..6 {
                            let (row, col) = (base + 6 * a + p, base + 6 * b + q);
                            if row >= col {
                                h.add(row, col, blk[(p, q)]);
                            }
                        }
                    }
                }
            }
        }
        let diag = h.diagonal();
        let max_diag = diag.iter().cloned().fold(0.0, f64::max).max(1e-300);
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();

        let mut improved = false;
        for _ in 0..20 {
            let mut hd = h.clone();
            let extra: Vec<f64> = diag
                .iter()
                .map(|d| damping * d.max(1e-9 * max_diag))
                .collect();
            hd.add_diagonal(&extra);
            let step = match hd.solve(&rhs) {
                Ok(s) => s,
                Err(_) => {
                    damping *= 10.0;
                    continue;
                }
            };
            let mut trial = spline.clone();
            trial.retract(&step);
            let trial_cost = fit_cost(&trial, samples)?;
            if trial_cost <= cost {
                let rel = (cost - trial_cost) / cost.max(1e-300);
                let step_max = step.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                spline = trial;
                cost = trial_cost;
                damping = (damping * 0.1).max(1e-12);
                improved = true;
                if rel < opts.tolerance || step_max < 1e-13 || cost < 1e-28 {
                    converged = true;
                }
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            // no descent direction left at machine precision
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        log::warn!("spline fit stopped after {iterations} iterations without converging");
    }
    let rms = (cost / samples.len() as f64).sqrt();
    Ok(FitResult {
        spline,
        rms,
        iterations,
        converged,
    })
}
