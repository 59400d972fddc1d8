use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::solve::{linearize, linearized_to_vo_units, retract, to_vo_units, weighted_residual};
use super::*;
use crate::dfn::DeformationNet;
use crate::dynamics::{gen_pattern, simulate, Pattern, PatternConfig, SpringAccelModel, SpringParams};
use crate::geometry::{Pose, Rotation, Twist, Vec3};
use crate::spline::SplineTrajectory;

pub(crate) struct Construction {
    pub vo: VoTrack,
    pub model: SpringAccelModel,
    pub g: GravityVector,
    pub truth: EstimatorState,
}

/// VO equal to the metric simulation of an undamped mount, with the
/// spring law itself as the acceleration model.
pub(crate) fn zero_residual(pattern: Pattern, duration: f64, rate: f64, seed: u64) -> Construction {
    let params = SpringParams::default().conservative();
    let cfg = PatternConfig {
        strict_duration: false,
        ..PatternConfig::default()
    };
    let base = gen_pattern(pattern, duration, &cfg, seed).unwrap();
    let g = GravityVector::default();
    let seq = simulate(&base, &params, &g, rate, duration, None).unwrap();
    Construction {
        vo: VoTrack::from_samples(seq.camera),
        model: SpringAccelModel::new(params),
        g,
        truth: EstimatorState::new(1.0, Rotation::identity(), base).unwrap(),
    }
}

fn total_cost(c: &Construction, state: &EstimatorState) -> f64 {
    c.vo.samples
        .iter()
        .map(|s| residual(state, s, &c.model, &c.g).unwrap().norm_squared())
        .sum()
}

fn with_lambda(state: &EstimatorState, lambda: f64) -> EstimatorState {
    EstimatorState::new(lambda, state.r_vo, state.base.clone()).unwrap()
}

fn gravity_angle(a: &EstimatorState, b: &EstimatorState, g: &GravityVector) -> f64 {
    a.gravity_in_vo(g).angle(&b.gravity_in_vo(g)).to_degrees()
}

#[test]
fn camera_pose_opt_maps_translation_and_rotation() {
    let r = Rotation::exp(&Vec3::new(0.1, 0.2, -0.3));
    let base = SplineTrajectory::new(4, 0.5, 0.0, vec![Pose::identity(); 4]).unwrap();
    let p = Pose::new(r, Vec3::new(1.0, 0.0, 0.0));
    let id = EstimatorState::new(1.0, Rotation::identity(), base.clone()).unwrap();
    assert_eq!(camera_pose_opt(&id, &p), p);
    let two = EstimatorState::new(2.0, Rotation::identity(), base).unwrap();
    let q = camera_pose_opt(&two, &p);
    assert_eq!(q.translation, Vec3::new(2.0, 0.0, 0.0));
    assert_eq!(q.rotation, r);
}

#[test]
fn mapped_translation_acceleration_is_scaled_vo_acceleration() {
    let vo = crate::spline::tests::random_spline(5, 9);
    let base = SplineTrajectory::new(4, 0.5, 0.0, vec![Pose::identity(); 4]).unwrap();
    let state = EstimatorState::new(0.37, Rotation::exp(&Vec3::new(0.4, -1.0, 0.2)), base).unwrap();
    let h = 1e-3;
    for t in [0.8, 1.0, 1.4] {
        let at = |t: f64| camera_pose_opt(&state, &vo.evaluate(t).unwrap()).translation;
        let fd = (at(t + h) - 2.0 * at(t) + at(t - h)) / (h * h);
        let expected = state.r_vo * vo.derivatives(t).unwrap().acceleration * state.lambda;
        assert!((fd - expected).norm() < 1e-4 * (1.0 + expected.norm()), "{fd} vs {expected}");
    }
}

#[test]
fn zero_output_model_leaves_gravity() {
    struct Zero;
    impl AccelerationModel for Zero {
        fn predict(&self, _: &Vec6) -> Vec6 {
            Vec6::zeros()
        }
        fn input_jacobian(&self, _: &Vec6) -> crate::geometry::Mat6 {
            crate::geometry::Mat6::zeros()
        }
    }
    let base = SplineTrajectory::new(4, 0.5, 0.0, vec![Pose::identity(); 4]).unwrap();
    let state = EstimatorState::new(1.0, Rotation::identity(), base).unwrap();
    let s = crate::spline::KinematicSample::at_rest(0.2, Pose::from_translation(Vec3::new(0.0, -0.15, 0.0)));
    let g = GravityVector::default();
    let r = residual(&state, &s, &Zero, &g).unwrap();
    let expected = Vec6::new(0.0, -9.81, 0.0, 0.0, 0.0, 0.0);
    assert!((r - expected).norm() < 1e-15);
}

#[test]
fn analytic_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let net = DeformationNet::new(&[24, 24], 3).unwrap();
    let spring = SpringAccelModel::new(SpringParams::default());
    let g = GravityVector::default();
    for trial in 0..4 {
        let mut knots = Vec::new();
        for _ in 0..5 {
            let w = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
            let t = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
            knots.push(Pose::new(Rotation::exp(&w), t));
        }
        let base = SplineTrajectory::new(4, 0.5, 0.0, knots).unwrap();
        let r_vo = Rotation::exp(&Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
        let state = EstimatorState::new(rng.random_range(0.5..3.0), r_vo, base).unwrap();
        let cam = crate::spline::tests::random_spline(trial, 12);
        let (lo, hi) = cam.domain();
        let samples: Vec<_> = (0..10)
            .map(|i| {
                let mut s = cam.derivatives(lo + (hi - lo) * (i as f64 + 0.5) / 10.0).unwrap();
                s.t = 0.1 * i as f64;
                s.pose.translation *= 0.3;
                s.acceleration *= 0.3;
                s
            })
            .collect();
        let p = 4 + 6 * state.base.knots().len();
        let models: [&dyn AccelerationModel; 2] = [&net, &spring];
        for (model, vo_units) in models.into_iter().flat_map(|m| [(m, false), (m, true)]) {
            let ang_w = 0.7;
            let res = |st: &EstimatorState, s: &KinematicSample| {
                let mut r = weighted_residual(st, s, model, &g.vector(), ang_w).unwrap();
                if vo_units {
                    to_vo_units(&mut r, st.lambda);
                }
                r
            };
            for s in &samples {
                let mut lin = linearize(&state, s, model, &g.vector(), ang_w).unwrap();
                if vo_units {
                    linearized_to_vo_units(&mut lin, state.lambda);
                }
                let mut dense = nalgebra::DMatrix::<f64>::zeros(6, p);
                dense.view_mut((0, 0), (6, 4)).copy_from(&lin.globals);
                for (m, b) in lin.knots.iter().enumerate() {
                    dense.view_mut((0, 4 + 6 * (lin.segment + m)), (6, 6)).copy_from(b);
                }
                let r0 = res(&state, s);
                assert!((lin.r - r0).norm() < 1e-12 * (1.0 + r0.norm()));
                let h = 1e-6;
                let mut fd = nalgebra::DMatrix::<f64>::zeros(6, p);
                for c in 0..p {
                    let mut e = DVector::zeros(p);
                    e[c] = h;
                    let rp = res(&retract(&state, &e), s);
                    let rm = res(&retract(&state, &(-e)), s);
                    fd.set_column(c, &((rp - rm) / (2.0 * h)));
                }
                let err = (&dense - &fd).amax() / fd.amax();
                assert!(err < 1e-4, "trial {trial}: relative Jacobian error {err:.3e}");
            }
        }
    }
}

#[test]
fn zero_residual_construction_has_zero_cost() {
    let c = zero_residual(Pattern::C, 8.0, 100.0, 4);
    for s in &c.vo.samples {
        let r = residual(&c.truth, s, &c.model, &c.g).unwrap();
        assert!(r.amax() < 1e-5, "residual {r} at t = {}", s.t);
    }
}

#[test]
fn cost_increases_away_from_true_scale() {
    let c = zero_residual(Pattern::C, 8.0, 100.0, 4);
    let scan: Vec<f64> = (0..=40)
        .map(|i| 0.5 * 4f64.powf(i as f64 / 40.0))
        .map(|l| total_cost(&c, &with_lambda(&c.truth, l)))
        .collect();
    let (imin, _) = scan
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    assert_eq!(imin, 20);
    for i in 0..20 {
        assert!(scan[i] > scan[i + 1], "not decreasing at {i}");
    }
    for i in 20..40 {
        assert!(scan[i + 1] > scan[i], "not increasing at {i}");
    }
}

#[test]
fn truth_is_a_fixed_point() {
    let c = zero_residual(Pattern::D, 8.0, 100.0, 6);
    let sol = solve(&c.vo, &c.model, &c.g, &c.truth, &SolverConfig::default()).unwrap();
    assert!(sol.converged);
    assert!((sol.state.lambda - 1.0).abs() < 1e-9, "drift {}", sol.state.lambda - 1.0);
    let again = solve(&c.vo, &c.model, &c.g, &sol.state, &SolverConfig::default()).unwrap();
    assert!((again.state.lambda / sol.state.lambda - 1.0).abs() < 1e-9);
}

fn perturbed_start(c: &Construction, seed: u64) -> EstimatorState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
    let r_vo = Rotation::exp(&(axis * 5f64.to_radians())) * c.truth.r_vo;
    let knots = c
        .truth
        .base
        .knots()
        .iter()
        .map(|k| {
            let d = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize() * 0.02;
            Pose::new(k.rotation, k.translation + d)
        })
        .collect();
    EstimatorState::new(1.1, r_vo, c.truth.base.with_knots(knots).unwrap()).unwrap()
}

#[test]
fn converges_from_perturbed_start() {
    let c = zero_residual(Pattern::C, 10.0, 100.0, 8);
    let init = perturbed_start(&c, 1);
    let sol = solve(&c.vo, &c.model, &c.g, &init, &SolverConfig::default()).unwrap();
    assert!((sol.state.lambda - 1.0).abs() < 0.005, "lambda {}", sol.state.lambda);
    let err_g = gravity_angle(&sol.state, &c.truth, &c.g);
    assert!(err_g < 0.5, "gravity error {err_g}°");
    for phase in 0..2 {
        let costs: Vec<f64> = sol.history.iter().filter(|h| h.phase == phase).map(|h| h.cost).collect();
        assert!(costs.windows(2).all(|w| w[1] <= w[0]), "phase {phase}: {costs:?}");
    }
}

#[test]
fn initialization_lands_near_truth() {
    let c = zero_residual(Pattern::C, 12.0, 100.0, 8);
    let cfg = SolverConfig::default();
    let init = initialize(&c.vo, &c.model, &c.g, &cfg).unwrap();
    assert!(init.lambda > 0.5 && init.lambda < 2.0, "initial lambda {}", init.lambda);
    let one = SolverConfig {
        max_iters: 1,
        huber: false,
        ..SolverConfig::default()
    };
    let sol = solve(&c.vo, &c.model, &c.g, &init, &one).unwrap();
    assert!((sol.state.lambda - 1.0).abs() < 0.05, "after one step {}", sol.state.lambda);
}

#[test]
fn resting_track_fails_to_initialize() {
    let p = Pose::new(Rotation::exp(&Vec3::new(0.1, 0.0, 0.0)), Vec3::new(0.0, -0.2, 0.0));
    let samples = (0..400).map(|i| crate::spline::KinematicSample::at_rest(i as f64 * 0.01, p)).collect();
    let vo = VoTrack::from_samples(samples);
    let model = SpringAccelModel::new(SpringParams::default());
    let err = initialize(&vo, &model, &GravityVector::default(), &SolverConfig::default()).unwrap_err();
    assert!(matches!(err, Error::InitializationFailed(_)), "{err}");
}

fn circle_track(n: usize) -> Vec<(f64, Pose)> {
    (0..n)
        .map(|i| {
            let t = i as f64 * 0.01;
            let p = Vec3::new(t.cos(), 0.3 * (2.0 * t).sin(), t.sin());
            (t, Pose::new(Rotation::exp(&Vec3::new(0.0, t, 0.1 * t.sin())), p))
        })
        .collect()
}

#[test]
fn identity_perturbation_keeps_poses() {
    let gt = circle_track(300);
    let cfg = PerturbConfig {
        global_scale: Some(1.0),
        global_rotation: Some(Vec3::zeros()),
        ..PerturbConfig::default()
    };
    let out = perturb(&gt, &cfg).unwrap();
    for ((_, a), (_, b)) in gt.iter().zip(&out.track.poses) {
        assert_eq!(a, b);
    }
    assert!(out.outliers.is_empty());
}

#[test]
fn noise_has_requested_spread() {
    let gt = circle_track(2000);
    let cfg = PerturbConfig {
        noise: 0.03,
        global_scale: Some(1.0),
        global_rotation: Some(Vec3::zeros()),
        seed: 9,
        ..PerturbConfig::default()
    };
    let out = perturb(&gt, &cfg).unwrap();
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for (_, p) in &gt {
        lo = lo.inf(&p.translation);
        hi = hi.sup(&p.translation);
    }
    let target = 0.03 * (hi - lo).norm();
    for axis in 0..3 {
        let d: Vec<f64> = gt
            .iter()
            .zip(&out.track.poses)
            .map(|((_, a), (_, b))| b.translation[axis] - a.translation[axis])
            .collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std / target - 1.0).abs() < 0.2, "axis {axis}: {std} vs {target}");
    }
}

#[test]
fn outlier_count_is_exact() {
    let gt = circle_track(1000);
    let cfg = PerturbConfig {
        outlier_ratio: 0.05,
        seed: 3,
        ..PerturbConfig::default()
    };
    let out = perturb(&gt, &cfg).unwrap();
    assert_eq!(out.outliers.len(), 50);
    let again = perturb(&gt, &cfg).unwrap();
    assert_eq!(out.outliers, again.outliers);
    assert!(out.scale >= 0.05 && out.scale <= 0.6);
}

#[test]
fn yaw_of_world_frame_is_a_gauge() {
    let c = zero_residual(Pattern::D, 10.0, 100.0, 12);
    let yaw = Pose::from_rotation(Rotation::exp(&Vec3::new(0.0, 0.9, 0.0)));
    let gt: Vec<(f64, Pose)> = c.vo.samples.iter().map(|s| (s.t, s.pose)).collect();
    let gt_yawed: Vec<(f64, Pose)> = gt.iter().map(|(t, p)| (*t, yaw * *p)).collect();
    let pcfg = PerturbConfig {
        global_scale: Some(0.3),
        global_rotation: Some(Vec3::new(0.3, -0.5, 1.1)),
        seed: 2,
        ..PerturbConfig::default()
    };
    let cfg = SolverConfig::default();
    let run = |track: &[(f64, Pose)]| {
        let p = perturb(track, &pcfg).unwrap();
        let init = initialize(&p.track, &c.model, &c.g, &cfg).unwrap();
        let sol = solve(&p.track, &c.model, &c.g, &init, &cfg).unwrap();
        let true_g = p.rotation * c.g.vector();
        let err_l = (sol.state.lambda - p.true_lambda()).abs() / p.true_lambda();
        let err_g = sol.state.gravity_in_vo(&c.g).angle(&true_g).to_degrees();
        (err_l, err_g)
    };
    let (l0, g0) = run(&gt);
    let (l1, g1) = run(&gt_yawed);
    assert!((l0 - l1).abs() < 1e-6, "{l0} vs {l1}");
    assert!((g0 - g1).abs() < 1e-6, "{g0} vs {g1}");
}

#[test]
fn retract_moves_scale_rotation_and_knots() {
    let base = SplineTrajectory::new(4, 0.5, 0.0, vec![Pose::identity(); 4]).unwrap();
    let s = EstimatorState::new(2.0, Rotation::identity(), base).unwrap();
    let mut step = DVector::zeros(4 + 24);
    step[0] = 0.5f64.ln();
    step[2] = 0.2;
    step[4 + 6 + 3] = 1.0;
    let out = retract(&s, &step);
    assert!((out.lambda - 1.0).abs() < 1e-15);
    assert!((out.r_vo.log() - Vec3::new(0.0, 0.2, 0.0)).norm() < 1e-15);
    assert_eq!(out.base.knots()[1], Pose::exp(&Twist::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0))));
}
