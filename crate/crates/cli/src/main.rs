use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use springcam::dfn::{DeformationNet, Profile};
use springcam::dynamics::{GravityVector, SimulatedSequence};
use springcam::estimator::{self, SolverConfig, VoTrack};
use springcam::experiment::{self, ExperimentManifest};
use springcam::geometry::{Pose, Rotation, Vec3};
use springcam::io;
use springcam::metrics::{self, Alignment};
use springcam::spline::KinematicSample;

#[derive(Parser)]
#[command(name = "springcam", version, about = "Scale and gravity from a camera on an elastic mount")]
struct Cli {
    /// Overrides the manifest seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment manifest (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the manifest's `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Network size and training recipe.
    #[arg(long, global = true, value_parser = ["tiny", "full"])]
    profile: Option<String>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training and evaluation sequences of the manifest.
    Simulate,
    /// Train the deformation network on simulated sequences.
    Train(TrainArgs),
    /// Estimate scale, gravity and the base trajectory from a camera track.
    Estimate(EstimateArgs),
    /// Score an estimated base trajectory against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the noise and outlier sweeps and write the result tables.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Directory with `train_*_base.csv` / `train_*_camera.csv` pairs;
    /// defaults to `<out>/sequences`.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Scale-ambiguous camera poses.
    #[arg(long, conflicts_with = "gt", required_unless_present = "gt")]
    vo: Option<PathBuf>,
    /// Metric camera poses to perturb into a VO track.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Noise amplitude used with `--gt`.
    #[arg(long, default_value_t = 0.0, requires = "gt")]
    noise: f64,
    /// Outlier ratio used with `--gt`.
    #[arg(long, default_value_t = 0.0, requires = "gt")]
    outliers: f64,
    /// Network weights (dfn-v1 JSON).
    #[arg(long)]
    weights: PathBuf,
    /// Solver configuration (JSON); defaults to the manifest's.
    #[arg(long)]
    solver: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimated base trajectory.
    #[arg(long)]
    est: PathBuf,
    /// Ground-truth base trajectory.
    #[arg(long)]
    gt: PathBuf,
    /// Solution written by `estimate`.
    #[arg(long)]
    solution: Option<PathBuf>,
    /// VO camera track, for the reference scale when the solution does not
    /// record it.
    #[arg(long, requires = "gt_camera")]
    vo: Option<PathBuf>,
    /// Metric camera track matching `--vo`.
    #[arg(long, requires = "vo")]
    gt_camera: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Use these weights instead of training a network first.
    #[arg(long)]
    weights: Option<PathBuf>,
}

/// A failed validation gate; exits with status 2.
#[derive(Debug)]
struct GateFailure(String);

impl std::fmt::Display for GateFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for GateFailure {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<GateFailure>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn manifest(cli: &Cli) -> Result<(ExperimentManifest, PathBuf)> {
    let mut m = match &cli.config {
        Some(path) => ExperimentManifest::from_json(&io::read_text(path)?)
            .with_context(|| format!("loading manifest {}", path.display()))?,
        None => ExperimentManifest::default(),
    };
    if let Some(seed) = cli.seed {
        m.seed = seed;
    }
    if let Some(p) = &cli.profile {
        m.profile = p.parse::<Profile>()?;
    }
    m.validate()?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&m.out_dir));
    Ok((m, out))
}

fn run(cli: &Cli) -> Result<()> {
    let (m, out) = manifest(cli)?;
    match &cli.command {
        Command::Simulate => simulate(&m, &out),
        Command::Train(a) => train(&m, &out, a),
        Command::Estimate(a) => estimate(&m, &out, a),
        Command::Evaluate(a) => evaluate(&out, a),
        Command::Reproduce(a) => reproduce(&m, &out, a),
    }
}

fn write_sequence(dir: &Path, stem: &str, seq: &SimulatedSequence) -> Result<()> {
    io::write_trajectory(dir.join(format!("{stem}_base.csv")), &seq.base, true)?;
    io::write_trajectory(dir.join(format!("{stem}_camera.csv")), &seq.camera, true)?;
    Ok(())
}

fn simulate(m: &ExperimentManifest, out: &Path) -> Result<()> {
    let dir = out.join("sequences");
    let train = experiment::training_sequences(m)?;
    for (i, (pattern, seq)) in train.iter().enumerate() {
        write_sequence(&dir, &format!("train_{i:02}_{pattern}"), seq)?;
    }
    for t in 0..m.trials {
        let seq = experiment::evaluation_sequence(m, t)?;
        let pattern = m.eval_patterns[t % m.eval_patterns.len()];
        write_sequence(&dir, &format!("eval_{t:02}_{pattern}"), &seq)?;
    }
    println!("wrote {} training and {} evaluation sequences to {}", train.len(), m.trials, dir.display());
    Ok(())
}

fn load_sequences(dir: &Path, prefix: &str) -> Result<Vec<SimulatedSequence>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading data directory {}", dir.display()))?;
    let mut stems: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().map(str::to_owned))
        .filter(|n| n.starts_with(prefix) && n.ends_with("_camera.csv"))
        .map(|n| n.trim_end_matches("_camera.csv").to_owned())
        .collect();
    stems.sort();
    if stems.is_empty() {
        bail!(
            "no {prefix}*_camera.csv files in {}; run `springcam simulate` first",
            dir.display()
        );
    }
    stems
        .iter()
        .map(|stem| {
            let base = io::read_trajectory(dir.join(format!("{stem}_base.csv")))?;
            let camera = io::read_trajectory(dir.join(format!("{stem}_camera.csv")))?;
            let rate = match (camera.first(), camera.last()) {
                (Some(a), Some(b)) if camera.len() > 1 => (camera.len() - 1) as f64 / (b.t - a.t),
                _ => 0.0,
            };
            Ok(SimulatedSequence { rate, base, camera })
        })
        .collect()
}

fn train_and_gate(m: &ExperimentManifest, out: &Path, sequences: &[SimulatedSequence]) -> Result<DeformationNet> {
    let (net, report) = experiment::train_network(m, sequences)?;
    io::write_text(out.join("dfn.json"), &net.to_json())?;
    io::write_text(out.join("loss.csv"), &report.to_csv())?;
    let last = report.losses.last().expect("loss of the untrained network");
    println!(
        "trained for {} epochs: train L1 {:.5}, validation L1 {:.5}",
        last.epoch, last.train_l1, last.val_l1
    );
    if !(last.val_l1 <= m.train_gate) {
        return Err(GateFailure(format!(
            "validation L1 {:.5} exceeds the gate {}",
            last.val_l1, m.train_gate
        ))
        .into());
    }
    Ok(net)
}

fn train(m: &ExperimentManifest, out: &Path, a: &TrainArgs) -> Result<()> {
    let dir = a.data.clone().unwrap_or_else(|| out.join("sequences"));
    let sequences = load_sequences(&dir, "train_")?;
    train_and_gate(m, out, &sequences)?;
    Ok(())
}

fn load_net(path: &Path) -> Result<DeformationNet> {
    let text = io::read_text(path).context("loading network weights")?;
    Ok(DeformationNet::from_json(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn poses(samples: &[KinematicSample]) -> Vec<(f64, Pose)> {
    samples.iter().map(|s| (s.t, s.pose)).collect()
}

fn quaternion(r: &Rotation) -> [f64; 4] {
    let q = r.to_quaternion();
    [q.i, q.j, q.k, q.w]
}

fn estimate(m: &ExperimentManifest, out: &Path, a: &EstimateArgs) -> Result<()> {
    let net = load_net(&a.weights)?;
    let solver: SolverConfig = match &a.solver {
        Some(p) => serde_json::from_str(&io::read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => m.solver.clone(),
    };
    let g = GravityVector::default();
    let (track, truth) = match (&a.vo, &a.gt) {
        (Some(vo), _) => {
            let poses = poses(&io::read_trajectory(vo)?);
            (VoTrack::fit(poses, m.camera_knot_dt)?, None)
        }
        (None, Some(gt)) => {
            let cfg = m.perturb_config(a.noise, a.outliers, 0);
            let p = estimator::perturb(&poses(&io::read_trajectory(gt)?), &cfg)?;
            let g_true = p.rotation * g.vector();
            let truth = json!({
                "true_lambda": p.true_lambda(),
                "r_vo_true": quaternion(&p.rotation.inverse()),
                "gravity_vo_true": [g_true.x, g_true.y, g_true.z],
                "outliers": p.outliers.len(),
            });
            io::write_trajectory(out.join("vo.csv"), &p.track.samples, false)?;
            (p.track, Some(truth))
        }
        (None, None) => bail!("either --vo or --gt is required"),
    };
    let init = estimator::initialize(&track, &net, &g, &solver)?;
    let solution = estimator::solve(&track, &net, &g, &init, &solver)?;

    let base = &solution.state.base;
    let knots: Vec<KinematicSample> = base
        .knots()
        .iter()
        .enumerate()
        .map(|(j, k)| KinematicSample::at_rest(base.knot_time(j), *k))
        .collect();
    io::write_trajectory(out.join("knots.csv"), &knots, false)?;
    let est = track
        .poses
        .iter()
        .map(|(t, _)| Ok(base.derivatives(*t)?))
        .collect::<springcam::Result<Vec<_>>>()?;
    io::write_trajectory(out.join("base_estimate.csv"), &est, false)?;

    let mut doc = solution.to_json("knots.csv");
    let gv = solution.state.gravity_in_vo(&g);
    doc["gravity_vo"] = json!([gv.x, gv.y, gv.z]);
    if let Some(t) = truth {
        doc["perturbation"] = t;
    }
    io::write_text(out.join("solution.json"), &format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
    println!(
        "λ = {:.6}, converged = {}, {} iterations",
        solution.state.lambda, solution.converged, solution.iterations
    );
    Ok(())
}

fn vec3(v: &serde_json::Value) -> Option<Vec3> {
    match v.as_array()?.as_slice() {
        [x, y, z] => Some(Vec3::new(x.as_f64()?, y.as_f64()?, z.as_f64()?)),
        _ => None,
    }
}

fn evaluate(out: &Path, a: &EvaluateArgs) -> Result<()> {
    let est = poses(&io::read_trajectory(&a.est)?);
    let gt = poses(&io::read_trajectory(&a.gt)?);
    let ape = metrics::ape(&est, &gt, Alignment::Se3)?;
    let solution: Option<serde_json::Value> = match &a.solution {
        Some(p) => Some(serde_json::from_str(&io::read_text(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => None,
    };
    let field = |path: &[&str]| -> Option<&serde_json::Value> {
        let mut v = solution.as_ref()?;
        for k in path {
            v = v.get(*k)?;
        }
        Some(v)
    };
    let lambda_opt = field(&["lambda"]).and_then(|v| v.as_f64()).unwrap_or(1.0);
    let lambda_gt = match (&a.vo, &a.gt_camera) {
        (Some(vo), Some(gc)) => Some(metrics::reference_scale(
            &poses(&io::read_trajectory(vo)?),
            &poses(&io::read_trajectory(gc)?),
        )?),
        _ => field(&["perturbation", "true_lambda"]).and_then(|v| v.as_f64()),
    };
    let err_lambda = lambda_gt.map(|l| metrics::scale_error(lambda_opt, l)).transpose()?;
    let g = GravityVector::default().vector();
    let err_g_deg = match (field(&["gravity_vo"]).and_then(vec3), field(&["perturbation", "gravity_vo_true"]).and_then(vec3)) {
        (Some(e), Some(t)) => metrics::gravity_error(&e, &t)?,
        _ => {
            let r = metrics::rotation_alignment(&est, &gt)?;
            metrics::gravity_error(&(r * g), &g)?
        }
    };
    let doc = json!({
        "ape": ape,
        "err_lambda": err_lambda,
        "err_g_deg": err_g_deg,
        "lambda_opt": lambda_opt,
        "lambda_gt": lambda_gt,
    });
    io::write_text(out.join("metrics.json"), &format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
    println!(
        "APE mean {:.4} m, err_λ {}, err_G {:.3}°",
        ape.mean,
        err_lambda.map_or("n/a".to_string(), |e| format!("{e:.4}")),
        err_g_deg
    );
    Ok(())
}

fn reproduce(m: &ExperimentManifest, out: &Path, a: &ReproduceArgs) -> Result<()> {
    let net = match &a.weights {
        Some(p) => load_net(p)?,
        None => {
            let train: Vec<SimulatedSequence> = experiment::training_sequences(m)?.into_iter().map(|(_, s)| s).collect();
            train_and_gate(m, out, &train)?
        }
    };
    let eval = (0..m.trials)
        .map(|t| experiment::evaluation_sequence(m, t))
        .collect::<springcam::Result<Vec<_>>>()?;
    let (noise, outliers) = experiment::sweep(m, &net, &eval)?;
    for table in [&noise, &outliers] {
        let stem = format!("table_{}", table.variable);
        io::write_text(out.join(format!("{stem}.csv")), &table.to_csv())?;
        io::write_text(out.join(format!("{stem}.txt")), &table.to_text())?;
        println!("{}", table.to_text());
    }
    let doc = json!({ "noise": noise, "outliers": outliers });
    io::write_text(out.join("tables.json"), &format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
    Ok(())
}
