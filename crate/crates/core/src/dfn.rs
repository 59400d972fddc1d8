//! Deformation-force network: a small MLP from the base-to-camera relative
//! pose to the camera-frame specific acceleration, with dataset construction
//! and an Adam/L1 training loop.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{GravityVector, SimulatedSequence, SpringAccelModel};
use crate::error::{Error, Result};
use crate::geometry::{Mat6, Vec6};

pub const FORMAT: &str = "dfn-v1";
const LABEL_BOUND: f64 = 100.0;

/// Anything that maps `se3_log(T_b⁻¹T_c)` to `(R_cᵀ(a − g), α_body)`.
pub trait AccelerationModel: Sync {
    fn predict(&self, input: &Vec6) -> Vec6;
    fn input_jacobian(&self, input: &Vec6) -> Mat6;
}

impl AccelerationModel for SpringAccelModel {
    fn predict(&self, input: &Vec6) -> Vec6 {
        SpringAccelModel::predict(self, input)
    }

    fn input_jacobian(&self, input: &Vec6) -> Mat6 {
        self.jacobian(input)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `rows = outputs`, `cols = inputs`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Per-axis affine maps between physical units and the standardized
/// coordinates the layers work in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_mean: Vec6,
    pub input_std: Vec6,
    pub output_mean: Vec6,
    pub output_std: Vec6,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            input_mean: Vec6::zeros(),
            input_std: Vec6::repeat(1.0),
            output_mean: Vec6::zeros(),
            output_std: Vec6::repeat(1.0),
        }
    }
}

impl Normalization {
    /// Mean and standard deviation of inputs and labels over `idx`; axes
    /// with (near) zero spread keep unit scale.
    pub fn fit(samples: &[DfnSample], idx: &[usize]) -> Self {
        let stats = |f: &dyn Fn(&DfnSample) -> Vec6| {
            let n = idx.len().max(1) as f64;
            let mean = idx.iter().map(|&i| f(&samples[i])).sum::<Vec6>() / n;
            let var = idx.iter().map(|&i| (f(&samples[i]) - mean).map(|d| d * d)).sum::<Vec6>() / n;
            let std = var.map(|v| if v.sqrt() > 1e-9 * (1.0 + mean.amax()) { v.sqrt() } else { 1.0 });
            (mean, std)
        };
        let (input_mean, input_std) = stats(&|s| s.input);
        let (output_mean, output_std) = stats(&|s| s.label);
        Normalization {
            input_mean,
            input_std,
            output_mean,
            output_std,
        }
    }

    fn is_valid(&self) -> bool {
        let all = [self.input_mean, self.input_std, self.output_mean, self.output_std];
        all.iter().all(|v| v.iter().all(|x| x.is_finite())) && self.input_std.min() > 0.0 && self.output_std.min() > 0.0
    }

    fn normalize_columns(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut xn = x.clone();
        let mut yn = y.clone();
        for mut c in xn.column_iter_mut() {
            for r in 0..6 {
                c[r] = (c[r] - self.input_mean[r]) / self.input_std[r];
            }
        }
        for mut c in yn.column_iter_mut() {
            for r in 0..6 {
                c[r] = (c[r] - self.output_mean[r]) / self.output_std[r];
            }
        }
        (xn, yn)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeformationNet {
    layers: Vec<Layer>,
    normalization: Normalization,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Tiny,
    Full,
}

impl Profile {
    pub fn hidden(&self) -> Vec<usize> {
        match self {
            Profile::Tiny => vec![64, 64],
            Profile::Full => vec![384, 384, 384],
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        match self {
            Profile::Full => TrainConfig::default(),
            Profile::Tiny => TrainConfig {
                learning_rate: 3e-3,
                final_lr_factor: 0.02,
                epochs: 300,
                batch_size: 128,
                ..TrainConfig::default()
            },
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Profile::Tiny),
            "full" => Ok(Profile::Full),
            _ => Err(Error::invalid(format!("unknown profile '{s}' (expected tiny or full)"))),
        }
    }
}

impl DeformationNet {
    /// Randomly initialized network with the given hidden widths; weights and
    /// biases uniform in `±1/√fan_in`.
    pub fn new(hidden: &[usize], seed: u64) -> Result<Self> {
        if hidden.iter().any(|&w| w == 0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![6];
        dims.extend_from_slice(hidden);
        dims.push(6);
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..bound)),
                    bias: DVector::from_fn(w[1], |_, _| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Ok(DeformationNet {
            layers,
            normalization: Normalization::default(),
        })
    }

    pub fn from_profile(profile: Profile, seed: u64) -> Self {
        Self::new(&profile.hidden(), seed).expect("profile widths are positive")
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        let mut prev = 6;
        for (i, l) in layers.iter().enumerate() {
            if l.weights.ncols() != prev || l.bias.len() != l.weights.nrows() {
                return Err(Error::invalid(format!("layer {i} has inconsistent dimensions")));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("layer {i} has non-finite parameters")));
            }
            prev = l.weights.nrows();
        }
        if prev != 6 {
            return Err(Error::invalid("network output must have 6 components"));
        }
        Ok(DeformationNet {
            layers,
            normalization: Normalization::default(),
        })
    }

    pub fn with_normalization(mut self, n: Normalization) -> Result<Self> {
        if !n.is_valid() {
            return Err(Error::invalid("normalization needs finite means and positive scales"));
        }
        self.normalization = n;
        Ok(self)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &Vec6) -> Vec6 {
        let n = &self.normalization;
        let mut x = DVector::from_column_slice((input - n.input_mean).component_div(&n.input_std).as_slice());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = &l.weights * x + &l.bias;
            if i < last {
                x.apply(|v| *v = v.max(0.0));
            }
        }
        Vec6::from_column_slice(x.as_slice()).component_mul(&n.output_std) + n.output_mean
    }

    /// Exact Jacobian of `forward` w.r.t. its input; ReLU derivative is 0 at 0.
    pub fn input_jacobian(&self, input: &Vec6) -> Mat6 {
        let n = &self.normalization;
        let mut x = DVector::from_column_slice((input - n.input_mean).component_div(&n.input_std).as_slice());
        let mut jac = DMatrix::<f64>::identity(6, 6);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = &l.weights * &x + &l.bias;
            jac = &l.weights * jac;
            if i < last {
                for r in 0..z.len() {
                    if z[r] <= 0.0 {
                        jac.row_mut(r).fill(0.0);
                    }
                }
                x = z.map(|v| v.max(0.0));
            } else {
                x = z;
            }
        }
        let j = Mat6::from_iterator(jac.iter().cloned());
        Mat6::from_fn(|r, c| j[(r, c)] * n.output_std[r] / n.input_std[c])
    }

    /// Column-per-sample forward pass of the layers, in standardized units.
    fn forward_standardized(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.weights * &a;
            for mut col in z.column_iter_mut() {
                col += &l.bias;
            }
            if i < last {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a
    }

    /// Column-per-sample forward pass.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = &self.normalization;
        let (xn, _) = n.normalize_columns(x, &DMatrix::zeros(6, 0));
        let mut y = self.forward_standardized(&xn);
        for mut c in y.column_iter_mut() {
            for r in 0..6 {
                c[r] = c[r] * n.output_std[r] + n.output_mean[r];
            }
        }
        y
    }

    /// Mean L1 loss, in units of the per-axis output scale, over all entries
    /// of a batch, and its parameter gradient.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<Layer>) {
        let (x, y) = self.normalization.normalize_columns(x, y);
        let y = &y;
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.weights * &acts[i];
            for mut col in z.column_iter_mut() {
                col += &l.bias;
            }
            if i < last {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        let count = y.len() as f64;
        let diff = &acts[last + 1] - y;
        let loss = diff.iter().map(|d| d.abs()).sum::<f64>() / count;
        let mut delta = diff.map(|d| {
            if d > 0.0 {
                1.0 / count
            } else if d < 0.0 {
                -1.0 / count
            } else {
                0.0
            }
        });
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let gw = &delta * acts[i].transpose();
            let gb = DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
            if i > 0 {
                let mut back = self.layers[i].weights.transpose() * &delta;
                // hidden activations are post-ReLU, so zero marks the inactive branch
                back.zip_apply(&acts[i], |b, a| {
                    if a <= 0.0 {
                        *b = 0.0
                    }
                });
                delta = back;
            }
            grads.push(Layer { weights: gw, bias: gb });
        }
        grads.reverse();
        (loss, grads)
    }

    pub fn to_json(&self) -> String {
        let doc = NetDocument {
            format: FORMAT.to_string(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDocument {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.transpose().as_slice().to_vec(),
                    bias: l.bias.as_slice().to_vec(),
                })
                .collect(),
            activation: "relu".to_string(),
            normalization: Some(self.normalization),
        };
        serde_json::to_string_pretty(&doc).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parse_err = |m: String| Error::Parse {
            context: "network weights".into(),
            message: m,
        };
        let doc: NetDocument = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        if doc.format != FORMAT {
            return Err(parse_err(format!("unsupported format '{}'", doc.format)));
        }
        if doc.activation != "relu" {
            return Err(parse_err(format!("unsupported activation '{}'", doc.activation)));
        }
        let layers = doc
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                    return Err(parse_err(format!("layer {i} size mismatch")));
                }
                Ok(Layer {
                    weights: DMatrix::from_row_slice(l.rows, l.cols, &l.weights),
                    bias: DVector::from_vec(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Self::from_layers(layers)?;
        match doc.normalization {
            Some(n) => net.with_normalization(n),
            None => Ok(net),
        }
    }
}

impl AccelerationModel for DeformationNet {
    fn predict(&self, input: &Vec6) -> Vec6 {
        self.forward(input)
    }

    fn input_jacobian(&self, input: &Vec6) -> Mat6 {
        DeformationNet::input_jacobian(self, input)
    }
}

#[derive(Serialize, Deserialize)]
struct LayerDocument {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetDocument {
    format: String,
    layers: Vec<LayerDocument>,
    activation: String,
    #[serde(default)]
    normalization: Option<Normalization>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DfnSample {
    /// `se3_log(T_b⁻¹T_c)` as (rotation, translation).
    pub input: Vec6,
    /// `(R_cᵀ(a − g), α_body)`.
    pub label: Vec6,
}

/// Builds normalized training samples, ordered by (sequence, time).
pub fn make_dataset(sequences: &[SimulatedSequence], g: &GravityVector) -> Result<Vec<DfnSample>> {
    let mut out = Vec::new();
    for (si, seq) in sequences.iter().enumerate() {
        if seq.base.len() != seq.camera.len() {
            return Err(Error::invalid(format!(
                "sequence {si}: {} base samples vs {} camera samples",
                seq.base.len(),
                seq.camera.len()
            )));
        }
        for (j, (b, c)) in seq.base.iter().zip(&seq.camera).enumerate() {
            if (b.t - c.t).abs() > 1e-9 {
                return Err(Error::invalid(format!("sequence {si} sample {j}: base/camera timestamps differ")));
            }
            if !b.is_finite() || !c.is_finite() {
                return Err(Error::invalid(format!("sequence {si} sample {j}: non-finite state")));
            }
            let input = (b.pose.inverse() * c.pose).log().to_vector();
            let lin = c.pose.rotation.inverse() * (c.acceleration - g.vector());
            if lin.norm() >= LABEL_BOUND {
                return Err(Error::invalid(format!(
                    "sequence {si} sample {j}: specific acceleration {:.1} m/s² exceeds sanity bound",
                    lin.norm()
                )));
            }
            let mut label = Vec6::zeros();
            label.fixed_rows_mut::<3>(0).copy_from(&lin);
            label.fixed_rows_mut::<3>(3).copy_from(&c.angular_acceleration);
            out.push(DfnSample { input, label });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate at the last epoch relative to the first (cosine decay);
    /// 1 keeps it constant.
    pub final_lr_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Train / test / validation fractions.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            final_lr_factor: 1.0,
            epochs: 100,
            batch_size: 1024,
            split: [0.7, 0.2, 0.1],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.final_lr_factor > 0.0 && self.final_lr_factor <= 1.0) {
            return Err(Error::invalid("final_lr_factor must be in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|s| *s < 0.0) || (sum - 1.0).abs() > 1e-9 || self.split[0] <= 0.0 {
            return Err(Error::invalid("split fractions must be non-negative, sum to 1, with a training share"));
        }
        Ok(())
    }
}

/// Index sets for the train / test / validation partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Vec<usize>,
}

pub fn split_indices(n: usize, cfg: &TrainConfig) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64) * cfg.split[0]).round() as usize;
    let n_test = (((n as f64) * cfg.split[1]).round() as usize).min(n - n_train);
    Split {
        train: idx[..n_train].to_vec(),
        test: idx[n_train..n_train + n_test].to_vec(),
        validation: idx[n_train + n_test..].to_vec(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_l1: f64,
    pub val_l1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Row 0 is the untrained network.
    pub losses: Vec<EpochLoss>,
    pub split: Split,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_l1,val_l1\n");
        for l in &self.losses {
            s.push_str(&format!("{},{},{}\n", l.epoch, l.train_l1, l.val_l1));
        }
        s
    }
}

fn columns(samples: &[DfnSample], idx: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut x = DMatrix::zeros(6, idx.len());
    let mut y = DMatrix::zeros(6, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        x.set_column(c, &samples[i].input);
        y.set_column(c, &samples[i].label);
    }
    (x, y)
}

fn mean_l1(net: &DeformationNet, samples: &[DfnSample], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    let mut total = 0.0;
    for chunk in idx.chunks(4096) {
        let (x, y) = columns(samples, chunk);
        let (x, y) = net.normalization.normalize_columns(&x, &y);
        total += (net.forward_standardized(&x) - y).iter().map(|d| d.abs()).sum::<f64>();
    }
    total / (6 * idx.len()) as f64
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &DeformationNet) -> Self {
        let zeros = |l: &Layer| Layer {
            weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
            bias: DVector::zeros(l.bias.len()),
        };
        Adam {
            m: net.layers.iter().map(zeros).collect(),
            v: net.layers.iter().map(zeros).collect(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut DeformationNet, grads: &[Layer], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + Self::EPS);
            }
        };
        for (((layer, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            update(
                layer.weights.as_mut_slice(),
                g.weights.as_slice(),
                m.weights.as_mut_slice(),
                v.weights.as_mut_slice(),
            );
            update(
                layer.bias.as_mut_slice(),
                g.bias.as_slice(),
                m.bias.as_mut_slice(),
                v.bias.as_mut_slice(),
            );
        }
    }
}

/// Trains with Adam on the mean L1 loss. Deterministic for a fixed
/// `(net, dataset order, cfg)`. A network without normalization gets one
/// fitted on the training split first.
pub fn train(net: &DeformationNet, dataset: &[DfnSample], cfg: &TrainConfig) -> Result<(DeformationNet, TrainReport)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("empty training dataset"));
    }
    let split = split_indices(dataset.len(), cfg);
    let mut net = net.clone();
    if net.normalization == Normalization::default() {
        net.normalization = Normalization::fit(dataset, &split.train);
    }
    let mut adam = Adam::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let val_idx = if split.validation.is_empty() { &split.train } else { &split.validation };
    let mut losses = vec![EpochLoss {
        epoch: 0,
        train_l1: mean_l1(&net, dataset, &split.train),
        val_l1: mean_l1(&net, dataset, val_idx),
    }];
    let mut order = split.train.clone();
    for epoch in 1..=cfg.epochs {
        let progress = if cfg.epochs > 1 { (epoch - 1) as f64 / (cfg.epochs - 1) as f64 } else { 0.0 };
        let lr = cfg.learning_rate
            * (cfg.final_lr_factor + (1.0 - cfg.final_lr_factor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (x, y) = columns(dataset, batch);
            let (loss, grads) = net.loss_and_gradient(&x, &y);
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "loss became non-finite; lower the learning rate".into(),
                });
            }
            sum += loss * batch.len() as f64;
            adam.step(&mut net, &grads, lr);
        }
        let val = mean_l1(&net, dataset, val_idx);
        if !val.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: "validation loss became non-finite".into(),
            });
        }
        log::debug!("epoch {epoch}: train {:.5} val {:.5}", sum / order.len() as f64, val);
        losses.push(EpochLoss {
            epoch,
            train_l1: sum / order.len() as f64,
            val_l1: val,
        });
    }
    Ok((net, TrainReport { losses, split }))
}

/// Per-output mean absolute error of `model` over `samples`.
pub fn per_axis_l1<M: AccelerationModel + ?Sized>(model: &M, samples: &[DfnSample]) -> [f64; 6] {
    let mut acc = [0.0; 6];
    for s in samples {
        let e = model.predict(&s.input) - s.label;
        for i in 0..6 {
            acc[i] += e[i].abs();
        }
    }
    acc.map(|a| a / samples.len().max(1) as f64)
}

/// Per-output population standard deviation of the labels.
pub fn label_std(samples: &[DfnSample]) -> [f64; 6] {
    let n = samples.len().max(1) as f64;
    let mut mean = [0.0; 6];
    for s in samples {
        for i in 0..6 {
            mean[i] += s.label[i] / n;
        }
    }
    let mut var = [0.0; 6];
    for s in samples {
        for i in 0..6 {
            var[i] += (s.label[i] - mean[i]).powi(2) / n;
        }
    }
    var.map(f64::sqrt)
}

pub fn select(samples: &[DfnSample], idx: &[usize]) -> Vec<DfnSample> {
    idx.iter().map(|&i| samples[i]).collect()
}
