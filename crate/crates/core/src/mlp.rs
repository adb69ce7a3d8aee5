//! Small fully connected network for the state-to-steering map, trained with
//! Adam on mean squared error.
//!
//! Parameters live in one flat vector; per layer the row-major weight matrix
//! (`outputs x inputs`) is followed by the bias vector. Inputs and the output
//! pass through per-feature affine maps fitted on the training split.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::MlpError;
use crate::problem::State;
use crate::sampler::Dataset;

pub const MODEL_FILE_VERSION: u32 = 1;
pub const DEFAULT_LAYER_SIZES: [usize; 5] = [4, 15, 15, 15, 1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation value.
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Linear => 1.0,
        }
    }
}

/// `normalized = (raw - shift) / scale`, per feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Affine {
    pub fn identity(n: usize) -> Self {
        Self { shift: vec![0.0; n], scale: vec![1.0; n] }
    }

    /// Zero mean, unit variance over the rows of `data` (`dim` columns).
    /// Constant columns keep scale 1.
    pub fn fit(data: &[f64], dim: usize) -> Self {
        let n = (data.len() / dim).max(1) as f64;
        let mut shift = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for (s, v) in shift.iter_mut().zip(row) {
                *s += v;
            }
        }
        shift.iter_mut().for_each(|s| *s /= n);
        let mut scale = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for ((q, v), s) in scale.iter_mut().zip(row).zip(&shift) {
                *q += (v - s) * (v - s);
            }
        }
        for q in scale.iter_mut() {
            *q = (*q / n).sqrt();
            if !(*q > 0.0 && q.is_finite()) {
                *q = 1.0;
            }
        }
        Self { shift, scale }
    }

    fn validate(&self, n: usize, what: &str) -> Result<(), MlpError> {
        if self.shift.len() != n || self.scale.len() != n {
            return Err(MlpError::Dimension(format!("{what} normalization has {} / {} entries, expected {n}", self.shift.len(), self.scale.len())));
        }
        if self.shift.iter().any(|v| !v.is_finite()) || self.scale.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(MlpError::Dimension(format!("{what} normalization constants must be finite with positive scales")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub best_epoch: usize,
    pub seed: u64,
    pub train_mse: f64,
    pub validation_mse: f64,
    pub test_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    pub input_norm: Affine,
    pub output_norm: Affine,
    pub training: Option<TrainingMeta>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

impl MlpModel {
    /// All-zero parameters and identity normalization.
    pub fn zeros(layer_sizes: &[usize], activations: &[Activation]) -> Result<Self, MlpError> {
        let n_in = *layer_sizes.first().unwrap_or(&0);
        let n_out = *layer_sizes.last().unwrap_or(&0);
        let m = Self {
            layer_sizes: layer_sizes.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; param_count(layer_sizes)],
            input_norm: Affine::identity(n_in),
            output_norm: Affine::identity(n_out),
            training: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// The 4-15-15-15-1 sigmoid network with a linear output.
    pub fn steering_default() -> Self {
        let acts = [Activation::Sigmoid, Activation::Sigmoid, Activation::Sigmoid, Activation::Linear];
        Self::zeros(&DEFAULT_LAYER_SIZES, &acts).expect("default architecture is consistent")
    }

    /// Uniform in +-sqrt(6 / (fan_in + fan_out)); biases zero.
    pub fn xavier(layer_sizes: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Result<Self, MlpError> {
        let mut m = Self::zeros(layer_sizes, activations)?;
        let mut off = 0;
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut m.params[off..off + fan_in * fan_out] {
                *p = rng.gen_range(-lim..lim);
            }
            off += fan_out * (fan_in + 1);
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        let s = &self.layer_sizes;
        if s.len() < 2 || s.contains(&0) {
            return Err(MlpError::Dimension(format!("layer sizes {s:?}")));
        }
        if self.activations.len() != s.len() - 1 {
            return Err(MlpError::Dimension(format!("{} activations for {} layers", self.activations.len(), s.len() - 1)));
        }
        if self.params.len() != param_count(s) {
            return Err(MlpError::Dimension(format!("{} parameters, expected {}", self.params.len(), param_count(s))));
        }
        self.input_norm.validate(s[0], "input")?;
        self.output_norm.validate(s[s.len() - 1], "output")
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Weight `(row, col)` of layer `l` and bias `row` of layer `l` as flat indices.
    pub fn weight_index(&self, l: usize, row: usize, col: usize) -> usize {
        self.layer_offset(l) + row * self.layer_sizes[l] + col
    }

    pub fn bias_index(&self, l: usize, row: usize) -> usize {
        self.layer_offset(l) + self.layer_sizes[l] * self.layer_sizes[l + 1] + row
    }

    fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.layer_sizes[..=l])
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            acts: self.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: self.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Runs the layers on `s.acts[0]`; returns the normalized output.
    fn propagate(&self, s: &mut Scratch) -> f64 {
        let mut off = 0;
        for (l, act) in self.activations.iter().enumerate() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (lo, hi) = s.acts.split_at_mut(l + 1);
            let input = &lo[l];
            let out = &mut hi[0];
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_out * (n_in + 1)];
            for (j, o) in out.iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                let z = b[j] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
                *o = act.apply(z);
            }
            off += n_out * (n_in + 1);
        }
        s.acts.last().unwrap()[0]
    }

    fn load_input(&self, x: &[f64], s: &mut Scratch) {
        for (k, a) in s.acts[0].iter_mut().enumerate() {
            *a = (x[k] - self.input_norm.shift[k]) / self.input_norm.scale[k];
        }
    }

    /// Raw (denormalized) output for one raw input row.
    pub fn forward_raw(&self, x: &[f64]) -> f64 {
        let mut s = self.scratch();
        self.eval_with(x, &mut s)
    }

    fn eval_with(&self, x: &[f64], s: &mut Scratch) -> f64 {
        self.load_input(x, s);
        let y = self.propagate(s);
        y * self.output_norm.scale[0] + self.output_norm.shift[0]
    }

    /// Steering angle (rad) for a nondimensional state.
    pub fn forward(&self, x: &State) -> f64 {
        self.forward_raw(&x.to_array())
    }

    pub fn predict(&self, inputs: &[f64]) -> Vec<f64> {
        let mut s = self.scratch();
        inputs.chunks_exact(self.input_dim()).map(|x| self.eval_with(x, &mut s)).collect()
    }

    pub fn mse(&self, data: &Examples) -> f64 {
        if data.is_empty() {
            return f64::NAN;
        }
        let mut s = self.scratch();
        let sum: f64 = data.rows().map(|(x, t)| (self.eval_with(x, &mut s) - t).powi(2)).sum();
        sum / data.len() as f64
    }

    /// Mean squared error over the batch and its gradient with respect to
    /// every parameter (same layout as `params`).
    pub fn backward(&self, batch: &Examples) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut s = self.scratch();
        let loss = self.accumulate_gradient(batch.rows(), batch.len(), &mut s, &mut grad);
        (loss, grad)
    }

    fn accumulate_gradient<'a>(
        &self,
        rows: impl Iterator<Item = (&'a [f64], f64)>,
        n: usize,
        s: &mut Scratch,
        grad: &mut [f64],
    ) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let inv_n = 1.0 / n as f64;
        let oscale = self.output_norm.scale[0];
        let last = self.activations.len();
        let offsets: Vec<usize> = (0..last).map(|l| self.layer_offset(l)).collect();
        let mut loss = 0.0;
        for (x, t) in rows {
            let err = self.eval_with(x, s) - t;
            loss += err * err;
            let top = s.acts[last][0];
            s.deltas[last][0] = 2.0 * err * oscale * inv_n * self.activations[last - 1].slope(top);
            for l in (0..last).rev() {
                let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
                let off = offsets[l];
                let (dlo, dhi) = s.deltas.split_at_mut(l + 1);
                let delta = &dhi[0];
                let input = &s.acts[l];
                for j in 0..n_out {
                    let d = delta[j];
                    let gw = &mut grad[off + j * n_in..off + (j + 1) * n_in];
                    for (g, a) in gw.iter_mut().zip(input) {
                        *g += d * a;
                    }
                    grad[off + n_in * n_out + j] += d;
                }
                if l > 0 {
                    let w = &self.params[off..off + n_in * n_out];
                    let below = &mut dlo[l];
                    for (k, dk) in below.iter_mut().enumerate() {
                        let back: f64 = (0..n_out).map(|j| w[j * n_in + k] * delta[j]).sum();
                        *dk = back * self.activations[l - 1].slope(input[k]);
                    }
                }
            }
        }
        loss * inv_n
    }

    /// Loose Lipschitz constant of `forward_raw` (product of layer norms).
    pub fn lipschitz_bound(&self) -> f64 {
        let mut bound = self.output_norm.scale[0] / self.input_norm.scale.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut off = 0;
        for (l, act) in self.activations.iter().enumerate() {
            let n = self.layer_sizes[l] * self.layer_sizes[l + 1];
            let fro = self.params[off..off + n].iter().map(|w| w * w).sum::<f64>().sqrt();
            bound *= fro * if *act == Activation::Sigmoid { 0.25 } else { 1.0 };
            off += n + self.layer_sizes[l + 1];
        }
        bound
    }

    pub fn to_file(&self) -> ModelFile {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut off = 0;
        for w in self.layer_sizes.windows(2) {
            let n = w[0] * w[1];
            weights.push(self.params[off..off + n].to_vec());
            biases.push(self.params[off + n..off + n + w[1]].to_vec());
            off += n + w[1];
        }
        ModelFile {
            version: MODEL_FILE_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            activations: self.activations.clone(),
            weights,
            biases,
            input_normalization: self.input_norm.clone(),
            output_normalization: self.output_norm.clone(),
            training: self.training.clone(),
        }
    }

    pub fn from_file(f: ModelFile) -> Result<Self, MlpError> {
        if f.version != MODEL_FILE_VERSION {
            return Err(MlpError::Version { expected: MODEL_FILE_VERSION, found: f.version });
        }
        let s = &f.layer_sizes;
        if f.weights.len() + 1 != s.len() || f.biases.len() + 1 != s.len() {
            return Err(MlpError::Dimension(format!("{} weight / {} bias blocks for layer sizes {s:?}", f.weights.len(), f.biases.len())));
        }
        let mut params = Vec::with_capacity(param_count(s));
        for (l, (w, b)) in f.weights.iter().zip(&f.biases).enumerate() {
            if w.len() != s[l] * s[l + 1] || b.len() != s[l + 1] {
                return Err(MlpError::Dimension(format!("layer {l}: {} weights and {} biases for {} -> {}", w.len(), b.len(), s[l], s[l + 1])));
            }
            params.extend_from_slice(w);
            params.extend_from_slice(b);
        }
        let m = Self {
            layer_sizes: f.layer_sizes,
            activations: f.activations,
            params,
            input_norm: f.input_normalization,
            output_norm: f.output_normalization,
            training: f.training,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), MlpError> {
        serde_json::to_writer_pretty(w, &self.to_file())?;
        Ok(())
    }

    /// Checks the version before the rest of the schema so a mismatch is
    /// reported as such.
    pub fn read_json<R: Read>(mut r: R) -> Result<Self, MlpError> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let found = value.get("version").and_then(|v| v.as_u64()).ok_or_else(|| MlpError::Dimension("missing version field".into()))?;
        if found != MODEL_FILE_VERSION as u64 {
            return Err(MlpError::Version { expected: MODEL_FILE_VERSION, found: found as u32 });
        }
        Self::from_file(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), MlpError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_json(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MlpError> {
        Self::read_json(std::fs::File::open(path)?)
    }
}

struct Scratch {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

/// On-disk model layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    /// Row-major `outputs x inputs` per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input_normalization: Affine,
    pub output_normalization: Affine,
    pub training: Option<TrainingMeta>,
}

/// Flat input rows with scalar targets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Examples {
    pub dim: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Examples {
    pub fn new(dim: usize) -> Self {
        Self { dim, inputs: Vec::new(), targets: Vec::new() }
    }

    pub fn push(&mut self, x: &[f64], t: f64) {
        debug_assert_eq!(x.len(), self.dim);
        self.inputs.extend_from_slice(x);
        self.targets.push(t);
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.inputs.chunks_exact(self.dim).zip(self.targets.iter().copied())
    }

    pub fn row(&self, i: usize) -> (&[f64], f64) {
        (&self.inputs[i * self.dim..(i + 1) * self.dim], self.targets[i])
    }

    /// State-to-steering examples from dataset sample indices.
    pub fn from_dataset(ds: &Dataset, indices: &[usize]) -> Self {
        let mut e = Self::new(4);
        for &i in indices {
            let s = &ds.samples[i];
            e.push(&s.x.to_array(), s.beta);
        }
        e
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr * factor^(epoch / every)`.
    Step { every: usize, factor: f64 },
    /// Cosine decay from `lr` to `final_lr` over the run.
    Cosine { final_lr: f64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Step { every, factor } => base * factor.powi((epoch / every.max(1)) as i32),
            LrSchedule::Cosine { final_lr } => {
                let frac = if epochs <= 1 { 0.0 } else { epoch as f64 / (epochs - 1) as f64 };
                final_lr + 0.5 * (base - final_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { epochs: 1000, batch_size: 256, learning_rate: 1e-3, schedule: LrSchedule::Cosine { final_lr: 1e-5 }, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_mse: f64,
    pub validation_mse: f64,
    pub test_mse: f64,
}

/// Entry 0 is the initialized model; entry `k` follows epoch `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub final_train_mse: f64,
    pub final_validation_mse: f64,
    pub final_test_mse: f64,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "epoch,learning_rate,train_mse,validation_mse,test_mse";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.history {
            writeln!(w, "{},{:e},{:e},{:e},{:e}", r.epoch, r.learning_rate, r.train_mse, r.validation_mse, r.test_mse)?;
        }
        Ok(())
    }
}

pub struct TrainSplits<'a> {
    pub train: &'a Examples,
    pub validation: &'a Examples,
    pub test: &'a Examples,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Fits normalization on the training split, initializes from `hyper.seed`
/// and returns the best-validation model.
pub fn train(
    layer_sizes: &[usize],
    activations: &[Activation],
    splits: TrainSplits<'_>,
    hyper: &TrainHyper,
) -> Result<(MlpModel, TrainReport), MlpError> {
    for (name, e) in [("train", splits.train), ("validation", splits.validation), ("test", splits.test)] {
        if e.is_empty() {
            return Err(MlpError::EmptySplit(name));
        }
        if e.dim != layer_sizes[0] {
            return Err(MlpError::Dimension(format!("{name} rows have {} features, network takes {}", e.dim, layer_sizes[0])));
        }
    }
    if hyper.batch_size == 0 || !(hyper.learning_rate > 0.0) {
        return Err(MlpError::Dimension(format!("batch size {} / learning rate {}", hyper.batch_size, hyper.learning_rate)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut model = MlpModel::xavier(layer_sizes, activations, &mut rng)?;
    model.input_norm = Affine::fit(&splits.train.inputs, splits.train.dim);
    model.output_norm = Affine::fit(&splits.train.targets, 1);
    model.validate()?;

    let evaluate = |m: &MlpModel, epoch: usize, lr: f64| EpochRecord {
        epoch,
        learning_rate: lr,
        train_mse: m.mse(splits.train),
        validation_mse: m.mse(splits.validation),
        test_mse: m.mse(splits.test),
    };
    let mut history = vec![evaluate(&model, 0, hyper.learning_rate)];
    let mut best = model.clone();
    let mut best_epoch = 0;

    let n = splits.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(model.params.len());
    let mut grad = vec![0.0; model.params.len()];
    let mut scratch = model.scratch();
    for epoch in 1..=hyper.epochs {
        let lr = hyper.schedule.rate(hyper.learning_rate, epoch - 1, hyper.epochs);
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            let rows = chunk.iter().map(|&i| splits.train.row(i));
            let loss = model.accumulate_gradient(rows, chunk.len(), &mut scratch, &mut grad);
            if !loss.is_finite() {
                return Err(MlpError::NonFiniteLoss { epoch });
            }
            adam.step(&mut model.params, &grad, lr);
        }
        let rec = evaluate(&model, epoch, lr);
        if !rec.train_mse.is_finite() {
            return Err(MlpError::NonFiniteLoss { epoch });
        }
        log::debug!("epoch {epoch}: train {:e} validation {:e} test {:e}", rec.train_mse, rec.validation_mse, rec.test_mse);
        if rec.validation_mse < history[best_epoch].validation_mse {
            best = model.clone();
            best_epoch = epoch;
        }
        history.push(rec);
    }
    let b = history[best_epoch];
    best.training = Some(TrainingMeta {
        epochs: hyper.epochs,
        best_epoch,
        seed: hyper.seed,
        train_mse: b.train_mse,
        validation_mse: b.validation_mse,
        test_mse: b.test_mse,
    });
    let report = TrainReport {
        history,
        best_epoch,
        final_train_mse: b.train_mse,
        final_validation_mse: b.validation_mse,
        final_test_mse: b.test_mse,
    };
    Ok((best, report))
}

/// Trains the default steering network on a dataset's splits.
pub fn train_on_dataset(ds: &Dataset, hyper: &TrainHyper) -> Result<(MlpModel, TrainReport), MlpError> {
    let s = &ds.sidecar.splits;
    let train_set = Examples::from_dataset(ds, &s.train);
    let validation = Examples::from_dataset(ds, &s.validation);
    let test = Examples::from_dataset(ds, &s.test);
    let base = MlpModel::steering_default();
    train(
        base.layer_sizes(),
        base.activations(),
        TrainSplits { train: &train_set, validation: &validation, test: &test },
        hyper,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const ACTS: [Activation; 4] = [Activation::Sigmoid, Activation::Sigmoid, Activation::Sigmoid, Activation::Linear];

    fn random_model(seed: u64) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = MlpModel::xavier(&DEFAULT_LAYER_SIZES, &ACTS, &mut rng).unwrap();
        for p in m.params_mut() {
            *p += rng.gen_range(-0.3..0.3);
        }
        m.input_norm = Affine { shift: vec![1.0, 0.5, 0.0, 0.7], scale: vec![0.01, 0.4, 0.05, 0.2] };
        m.output_norm = Affine { shift: vec![0.0], scale: vec![0.3] };
        m
    }

    fn random_batch(n: usize, seed: u64) -> Examples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = Examples::new(4);
        for _ in 0..n {
            let x = [1.0 + rng.gen_range(0.0..0.01), rng.gen_range(0.0..1.0), rng.gen_range(-0.1..0.1), rng.gen_range(0.5..1.0)];
            e.push(&x, rng.gen_range(-0.5..0.5));
        }
        e
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = MlpModel::steering_default();
        assert_eq!(m.params().len(), 4 * 15 + 15 + 2 * (15 * 15 + 15) + 15 + 1);
        assert_eq!(m.forward(&State::new(1.0, 0.2, -0.1, 0.8)), 0.0);
    }

    #[test]
    fn single_path() {
        let mut m = MlpModel::steering_default();
        // input 0 -> hidden unit 3 of layer 1 -> unit 0 of layer 2 -> unit 0 of layer 3 -> output
        let i = m.weight_index(0, 3, 0);
        m.params_mut()[i] = 1.0;
        let i = m.weight_index(3, 0, 3);
        m.params_mut()[i] = 0.8;
        // layers 2 and 3 see only constant sigmoid(0) = 0.5 inputs; output reads hidden unit 3 of layer 3
        let y = m.forward_raw(&[0.0; 4]);
        assert!((y - 0.5 * 0.8).abs() < 1e-15, "{y}");
        let i = m.bias_index(3, 0);
        m.params_mut()[i] = 0.25;
        assert!((m.forward_raw(&[0.0; 4]) - 0.65).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for seed in 0..4 {
            let m = random_model(seed);
            let batch = random_batch(7, 100 + seed);
            let (_, g) = m.backward(&batch);
            for _ in 0..50 {
                let k = rng.gen_range(0..m.params().len());
                let h = 1e-6;
                let mut a = m.clone();
                a.params_mut()[k] += h;
                let mut b = m.clone();
                b.params_mut()[k] -= h;
                let fd = (a.mse(&batch) - b.mse(&batch)) / (2.0 * h);
                let scale = g[k].abs().max(1e-4);
                assert!((g[k] - fd).abs() / scale < 1e-6, "param {k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn zero_error_batch_has_zero_gradient() {
        let m = random_model(3);
        let mut batch = random_batch(9, 4);
        batch.targets = m.predict(&batch.inputs);
        let (loss, g) = m.backward(&batch);
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_sample_gradient() {
        let m = random_model(5);
        let one = random_batch(1, 6);
        let mut many = Examples::new(4);
        for _ in 0..5 {
            many.push(&one.inputs, one.targets[0]);
        }
        let (l1, g1) = m.backward(&one);
        let (l5, g5) = m.backward(&many);
        assert!((l1 - l5).abs() < 1e-15 * l1.max(1.0));
        for (a, b) in g1.iter().zip(&g5) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-3), "{a} vs {b}");
        }
    }

    fn linear_target(x: &[f64]) -> f64 {
        0.1 * x[0] + 0.2 * x[1] - 0.3 * x[2] + 0.05 * x[3]
    }

    fn linear_set(n: usize, seed: u64) -> Examples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = Examples::new(4);
        for _ in 0..n {
            let x = [1.0 + rng.gen_range(0.0..0.01), rng.gen_range(0.0..1.0), rng.gen_range(-0.1..0.1), rng.gen_range(0.5..1.0)];
            e.push(&x, linear_target(&x));
        }
        e
    }

    #[test]
    fn learns_a_linear_target() {
        let (tr, va, te) = (linear_set(2000, 1), linear_set(400, 2), linear_set(400, 3));
        let hyper = TrainHyper { epochs: 1000, batch_size: 32, learning_rate: 1e-2, schedule: LrSchedule::Cosine { final_lr: 1e-7 }, seed: 9 };
        let (m, rep) = train(&DEFAULT_LAYER_SIZES, &ACTS, TrainSplits { train: &tr, validation: &va, test: &te }, &hyper).unwrap();
        assert!(rep.final_test_mse < 1e-8, "{}", rep.final_test_mse);
        assert!(rep.history[rep.best_epoch].validation_mse <= rep.history[0].validation_mse);
        assert_eq!(m.training.as_ref().unwrap().best_epoch, rep.best_epoch);
        assert_eq!(rep.history.len(), 1001);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (tr, va, te) = (linear_set(50, 1), linear_set(10, 2), linear_set(10, 3));
        let hyper = TrainHyper { epochs: 0, ..TrainHyper::default() };
        let (m, rep) = train(&DEFAULT_LAYER_SIZES, &ACTS, TrainSplits { train: &tr, validation: &va, test: &te }, &hyper).unwrap();
        assert_eq!(rep.history.len(), 1);
        assert_eq!(rep.best_epoch, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let init = MlpModel::xavier(&DEFAULT_LAYER_SIZES, &ACTS, &mut rng).unwrap();
        assert_eq!(m.params(), init.params());
        assert_eq!(rep.final_test_mse, m.mse(&te));
    }

    #[test]
    fn training_is_deterministic() {
        let (tr, va, te) = (linear_set(300, 1), linear_set(50, 2), linear_set(50, 3));
        let hyper = TrainHyper { epochs: 5, ..TrainHyper::default() };
        let run = || train(&DEFAULT_LAYER_SIZES, &ACTS, TrainSplits { train: &tr, validation: &va, test: &te }, &hyper).unwrap();
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_split_is_rejected() {
        let tr = linear_set(10, 1);
        let empty = Examples::new(4);
        let r = train(&DEFAULT_LAYER_SIZES, &ACTS, TrainSplits { train: &tr, validation: &empty, test: &tr }, &TrainHyper::default());
        assert!(matches!(r, Err(MlpError::EmptySplit("validation"))));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut m = random_model(8);
        m.training = Some(TrainingMeta { epochs: 3, best_epoch: 2, seed: 1, train_mse: 1e-5, validation_mse: 2e-5, test_mse: 3e-5 });
        let mut buf = Vec::new();
        m.write_json(&mut buf).unwrap();
        let back = MlpModel::read_json(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let probes = random_batch(100, 9);
        assert_eq!(back.predict(&probes.inputs), m.predict(&probes.inputs));
    }

    #[test]
    fn truncated_and_mismatched_files_fail() {
        let m = random_model(8);
        let mut buf = Vec::new();
        m.write_json(&mut buf).unwrap();
        assert!(matches!(MlpModel::read_json(&buf[..buf.len() / 2]), Err(MlpError::Json(_))));

        let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        v["version"] = 7.into();
        let err = MlpModel::read_json(v.to_string().as_bytes()).unwrap_err();
        assert!(matches!(err, MlpError::Version { expected: 1, found: 7 }));
        let msg = err.to_string();
        assert!(msg.contains('1') && msg.contains('7'), "{msg}");

        let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        v["biases"][1] = serde_json::json!([0.0, 1.0]);
        assert!(matches!(MlpModel::read_json(v.to_string().as_bytes()), Err(MlpError::Dimension(_))));
    }

    #[test]
    fn lipschitz_smoke_bound() {
        let m = random_model(2);
        let l = m.lipschitz_bound();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let probes = random_batch(200, 5);
        for (x, _) in probes.rows() {
            let dx: Vec<f64> = (0..4).map(|_| rng.gen_range(-1e-4..1e-4)).collect();
            let y: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let norm = dx.iter().map(|d| d * d).sum::<f64>().sqrt();
            assert!((m.forward_raw(x) - m.forward_raw(&y)).abs() <= l * norm);
        }
    }
}
