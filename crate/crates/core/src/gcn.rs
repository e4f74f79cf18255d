//! Two-layer graph convolutional regressor for `(x_j, y_j, A)`.
//!
//! `H1 = relu(Â X W1 + b1)`, `H2 = relu(Â H1 W2 + b2)`, mean-pool the node
//! rows of `H2`, then a linear head. Gradients are written out by hand.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, FeatureTransform, GraphSnapshot, Label, Normalizer, FEATURES, LABELS};
use crate::linalg::Matrix;
use crate::num::Scalar;
use crate::optim::Adam;

pub const LAYERS: usize = 2;

/// Anything that can turn a raw snapshot into a jammer estimate.
pub trait JammerEstimator<T> {
    fn estimate(&self, snapshot: &GraphSnapshot<T>) -> Result<Label<T>>;
}

/// Ignores the input and reports a fixed answer.
#[derive(Clone, Copy, Debug)]
pub struct FixedEstimator<T>(pub Label<T>);

impl<T: Scalar> JammerEstimator<T> for FixedEstimator<T> {
    fn estimate(&self, _snapshot: &GraphSnapshot<T>) -> Result<Label<T>> {
        Ok(self.0)
    }
}

/// Weights and biases. Also used as the gradient record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
    pub w_out: Matrix<T>,
    pub b_out: Vec<T>,
}

pub type Gradients<T> = Params<T>;

impl<T: Scalar> Params<T> {
    pub fn zeros(hidden: usize) -> Self {
        Params {
            w1: Matrix::zeros(FEATURES, hidden),
            b1: vec![T::zero(); hidden],
            w2: Matrix::zeros(hidden, hidden),
            b2: vec![T::zero(); hidden],
            w_out: Matrix::zeros(hidden, LABELS),
            b_out: vec![T::zero(); LABELS],
        }
    }

    /// Glorot-uniform matrices, zero biases.
    pub fn glorot(hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(hidden);
        for m in [&mut p.w1, &mut p.w2, &mut p.w_out] {
            let limit = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
            for w in m.as_mut_slice() {
                *w = T::lit(rng.gen_range(-limit..limit));
            }
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn slices(&self) -> [&[T]; 6] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2, self.w_out.as_slice(), &self.b_out]
    }

    pub fn slices_mut(&mut self) -> [&mut [T]; 6] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
            self.w_out.as_mut_slice(),
            &mut self.b_out,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        let shapes_ok = self.w1.rows() == FEATURES
            && self.w1.cols() == h
            && self.w2.rows() == h
            && self.w2.cols() == h
            && self.b2.len() == h
            && self.w_out.rows() == h
            && self.w_out.cols() == LABELS
            && self.b_out.len() == LABELS;
        if !shapes_ok {
            return Err(Error::Shape(format!("parameter shapes inconsistent with hidden width {h}")));
        }
        if self.slices().iter().any(|s| s.iter().any(|x| !x.is_finite())) {
            return Err(Error::Domain("non-finite weight".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub hidden: usize,
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub hidden: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub feature_transform: FeatureTransform,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 0.001,
            epochs: 1000,
            val_fraction: 0.1,
            seed: 0,
            hidden: 64,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            feature_transform: FeatureTransform::LogProbability,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidConfig("val_fraction must lie in (0, 1)".into()));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden width must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("optimizer hyperparameters out of range".into()));
        }
        Ok(())
    }
}

/// Trained (or freshly initialized) network with its frozen normalizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnModel<T> {
    pub arch: Arch,
    pub normalizer: Normalizer<T>,
    pub weights: Params<T>,
    pub seed: u64,
    pub train_config: TrainConfig,
}

/// A sample with its propagation matrix and standardized inputs precomputed.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    a_hat: Matrix<T>,
    /// `Â X`, constant per sample.
    ax: Matrix<T>,
    label: [T; LABELS],
    max_p: T,
}

impl<T: Scalar> Prepared<T> {
    /// `snapshot` and `label` must already be standardized.
    pub fn new(snapshot: &GraphSnapshot<T>, label: [T; LABELS]) -> Result<Self> {
        snapshot.validate()?;
        if snapshot.num_nodes() == 0 {
            return Err(Error::Shape("snapshot has no nodes".into()));
        }
        let a_hat = normalize_adjacency(&snapshot.adjacency);
        let x = Matrix::from_rows(&snapshot.features);
        let ax = a_hat.matmul(&x);
        Ok(Prepared { a_hat, ax, label, max_p: T::zero() })
    }

    fn from_sample(sample: &Sample<T>, normalizer: &Normalizer<T>) -> Result<Self> {
        let mut p = Self::new(&normalizer.standardize(&sample.snapshot), normalizer.standardize_label(&sample.label))?;
        p.max_p = sample.max_probability();
        Ok(p)
    }
}

struct Trace<T> {
    z1: Matrix<T>,
    ah1: Matrix<T>,
    z2: Matrix<T>,
    pooled: Vec<T>,
    out: [T; LABELS],
}

fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

fn forward_trace<T: Scalar>(w: &Params<T>, s: &Prepared<T>) -> Trace<T> {
    let mut z1 = s.ax.matmul(&w.w1);
    z1.add_row_vector(&w.b1);
    let ah1 = s.a_hat.matmul(&z1.map(relu));
    let mut z2 = ah1.matmul(&w.w2);
    z2.add_row_vector(&w.b2);
    let inv_n = T::one() / T::lit(z2.rows() as f64);
    let pooled: Vec<T> = z2.map(relu).column_sums().into_iter().map(|c| c * inv_n).collect();
    let out = std::array::from_fn(|k| {
        w.b_out[k] + pooled.iter().enumerate().map(|(h, &g)| g * w.w_out[(h, k)]).sum::<T>()
    });
    Trace { z1, ah1, z2, pooled, out }
}

/// Mean squared error over the three label components.
pub fn loss<T: Scalar>(pred: &[T; LABELS], label: &[T; LABELS]) -> T {
    pred.iter().zip(label).map(|(&p, &l)| (p - l) * (p - l)).sum::<T>() / T::lit(LABELS as f64)
}

/// Adds `scale * dLoss/dParams` for one sample into `grads`; returns the loss.
fn accumulate_gradient<T: Scalar>(w: &Params<T>, s: &Prepared<T>, scale: T, grads: &mut Gradients<T>) -> T {
    let tr = forward_trace(w, s);
    let two_thirds = T::lit(2.0 / LABELS as f64);
    let d_out: [T; LABELS] = std::array::from_fn(|k| two_thirds * (tr.out[k] - s.label[k]) * scale);

    let hidden = w.hidden();
    let mut d_pooled = vec![T::zero(); hidden];
    for h in 0..hidden {
        for k in 0..LABELS {
            grads.w_out[(h, k)] = grads.w_out[(h, k)] + tr.pooled[h] * d_out[k];
            d_pooled[h] = d_pooled[h] + w.w_out[(h, k)] * d_out[k];
        }
    }
    for k in 0..LABELS {
        grads.b_out[k] = grads.b_out[k] + d_out[k];
    }

    let n = tr.z2.rows();
    let inv_n = T::one() / T::lit(n as f64);
    let mut d_z2 = Matrix::zeros(n, hidden);
    for i in 0..n {
        for h in 0..hidden {
            if tr.z2[(i, h)] > T::zero() {
                d_z2[(i, h)] = d_pooled[h] * inv_n;
            }
        }
    }
    add_into(grads.w2.as_mut_slice(), tr.ah1.t_matmul(&d_z2).as_slice());
    add_into(&mut grads.b2, &d_z2.column_sums());

    let d_ah1 = d_z2.matmul_t(&w.w2);
    let mut d_z1 = s.a_hat.t_matmul(&d_ah1);
    for (d, &z) in d_z1.as_mut_slice().iter_mut().zip(tr.z1.as_slice()) {
        if z <= T::zero() {
            *d = T::zero();
        }
    }
    add_into(grads.w1.as_mut_slice(), s.ax.t_matmul(&d_z1).as_slice());
    add_into(&mut grads.b1, &d_z1.column_sums());
    loss(&tr.out, &s.label)
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Mean gradient and mean loss over a batch, summed in index order.
pub fn batch_gradient<T: Scalar>(w: &Params<T>, batch: &[&Prepared<T>]) -> (Gradients<T>, T) {
    let mut grads = Params::zeros(w.hidden());
    let inv = T::one() / T::lit(batch.len() as f64);
    let mut total = T::zero();
    for s in batch {
        total = total + accumulate_gradient(w, s, inv, &mut grads);
    }
    (grads, total * inv)
}

pub fn batch_loss<T: Scalar>(w: &Params<T>, batch: &[&Prepared<T>]) -> T {
    let total: T = batch.iter().map(|s| loss(&forward_trace(w, s).out, &s.label)).sum();
    total / T::lit(batch.len() as f64)
}

impl<T: Scalar> GcnModel<T> {
    pub fn new(weights: Params<T>, normalizer: Normalizer<T>, seed: u64, train_config: TrainConfig) -> Result<Self> {
        let model = GcnModel {
            arch: Arch { hidden: weights.hidden(), layers: LAYERS },
            normalizer,
            weights,
            seed,
            train_config,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arch.layers != LAYERS {
            return Err(Error::Shape(format!("only {LAYERS}-layer models are supported")));
        }
        if self.arch.hidden != self.weights.hidden() {
            return Err(Error::Shape("arch.hidden disagrees with weight shapes".into()));
        }
        self.weights.validate()?;
        self.normalizer.validate()
    }

    /// A model whose output is always `label`: zero weights, identity
    /// normalizer, output bias set to the label. Useful as an oracle when
    /// the true jammer is known, and as a baseline.
    pub fn constant(label: Label<T>, hidden: usize) -> Result<Self> {
        let mut weights = Params::zeros(hidden);
        weights.b_out = label.to_array().to_vec();
        let train_config = TrainConfig { epochs: 0, hidden, ..TrainConfig::default() };
        Self::new(weights, Normalizer::identity(), 0, train_config)
    }

    /// Standardized prediction for an already standardized snapshot.
    pub fn forward(&self, snapshot: &GraphSnapshot<T>) -> Result<[T; LABELS]> {
        let prepared = Prepared::new(snapshot, [T::zero(); LABELS])?;
        Ok(forward_trace(&self.weights, &prepared).out)
    }

    /// Mean loss and its exact gradient over standardized `(snapshot, label)` pairs.
    pub fn backward(&self, batch: &[(GraphSnapshot<T>, [T; LABELS])]) -> Result<(Gradients<T>, T)> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let prepared = batch.iter().map(|(s, l)| Prepared::new(s, *l)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = prepared.iter().collect();
        Ok(batch_gradient(&self.weights, &refs))
    }

    pub fn predict(&self, raw: &GraphSnapshot<T>) -> Result<Label<T>> {
        let out = self.forward(&self.normalizer.standardize(raw))?;
        Ok(self.normalizer.destandardize_label(&out))
    }

    pub fn to_json(&self) -> Result<String>
    where
        T: Serialize,
    {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self>
    where
        T: for<'de> Deserialize<'de>,
    {
        let model: Self = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }
}

impl<T: Scalar> JammerEstimator<T> for GcnModel<T> {
    fn estimate(&self, snapshot: &GraphSnapshot<T>) -> Result<Label<T>> {
        self.predict(snapshot)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: GcnModel<T>,
    pub curve: Vec<EpochLoss>,
}

/// Seeded shuffle, then the last `ceil(val_fraction * n)` indices validate.
pub fn split_indices(n: usize, val_fraction: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = ((val_fraction * n as f64).ceil() as usize).min(n);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Mini-batch training with Adam. Everything random (split, initialization,
/// batch order) is drawn from one generator seeded by `cfg.seed`.
pub fn train<T: Scalar>(dataset: &[Sample<T>], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with_progress(dataset, cfg, |_| {})
}

pub fn train_with_progress<T: Scalar>(
    dataset: &[Sample<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.val_fraction, &mut rng);
    if train_idx.len() < cfg.batch_size || val_idx.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} samples cannot fill a batch of {} after a {} validation split",
            dataset.len(),
            cfg.batch_size,
            cfg.val_fraction
        )));
    }

    let normalizer = Normalizer::fit(
        cfg.feature_transform,
        train_idx.iter().flat_map(|&i| dataset[i].snapshot.features.iter()),
        train_idx.iter().map(|&i| &dataset[i].label),
    )?;
    let weights = Params::glorot(cfg.hidden, &mut rng);
    let mut model = GcnModel::new(weights, normalizer, cfg.seed, cfg.clone())?;

    let prepare = |idx: &[usize]| -> Result<Vec<Prepared<T>>> {
        idx.iter().map(|&i| Prepared::from_sample(&dataset[i], &model.normalizer)).collect()
    };
    let mut train_set = prepare(&train_idx)?;
    let val_set = prepare(&val_idx)?;
    let val_refs: Vec<_> = val_set.iter().collect();

    let mut adam = Adam::new(
        cfg.hidden,
        T::lit(cfg.learning_rate),
        T::lit(cfg.beta1),
        T::lit(cfg.beta2),
        T::lit(cfg.epsilon),
    );
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        train_set.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in train_set.chunks(cfg.batch_size) {
            let refs: Vec<_> = chunk.iter().collect();
            let (grads, batch_mean) = batch_gradient(&model.weights, &refs);
            let batch_mean = batch_mean.to_f64_lossy();
            if !batch_mean.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            sum += batch_mean * chunk.len() as f64;
            adam.step(&mut model.weights, &grads);
        }
        let record = EpochLoss {
            epoch,
            train_loss: sum / train_set.len() as f64,
            val_loss: batch_loss(&model.weights, &val_refs).to_f64_lossy(),
        };
        if !record.val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        on_epoch(&record);
        curve.push(record);
    }
    Ok(TrainOutcome { model, curve })
}

pub fn write_loss_csv(curve: &[EpochLoss], mut w: impl Write) -> Result<()> {
    writeln!(w, "epoch,train_loss,val_loss")?;
    for e in curve {
        writeln!(w, "{},{},{}", e.epoch, e.train_loss, e.val_loss)?;
    }
    Ok(())
}

pub fn read_loss_csv(r: impl BufRead) -> Result<Vec<EpochLoss>> {
    let mut lines = r.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim() == "epoch,train_loss,val_loss" => {}
        _ => return Err(Error::MalformedLog("loss csv header missing".into())),
    }
    let mut curve = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::MalformedLog(format!("bad loss csv row: {line}"));
        let mut parts = line.split(',');
        let mut next = || parts.next().ok_or_else(bad);
        let epoch = next()?.trim().parse().map_err(|_| bad())?;
        let train_loss = next()?.trim().parse().map_err(|_| bad())?;
        let val_loss = next()?.trim().parse().map_err(|_| bad())?;
        curve.push(EpochLoss { epoch, train_loss, val_loss });
    }
    Ok(curve)
}

/// Error summary in destandardized units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub count: usize,
    /// Mean over samples and the three components of squared error.
    pub mse_overall: f64,
    pub position_rmse_m: f64,
    pub a_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    /// Half-open `[lo, hi)` on the largest node `P`; the last bucket is closed.
    pub lo: f64,
    pub hi: f64,
    pub metrics: Option<ErrorMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: ErrorMetrics,
    pub buckets: Vec<BucketReport>,
}

pub const P_BUCKETS: [(f64, f64); 3] = [(0.0, 0.01), (0.01, 0.1), (0.1, 1.0)];

pub fn bucket_of(max_p: f64) -> usize {
    P_BUCKETS.iter().position(|&(_, hi)| max_p < hi).unwrap_or(P_BUCKETS.len() - 1)
}

#[derive(Default)]
struct ErrorAccumulator {
    count: usize,
    sq: f64,
    pos_sq: f64,
    a_abs: f64,
}

impl ErrorAccumulator {
    fn push(&mut self, pred: [f64; LABELS], truth: [f64; LABELS]) {
        let d: [f64; LABELS] = std::array::from_fn(|k| pred[k] - truth[k]);
        self.count += 1;
        self.sq += d.iter().map(|x| x * x).sum::<f64>() / LABELS as f64;
        self.pos_sq += d[0] * d[0] + d[1] * d[1];
        self.a_abs += d[2].abs();
    }

    fn finish(&self) -> Option<ErrorMetrics> {
        (self.count > 0).then(|| {
            let n = self.count as f64;
            ErrorMetrics {
                count: self.count,
                mse_overall: self.sq / n,
                position_rmse_m: (self.pos_sq / n).sqrt(),
                a_mae: self.a_abs / n,
            }
        })
    }
}

/// Destandardized errors overall and stratified by the largest node `P`.
pub fn evaluate<T: Scalar, E: JammerEstimator<T> + ?Sized>(estimator: &E, dataset: &[Sample<T>]) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut overall = ErrorAccumulator::default();
    let mut buckets: Vec<ErrorAccumulator> = P_BUCKETS.iter().map(|_| ErrorAccumulator::default()).collect();
    for sample in dataset {
        let pred = estimator.estimate(&sample.snapshot)?.to_array().map(|x| x.to_f64_lossy());
        let truth = sample.label.to_array().map(|x| x.to_f64_lossy());
        overall.push(pred, truth);
        buckets[bucket_of(sample.max_probability().to_f64_lossy())].push(pred, truth);
    }
    Ok(EvalReport {
        overall: overall.finish().expect("dataset is nonempty"),
        buckets: P_BUCKETS
            .iter()
            .zip(&buckets)
            .map(|(&(lo, hi), acc)| BucketReport { lo, hi, metrics: acc.finish() })
            .collect(),
    })
}
