//! Stress-prediction models over pattern datasets: a convolutional
//! network on bus angle-difference images, a small fully-connected
//! baseline on selected bus-pair angle differences, and a CART baseline
//! on the same features. Also the versioned checkpoint container.
//!
//! Patterns sharing an operating condition share their input image, so
//! the convolutional stack and the image half of the first dense layer
//! are computed once per image and reused across contingencies; the
//! contingency one-hot contributes exactly one weight column, so the
//! grouped path is bit-identical to the naive forward pass.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::mape_accuracy;
use crate::neural::{
    adam_step, conv_out_dim, relu, relu_backward, sigmoid, AdamState, Conv2d, Dense, Dropout,
    Layer, MaxPool, NeuralError, Sequential, Tensor,
};
use crate::scenario::{Dataset, Split};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("network geometry: {0}")]
    Geometry(String),
    #[error("data: {0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("artifact fingerprint does not match the supplied case/config")]
    FingerprintMismatch,
}

/// Output head: sigmoid + cross-entropy for the stressed/unstressed
/// decision, linear + MSE for security-index regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Classification,
    Regression,
}

// --- geometry ---------------------------------------------------------

/// Spatial sizes through conv(5) -> pool(2/2) -> conv(5) -> pool(2/2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnGeometry {
    pub pad: usize,
    pub s1: usize,
    pub p1: usize,
    pub s2: usize,
    pub p2: usize,
}

/// Picks the convolution padding for an N x N input: valid (pad 0)
/// convolutions when every stage stays non-degenerate, otherwise pad 2
/// (size-preserving for a 5x5 kernel). Inputs too small for either are
/// rejected.
pub fn cnn_geometry(n: usize, k: usize) -> Result<CnnGeometry, ModelError> {
    for pad in [0usize, (k - 1) / 2] {
        if n + 2 * pad < k {
            continue;
        }
        let s1 = conv_out_dim(n, k, 1, pad);
        if s1 < 2 {
            continue;
        }
        let p1 = (s1 - 2) / 2 + 1;
        if p1 + 2 * pad < k {
            continue;
        }
        let s2 = conv_out_dim(p1, k, 1, pad);
        if s2 < 2 {
            continue;
        }
        let p2 = (s2 - 2) / 2 + 1;
        if p2 == 0 {
            continue;
        }
        return Ok(CnnGeometry { pad, s1, p1, s2, p2 });
    }
    Err(ModelError::Geometry(format!(
        "input {n}x{n} is too small for two conv({k})/pool stages"
    )))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnnConfig {
    /// Image side length (number of buses).
    pub n: usize,
    pub n_contingencies: usize,
    pub maps1: usize,
    pub maps2: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub head: Head,
}

impl CnnConfig {
    pub fn standard(n: usize, n_contingencies: usize, head: Head) -> Self {
        CnnConfig {
            n,
            n_contingencies,
            maps1: 10,
            maps2: 20,
            kernel: 5,
            hidden: 1100,
            dropout: 0.5,
            head,
        }
    }
}

// --- the convolutional model -------------------------------------------

#[derive(Debug, Clone)]
pub struct PaperlikeCnn {
    pub cfg: CnnConfig,
    pub geom: CnnGeometry,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub pool: MaxPool,
    /// Input = flattened conv features ++ contingency one-hot.
    pub dense1: Dense,
    pub dense2: Dense,
    pub dropout: Dropout,
    pub norm_mean: Vec<f32>,
    pub norm_scale: Vec<f32>,
}

/// Cached forward state for one image, shared by every contingency of
/// that operating condition.
pub struct ConvTrace {
    x: Tensor,
    mask1: Vec<bool>,
    arg1: Vec<u32>,
    z1_shape: Vec<usize>,
    pool1: Tensor,
    mask2: Vec<bool>,
    arg2: Vec<u32>,
    z2_shape: Vec<usize>,
    pool2_shape: Vec<usize>,
    /// Flattened conv features.
    pub features: Vec<f64>,
    /// dense1 image-half pre-activation: W1[:, ..flat] * features + b1.
    pub partial: Vec<f64>,
}

impl PaperlikeCnn {
    pub fn new(cfg: CnnConfig) -> Result<Self, ModelError> {
        let geom = cnn_geometry(cfg.n, cfg.kernel)?;
        let flat = cfg.maps2 * geom.p2 * geom.p2;
        let n2 = cfg.n * cfg.n;
        Ok(PaperlikeCnn {
            conv1: Conv2d::new(1, cfg.maps1, cfg.kernel, 1, geom.pad),
            conv2: Conv2d::new(cfg.maps1, cfg.maps2, cfg.kernel, 1, geom.pad),
            pool: MaxPool { window: 2, stride: 2 },
            dense1: Dense::new(flat + cfg.n_contingencies, cfg.hidden),
            dense2: Dense::new(cfg.hidden, 1),
            dropout: Dropout::new(cfg.dropout)?,
            norm_mean: vec![0.0; n2],
            norm_scale: vec![1.0; n2],
            geom,
            cfg,
        })
    }

    pub fn flat_features(&self) -> usize {
        self.cfg.maps2 * self.geom.p2 * self.geom.p2
    }

    pub fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.conv1.init(&mut rng);
        self.conv2.init(&mut rng);
        self.dense1.init(&mut rng);
        self.dense2.init(&mut rng);
    }

    /// Copy per-feature standardization statistics from the dataset.
    pub fn set_normalization(&mut self, ds: &Dataset) -> Result<(), ModelError> {
        if ds.norm_mean.len() != self.cfg.n * self.cfg.n {
            return Err(ModelError::Data(
                "dataset has no normalization statistics; split it first".into(),
            ));
        }
        self.norm_mean = ds.norm_mean.clone();
        self.norm_scale = ds.norm_scale.clone();
        Ok(())
    }

    fn input_tensor(&self, image: &[f32]) -> Tensor {
        let n = self.cfg.n;
        let data = image
            .iter()
            .enumerate()
            .map(|(i, &v)| (v as f64 - self.norm_mean[i] as f64) / self.norm_scale[i] as f64)
            .collect();
        Tensor::from_vec(&[1, n, n], data)
    }

    /// Conv stack + image half of dense1, computed once per image.
    pub fn conv_trace(&self, image: &[f32]) -> Result<ConvTrace, ModelError> {
        let x = self.input_tensor(image);
        let z1 = self.conv1.forward(&x)?;
        let (a1, mask1) = relu(&z1);
        let (pool1, arg1) = self.pool.forward(&a1)?;
        let z2 = self.conv2.forward(&pool1)?;
        let (a2, mask2) = relu(&z2);
        let (pool2, arg2) = self.pool.forward(&a2)?;
        let features = pool2.data.clone();
        let flat = features.len();
        let mut partial = vec![0.0; self.dense1.n_out];
        for (o, p) in partial.iter_mut().enumerate() {
            let row = &self.dense1.w[o * self.dense1.n_in..o * self.dense1.n_in + flat];
            let mut acc = self.dense1.b[o];
            for (w, f) in row.iter().zip(&features) {
                acc += w * f;
            }
            *p = acc;
        }
        Ok(ConvTrace {
            x,
            mask1,
            arg1,
            z1_shape: z1.shape,
            pool1,
            mask2,
            arg2,
            z2_shape: z2.shape,
            pool2_shape: pool2.shape,
            features,
            partial,
        })
    }

    fn head_out(&self, z: f64) -> f64 {
        match self.cfg.head {
            Head::Classification => sigmoid(z),
            Head::Regression => z,
        }
    }

    /// Inference for one (image, contingency) pattern given the image
    /// cache. Dropout is identity at inference.
    pub fn predict_cached(&self, trace: &ConvTrace, contingency: u32) -> f64 {
        let flat = trace.features.len();
        let col = flat + contingency as usize;
        let hidden = self.dense1.n_out;
        let mut z2 = self.dense2.b[0];
        for o in 0..hidden {
            let z1 = trace.partial[o] + self.dense1.w[o * self.dense1.n_in + col];
            if z1 > 0.0 {
                z2 += self.dense2.w[o] * z1;
            }
        }
        self.head_out(z2)
    }

    /// Definition-level forward pass (full one-hot vector through
    /// dense1). Used to certify the grouped path.
    pub fn predict_naive(&self, image: &[f32], contingency: u32) -> Result<f64, ModelError> {
        let trace = self.conv_trace(image)?;
        let mut input = trace.features.clone();
        let mut onehot = vec![0.0; self.cfg.n_contingencies];
        onehot[contingency as usize] = 1.0;
        input.extend(onehot);
        let z1 = self.dense1.forward(&Tensor::from_vec(&[input.len()], input))?;
        let (a1, _) = relu(&z1);
        let z2 = self.dense2.forward(&a1)?;
        Ok(self.head_out(z2.data[0]))
    }

    /// Predictions for a set of pattern indices, grouped by operating
    /// condition so each image's conv stack runs once.
    pub fn predict_patterns(
        &self,
        ds: &Dataset,
        indices: &[usize],
    ) -> Result<Vec<f64>, ModelError> {
        let mut by_oc: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (pos, &idx) in indices.iter().enumerate() {
            by_oc.entry(ds.patterns[idx].oc_index).or_default().push(pos);
        }
        let mut out = vec![0.0; indices.len()];
        for (oc, positions) in by_oc {
            let trace = self.conv_trace(ds.image(oc))?;
            for pos in positions {
                let p = &ds.patterns[indices[pos]];
                out[pos] = self.predict_cached(&trace, p.contingency_id);
            }
        }
        Ok(out)
    }

    /// Loss gradient for a batch of patterns sharing one image.
    ///
    /// Returns (summed loss, summed parameter gradients); the caller
    /// scales by the batch size. The per-sample work is confined to the
    /// dense tail; conv-stack and dense1 image-half gradients are
    /// accumulated once via linearity of the backward maps in the
    /// upstream gradient.
    fn batch_grad(
        &self,
        trace: &ConvTrace,
        samples: &[(u32, f64)],
        train: bool,
        rng: &mut ChaCha8Rng,
        grads: &mut CnnGrads,
    ) -> Result<f64, ModelError> {
        let flat = trace.features.len();
        let hidden = self.dense1.n_out;
        let n_in = self.dense1.n_in;
        let mut loss = 0.0;
        // summed dL/dz1 over the batch (image half reuses it wholesale)
        let mut dz1_sum = vec![0.0; hidden];
        let mut z1 = vec![0.0; hidden];
        let mut h = vec![0.0; hidden];
        for &(contingency, target) in samples {
            let col = flat + contingency as usize;
            for o in 0..hidden {
                let z = trace.partial[o] + self.dense1.w[o * n_in + col];
                z1[o] = if z > 0.0 { z } else { 0.0 };
            }
            let (hid, drop_mask) = if train && self.dropout.rate > 0.0 {
                let keep = 1.0 - self.dropout.rate;
                let mut mask = vec![0.0; hidden];
                for (m, hv) in mask.iter_mut().zip(&z1) {
                    *m = if rng.gen::<f64>() < self.dropout.rate {
                        0.0
                    } else {
                        1.0 / keep
                    };
                    let _ = hv;
                }
                for o in 0..hidden {
                    h[o] = z1[o] * mask[o];
                }
                (&h, Some(mask))
            } else {
                h.copy_from_slice(&z1);
                (&h, None)
            };
            let mut z2 = self.dense2.b[0];
            for o in 0..hidden {
                z2 += self.dense2.w[o] * hid[o];
            }
            let pred = self.head_out(z2);
            let dz2 = match self.cfg.head {
                Head::Classification => {
                    let p = pred.clamp(1e-12, 1.0 - 1e-12);
                    loss -= target * p.ln() + (1.0 - target) * (1.0 - p).ln();
                    pred - target
                }
                Head::Regression => {
                    loss += (pred - target) * (pred - target);
                    2.0 * (pred - target)
                }
            };
            grads.db2 += dz2;
            for o in 0..hidden {
                grads.dw2[o] += dz2 * hid[o];
                let mut dh = dz2 * self.dense2.w[o];
                if let Some(mask) = &drop_mask {
                    dh *= mask[o];
                }
                let dz1 = if z1[o] > 0.0 { dh } else { 0.0 };
                if dz1 != 0.0 {
                    grads.dw1[o * n_in + col] += dz1;
                    grads.db1[o] += dz1;
                    dz1_sum[o] += dz1;
                }
            }
        }
        // image half of dense1: dW1[o][..flat] += dz1_sum[o] * features
        let mut dfeat = vec![0.0; flat];
        for o in 0..hidden {
            let g = dz1_sum[o];
            if g == 0.0 {
                continue;
            }
            let dw_row = &mut grads.dw1[o * n_in..o * n_in + flat];
            let w_row = &self.dense1.w[o * n_in..o * n_in + flat];
            for i in 0..flat {
                dw_row[i] += g * trace.features[i];
                dfeat[i] += g * w_row[i];
            }
        }
        // conv stack backward once with the summed feature gradient
        let dpool2 = Tensor::from_vec(&trace.pool2_shape, dfeat);
        let da2 = self.pool.backward(&dpool2, &trace.arg2, &trace.z2_shape);
        let dz2c = relu_backward(&da2, &trace.mask2);
        let (dpool1, dw_c2, db_c2) = self.conv2.backward(&trace.pool1, &dz2c)?;
        let da1 = self.pool.backward(&dpool1, &trace.arg1, &trace.z1_shape);
        let dz1c = relu_backward(&da1, &trace.mask1);
        let (_, dw_c1, db_c1) = self.conv1.backward(&trace.x, &dz1c)?;
        for (a, b) in grads.dw_c1.iter_mut().zip(dw_c1) {
            *a += b;
        }
        for (a, b) in grads.db_c1.iter_mut().zip(db_c1) {
            *a += b;
        }
        for (a, b) in grads.dw_c2.iter_mut().zip(dw_c2) {
            *a += b;
        }
        for (a, b) in grads.db_c2.iter_mut().zip(db_c2) {
            *a += b;
        }
        Ok(loss)
    }

    /// Flattened parameters: conv1 w,b; conv2 w,b; dense1 w,b; dense2 w,b.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend(&self.conv1.w);
        out.extend(&self.conv1.b);
        out.extend(&self.conv2.w);
        out.extend(&self.conv2.b);
        out.extend(&self.dense1.w);
        out.extend(&self.dense1.b);
        out.extend(&self.dense2.w);
        out.extend(&self.dense2.b);
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for slice in [
            &mut self.conv1.w,
            &mut self.conv1.b,
            &mut self.conv2.w,
            &mut self.conv2.b,
            &mut self.dense1.w,
            &mut self.dense1.b,
            &mut self.dense2.w,
            &mut self.dense2.b,
        ] {
            let len = slice.len();
            slice.copy_from_slice(&flat[pos..pos + len]);
            pos += len;
        }
        assert_eq!(pos, flat.len());
    }

    pub fn n_params(&self) -> usize {
        self.conv1.w.len()
            + self.conv1.b.len()
            + self.conv2.w.len()
            + self.conv2.b.len()
            + self.dense1.w.len()
            + self.dense1.b.len()
            + self.dense2.w.len()
            + self.dense2.b.len()
    }
}

struct CnnGrads {
    dw_c1: Vec<f64>,
    db_c1: Vec<f64>,
    dw_c2: Vec<f64>,
    db_c2: Vec<f64>,
    dw1: Vec<f64>,
    db1: Vec<f64>,
    dw2: Vec<f64>,
    db2: f64,
}

impl CnnGrads {
    fn zeros(model: &PaperlikeCnn) -> Self {
        CnnGrads {
            dw_c1: vec![0.0; model.conv1.w.len()],
            db_c1: vec![0.0; model.conv1.b.len()],
            dw_c2: vec![0.0; model.conv2.w.len()],
            db_c2: vec![0.0; model.conv2.b.len()],
            dw1: vec![0.0; model.dense1.w.len()],
            db1: vec![0.0; model.dense1.b.len()],
            dw2: vec![0.0; model.dense2.w.len()],
            db2: 0.0,
        }
    }

    fn into_flat(self, scale: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for v in [
            self.dw_c1, self.db_c1, self.dw_c2, self.db_c2, self.dw1, self.db1, self.dw2,
        ] {
            out.extend(v.into_iter().map(|g| g * scale));
        }
        out.push(self.db2 * scale);
        out
    }
}

// --- training --------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
    /// Multiplicative learning-rate decay applied once per epoch; 1.0
    /// keeps the rate constant.
    pub eta_decay: f64,
    pub seed: u64,
    pub paper_exact_adam: bool,
    /// Stop once the test-split metric (accuracy, or 1 - MAPE for
    /// regression) reaches this value.
    pub target_metric: Option<f64>,
    pub log: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 200,
            batch_size: 64,
            eta: 1e-3,
            eta_decay: 1.0,
            seed: 1,
            paper_exact_adam: false,
            target_metric: None,
            log: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_loss: Vec<f64>,
    pub test_metric: Vec<f64>,
    pub best_metric: f64,
    pub early_stopped: bool,
    /// Set when training aborted on a non-finite loss; the trace up to
    /// the abort is retained.
    pub diverged: Option<String>,
}

fn pattern_target(head: Head, label_si: f64, label_stressed: bool) -> f64 {
    match head {
        Head::Classification => {
            if label_stressed {
                1.0
            } else {
                0.0
            }
        }
        Head::Regression => label_si,
    }
}

/// Test-split metric: classification accuracy at threshold 0.5, or
/// 1 - MAPE over nonzero targets for regression.
pub fn test_metric(model: &PaperlikeCnn, ds: &Dataset) -> Result<f64, ModelError> {
    let idx = ds.split_indices(Split::Test);
    if idx.is_empty() {
        return Err(ModelError::Data("empty test split".into()));
    }
    let preds = model.predict_patterns(ds, &idx)?;
    metric_of(model.cfg.head, &preds, ds, &idx)
}

pub fn metric_of(
    head: Head,
    preds: &[f64],
    ds: &Dataset,
    indices: &[usize],
) -> Result<f64, ModelError> {
    match head {
        Head::Classification => {
            let correct = preds
                .iter()
                .zip(indices)
                .filter(|&(&p, &i)| (p > 0.5) == ds.patterns[i].label_stressed)
                .count();
            Ok(correct as f64 / indices.len() as f64)
        }
        Head::Regression => {
            let targets: Vec<f64> = indices.iter().map(|&i| ds.patterns[i].label_si).collect();
            let (_, acc) = mape_accuracy(preds, &targets)
                .map_err(|e| ModelError::Data(format!("regression metric: {e}")))?;
            Ok(acc)
        }
    }
}

/// Minibatch Adam training. Batches are drawn within one operating
/// condition so every sample of a batch shares its image; the OC order
/// and in-OC order are reshuffled each epoch from the seed.
pub fn train_cnn(
    model: &mut PaperlikeCnn,
    ds: &Dataset,
    opts: &TrainOptions,
) -> Result<TrainReport, ModelError> {
    let train_idx = ds.split_indices(Split::Train);
    if train_idx.is_empty() {
        return Err(ModelError::Data("empty training split".into()));
    }
    let mut by_oc: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in &train_idx {
        by_oc.entry(ds.patterns[i].oc_index).or_default().push(i);
    }
    let oc_list: Vec<u32> = by_oc.keys().copied().collect();
    let mut params = model.params();
    let mut adam = AdamState::new(params.len(), opts.eta, opts.paper_exact_adam);
    let mut report = TrainReport {
        epochs_run: 0,
        train_loss: Vec::new(),
        test_metric: Vec::new(),
        best_metric: f64::NEG_INFINITY,
        early_stopped: false,
        diverged: None,
    };
    'epochs: for epoch in 0..opts.epochs {
        adam.eta = opts.eta * opts.eta_decay.powi(epoch as i32);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9));
        let mut ocs = oc_list.clone();
        shuffle(&mut ocs, &mut rng);
        let mut loss_sum = 0.0;
        let mut n_samples = 0usize;
        for &oc in &ocs {
            let mut members = by_oc[&oc].clone();
            shuffle(&mut members, &mut rng);
            let trace = model.conv_trace(ds.image(oc))?;
            for chunk in members.chunks(opts.batch_size) {
                let samples: Vec<(u32, f64)> = chunk
                    .iter()
                    .map(|&i| {
                        let p = &ds.patterns[i];
                        (
                            p.contingency_id,
                            pattern_target(model.cfg.head, p.label_si, p.label_stressed),
                        )
                    })
                    .collect();
                let mut grads = CnnGrads::zeros(model);
                let loss = model.batch_grad(&trace, &samples, true, &mut rng, &mut grads)?;
                if !loss.is_finite() {
                    report.diverged = Some(format!("non-finite batch loss at epoch {epoch}"));
                    break 'epochs;
                }
                loss_sum += loss;
                n_samples += chunk.len();
                let flat = grads.into_flat(1.0 / chunk.len() as f64);
                adam_step(&mut params, &flat, &mut adam)?;
                model.set_params(&params);
            }
        }
        let train_loss = loss_sum / n_samples as f64;
        let metric = test_metric(model, ds)?;
        report.epochs_run = epoch + 1;
        report.train_loss.push(train_loss);
        report.test_metric.push(metric);
        report.best_metric = report.best_metric.max(metric);
        if opts.log {
            eprintln!("epoch {:>3}  train loss {train_loss:.6}  test metric {metric:.4}", epoch + 1);
        }
        if let Some(target) = opts.target_metric {
            if metric >= target {
                report.early_stopped = true;
                break;
            }
        }
    }
    Ok(report)
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

// --- dense baseline ---------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Buses whose pairwise angle differences form the input.
    pub feature_buses: Vec<usize>,
    pub hidden: Vec<usize>,
    pub head: Head,
}

/// Evenly spaced monitored buses for the baseline feature set; capped
/// at the bus count so small systems use every bus.
pub fn select_feature_buses(n_buses: usize, count: usize) -> Vec<usize> {
    let count = count.min(n_buses);
    (0..count).map(|i| i * n_buses / count).collect()
}

/// Pairwise angle differences theta_a - theta_b for a < b, read straight
/// from the angle-difference image.
pub fn pair_features(image: &[f32], n: usize, buses: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(buses.len() * (buses.len() - 1) / 2);
    for (i, &a) in buses.iter().enumerate() {
        for &b in &buses[i + 1..] {
            out.push(image[a * n + b] as f64);
        }
    }
    out
}

pub fn build_mlp(cfg: &MlpConfig) -> Sequential {
    let n_features = cfg.feature_buses.len() * (cfg.feature_buses.len() - 1) / 2;
    let mut layers = Vec::new();
    let mut prev = n_features;
    for &h in &cfg.hidden {
        layers.push(Layer::Dense(Dense::new(prev, h)));
        layers.push(Layer::Relu);
        prev = h;
    }
    layers.push(Layer::Dense(Dense::new(prev, 1)));
    if cfg.head == Head::Classification {
        layers.push(Layer::Sigmoid);
    }
    Sequential { layers }
}

/// Feature matrix + targets for the baseline models over a set of
/// pattern indices.
pub fn baseline_features(
    ds: &Dataset,
    indices: &[usize],
    buses: &[usize],
    head: Head,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x = indices
        .iter()
        .map(|&i| pair_features(ds.image(ds.patterns[i].oc_index), ds.n_buses, buses))
        .collect();
    let y = indices
        .iter()
        .map(|&i| {
            pattern_target(head, ds.patterns[i].label_si, ds.patterns[i].label_stressed)
        })
        .collect();
    (x, y)
}

/// Per-feature standardization fitted on the training rows.
pub fn standardize(x_train: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x_train[0].len();
    let n = x_train.len() as f64;
    let mut mean = vec![0.0; d];
    for row in x_train {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for row in x_train {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .iter()
        .map(|&s| (s / n).sqrt().max(1e-6))
        .collect();
    (mean, scale)
}

pub fn apply_standardize(row: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(mean)
        .zip(scale)
        .map(|((v, m), s)| (v - m) / s)
        .collect()
}

/// Minibatch Adam over a layer stack on a plain feature matrix.
pub fn train_sequential(
    net: &mut Sequential,
    x: &[Vec<f64>],
    y: &[f64],
    head: Head,
    opts: &TrainOptions,
) -> Result<Vec<f64>, ModelError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(ModelError::Data("empty or mismatched training data".into()));
    }
    let mut params = net.params();
    let mut adam = AdamState::new(params.len(), opts.eta, opts.paper_exact_adam);
    let mut losses = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        adam.eta = opts.eta * opts.eta_decay.powi(epoch as i32);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (epoch as u64).wrapping_mul(0x517c_c1b7));
        let mut order: Vec<usize> = (0..x.len()).collect();
        shuffle(&mut order, &mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let mut grads = vec![0.0; params.len()];
            for &i in chunk {
                let input = Tensor::from_vec(&[x[i].len()], x[i].clone());
                let trace = net.forward(&input, true, &mut rng)?;
                let pred = trace.output.data[0];
                let (loss, dpred) = match head {
                    Head::Classification => {
                        let p = pred.clamp(1e-12, 1.0 - 1e-12);
                        (
                            -(y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln()),
                            -(y[i] / p) + (1.0 - y[i]) / (1.0 - p),
                        )
                    }
                    Head::Regression => ((pred - y[i]).powi(2), 2.0 * (pred - y[i])),
                };
                loss_sum += loss;
                let dy = Tensor::from_vec(&[1], vec![dpred]);
                let (_, g) = net.backward(&trace, &dy)?;
                for (a, b) in grads.iter_mut().zip(g) {
                    *a += b;
                }
            }
            for g in grads.iter_mut() {
                *g /= chunk.len() as f64;
            }
            adam_step(&mut params, &grads, &mut adam)?;
            net.set_params(&params);
        }
        let epoch_loss = loss_sum / x.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(ModelError::Diverged {
                epoch,
                what: "non-finite epoch loss".into(),
            });
        }
        losses.push(epoch_loss);
    }
    Ok(losses)
}

pub fn predict_sequential(net: &Sequential, x: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    x.iter()
        .map(|row| {
            let input = Tensor::from_vec(&[row.len()], row.clone());
            Ok(net.forward(&input, false, &mut rng)?.output.data[0])
        })
        .collect()
}

// --- CART baseline -----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CartNode {
    pub feature: usize,
    pub threshold: f64,
    /// Child indices; `usize::MAX` marks a leaf.
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

impl CartNode {
    pub fn is_leaf(&self) -> bool {
        self.left == usize::MAX
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cart {
    pub nodes: Vec<CartNode>,
    pub mnsn: usize,
    pub classification: bool,
}

/// Binary decision tree: Gini impurity splits for classification,
/// variance reduction for regression. A node is split only while it
/// holds at least `mnsn` samples (minimum node size, the pre-pruning
/// control) and the split improves impurity.
pub fn fit_cart(x: &[Vec<f64>], y: &[f64], mnsn: usize, classification: bool) -> Cart {
    assert!(!x.is_empty() && x.len() == y.len());
    let mut tree = Cart {
        nodes: Vec::new(),
        mnsn: mnsn.max(1),
        classification,
    };
    let idx: Vec<usize> = (0..x.len()).collect();
    grow(&mut tree, x, y, idx);
    tree
}

fn leaf_value(y: &[f64], idx: &[usize], classification: bool) -> f64 {
    if classification {
        let pos = idx.iter().filter(|&&i| y[i] > 0.5).count();
        // majority vote; exact ties resolve to the negative class
        if 2 * pos > idx.len() {
            1.0
        } else {
            0.0
        }
    } else {
        idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
    }
}

fn impurity(y: &[f64], idx: &[usize], classification: bool) -> f64 {
    let n = idx.len() as f64;
    if classification {
        let p = idx.iter().filter(|&&i| y[i] > 0.5).count() as f64 / n;
        2.0 * p * (1.0 - p)
    } else {
        let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
        idx.iter().map(|&i| (y[i] - mean) * (y[i] - mean)).sum::<f64>() / n
    }
}

fn grow(tree: &mut Cart, x: &[Vec<f64>], y: &[f64], idx: Vec<usize>) -> usize {
    let node_id = tree.nodes.len();
    tree.nodes.push(CartNode {
        feature: 0,
        threshold: 0.0,
        left: usize::MAX,
        right: usize::MAX,
        value: leaf_value(y, &idx, tree.classification),
    });
    let parent_imp = impurity(y, &idx, tree.classification);
    if idx.len() < tree.mnsn || idx.len() < 2 || parent_imp == 0.0 {
        return node_id;
    }
    let d = x[0].len();
    let mut best: Option<(f64, usize, f64)> = None; // (weighted impurity, feature, threshold)
    let mut sorted = idx.clone();
    for f in 0..d {
        sorted.sort_by(|&a, &b| x[a][f].partial_cmp(&x[b][f]).unwrap());
        // prefix statistics for O(n) scan per feature
        let n = sorted.len();
        let mut pos_left = 0.0;
        let mut sum_left = 0.0;
        let mut sq_left = 0.0;
        let total_pos: f64 = sorted.iter().filter(|&&i| y[i] > 0.5).count() as f64;
        let total_sum: f64 = sorted.iter().map(|&i| y[i]).sum();
        let total_sq: f64 = sorted.iter().map(|&i| y[i] * y[i]).sum();
        for s in 0..n - 1 {
            let yi = y[sorted[s]];
            pos_left += if yi > 0.5 { 1.0 } else { 0.0 };
            sum_left += yi;
            sq_left += yi * yi;
            let (vl, vr) = (x[sorted[s]][f], x[sorted[s + 1]][f]);
            if vl == vr {
                continue;
            }
            let nl = (s + 1) as f64;
            let nr = (n - s - 1) as f64;
            let score = if tree.classification {
                let pl = pos_left / nl;
                let pr = (total_pos - pos_left) / nr;
                (nl * 2.0 * pl * (1.0 - pl) + nr * 2.0 * pr * (1.0 - pr)) / n as f64
            } else {
                let var_l = sq_left / nl - (sum_left / nl).powi(2);
                let sum_r = total_sum - sum_left;
                let var_r = (total_sq - sq_left) / nr - (sum_r / nr).powi(2);
                (nl * var_l + nr * var_r) / n as f64
            };
            let threshold = vl + (vr - vl) / 2.0;
            let better = match best {
                None => true,
                Some((b, bf, bt)) => {
                    score < b - 1e-15
                        || (score < b + 1e-15 && (f, threshold) < (bf, bt))
                }
            };
            if better {
                best = Some((score, f, threshold));
            }
        }
    }
    let Some((score, feature, threshold)) = best else {
        return node_id;
    };
    if score >= parent_imp - 1e-12 {
        return node_id; // no impurity improvement
    }
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
        idx.iter().partition(|&&i| x[i][feature] <= threshold);
    if left_idx.is_empty() || right_idx.is_empty() {
        return node_id;
    }
    let left = grow(tree, x, y, left_idx);
    let right = grow(tree, x, y, right_idx);
    tree.nodes[node_id].feature = feature;
    tree.nodes[node_id].threshold = threshold;
    tree.nodes[node_id].left = left;
    tree.nodes[node_id].right = right;
    node_id
}

pub fn predict_cart(tree: &Cart, row: &[f64]) -> f64 {
    let mut node = &tree.nodes[0];
    while !node.is_leaf() {
        node = if row[node.feature] <= node.threshold {
            &tree.nodes[node.left]
        } else {
            &tree.nodes[node.right]
        };
    }
    node.value
}

/// K-fold cross-validated minimum-node-size sweep. Returns the winning
/// MNSN (ties go to the smallest) and the mean fold accuracy per
/// candidate.
pub fn mnsn_sweep(
    x: &[Vec<f64>],
    y: &[f64],
    candidates: &[usize],
    k: usize,
    seed: u64,
    classification: bool,
) -> Result<(usize, Vec<f64>), ModelError> {
    if x.len() < k || k < 2 {
        return Err(ModelError::Data(format!(
            "cannot form {k} folds from {} samples",
            x.len()
        )));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle(&mut order, &mut rng);
    let mut scores = Vec::with_capacity(candidates.len());
    for &mnsn in candidates {
        let mut acc_sum = 0.0;
        for fold in 0..k {
            let test: Vec<usize> = order
                .iter()
                .copied()
                .skip(fold)
                .step_by(k)
                .collect();
            let train: Vec<usize> = order
                .iter()
                .copied()
                .filter(|i| !test.contains(i))
                .collect();
            let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let tree = fit_cart(&xt, &yt, mnsn, classification);
            let correct = test
                .iter()
                .filter(|&&i| {
                    let p = predict_cart(&tree, &x[i]);
                    if classification {
                        (p > 0.5) == (y[i] > 0.5)
                    } else {
                        (p - y[i]).abs() < 0.05
                    }
                })
                .count();
            acc_sum += correct as f64 / test.len() as f64;
        }
        scores.push(acc_sum / k as f64);
    }
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] + 1e-12 {
            best = i;
        }
    }
    Ok((candidates[best], scores))
}

// --- checkpoints -------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"PSCK";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    cnn: Option<CnnConfig>,
    mlp: Option<MlpConfig>,
    adam: Option<AdamMeta>,
    rng: Option<ChaCha8Rng>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamMeta {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    eta: f64,
    paper_exact: bool,
}

/// A trained model plus everything needed to resume or reproduce it.
pub struct Checkpoint {
    pub fingerprint: [u8; 32],
    pub kind: ModelKind,
    pub params: Vec<f64>,
    pub adam: Option<AdamState>,
    pub rng: Option<ChaCha8Rng>,
    pub norm_mean: Vec<f32>,
    pub norm_scale: Vec<f32>,
    /// Baseline feature standardization (MLP only).
    pub feat_mean: Vec<f64>,
    pub feat_scale: Vec<f64>,
}

pub enum ModelKind {
    Cnn(CnnConfig),
    Mlp(MlpConfig),
}

impl Checkpoint {
    pub fn from_cnn(model: &PaperlikeCnn, fingerprint: [u8; 32], adam: Option<AdamState>) -> Self {
        Checkpoint {
            fingerprint,
            kind: ModelKind::Cnn(model.cfg.clone()),
            params: model.params(),
            adam,
            rng: None,
            norm_mean: model.norm_mean.clone(),
            norm_scale: model.norm_scale.clone(),
            feat_mean: Vec::new(),
            feat_scale: Vec::new(),
        }
    }

    pub fn from_mlp(
        cfg: &MlpConfig,
        net: &Sequential,
        fingerprint: [u8; 32],
        feat_mean: Vec<f64>,
        feat_scale: Vec<f64>,
    ) -> Self {
        Checkpoint {
            fingerprint,
            kind: ModelKind::Mlp(cfg.clone()),
            params: net.params(),
            adam: None,
            rng: None,
            norm_mean: Vec::new(),
            norm_scale: Vec::new(),
            feat_mean,
            feat_scale,
        }
    }

    /// Rebuild the convolutional model this checkpoint stores.
    pub fn to_cnn(&self) -> Result<PaperlikeCnn, ModelError> {
        let ModelKind::Cnn(cfg) = &self.kind else {
            return Err(ModelError::Checkpoint("not a CNN checkpoint".into()));
        };
        let mut model = PaperlikeCnn::new(cfg.clone())?;
        if self.params.len() != model.n_params() {
            return Err(ModelError::Checkpoint(format!(
                "parameter count {} does not match architecture ({})",
                self.params.len(),
                model.n_params()
            )));
        }
        model.set_params(&self.params);
        model.norm_mean = self.norm_mean.clone();
        model.norm_scale = self.norm_scale.clone();
        Ok(model)
    }

    pub fn to_mlp(&self) -> Result<(MlpConfig, Sequential), ModelError> {
        let ModelKind::Mlp(cfg) = &self.kind else {
            return Err(ModelError::Checkpoint("not an MLP checkpoint".into()));
        };
        let mut net = build_mlp(cfg);
        if self.params.len() != net.n_params() {
            return Err(ModelError::Checkpoint("parameter count mismatch".into()));
        }
        net.set_params(&self.params);
        Ok((cfg.clone(), net))
    }
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> std::io::Result<()> {
    w.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn write_f32s<W: Write>(w: &mut W, v: &[f32]) -> std::io::Result<()> {
    w.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>, ModelError> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let n = u64::from_le_bytes(len) as usize;
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

fn read_f32s<R: Read>(r: &mut R) -> Result<Vec<f32>, ModelError> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let n = u64::from_le_bytes(len) as usize;
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f32::from_le_bytes(buf));
    }
    Ok(out)
}

/// Byte-deterministic checkpoint container: magic, version, case/config
/// fingerprint, JSON header (architecture, optimizer metadata, RNG
/// state), then raw little-endian arrays.
pub fn save_checkpoint<W: Write>(ckpt: &Checkpoint, w: &mut W) -> Result<(), ModelError> {
    let header = CheckpointHeader {
        kind: match &ckpt.kind {
            ModelKind::Cnn(_) => "cnn".into(),
            ModelKind::Mlp(_) => "mlp".into(),
        },
        cnn: match &ckpt.kind {
            ModelKind::Cnn(c) => Some(c.clone()),
            _ => None,
        },
        mlp: match &ckpt.kind {
            ModelKind::Mlp(m) => Some(m.clone()),
            _ => None,
        },
        adam: ckpt.adam.as_ref().map(|a| AdamMeta {
            t: a.t,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            eta: a.eta,
            paper_exact: a.paper_exact,
        }),
        rng: ckpt.rng.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| ModelError::Checkpoint(format!("header serialization: {e}")))?;
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&ckpt.fingerprint)?;
    w.write_all(&(header_json.len() as u32).to_le_bytes())?;
    w.write_all(&header_json)?;
    write_f32s(w, &ckpt.norm_mean)?;
    write_f32s(w, &ckpt.norm_scale)?;
    write_f64s(w, &ckpt.feat_mean)?;
    write_f64s(w, &ckpt.feat_scale)?;
    write_f64s(w, &ckpt.params)?;
    match &ckpt.adam {
        Some(a) => {
            write_f64s(w, &a.m)?;
            write_f64s(w, &a.v)?;
        }
        None => {
            write_f64s(w, &[])?;
            write_f64s(w, &[])?;
        }
    }
    Ok(())
}

pub fn load_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint, ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic; not a checkpoint".into()));
    }
    let mut ver = [0u8; 4];
    r.read_exact(&mut ver)?;
    let version = u32::from_le_bytes(ver);
    if version != CKPT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut fingerprint = [0u8; 32];
    r.read_exact(&mut fingerprint)?;
    let mut hlen = [0u8; 4];
    r.read_exact(&mut hlen)?;
    let mut hbuf = vec![0u8; u32::from_le_bytes(hlen) as usize];
    r.read_exact(&mut hbuf)?;
    let header: CheckpointHeader = serde_json::from_slice(&hbuf)
        .map_err(|e| ModelError::Checkpoint(format!("header parse: {e}")))?;
    let norm_mean = read_f32s(r)?;
    let norm_scale = read_f32s(r)?;
    let feat_mean = read_f64s(r)?;
    let feat_scale = read_f64s(r)?;
    let params = read_f64s(r)?;
    let m = read_f64s(r)?;
    let v = read_f64s(r)?;
    let kind = match header.kind.as_str() {
        "cnn" => ModelKind::Cnn(
            header
                .cnn
                .ok_or_else(|| ModelError::Checkpoint("missing cnn config".into()))?,
        ),
        "mlp" => ModelKind::Mlp(
            header
                .mlp
                .ok_or_else(|| ModelError::Checkpoint("missing mlp config".into()))?,
        ),
        other => {
            return Err(ModelError::Checkpoint(format!("unknown model kind {other}")));
        }
    };
    let adam = match (header.adam, m.is_empty()) {
        (Some(meta), false) => Some(AdamState {
            m,
            v,
            t: meta.t,
            beta1: meta.beta1,
            beta2: meta.beta2,
            eps: meta.eps,
            eta: meta.eta,
            paper_exact: meta.paper_exact,
        }),
        _ => None,
    };
    Ok(Checkpoint {
        fingerprint,
        kind,
        params,
        adam,
        rng: header.rng,
        norm_mean,
        norm_scale,
        feat_mean,
        feat_scale,
    })
}
