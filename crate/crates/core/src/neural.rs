//! Minimal tensor and layer engine: 2-D convolution, ReLU, max pooling,
//! fully-connected layers, inverted dropout, sigmoid, cross-entropy and
//! MSE losses, reverse-mode gradients, and the Adam optimizer.
//!
//! Everything computes in f64; reductions accumulate in f64 even when
//! callers store inputs in f32. Layers are plain structs; `Sequential`
//! composes them with a recorded forward trace for the backward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient; step rejected")]
    NonFiniteGradient,
    #[error("dropout rate {0} outside [0, 1)")]
    BadDropoutRate(f64),
    #[error("prediction length {got} != target length {want}")]
    LengthMismatch { got: usize, want: usize },
}

/// Dense row-major tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Spatial output size for a conv/pool stage:
/// `floor((in + 2*pad - k)/stride) + 1`.
pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad).saturating_sub(k) / stride + 1
}

// --- convolution -------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// Kernel weights, layout [out_c][in_c][k][k].
    pub w: Vec<f64>,
    /// One bias per output map.
    pub b: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            in_c,
            out_c,
            k,
            stride,
            pad,
            w: vec![0.0; out_c * in_c * k * k],
            b: vec![0.0; out_c],
        }
    }

    /// He fan-in initialization.
    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        let fan_in = (self.in_c * self.k * self.k) as f64;
        let std = (2.0 / fan_in).sqrt();
        for w in self.w.iter_mut() {
            *w = gaussian(rng) * std;
        }
        self.b.fill(0.0);
    }

    fn pad_input(&self, x: &Tensor, h: usize, w: usize) -> Vec<f64> {
        if self.pad == 0 {
            return x.data.clone();
        }
        let (hp, wp) = (h + 2 * self.pad, w + 2 * self.pad);
        let mut out = vec![0.0; self.in_c * hp * wp];
        for c in 0..self.in_c {
            for row in 0..h {
                let src = c * h * w + row * w;
                let dst = c * hp * wp + (row + self.pad) * wp + self.pad;
                out[dst..dst + w].copy_from_slice(&x.data[src..src + w]);
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        let [c, h, w] = spatial_shape(x)?;
        if c != self.in_c {
            return Err(NeuralError::ShapeMismatch(format!(
                "conv expects {} input maps, got {c}",
                self.in_c
            )));
        }
        let oh = conv_out_dim(h, self.k, self.stride, self.pad);
        let ow = conv_out_dim(w, self.k, self.stride, self.pad);
        if oh == 0 || ow == 0 {
            return Err(NeuralError::ShapeMismatch(format!(
                "conv output collapses: input {h}x{w}, kernel {}",
                self.k
            )));
        }
        let padded = self.pad_input(x, h, w);
        let (hp, wp) = (h + 2 * self.pad, w + 2 * self.pad);
        let mut out = Tensor::zeros(&[self.out_c, oh, ow]);
        for oc in 0..self.out_c {
            let out_map = &mut out.data[oc * oh * ow..(oc + 1) * oh * ow];
            out_map.fill(self.b[oc]);
            for ic in 0..self.in_c {
                let in_map = &padded[ic * hp * wp..(ic + 1) * hp * wp];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let weight =
                            self.w[((oc * self.in_c + ic) * self.k + ky) * self.k + kx];
                        if self.stride == 1 {
                            for oy in 0..oh {
                                let in_row = &in_map[(oy + ky) * wp + kx..];
                                let out_row = &mut out_map[oy * ow..(oy + 1) * ow];
                                for (o, &i) in out_row.iter_mut().zip(in_row.iter().take(ow)) {
                                    *o += weight * i;
                                }
                            }
                        } else {
                            for oy in 0..oh {
                                let base = (oy * self.stride + ky) * wp + kx;
                                let out_row = &mut out_map[oy * ow..(oy + 1) * ow];
                                for (ox, o) in out_row.iter_mut().enumerate() {
                                    *o += weight * in_map[base + ox * self.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Reverse pass. Returns (dx, dw, db).
    pub fn backward(
        &self,
        x: &Tensor,
        dy: &Tensor,
    ) -> Result<(Tensor, Vec<f64>, Vec<f64>), NeuralError> {
        let [_, h, w] = spatial_shape(x)?;
        let [oc_n, oh, ow] = spatial_shape(dy)?;
        if oc_n != self.out_c {
            return Err(NeuralError::ShapeMismatch("conv backward channels".into()));
        }
        let padded = self.pad_input(x, h, w);
        let (hp, wp) = (h + 2 * self.pad, w + 2 * self.pad);
        let mut dpadded = vec![0.0; padded.len()];
        let mut dw = vec![0.0; self.w.len()];
        let mut db = vec![0.0; self.out_c];
        for oc in 0..self.out_c {
            let dy_map = &dy.data[oc * oh * ow..(oc + 1) * oh * ow];
            db[oc] += dy_map.iter().sum::<f64>();
            for ic in 0..self.in_c {
                let in_map = &padded[ic * hp * wp..(ic + 1) * hp * wp];
                let dx_map = &mut dpadded[ic * hp * wp..(ic + 1) * hp * wp];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let widx = ((oc * self.in_c + ic) * self.k + ky) * self.k + kx;
                        let weight = self.w[widx];
                        let mut grad_w = 0.0;
                        for oy in 0..oh {
                            let base = (oy * self.stride + ky) * wp + kx;
                            let dy_row = &dy_map[oy * ow..(oy + 1) * ow];
                            if self.stride == 1 {
                                let in_row = &in_map[base..base + ow];
                                let dx_row = &mut dx_map[base..base + ow];
                                for ox in 0..ow {
                                    grad_w += dy_row[ox] * in_row[ox];
                                    dx_row[ox] += weight * dy_row[ox];
                                }
                            } else {
                                for (ox, &g) in dy_row.iter().enumerate() {
                                    let pos = base + ox * self.stride;
                                    grad_w += g * in_map[pos];
                                    dx_map[pos] += weight * g;
                                }
                            }
                        }
                        dw[widx] += grad_w;
                    }
                }
            }
        }
        // strip padding from dx
        let mut dx = Tensor::zeros(&x.shape);
        if self.pad == 0 {
            dx.data.copy_from_slice(&dpadded);
        } else {
            for c in 0..self.in_c {
                for row in 0..h {
                    let src = c * hp * wp + (row + self.pad) * wp + self.pad;
                    let dst = c * h * w + row * w;
                    dx.data[dst..dst + w].copy_from_slice(&dpadded[src..src + w]);
                }
            }
        }
        Ok((dx, dw, db))
    }
}

fn spatial_shape(t: &Tensor) -> Result<[usize; 3], NeuralError> {
    match t.shape.as_slice() {
        [c, h, w] => Ok([*c, *h, *w]),
        other => Err(NeuralError::ShapeMismatch(format!(
            "expected [c,h,w] tensor, got {other:?}"
        ))),
    }
}

// --- activations, pooling, dropout --------------------------------------

/// Elementwise max(0, x). Returns the output and the pass-through mask.
pub fn relu(x: &Tensor) -> (Tensor, Vec<bool>) {
    let mask: Vec<bool> = x.data.iter().map(|&v| v > 0.0).collect();
    let data = x
        .data
        .iter()
        .map(|&v| if v > 0.0 { v } else { 0.0 })
        .collect();
    (
        Tensor {
            shape: x.shape.clone(),
            data,
        },
        mask,
    )
}

pub fn relu_backward(dy: &Tensor, mask: &[bool]) -> Tensor {
    let data = dy
        .data
        .iter()
        .zip(mask)
        .map(|(&g, &m)| if m { g } else { 0.0 })
        .collect();
    Tensor {
        shape: dy.shape.clone(),
        data,
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaxPool {
    pub window: usize,
    pub stride: usize,
}

impl MaxPool {
    /// Max over each window; argmax indices (into the input tensor) are
    /// retained for backward routing.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<u32>), NeuralError> {
        let [c, h, w] = spatial_shape(x)?;
        if h < self.window || w < self.window {
            return Err(NeuralError::ShapeMismatch(format!(
                "pool window {} larger than input {h}x{w}",
                self.window
            )));
        }
        let oh = (h - self.window) / self.stride + 1;
        let ow = (w - self.window) / self.stride + 1;
        let mut out = Tensor::zeros(&[c, oh, ow]);
        let mut argmax = vec![0u32; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for wy in 0..self.window {
                        for wx in 0..self.window {
                            let iy = oy * self.stride + wy;
                            let ix = ox * self.stride + wx;
                            let idx = ch * h * w + iy * w + ix;
                            if x.data[idx] > best {
                                best = x.data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let oidx = ch * oh * ow + oy * ow + ox;
                    out.data[oidx] = best;
                    argmax[oidx] = best_idx as u32;
                }
            }
        }
        Ok((out, argmax))
    }

    pub fn backward(&self, dy: &Tensor, argmax: &[u32], input_shape: &[usize]) -> Tensor {
        let mut dx = Tensor::zeros(input_shape);
        for (g, &idx) in dy.data.iter().zip(argmax) {
            dx.data[idx as usize] += g;
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self, NeuralError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NeuralError::BadDropoutRate(rate));
        }
        Ok(Dropout { rate })
    }

    /// Inverted dropout: in training each unit is zeroed independently
    /// with probability `rate` and survivors scale by 1/(1-rate);
    /// inference is the identity.
    pub fn forward(&self, x: &Tensor, train: bool, rng: &mut ChaCha8Rng) -> (Tensor, Vec<f64>) {
        if !train || self.rate == 0.0 {
            return (x.clone(), vec![1.0; x.len()]);
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| {
                if rng.gen::<f64>() < self.rate {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let data = x.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        (
            Tensor {
                shape: x.shape.clone(),
                data,
            },
            mask,
        )
    }

    pub fn backward(&self, dy: &Tensor, mask: &[f64]) -> Tensor {
        let data = dy.data.iter().zip(mask).map(|(&g, &m)| g * m).collect();
        Tensor {
            shape: dy.shape.clone(),
            data,
        }
    }
}

// --- dense --------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major [n_out][n_in].
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        Dense {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        let std = (2.0 / self.n_in as f64).sqrt();
        for w in self.w.iter_mut() {
            *w = gaussian(rng) * std;
        }
        self.b.fill(0.0);
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        if x.len() != self.n_in {
            return Err(NeuralError::ShapeMismatch(format!(
                "dense expects {} inputs, got {}",
                self.n_in,
                x.len()
            )));
        }
        let mut out = Tensor::zeros(&[self.n_out]);
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(&x.data) {
                acc += wi * xi;
            }
            out.data[o] = acc;
        }
        Ok(out)
    }

    /// Returns (dx, dw, db) with dw = dy ⊗ x.
    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let mut dx = Tensor::zeros(&x.shape);
        let mut dw = vec![0.0; self.w.len()];
        for o in 0..self.n_out {
            let g = dy.data[o];
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let dw_row = &mut dw[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                dw_row[i] = g * x.data[i];
                dx.data[i] += g * row[i];
            }
        }
        (dx, dw, dy.data.clone())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// --- losses ---------------------------------------------------------------

const CE_CLIP: f64 = 1e-12;

/// Binary cross-entropy over probability predictions:
/// `-(1/n) sum [y ln y' + (1-y) ln(1-y')]`, predictions clipped to
/// [1e-12, 1 - 1e-12].
pub fn cross_entropy(y_pred: &[f64], y_true: &[f64]) -> Result<f64, NeuralError> {
    if y_pred.len() != y_true.len() {
        return Err(NeuralError::LengthMismatch {
            got: y_pred.len(),
            want: y_true.len(),
        });
    }
    let n = y_pred.len() as f64;
    let mut acc = 0.0;
    for (&p, &y) in y_pred.iter().zip(y_true) {
        let p = p.clamp(CE_CLIP, 1.0 - CE_CLIP);
        acc += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(-acc / n)
}

/// d(cross_entropy)/d(y_pred_i), matching the clipping of [`cross_entropy`].
pub fn cross_entropy_grad(y_pred: &[f64], y_true: &[f64]) -> Vec<f64> {
    let n = y_pred.len() as f64;
    y_pred
        .iter()
        .zip(y_true)
        .map(|(&p, &y)| {
            let p = p.clamp(CE_CLIP, 1.0 - CE_CLIP);
            (-(y / p) + (1.0 - y) / (1.0 - p)) / n
        })
        .collect()
}

/// `(1/n) sum (y - y')²`.
pub fn mse(y_pred: &[f64], y_true: &[f64]) -> Result<f64, NeuralError> {
    if y_pred.len() != y_true.len() {
        return Err(NeuralError::LengthMismatch {
            got: y_pred.len(),
            want: y_true.len(),
        });
    }
    let n = y_pred.len() as f64;
    Ok(y_pred
        .iter()
        .zip(y_true)
        .map(|(&p, &y)| (y - p) * (y - p))
        .sum::<f64>()
        / n)
}

pub fn mse_grad(y_pred: &[f64], y_true: &[f64]) -> Vec<f64> {
    let n = y_pred.len() as f64;
    y_pred
        .iter()
        .zip(y_true)
        .map(|(&p, &y)| 2.0 * (p - y) / n)
        .collect()
}

// --- Adam -----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub eta: f64,
    /// Use the literal constant bias correction m/(1-β1), v/(1-β2)
    /// instead of the exponent-t form. The two coincide at t = 1.
    pub paper_exact: bool,
}

impl AdamState {
    pub fn new(n_params: usize, eta: f64, paper_exact: bool) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-9,
            eta,
            paper_exact,
        }
    }
}

/// One Adam update:
/// m ← β1 m + (1-β1) g;  v ← β2 v + (1-β2) g²;
/// θ ← θ − η · m̂ / (ε + √v̂) with bias-corrected m̂, v̂.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
) -> Result<(), NeuralError> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(NeuralError::NonFiniteGradient);
    }
    state.t += 1;
    let (c1, c2) = if state.paper_exact {
        (1.0 - state.beta1, 1.0 - state.beta2)
    } else {
        (
            1.0 - state.beta1.powi(state.t as i32),
            1.0 - state.beta2.powi(state.t as i32),
        )
    };
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.eta * m_hat / (state.eps + v_hat.sqrt());
    }
    Ok(())
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on the seeded stream; avoids pulling a distribution
    // dependency into the hot init path.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// --- sequential composition ------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    Pool(MaxPool),
    Flatten,
    Dense(Dense),
    Dropout(Dropout),
    Sigmoid,
}

enum Aux {
    None,
    Mask(Vec<bool>),
    Argmax(Vec<u32>, Vec<usize>),
    DropMask(Vec<f64>),
    Shape(Vec<usize>),
}

pub struct ForwardTrace {
    inputs: Vec<Tensor>,
    aux: Vec<Aux>,
    pub output: Tensor,
}

/// A plain layer stack with shared parameter flattening for Adam and
/// checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn forward(
        &self,
        x: &Tensor,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardTrace, NeuralError> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut aux = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            inputs.push(cur.clone());
            cur = match layer {
                Layer::Conv(c) => {
                    aux.push(Aux::None);
                    c.forward(&cur)?
                }
                Layer::Relu => {
                    let (y, mask) = relu(&cur);
                    aux.push(Aux::Mask(mask));
                    y
                }
                Layer::Pool(p) => {
                    let (y, idx) = p.forward(&cur)?;
                    aux.push(Aux::Argmax(idx, cur.shape.clone()));
                    y
                }
                Layer::Flatten => {
                    aux.push(Aux::Shape(cur.shape.clone()));
                    Tensor::from_vec(&[cur.len()], cur.data.clone())
                }
                Layer::Dense(d) => {
                    aux.push(Aux::None);
                    d.forward(&cur)?
                }
                Layer::Dropout(dr) => {
                    let (y, mask) = dr.forward(&cur, train, rng);
                    aux.push(Aux::DropMask(mask));
                    y
                }
                Layer::Sigmoid => {
                    aux.push(Aux::None);
                    Tensor {
                        shape: cur.shape.clone(),
                        data: cur.data.iter().map(|&v| sigmoid(v)).collect(),
                    }
                }
            };
        }
        Ok(ForwardTrace {
            inputs,
            aux,
            output: cur,
        })
    }

    /// Reverse-mode gradients for every parameter, plus the input
    /// gradient. Gradient layout matches [`Sequential::params`].
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        dy: &Tensor,
    ) -> Result<(Tensor, Vec<f64>), NeuralError> {
        let mut grads_rev: Vec<Vec<f64>> = Vec::new();
        let mut cur = dy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[i];
            match (layer, &trace.aux[i]) {
                (Layer::Conv(c), _) => {
                    let (dx, dw, db) = c.backward(x, &cur)?;
                    let mut g = dw;
                    g.extend(db);
                    grads_rev.push(g);
                    cur = dx;
                }
                (Layer::Relu, Aux::Mask(mask)) => {
                    cur = relu_backward(&cur, mask);
                }
                (Layer::Pool(p), Aux::Argmax(idx, shape)) => {
                    cur = p.backward(&cur, idx, shape);
                }
                (Layer::Flatten, Aux::Shape(shape)) => {
                    cur = Tensor::from_vec(shape, cur.data.clone());
                }
                (Layer::Dense(d), _) => {
                    let (dx, dw, db) = d.backward(x, &cur);
                    let mut g = dw;
                    g.extend(db);
                    grads_rev.push(g);
                    cur = dx;
                }
                (Layer::Dropout(dr), Aux::DropMask(mask)) => {
                    cur = dr.backward(&cur, mask);
                }
                (Layer::Sigmoid, _) => {
                    // y = sigmoid(x) was the layer output
                    let y = if i + 1 < self.layers.len() {
                        &trace.inputs[i + 1]
                    } else {
                        &trace.output
                    };
                    let data = cur
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(&g, &s)| g * s * (1.0 - s))
                        .collect();
                    cur = Tensor {
                        shape: cur.shape.clone(),
                        data,
                    };
                }
                _ => unreachable!("trace aux out of sync with layer kind"),
            }
        }
        let mut grads = Vec::new();
        for g in grads_rev.into_iter().rev() {
            grads.extend(g);
        }
        Ok((cur, grads))
    }

    /// All parameters flattened in layer order (conv: weights then
    /// biases; dense: weights then biases).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.extend(&c.w);
                    out.extend(&c.b);
                }
                Layer::Dense(d) => {
                    out.extend(&d.w);
                    out.extend(&d.b);
                }
                _ => {}
            }
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for layer in self.layers.iter_mut() {
            match layer {
                Layer::Conv(c) => {
                    let (nw, nb) = (c.w.len(), c.b.len());
                    c.w.copy_from_slice(&flat[pos..pos + nw]);
                    pos += nw;
                    c.b.copy_from_slice(&flat[pos..pos + nb]);
                    pos += nb;
                }
                Layer::Dense(d) => {
                    let (nw, nb) = (d.w.len(), d.b.len());
                    d.w.copy_from_slice(&flat[pos..pos + nw]);
                    pos += nw;
                    d.b.copy_from_slice(&flat[pos..pos + nb]);
                    pos += nb;
                }
                _ => {}
            }
        }
        assert_eq!(pos, flat.len());
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.w.len() + c.b.len(),
                Layer::Dense(d) => d.w.len() + d.b.len(),
                _ => 0,
            })
            .sum()
    }

    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        for layer in self.layers.iter_mut() {
            match layer {
                Layer::Conv(c) => c.init(rng),
                Layer::Dense(d) => d.init(rng),
                _ => {}
            }
        }
    }
}
