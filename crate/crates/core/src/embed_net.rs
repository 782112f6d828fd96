//! A small 1D convolutional embedding network with hand-written forward and
//! backward passes, Adam, finite-difference gradient checking and JSON
//! checkpoints.
//!
//! Topology: `conv -> ReLU -> max-pool` blocks, flatten, optional key
//! concatenation, then fully-connected layers. Hidden dense layers use ReLU;
//! the last one does so only when `output_relu` is set.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, state, Result};
use crate::rng::seeded;

/// Checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_len: usize,
    /// `(filters, width)` per convolutional layer.
    pub conv_filters: Vec<(usize, usize)>,
    /// `(size, stride)` of the max-pool after each convolutional layer; `(1, 1)` means none.
    pub pool: Vec<(usize, usize)>,
    pub fc_sizes: Vec<usize>,
    /// Length of the key concatenated to the flattened features; 0 for no key.
    pub key_dim: usize,
    /// Dropout on the inputs of every dense layer (key entries excluded).
    pub dropout_rate: f64,
    pub l2_lambda: f64,
    #[serde(default)]
    pub output_relu: bool,
}

impl NetworkConfig {
    /// The keyed ECG model: four width-5 convolutions (16, 16, 32, 32 filters)
    /// each followed by a size-3 stride-3 max-pool, then two 100-unit dense
    /// layers, on 1000-sample inputs with 100-bit keys.
    pub fn ecg_default() -> Self {
        Self {
            input_len: 1000,
            conv_filters: vec![(16, 5), (16, 5), (32, 5), (32, 5)],
            pool: vec![(3, 3); 4],
            fc_sizes: vec![100, 100],
            key_dim: 100,
            dropout_rate: 0.0,
            l2_lambda: 1e-3,
            output_relu: true,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.fc_sizes.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout().map(|_| ())
    }

    /// Shapes and parameter offsets; fails if the configuration is inconsistent.
    pub fn layout(&self) -> Result<Layout> {
        if self.input_len == 0 {
            return config("input_len must be positive");
        }
        if self.conv_filters.len() != self.pool.len() {
            return config("conv_filters and pool must have the same length");
        }
        if self.fc_sizes.is_empty() || self.fc_sizes.contains(&0) {
            return config("fc_sizes must be non-empty with positive widths");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return config("l2_lambda must be non-negative");
        }
        let mut offset = 0;
        let mut conv = Vec::new();
        let (mut ch, mut len) = (1, self.input_len);
        for (i, (&(filters, width), &(size, stride))) in self.conv_filters.iter().zip(&self.pool).enumerate() {
            if filters == 0 || width == 0 || size == 0 || stride == 0 {
                return config(format!("conv layer {i}: sizes must be positive"));
            }
            if len < width {
                return config(format!("conv layer {i}: input length {len} shorter than width {width}"));
            }
            let conv_len = len - width + 1;
            if conv_len < size {
                return config(format!("pool {i}: length {conv_len} shorter than pool size {size}"));
            }
            let out_len = (conv_len - size) / stride + 1;
            let w_off = offset;
            let b_off = w_off + filters * ch * width;
            offset = b_off + filters;
            conv.push(ConvLayout {
                in_ch: ch,
                out_ch: filters,
                width,
                in_len: len,
                conv_len,
                pool_size: size,
                pool_stride: stride,
                out_len,
                w_off,
                b_off,
            });
            ch = filters;
            len = out_len;
        }
        let flat_dim = ch * len;
        let mut fc = Vec::new();
        let mut n_in = flat_dim + self.key_dim;
        for (i, &n_out) in self.fc_sizes.iter().enumerate() {
            let w_off = offset;
            let b_off = w_off + n_in * n_out;
            offset = b_off + n_out;
            let relu = i + 1 < self.fc_sizes.len() || self.output_relu;
            fc.push(FcLayout { n_in, n_out, w_off, b_off, relu });
            n_in = n_out;
        }
        Ok(Layout { conv, fc, flat_dim, n_params: offset })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayout {
    pub in_ch: usize,
    pub out_ch: usize,
    pub width: usize,
    pub in_len: usize,
    pub conv_len: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub out_len: usize,
    pub w_off: usize,
    pub b_off: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcLayout {
    pub n_in: usize,
    pub n_out: usize,
    pub w_off: usize,
    pub b_off: usize,
    pub relu: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub conv: Vec<ConvLayout>,
    pub fc: Vec<FcLayout>,
    /// Length of the flattened convolutional features, before the key.
    pub flat_dim: usize,
    pub n_params: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Activations cached by a forward pass, consumed by [`Network::backward_trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    conv_in: Vec<Vec<f64>>,
    conv_pre: Vec<Vec<f64>>,
    pool_idx: Vec<Vec<usize>>,
    fc_in: Vec<Vec<f64>>,
    fc_pre: Vec<Vec<f64>>,
    drop: Vec<Option<Vec<f64>>>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Gradients with the parameter layout, plus the gradient with respect to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    layout: Layout,
    params: Vec<f64>,
    mode: Mode,
    cached: Option<Trace>,
}

impl Network {
    /// He-uniform weights, zero biases.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = seeded(seed);
        for c in &net.layout.conv {
            let limit = (6.0 / (c.in_ch * c.width) as f64).sqrt();
            for w in &mut net.params[c.w_off..c.b_off] {
                *w = rng.random_range(-limit..limit);
            }
        }
        for f in &net.layout.fc {
            let limit = (6.0 / f.n_in as f64).sqrt();
            for w in &mut net.params[f.w_off..f.b_off] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        let layout = config.layout()?;
        let params = vec![0.0; layout.n_params];
        Ok(Self { config, layout, params, mode: Mode::Train, cached: None })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.layout.n_params {
            return config(format!("expected {} parameters, got {}", self.layout.n_params, params.len()));
        }
        self.params = params;
        self.cached = None;
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// `true` for weights, `false` for biases; selects where L2 decay applies.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.layout.n_params];
        let ranges = self
            .layout
            .conv
            .iter()
            .map(|c| c.w_off..c.b_off)
            .chain(self.layout.fc.iter().map(|f| f.w_off..f.b_off));
        for r in ranges {
            mask[r].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    fn check_inputs(&self, x: &[f64], key: Option<&[f64]>) -> Result<()> {
        if x.len() != self.config.input_len {
            return config(format!("input length {} != configured {}", x.len(), self.config.input_len));
        }
        match (key, self.config.key_dim) {
            (None, 0) => Ok(()),
            (Some(k), d) if d > 0 && k.len() == d => Ok(()),
            (Some(k), d) => config(format!("key length {} but key_dim is {d}", k.len())),
            (None, d) => config(format!("network expects a key of length {d}")),
        }
    }

    /// Deterministic inference: no dropout, nothing cached.
    pub fn embed(&self, x: &[f64], key: Option<&[f64]>) -> Result<Vec<f64>> {
        self.run(x, key, None).map(|t| t.output)
    }

    /// Forward pass keeping every activation needed by the backward pass.
    /// Dropout is applied only in train mode, with masks drawn from `rng`.
    pub fn forward_trace(&self, x: &[f64], key: Option<&[f64]>, rng: &mut ChaCha8Rng) -> Result<Trace> {
        let dropout = self.mode == Mode::Train && self.config.dropout_rate > 0.0;
        self.run(x, key, if dropout { Some(rng) } else { None })
    }

    /// Forward pass that caches its trace for [`Network::backward`].
    pub fn forward(&mut self, x: &[f64], key: Option<&[f64]>, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let trace = self.forward_trace(x, key, rng)?;
        let out = trace.output.clone();
        self.cached = Some(trace);
        Ok(out)
    }

    fn run(&self, x: &[f64], key: Option<&[f64]>, mut rng: Option<&mut ChaCha8Rng>) -> Result<Trace> {
        self.check_inputs(x, key)?;
        let p = &self.params;
        let mut tr = Trace {
            conv_in: Vec::new(),
            conv_pre: Vec::new(),
            pool_idx: Vec::new(),
            fc_in: Vec::new(),
            fc_pre: Vec::new(),
            drop: Vec::new(),
            output: Vec::new(),
        };
        let mut h = x.to_vec();
        for c in &self.layout.conv {
            let mut z = vec![0.0; c.out_ch * c.conv_len];
            for o in 0..c.out_ch {
                let zo = &mut z[o * c.conv_len..(o + 1) * c.conv_len];
                zo.iter_mut().for_each(|v| *v = p[c.b_off + o]);
                for ic in 0..c.in_ch {
                    let xin = &h[ic * c.in_len..(ic + 1) * c.in_len];
                    for k in 0..c.width {
                        let w = p[c.w_off + (o * c.in_ch + ic) * c.width + k];
                        for (zv, xv) in zo.iter_mut().zip(&xin[k..k + c.conv_len]) {
                            *zv += w * xv;
                        }
                    }
                }
            }
            let mut pooled = vec![0.0; c.out_ch * c.out_len];
            let mut idx = vec![0; c.out_ch * c.out_len];
            for o in 0..c.out_ch {
                for j in 0..c.out_len {
                    let start = o * c.conv_len + j * c.pool_stride;
                    let mut best = start;
                    for t in start + 1..start + c.pool_size {
                        if z[t] > z[best] {
                            best = t;
                        }
                    }
                    // max commutes with ReLU
                    pooled[o * c.out_len + j] = z[best].max(0.0);
                    idx[o * c.out_len + j] = best;
                }
            }
            tr.conv_in.push(h);
            tr.conv_pre.push(z);
            tr.pool_idx.push(idx);
            h = pooled;
        }
        if let Some(k) = key {
            h.extend_from_slice(k);
        }
        for (i, f) in self.layout.fc.iter().enumerate() {
            let mask = rng.as_deref_mut().map(|r| {
                let keep = 1.0 - self.config.dropout_rate;
                let protected = if i == 0 { self.layout.flat_dim } else { f.n_in };
                (0..f.n_in)
                    .map(|j| {
                        if j >= protected || r.random::<f64>() < keep {
                            if j >= protected { 1.0 } else { 1.0 / keep }
                        } else {
                            0.0
                        }
                    })
                    .collect::<Vec<f64>>()
            });
            if let Some(m) = &mask {
                h.iter_mut().zip(m).for_each(|(v, s)| *v *= s);
            }
            let z: Vec<f64> = (0..f.n_out)
                .map(|o| {
                    let row = &p[f.w_off + o * f.n_in..f.w_off + (o + 1) * f.n_in];
                    p[f.b_off + o] + row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            let a = if f.relu { z.iter().map(|v| v.max(0.0)).collect() } else { z.clone() };
            tr.fc_in.push(h);
            tr.fc_pre.push(z);
            tr.drop.push(mask);
            h = a;
        }
        tr.output = h;
        Ok(tr)
    }

    /// Backward pass from the trace cached by [`Network::forward`].
    pub fn backward(&self, upstream: &[f64]) -> Result<Gradients> {
        let Some(trace) = &self.cached else {
            return state("backward called without a cached forward pass");
        };
        let mut params = vec![0.0; self.layout.n_params];
        let input = self.backward_trace(trace, upstream, &mut params)?;
        Ok(Gradients { params, input })
    }

    /// Accumulate parameter gradients into `grads` and return the input gradient.
    pub fn backward_trace(&self, tr: &Trace, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if upstream.len() != tr.output.len() {
            return config(format!("upstream length {} != embedding length {}", upstream.len(), tr.output.len()));
        }
        if grads.len() != self.layout.n_params {
            return config("gradient buffer does not match the parameter layout");
        }
        let p = &self.params;
        let mut g = upstream.to_vec();
        for (i, f) in self.layout.fc.iter().enumerate().rev() {
            if f.relu {
                g.iter_mut().zip(&tr.fc_pre[i]).for_each(|(gv, z)| {
                    if *z <= 0.0 {
                        *gv = 0.0
                    }
                });
            }
            let input = &tr.fc_in[i];
            let mut gin = vec![0.0; f.n_in];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                grads[f.b_off + o] += go;
                let base = f.w_off + o * f.n_in;
                for (gw, xv) in grads[base..base + f.n_in].iter_mut().zip(input) {
                    *gw += go * xv;
                }
                for (gi, w) in gin.iter_mut().zip(&p[base..base + f.n_in]) {
                    *gi += go * w;
                }
            }
            if let Some(m) = &tr.drop[i] {
                gin.iter_mut().zip(m).for_each(|(gv, s)| *gv *= s);
            }
            g = gin;
        }
        g.truncate(self.layout.flat_dim);
        for (li, c) in self.layout.conv.iter().enumerate().rev() {
            let z = &tr.conv_pre[li];
            let mut gz = vec![0.0; c.out_ch * c.conv_len];
            for (gv, &t) in g.iter().zip(&tr.pool_idx[li]) {
                if z[t] > 0.0 {
                    gz[t] += gv;
                }
            }
            let x = &tr.conv_in[li];
            let mut gx = vec![0.0; c.in_ch * c.in_len];
            for o in 0..c.out_ch {
                let go = &gz[o * c.conv_len..(o + 1) * c.conv_len];
                grads[c.b_off + o] += go.iter().sum::<f64>();
                for ic in 0..c.in_ch {
                    let xin = &x[ic * c.in_len..(ic + 1) * c.in_len];
                    let gxin = &mut gx[ic * c.in_len..(ic + 1) * c.in_len];
                    for k in 0..c.width {
                        let wi = c.w_off + (o * c.in_ch + ic) * c.width + k;
                        grads[wi] += go.iter().zip(&xin[k..k + c.conv_len]).map(|(a, b)| a * b).sum::<f64>();
                        let w = p[wi];
                        for (gxv, gov) in gxin[k..k + c.conv_len].iter_mut().zip(go) {
                            *gxv += w * gov;
                        }
                    }
                }
            }
            g = gx;
        }
        Ok(g)
    }

    /// Distance of the traced point from the nearest non-differentiable point:
    /// the smallest |pre-activation| over ReLUs and the smallest gap between
    /// the winner and runner-up of any active max-pool window.
    pub fn kink_margin(&self, tr: &Trace) -> f64 {
        let mut margin = f64::INFINITY;
        for (li, c) in self.layout.conv.iter().enumerate() {
            let z = &tr.conv_pre[li];
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            if c.pool_size > 1 {
                for (j, &best) in tr.pool_idx[li].iter().enumerate() {
                    if z[best] <= 0.0 {
                        continue;
                    }
                    let (o, q) = (j / c.out_len, j % c.out_len);
                    let start = o * c.conv_len + q * c.pool_stride;
                    let second = (start..start + c.pool_size)
                        .filter(|&t| t != best)
                        .map(|t| z[t].max(0.0))
                        .fold(f64::NEG_INFINITY, f64::max);
                    margin = margin.min(z[best] - second);
                }
            }
        }
        for (i, f) in self.layout.fc.iter().enumerate() {
            if f.relu {
                margin = tr.fc_pre[i].iter().fold(margin, |m, v| m.min(v.abs()));
            }
        }
        margin
    }

    /// Adam update; L2 decay adds `l2_lambda * w` to the gradient of every weight (not biases).
    pub fn adam_step(&mut self, adam: &mut Adam, grads: &[f64], lr: f64) -> Result<()> {
        if grads.len() != self.params.len() {
            return config("gradient layout does not match the parameters");
        }
        let lambda = self.config.l2_lambda;
        let effective: Vec<f64> = if lambda > 0.0 {
            let mask = self.decay_mask();
            grads
                .iter()
                .zip(&self.params)
                .zip(mask)
                .map(|((g, w), m)| if m { g + lambda * w } else { *g })
                .collect()
        } else {
            grads.to_vec()
        };
        adam.step(&mut self.params, &effective, lr)?;
        self.cached = None;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return config(format!("unsupported checkpoint version {}", ck.version));
        }
        let mut net = Self::zeros(ck.config)?;
        if net.layout != ck.layout {
            return config("checkpoint layout does not match its configuration");
        }
        net.set_params(ck.params)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

/// Versioned parameter snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: NetworkConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
}

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self::with_betas(n_params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(n_params: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return config("Adam state, parameters and gradients must have equal length");
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Linear softmax head mapping embeddings to class logits, used for
/// identification-style training. Weights are stored row-major (`n_classes x n_in`)
/// followed by the biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub n_in: usize,
    pub n_classes: usize,
    pub params: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(n_in: usize, n_classes: usize, seed: u64) -> Result<Self> {
        if n_in == 0 || n_classes < 2 {
            return config("classifier head needs a positive input size and at least 2 classes");
        }
        let mut rng = seeded(seed);
        let limit = (6.0 / (n_in + n_classes) as f64).sqrt();
        let mut params: Vec<f64> = (0..n_in * n_classes).map(|_| rng.random_range(-limit..limit)).collect();
        params.extend(std::iter::repeat_n(0.0, n_classes));
        Ok(Self { n_in, n_classes, params })
    }

    /// The weight matrix rows, one per class.
    pub fn class_weights(&self) -> Vec<Vec<f64>> {
        self.params[..self.n_in * self.n_classes].chunks(self.n_in).map(<[f64]>::to_vec).collect()
    }

    pub fn logits(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n_in {
            return config(format!("head expects {} inputs, got {}", self.n_in, y.len()));
        }
        let bias = self.n_in * self.n_classes;
        Ok((0..self.n_classes)
            .map(|c| {
                let row = &self.params[c * self.n_in..(c + 1) * self.n_in];
                self.params[bias + c] + row.iter().zip(y).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect())
    }

    /// Accumulate head gradients and return the gradient with respect to `y`.
    pub fn backward(&self, y: &[f64], g_logits: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let bias = self.n_in * self.n_classes;
        let mut gy = vec![0.0; self.n_in];
        for (c, &g) in g_logits.iter().enumerate() {
            grads[bias + c] += g;
            let row = c * self.n_in..(c + 1) * self.n_in;
            for ((gw, w), (yv, gyv)) in grads[row.clone()].iter_mut().zip(&self.params[row]).zip(y.iter().zip(gy.iter_mut())) {
                *gw += g * yv;
                *gyv += g * w;
            }
        }
        gy
    }
}

/// Largest relative disagreement between the analytic gradient returned by
/// `f` at `x` and central finite differences with step `eps`, using
/// `|a - n| / max(|a|, |n|, 1e-8)` per coordinate.
pub fn grad_check<F>(x: &[f64], mut f: F, eps: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(x);
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe).0;
        probe[i] = x[i] - eps;
        let minus = f(&probe).0;
        probe[i] = x[i];
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
