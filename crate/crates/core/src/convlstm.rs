//! Conv-LSTM pair classifier with hand-written backpropagation.
//!
//! Data flow for one pair vector of length `2d`, reshaped to
//! `seq_len x channels` (row-major, position-major):
//!
//! 1. same-padded 1-D convolution, ReLU (train: + noise, dropout)
//! 2. max-pool of width `pool` (trailing positions dropped)
//! 3. ConvLSTM layers; timestep `t` sees pooled positions
//!    `[t * cell_positions, (t + 1) * cell_positions)`
//! 4. global max over all timesteps and positions per hidden channel
//!    (train: + noise)
//! 5. dense ReLU (train: + noise, dropout)
//! 6. dense to two logits, softmax, cross-entropy
//!
//! Dropout is inverted (kept units scaled by `1 / (1 - rate)`), so eval mode
//! needs no rescaling.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Scorer, Trainer};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{derive_index, RngStream};
use crate::shallow::sigmoid;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[p][o] += sum_{tap, c} w[o][tap][c] * x[p + tap - pad][c]` with
/// `pad = (k - 1) / 2` and zeros outside `[0, len)`.
fn conv_forward(
    x: &[f64],
    len: usize,
    cin: usize,
    w: &[f64],
    k: usize,
    cout: usize,
    out: &mut [f64],
) {
    let pad = (k - 1) / 2;
    for p in 0..len {
        for tap in 0..k {
            let Some(q) = (p + tap).checked_sub(pad).filter(|&q| q < len) else {
                continue;
            };
            let xin = &x[q * cin..(q + 1) * cin];
            for o in 0..cout {
                let row = &w[(o * k + tap) * cin..(o * k + tap + 1) * cin];
                out[p * cout + o] += dot(row, xin);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    len: usize,
    cin: usize,
    w: &[f64],
    k: usize,
    cout: usize,
    dout: &[f64],
    mut dx: Option<&mut [f64]>,
    dw: &mut [f64],
) {
    let pad = (k - 1) / 2;
    for p in 0..len {
        for tap in 0..k {
            let Some(q) = (p + tap).checked_sub(pad).filter(|&q| q < len) else {
                continue;
            };
            for o in 0..cout {
                let g = dout[p * cout + o];
                if g == 0.0 {
                    continue;
                }
                let base = (o * k + tap) * cin;
                for c in 0..cin {
                    dw[base + c] += g * x[q * cin + c];
                }
                if let Some(dx) = dx.as_deref_mut() {
                    for c in 0..cin {
                        dx[q * cin + c] += g * w[base + c];
                    }
                }
            }
        }
    }
}

/// Gate pre-activations are clamped to this magnitude so gates stay
/// strictly inside (0, 1) in floating point.
const GATE_LIMIT: f64 = 30.0;

fn gate(x: f64) -> f64 {
    sigmoid(x.clamp(-GATE_LIMIT, GATE_LIMIT))
}

/// Derivative of [`gate`] expressed through its output.
fn gate_slope(v: f64) -> f64 {
    if v <= sigmoid(-GATE_LIMIT) || v >= sigmoid(GATE_LIMIT) {
        0.0
    } else {
        v * (1.0 - v)
    }
}

/// Shapes of one ConvLSTM cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellDims {
    /// Sequence positions per timestep.
    pub positions: usize,
    pub input_channels: usize,
    pub hidden: usize,
    pub kernel: usize,
}

/// Gate order in every per-gate table.
pub const GATES: [&str; 4] = ["i", "f", "c", "o"];

impl CellDims {
    fn wx_len(&self) -> usize {
        self.hidden * self.kernel * self.input_channels
    }

    fn wh_len(&self) -> usize {
        self.hidden * self.kernel * self.hidden
    }

    fn peep_len(&self) -> usize {
        self.positions * self.hidden
    }

    fn state_len(&self) -> usize {
        self.positions * self.hidden
    }

    fn input_len(&self) -> usize {
        self.positions * self.input_channels
    }

    /// Flat layout: input kernels (i, f, c, o), hidden kernels (i, f, c, o),
    /// peepholes (i, f, o), biases (i, f, c, o).
    pub fn len(&self) -> usize {
        4 * self.wx_len() + 4 * self.wh_len() + 3 * self.peep_len() + 4 * self.hidden
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn wx(&self, gate: usize) -> std::ops::Range<usize> {
        let o = gate * self.wx_len();
        o..o + self.wx_len()
    }

    pub fn wh(&self, gate: usize) -> std::ops::Range<usize> {
        let o = 4 * self.wx_len() + gate * self.wh_len();
        o..o + self.wh_len()
    }

    /// Peephole `j` in order i, f, o.
    pub fn peep(&self, j: usize) -> std::ops::Range<usize> {
        let o = 4 * self.wx_len() + 4 * self.wh_len() + j * self.peep_len();
        o..o + self.peep_len()
    }

    pub fn bias(&self, gate: usize) -> std::ops::Range<usize> {
        let o = 4 * self.wx_len() + 4 * self.wh_len() + 3 * self.peep_len() + gate * self.hidden;
        o..o + self.hidden
    }
}

/// Everything one cell step computed, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    /// Candidate cell values.
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

fn cell_forward(d: &CellDims, p: &[f64], x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
    let (s, ch, k) = (d.positions, d.hidden, d.kernel);
    let n = d.state_len();
    let mut pre = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (gate, acc) in pre.iter_mut().enumerate() {
        conv_forward(x, s, d.input_channels, &p[d.wx(gate)], k, ch, acc);
        conv_forward(h_prev, s, ch, &p[d.wh(gate)], k, ch, acc);
        let b = &p[d.bias(gate)];
        for (idx, v) in acc.iter_mut().enumerate() {
            *v += b[idx % ch];
        }
    }
    let (wci, wcf, wco) = (&p[d.peep(0)], &p[d.peep(1)], &p[d.peep(2)]);
    let i: Vec<f64> = (0..n)
        .map(|j| gate(pre[0][j] + wci[j] * c_prev[j]))
        .collect();
    let f: Vec<f64> = (0..n)
        .map(|j| gate(pre[1][j] + wcf[j] * c_prev[j]))
        .collect();
    let g: Vec<f64> = pre[2].iter().map(|v| v.tanh()).collect();
    let c: Vec<f64> = (0..n).map(|j| f[j] * c_prev[j] + i[j] * g[j]).collect();
    let o: Vec<f64> = (0..n).map(|j| gate(pre[3][j] + wco[j] * c[j])).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = (0..n).map(|j| o[j] * tanh_c[j]).collect();
    StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        c,
        tanh_c,
        h,
    }
}

/// Backpropagates `dh`, `dc` (gradients w.r.t. this step's outputs) into
/// parameter gradients `grad` and input/state gradients.
#[allow(clippy::too_many_arguments)]
fn cell_backward(
    d: &CellDims,
    p: &[f64],
    cache: &StepCache,
    dh: &[f64],
    dc_in: &[f64],
    grad: &mut [f64],
    dx: &mut [f64],
    dh_prev: &mut [f64],
    dc_prev: &mut [f64],
) {
    let (s, ch, k) = (d.positions, d.hidden, d.kernel);
    let n = d.state_len();
    let (wci, wcf, wco) = (&p[d.peep(0)], &p[d.peep(1)], &p[d.peep(2)]);
    let mut dpre = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut dpeep = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for j in 0..n {
        let c = cache;
        let d_o = dh[j] * c.tanh_c[j];
        let dpo = d_o * gate_slope(c.o[j]);
        let dc = dc_in[j] + dh[j] * c.o[j] * (1.0 - c.tanh_c[j] * c.tanh_c[j]) + dpo * wco[j];
        dpeep[2][j] = dpo * c.c[j];
        let dpi = dc * c.g[j] * gate_slope(c.i[j]);
        let dpf = dc * c.c_prev[j] * gate_slope(c.f[j]);
        let dpg = dc * c.i[j] * (1.0 - c.g[j] * c.g[j]);
        dc_prev[j] = dc * c.f[j] + dpi * wci[j] + dpf * wcf[j];
        dpeep[0][j] = dpi * c.c_prev[j];
        dpeep[1][j] = dpf * c.c_prev[j];
        dpre[0][j] = dpi;
        dpre[1][j] = dpf;
        dpre[2][j] = dpg;
        dpre[3][j] = dpo;
    }
    for (jj, dp) in dpeep.iter().enumerate() {
        for (g, v) in grad[d.peep(jj)].iter_mut().zip(dp) {
            *g += v;
        }
    }
    for (gate, dp) in dpre.iter().enumerate() {
        let b = d.bias(gate);
        for (idx, v) in dp.iter().enumerate() {
            grad[b.start + idx % ch] += v;
        }
        conv_backward(
            &cache.x,
            s,
            d.input_channels,
            &p[d.wx(gate)],
            k,
            ch,
            dp,
            Some(dx),
            &mut grad[d.wx(gate)],
        );
        conv_backward(
            &cache.h_prev,
            s,
            ch,
            &p[d.wh(gate)],
            k,
            ch,
            dp,
            Some(dh_prev),
            &mut grad[d.wh(gate)],
        );
    }
}

/// A standalone ConvLSTM cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmCell {
    pub dims: CellDims,
    pub params: Vec<f64>,
}

impl ConvLstmCell {
    pub fn zeros(dims: CellDims) -> Self {
        Self {
            dims,
            params: vec![0.0; dims.len()],
        }
    }

    /// One step: `x` is `positions x input_channels`, states are
    /// `positions x hidden`, all row-major.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<StepCache> {
        let d = &self.dims;
        if x.len() != d.input_len()
            || h_prev.len() != d.state_len()
            || c_prev.len() != d.state_len()
        {
            return Err(Error::Usage(format!(
                "cell expects input {} and states {}, got {}, {}, {}",
                d.input_len(),
                d.state_len(),
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        Ok(cell_forward(d, &self.params, x, h_prev, c_prev))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub seq_len: usize,
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub hidden: usize,
    pub lstm_layers: usize,
    pub cell_kernel: usize,
    pub cell_positions: usize,
    pub dropout: f64,
    pub noise: f64,
    pub dense: usize,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            seq_len: 100,
            filters: 100,
            kernel: 4,
            pool: 4,
            hidden: 100,
            lstm_layers: 1,
            cell_kernel: 3,
            cell_positions: 5,
            dropout: 0.25,
            noise: 0.05,
            dense: 64,
            optimizer: OptimizerConfig::adam(1e-3),
            batch_size: 128,
            epochs: 30,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
struct Shapes {
    channels: usize,
    pooled: usize,
    steps: usize,
    cells: Vec<CellDims>,
}

/// Offsets of every parameter tensor in the flat vector.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    conv_w: std::ops::Range<usize>,
    conv_b: std::ops::Range<usize>,
    cells: Vec<std::ops::Range<usize>>,
    dense_w: std::ops::Range<usize>,
    dense_b: std::ops::Range<usize>,
    out_w: std::ops::Range<usize>,
    out_b: std::ops::Range<usize>,
}

impl Layout {
    fn new(cfg: &NetworkConfig, shapes: &Shapes) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let conv_w = take(cfg.filters * cfg.kernel * shapes.channels);
        let conv_b = take(cfg.filters);
        let cells = shapes.cells.iter().map(|d| take(d.len())).collect();
        let dense_w = take(cfg.dense * cfg.hidden);
        let dense_b = take(cfg.dense);
        let out_w = take(2 * cfg.dense);
        let out_b = take(2);
        Self {
            conv_w,
            conv_b,
            cells,
            dense_w,
            dense_b,
            out_w,
            out_b,
        }
    }

    fn total(&self) -> usize {
        self.out_b.end
    }

    fn named(&self) -> Vec<(String, usize)> {
        let mut v = vec![
            ("conv.weight".to_string(), self.conv_w.len()),
            ("conv.bias".to_string(), self.conv_b.len()),
        ];
        for (l, r) in self.cells.iter().enumerate() {
            v.push((format!("lstm{l}"), r.len()));
        }
        v.extend([
            ("dense.weight".to_string(), self.dense_w.len()),
            ("dense.bias".to_string(), self.dense_b.len()),
            ("out.weight".to_string(), self.out_w.len()),
            ("out.bias".to_string(), self.out_b.len()),
        ]);
        v
    }
}

struct Trace {
    conv_pre: Vec<f64>,
    drop1: Vec<f64>,
    act1: Vec<f64>,
    pool_arg: Vec<usize>,
    steps: Vec<Vec<StepCache>>,
    gp_arg: Vec<usize>,
    z: Vec<f64>,
    dense_pre: Vec<f64>,
    drop2: Vec<f64>,
    act2: Vec<f64>,
    probs: [f64; 2],
    logits: [f64; 2],
}

/// Per-epoch losses; validation is empty when no rows were held out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub input_dim: usize,
    pub params: Vec<f64>,
    /// Epochs trained so far.
    pub epoch: usize,
    shapes: Shapes,
    layout: Layout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkManifest {
    pub config: NetworkConfig,
    pub input_dim: usize,
    pub seed: u64,
    pub epoch: usize,
    /// Tensor names and lengths in blob order; cell tensors follow
    /// [`CellDims::len`] order.
    pub layout: Vec<(String, usize)>,
}

fn shapes(cfg: &NetworkConfig, input_dim: usize) -> Result<Shapes> {
    let positive = [
        cfg.seq_len,
        cfg.filters,
        cfg.kernel,
        cfg.pool,
        cfg.hidden,
        cfg.lstm_layers,
        cfg.cell_kernel,
        cfg.cell_positions,
        cfg.dense,
        cfg.batch_size,
    ];
    if positive.contains(&0) {
        return Err(Error::Config("network sizes must all be >= 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.dropout)
        || cfg.noise < 0.0
        || !(0.0..1.0).contains(&cfg.validation_fraction)
    {
        return Err(Error::Config(
            "dropout and validation fraction must be in [0, 1), noise >= 0".into(),
        ));
    }
    if input_dim == 0 || input_dim % cfg.seq_len != 0 {
        return Err(Error::Config(format!(
            "input length {input_dim} cannot be reshaped to {} positions",
            cfg.seq_len
        )));
    }
    let pooled = cfg.seq_len / cfg.pool;
    let steps = pooled / cfg.cell_positions;
    if steps == 0 {
        return Err(Error::Config(format!(
            "{} positions after pooling leave no timestep of {} positions",
            pooled, cfg.cell_positions
        )));
    }
    let cells = (0..cfg.lstm_layers)
        .map(|l| CellDims {
            positions: cfg.cell_positions,
            input_channels: if l == 0 { cfg.filters } else { cfg.hidden },
            hidden: cfg.hidden,
            kernel: cfg.cell_kernel,
        })
        .collect();
    Ok(Shapes {
        channels: input_dim / cfg.seq_len,
        pooled,
        steps,
        cells,
    })
}

fn glorot<R: Rng>(rng: &mut R, out: &mut [f64], fan_in: usize, fan_out: usize) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.random_range(-bound..=bound);
    }
}

struct Noise {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
    dropout: f64,
}

impl Noise {
    fn new(cfg: &NetworkConfig, seed: u64) -> Self {
        Self {
            rng: RngStream::new(seed, 0).rng(),
            normal: (cfg.noise > 0.0).then(|| Normal::new(0.0, cfg.noise).expect("finite stddev")),
            dropout: cfg.dropout,
        }
    }

    fn add(&mut self, v: &mut [f64]) {
        if let Some(n) = &self.normal {
            for x in v {
                *x += n.sample(&mut self.rng);
            }
        }
    }

    fn mask(&mut self, n: usize) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.dropout);
        (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < self.dropout {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    }
}

impl Network {
    /// Glorot-uniform weights, zero biases and peepholes, zero output layer.
    pub fn new(config: NetworkConfig, input_dim: usize) -> Result<Self> {
        let shapes = shapes(&config, input_dim)?;
        let layout = Layout::new(&config, &shapes);
        let mut params = vec![0.0; layout.total()];
        let mut rng = RngStream::new(config.seed, u64::MAX).rng();
        let c = &config;
        glorot(
            &mut rng,
            &mut params[layout.conv_w.clone()],
            c.kernel * shapes.channels,
            c.filters,
        );
        for (d, r) in shapes.cells.iter().zip(&layout.cells) {
            let cell = &mut params[r.clone()];
            for gate in 0..4 {
                glorot(
                    &mut rng,
                    &mut cell[d.wx(gate)],
                    d.kernel * d.input_channels,
                    d.hidden,
                );
                glorot(
                    &mut rng,
                    &mut cell[d.wh(gate)],
                    d.kernel * d.hidden,
                    d.hidden,
                );
            }
        }
        glorot(
            &mut rng,
            &mut params[layout.dense_w.clone()],
            c.hidden,
            c.dense,
        );
        Ok(Self {
            config,
            input_dim,
            params,
            epoch: 0,
            shapes,
            layout,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn layout(&self) -> Vec<(String, usize)> {
        self.layout.named()
    }

    fn check(&self, features: &[Vec<f64>]) -> Result<()> {
        if let Some(row) = features.iter().find(|r| r.len() != self.input_dim) {
            return Err(Error::Config(format!(
                "network expects {} features, got {}",
                self.input_dim,
                row.len()
            )));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64], noise: Option<&mut Noise>) -> Trace {
        let cfg = &self.config;
        let (l, f, ch) = (cfg.seq_len, cfg.filters, cfg.hidden);
        let p = &self.params;
        let lay = &self.layout;
        let mut noise = noise;

        let mut conv_pre = vec![0.0; l * f];
        conv_forward(
            x,
            l,
            self.shapes.channels,
            &p[lay.conv_w.clone()],
            cfg.kernel,
            f,
            &mut conv_pre,
        );
        let cb = &p[lay.conv_b.clone()];
        for (idx, v) in conv_pre.iter_mut().enumerate() {
            *v += cb[idx % f];
        }
        let mut act1: Vec<f64> = conv_pre.iter().map(|v| v.max(0.0)).collect();
        let drop1 = match noise.as_deref_mut() {
            Some(n) => {
                n.add(&mut act1);
                let m = n.mask(act1.len());
                act1.iter_mut().zip(&m).for_each(|(a, k)| *a *= k);
                m
            }
            None => Vec::new(),
        };

        let lp = self.shapes.pooled;
        let mut pooled = vec![0.0; lp * f];
        let mut pool_arg = vec![0; lp * f];
        for q in 0..lp {
            for c in 0..f {
                let mut best = q * cfg.pool * f + c;
                for w in 1..cfg.pool {
                    let idx = (q * cfg.pool + w) * f + c;
                    if act1[idx] > act1[best] {
                        best = idx;
                    }
                }
                pooled[q * f + c] = act1[best];
                pool_arg[q * f + c] = best;
            }
        }

        let mut input = pooled;
        let mut steps = Vec::with_capacity(self.shapes.cells.len());
        for (d, r) in self.shapes.cells.iter().zip(&lay.cells) {
            let cp = &p[r.clone()];
            let mut h = vec![0.0; d.state_len()];
            let mut c = vec![0.0; d.state_len()];
            let mut layer = Vec::with_capacity(self.shapes.steps);
            let mut out = Vec::with_capacity(self.shapes.steps * d.state_len());
            for t in 0..self.shapes.steps {
                let xt = &input[t * d.input_len()..(t + 1) * d.input_len()];
                let cache = cell_forward(d, cp, xt, &h, &c);
                h.clone_from(&cache.h);
                c.clone_from(&cache.c);
                out.extend_from_slice(&cache.h);
                layer.push(cache);
            }
            steps.push(layer);
            input = out;
        }

        // `input` now holds the top layer's hidden states, `steps*positions x hidden`.
        let mut z = vec![f64::NEG_INFINITY; ch];
        let mut gp_arg = vec![0; ch];
        for (row, hrow) in input.chunks(ch).enumerate() {
            for c in 0..ch {
                if hrow[c] > z[c] {
                    z[c] = hrow[c];
                    gp_arg[c] = row * ch + c;
                }
            }
        }
        if let Some(n) = noise.as_deref_mut() {
            n.add(&mut z);
        }

        let dw = &p[lay.dense_w.clone()];
        let db = &p[lay.dense_b.clone()];
        let dense_pre: Vec<f64> = (0..cfg.dense)
            .map(|j| db[j] + dot(&dw[j * ch..(j + 1) * ch], &z))
            .collect();
        let mut act2: Vec<f64> = dense_pre.iter().map(|v| v.max(0.0)).collect();
        let drop2 = match noise {
            Some(n) => {
                n.add(&mut act2);
                let m = n.mask(act2.len());
                act2.iter_mut().zip(&m).for_each(|(a, k)| *a *= k);
                m
            }
            None => Vec::new(),
        };

        let ow = &p[lay.out_w.clone()];
        let ob = &p[lay.out_b.clone()];
        let logits = [
            ob[0] + dot(&ow[..cfg.dense], &act2),
            ob[1] + dot(&ow[cfg.dense..], &act2),
        ];
        let m = logits[0].max(logits[1]);
        let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
        let s = e[0] + e[1];
        Trace {
            conv_pre,
            drop1,
            act1,
            pool_arg,
            steps,
            gp_arg,
            z,
            dense_pre,
            drop2,
            act2,
            probs: [e[0] / s, e[1] / s],
            logits,
        }
    }

    fn backward(&self, x: &[f64], tr: &Trace, label: u8, scale: f64, grad: &mut [f64]) {
        let cfg = &self.config;
        let (l, f, ch, dn) = (cfg.seq_len, cfg.filters, cfg.hidden, cfg.dense);
        let p = &self.params;
        let lay = &self.layout;

        let dlogits = [
            scale * (tr.probs[0] - (label == 0) as u8 as f64),
            scale * (tr.probs[1] - (label == 1) as u8 as f64),
        ];
        let ow = &p[lay.out_w.clone()];
        let mut dact2 = vec![0.0; dn];
        for k in 0..2 {
            grad[lay.out_b.start + k] += dlogits[k];
            for j in 0..dn {
                grad[lay.out_w.start + k * dn + j] += dlogits[k] * tr.act2[j];
                dact2[j] += dlogits[k] * ow[k * dn + j];
            }
        }
        let dw = &p[lay.dense_w.clone()];
        let mut dz = vec![0.0; ch];
        for j in 0..dn {
            let mut g = dact2[j];
            if !tr.drop2.is_empty() {
                g *= tr.drop2[j];
            }
            if tr.dense_pre[j] <= 0.0 || g == 0.0 {
                continue;
            }
            grad[lay.dense_b.start + j] += g;
            for c in 0..ch {
                grad[lay.dense_w.start + j * ch + c] += g * tr.z[c];
                dz[c] += g * dw[j * ch + c];
            }
        }

        // Gradient w.r.t. the top layer's hidden sequence.
        let top = self.shapes.cells.len() - 1;
        let mut dseq = vec![0.0; self.shapes.steps * self.shapes.cells[top].state_len()];
        for c in 0..ch {
            dseq[tr.gp_arg[c]] += dz[c];
        }
        for (layer, (d, r)) in self.shapes.cells.iter().zip(&lay.cells).enumerate().rev() {
            let cp = &p[r.clone()];
            let cg = &mut grad[r.clone()];
            let n = d.state_len();
            let mut dx_seq = vec![0.0; self.shapes.steps * d.input_len()];
            let mut dh_next = vec![0.0; n];
            let mut dc_next = vec![0.0; n];
            for t in (0..self.shapes.steps).rev() {
                let dh: Vec<f64> = (0..n).map(|j| dseq[t * n + j] + dh_next[j]).collect();
                let mut dh_prev = vec![0.0; n];
                let mut dc_prev = vec![0.0; n];
                let dx = &mut dx_seq[t * d.input_len()..(t + 1) * d.input_len()];
                cell_backward(
                    d,
                    cp,
                    &tr.steps[layer][t],
                    &dh,
                    &dc_next,
                    cg,
                    dx,
                    &mut dh_prev,
                    &mut dc_prev,
                );
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            dseq = dx_seq;
        }

        // `dseq` now covers the pooled positions fed to the first cell.
        let mut dact1 = vec![0.0; l * f];
        for (idx, g) in dseq.iter().enumerate() {
            dact1[tr.pool_arg[idx]] += g;
        }
        for (idx, g) in dact1.iter_mut().enumerate() {
            if !tr.drop1.is_empty() {
                *g *= tr.drop1[idx];
            }
            if tr.conv_pre[idx] <= 0.0 {
                *g = 0.0;
            }
        }
        for (idx, g) in dact1.iter().enumerate() {
            grad[lay.conv_b.start + idx % f] += g;
        }
        let (cw_start, cw_end) = (lay.conv_w.start, lay.conv_w.end);
        conv_backward(
            x,
            l,
            self.shapes.channels,
            &p[cw_start..cw_end],
            cfg.kernel,
            f,
            &dact1,
            None,
            &mut grad[cw_start..cw_end],
        );
        let _ = &tr.act1;
    }

    /// Class probabilities `[P(0), P(1)]` per row. Train mode draws noise
    /// and dropout masks from `seed`.
    pub fn forward(&self, features: &[Vec<f64>], mode: Mode, seed: u64) -> Result<Vec<[f64; 2]>> {
        self.check(features)?;
        let mut noise = Noise::new(&self.config, seed);
        Ok(features
            .iter()
            .map(|x| {
                let n = (mode == Mode::Train).then_some(&mut noise);
                self.trace(x, n).probs
            })
            .collect())
    }

    pub fn predict_proba(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self
            .forward(features, Mode::Eval, 0)?
            .into_iter()
            .map(|p| p[1])
            .collect())
    }

    /// Mean cross-entropy over the rows and its gradient.
    pub fn loss_and_grad(
        &self,
        features: &[Vec<f64>],
        labels: &[u8],
        mode: Mode,
        seed: u64,
    ) -> Result<(f64, Vec<f64>)> {
        self.check(features)?;
        let mut grad = vec![0.0; self.params.len()];
        let mut noise = Noise::new(&self.config, seed);
        let scale = 1.0 / features.len().max(1) as f64;
        let mut loss = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let n = (mode == Mode::Train).then_some(&mut noise);
            let tr = self.trace(x, n);
            loss += scale * log_loss(tr.logits, y);
            self.backward(x, &tr, y, scale, &mut grad);
        }
        Ok((loss, grad))
    }

    pub fn loss(&self, features: &[Vec<f64>], labels: &[u8], mode: Mode, seed: u64) -> Result<f64> {
        self.check(features)?;
        let mut noise = Noise::new(&self.config, seed);
        let scale = 1.0 / features.len().max(1) as f64;
        Ok(features
            .iter()
            .zip(labels)
            .map(|(x, &y)| {
                let n = (mode == Mode::Train).then_some(&mut noise);
                scale * log_loss(self.trace(x, n).logits, y)
            })
            .sum())
    }

    /// Smallest and largest input, forget and output gate activation over
    /// the rows, in eval mode.
    pub fn gate_extrema(&self, features: &[Vec<f64>]) -> Result<(f64, f64)> {
        self.check(features)?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for x in features {
            for step in self.trace(x, None).steps.iter().flatten() {
                for v in step.i.iter().chain(&step.f).chain(&step.o) {
                    lo = lo.min(*v);
                    hi = hi.max(*v);
                }
            }
        }
        Ok((lo, hi))
    }

    pub fn manifest(&self) -> NetworkManifest {
        NetworkManifest {
            config: self.config.clone(),
            input_dim: self.input_dim,
            seed: self.config.seed,
            epoch: self.epoch,
            layout: self.layout(),
        }
    }

    /// JSON manifest plus a blob of little-endian f64 parameters.
    pub fn save(&self, manifest: &Path, blob: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(manifest, json).map_err(|e| Error::file(manifest, e))?;
        let bytes: Vec<u8> = self.params.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(blob, bytes).map_err(|e| Error::file(blob, e))
    }

    pub fn load(manifest: &Path, blob: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest).map_err(|e| Error::file(manifest, e))?;
        let m: NetworkManifest = serde_json::from_str(&text)?;
        let mut net = Network::new(m.config, m.input_dim)?;
        let bytes = fs::read(blob).map_err(|e| Error::file(blob, e))?;
        if bytes.len() != 8 * net.params.len() {
            return Err(Error::Config(format!(
                "parameter blob holds {} bytes, expected {}",
                bytes.len(),
                8 * net.params.len()
            )));
        }
        for (p, chunk) in net.params.iter_mut().zip(bytes.chunks_exact(8)) {
            *p = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        net.epoch = m.epoch;
        Ok(net)
    }
}

/// `-log softmax(logits)[label]`.
fn log_loss(logits: [f64; 2], label: u8) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[label as usize]
}

/// Mean binary cross-entropy of predicted `P(1)` against labels, with
/// `0 * ln 0 = 0`.
pub fn binary_cross_entropy(labels: &[u8], probs: &[f64]) -> f64 {
    let term = |w: f64, p: f64| if w == 0.0 { 0.0 } else { w * p.ln() };
    -labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| term(y as f64, p) + term(1.0 - y as f64, 1.0 - p))
        .sum::<f64>()
        / labels.len().max(1) as f64
}

impl Scorer for Network {
    fn score(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.predict_proba(features)
    }
}

/// Mini-batch training with a held-out validation slice.
pub fn train_network(
    features: &[Vec<f64>],
    labels: &[u8],
    config: &NetworkConfig,
) -> Result<(Network, TrainReport)> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::Training(
            "features and labels must be non-empty and aligned".into(),
        ));
    }
    let mut net = Network::new(config.clone(), features[0].len())?;
    net.check(features)?;
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut RngStream::new(config.seed, 1).rng());
    let n_val = (config.validation_fraction * features.len() as f64).round() as usize;
    let (val, train) = order.split_at(n_val);
    let mut train = train.to_vec();
    let has = |c: u8| train.iter().any(|&i| labels[i] == c);
    if !has(0) || !has(1) {
        return Err(Error::Training("training split needs both classes".into()));
    }
    let val_x: Vec<Vec<f64>> = val.iter().map(|&i| features[i].clone()).collect();
    let val_y: Vec<u8> = val.iter().map(|&i| labels[i]).collect();

    let mut opt = Optimizer::new(config.optimizer, net.params.len());
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(config.epochs),
        validation_loss: Vec::with_capacity(config.epochs),
    };
    for epoch in 0..config.epochs {
        let epoch_seed = derive_index(config.seed, epoch as u64 + 2);
        train.shuffle(&mut RngStream::new(epoch_seed, 0).rng());
        let mut total = 0.0;
        for (b, chunk) in train.chunks(config.batch_size).enumerate() {
            let x: Vec<Vec<f64>> = chunk.iter().map(|&i| features[i].clone()).collect();
            let y: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grad) =
                net.loss_and_grad(&x, &y, Mode::Train, derive_index(epoch_seed, b as u64 + 1))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            opt.step(&mut net.params, &grad)?;
            total += loss * chunk.len() as f64;
        }
        net.epoch += 1;
        report.train_loss.push(total / train.len() as f64);
        if !val_x.is_empty() {
            let v = net.loss(&val_x, &val_y, Mode::Eval, 0)?;
            if !v.is_finite() {
                return Err(Error::Diverged { epoch, loss: v });
            }
            report.validation_loss.push(v);
        }
        log::debug!(
            "conv-lstm epoch {epoch}: train {:.5}",
            report.train_loss[epoch]
        );
    }
    Ok((net, report))
}

/// [`Trainer`] adapter; the fit seed replaces the configured one.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmTrainer {
    pub config: NetworkConfig,
}

impl Trainer for ConvLstmTrainer {
    fn fit(&self, features: &[Vec<f64>], labels: &[u8], seed: u64) -> Result<Box<dyn Scorer>> {
        let mut config = self.config.clone();
        config.seed = seed;
        Ok(Box::new(train_network(features, labels, &config)?.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::grad_check;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            seq_len: 8,
            filters: 3,
            kernel: 2,
            pool: 2,
            hidden: 4,
            lstm_layers: 1,
            cell_kernel: 2,
            cell_positions: 2,
            dropout: 0.25,
            noise: 0.05,
            dense: 5,
            optimizer: OptimizerConfig::adam(0.01),
            batch_size: 4,
            epochs: 1,
            validation_fraction: 0.0,
            seed: 3,
        }
    }

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = RngStream::new(seed, 0).rng();
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn zero_cell_halves_the_state() {
        let dims = CellDims {
            positions: 3,
            input_channels: 2,
            hidden: 2,
            kernel: 3,
        };
        let cell = ConvLstmCell::zeros(dims);
        let x = [0.3, -1.0, 2.0, 0.1, 0.0, 5.0];
        let c_prev = [1.0, -2.0, 0.5, 0.0, 3.0, -0.25];
        let out = cell.step(&x, &[0.7; 6], &c_prev).unwrap();
        for j in 0..6 {
            assert_eq!(out.i[j], 0.5);
            assert_eq!(out.f[j], 0.5);
            assert_eq!(out.o[j], 0.5);
            assert_eq!(out.c[j], 0.5 * c_prev[j]);
            assert_eq!(out.h[j], 0.5 * (0.5 * c_prev[j]).tanh());
        }
        let rest = cell.step(&[0.0; 6], &[0.0; 6], &[0.0; 6]).unwrap();
        assert!(rest.h.iter().all(|&h| h == 0.0));
        assert!(matches!(
            cell.step(&[0.0; 5], &[0.0; 6], &[0.0; 6]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn gates_stay_in_open_unit_interval() {
        let dims = CellDims {
            positions: 4,
            input_channels: 3,
            hidden: 2,
            kernel: 3,
        };
        let mut cell = ConvLstmCell::zeros(dims);
        let mut rng = RngStream::new(1, 0).rng();
        cell.params
            .iter_mut()
            .for_each(|p| *p = rng.random_range(-3.0..3.0));
        let (mut h, mut c) = (vec![0.0; 8], vec![0.0; 8]);
        for _ in 0..20 {
            let x: Vec<f64> = (0..12).map(|_| rng.random_range(-5.0..5.0)).collect();
            let s = cell.step(&x, &h, &c).unwrap();
            for v in s.i.iter().chain(&s.f).chain(&s.o) {
                assert!(*v > 0.0 && *v < 1.0);
            }
            h = s.h;
            c = s.c;
        }
    }

    #[test]
    fn zero_output_layer_gives_uniform_predictions() {
        let net = Network::new(tiny(), 16).unwrap();
        let rows = random_rows(6, 16, 2);
        for p in net.forward(&rows, Mode::Eval, 0).unwrap() {
            assert_eq!(p, [0.5, 0.5]);
        }
        let labels = [0, 1, 1, 0, 1, 0];
        let loss = net.loss(&rows, &labels, Mode::Eval, 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn eval_is_deterministic_and_softmax_sums_to_one() {
        let mut net = Network::new(tiny(), 16).unwrap();
        let mut rng = RngStream::new(4, 0).rng();
        net.params
            .iter_mut()
            .for_each(|p| *p = rng.random_range(-1.0..1.0));
        let rows = random_rows(20, 16, 5);
        let a = net.forward(&rows, Mode::Eval, 0).unwrap();
        let b = net.forward(&rows, Mode::Eval, 99).unwrap();
        assert_eq!(a, b);
        for p in &a {
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
        let t1 = net.forward(&rows, Mode::Train, 1).unwrap();
        assert_ne!(t1, a);
    }

    #[test]
    fn invalid_reshape_is_config_error() {
        assert!(matches!(Network::new(tiny(), 15), Err(Error::Config(_))));
        let net = Network::new(tiny(), 16).unwrap();
        assert!(matches!(
            net.predict_proba(&[vec![0.0; 10]]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(binary_cross_entropy(&[1], &[1.0]), 0.0);
        assert!((binary_cross_entropy(&[1], &[0.5]) - 0.693147).abs() < 1e-6);
    }

    fn network_gradients(mode: Mode, layers: usize) -> (Vec<f64>, Vec<f64>, Network) {
        let mut cfg = tiny();
        cfg.lstm_layers = layers;
        let mut net = Network::new(cfg, 16).unwrap();
        let mut rng = RngStream::new(7, layers as u64).rng();
        net.params
            .iter_mut()
            .for_each(|p| *p = rng.random_range(-0.8..0.8));
        let rows = random_rows(3, 16, 8);
        let labels = [1, 0, 1];
        let (_, grad) = net.loss_and_grad(&rows, &labels, mode, 21).unwrap();
        let mut numeric = vec![0.0; grad.len()];
        for i in 0..grad.len() {
            let mut p = net.clone();
            p.params[i] += 1e-5;
            let plus = p.loss(&rows, &labels, mode, 21).unwrap();
            p.params[i] -= 2e-5;
            let minus = p.loss(&rows, &labels, mode, 21).unwrap();
            numeric[i] = (plus - minus) / 2e-5;
        }
        (grad, numeric, net)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for mode in [Mode::Eval, Mode::Train] {
            let mut cfg = tiny();
            cfg.lstm_layers = 1;
            let mut net = Network::new(cfg, 16).unwrap();
            let mut rng = RngStream::new(7, 1).rng();
            net.params
                .iter_mut()
                .for_each(|p| *p = rng.random_range(-0.8..0.8));
            let rows = random_rows(3, 16, 8);
            let labels = [1, 0, 1];
            let (_, grad) = net.loss_and_grad(&rows, &labels, mode, 21).unwrap();
            let mut probe = net.clone();
            let report = grad_check(
                |p| {
                    probe.params.copy_from_slice(p);
                    probe.loss(&rows, &labels, mode, 21).unwrap()
                },
                &net.params,
                &grad,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed, "{mode:?}: {report:?}");
        }
    }

    #[test]
    fn stacked_layers_backpropagate() {
        let (analytic, numeric, _) = network_gradients(Mode::Eval, 2);
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            // Absolute floor: central differences of an O(1) loss carry
            // about 1e-11 of roundoff.
            assert!(
                (a - n).abs() <= 1e-4 * a.abs().max(n.abs()) + 1e-9,
                "coordinate {i}: {a} vs {n}"
            );
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = Network::new(tiny(), 16).unwrap();
        let mut rng = RngStream::new(5, 0).rng();
        net.params
            .iter_mut()
            .for_each(|p| *p = rng.random_range(-1.0..1.0));
        net.epoch = 7;
        let (m, b) = (dir.path().join("net.json"), dir.path().join("net.bin"));
        net.save(&m, &b).unwrap();
        let back = Network::load(&m, &b).unwrap();
        assert_eq!(back, net);
        fs::write(&b, [0u8; 3]).unwrap();
        assert!(Network::load(&m, &b).is_err());
    }

    #[test]
    fn training_keeps_gates_valid_and_reduces_loss() {
        let mut cfg = tiny();
        cfg.epochs = 30;
        cfg.validation_fraction = 0.1;
        let rows = random_rows(60, 16, 9);
        let labels: Vec<u8> = rows.iter().map(|r| (r[0] + r[8] > 0.0) as u8).collect();
        let (net, report) = train_network(&rows, &labels, &cfg).unwrap();
        assert_eq!(report.train_loss.len(), 30);
        assert_eq!(report.validation_loss.len(), 30);
        assert!(report.train_loss[29] < report.train_loss[0]);
        let (lo, hi) = net.gate_extrema(&rows).unwrap();
        assert!(lo > 0.0 && hi < 1.0);
        let (again, _) = train_network(&rows, &labels, &cfg).unwrap();
        assert_eq!(again.params, net.params);
    }
}
