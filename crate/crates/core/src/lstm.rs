//! Trainable recurrent sequence filter mapping `(I, Q)` records to Bloch
//! trajectories.
//!
//! The network is a stack of standard gated recurrent cells (input, forget
//! and output gates with a persistent cell state) followed by three
//! independent logistic heads emitting occupation probabilities
//! `(s_x, s_y, s_z)` per timestep; Bloch coordinates are `2s - 1`. Training
//! uses full backpropagation through time, adaptive-moment updates and a
//! cyclical triangular learning rate. Losses: cross-entropy of the final
//! prediction against the tomography outcome, a mean-squared penalty on the
//! `t = 0` prediction against the known initial state, and a rectified
//! penalty on purities exceeding 1 (penalized, never clamped).
//!
//! Batch gradients are averaged over fixed-size record chunks that are
//! processed in parallel and reduced in deterministic order, so training is
//! bit-reproducible for a fixed seed at any thread count.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{BlochState, TomoAxis, Trajectory, VoltageRecord};
use crate::{Result, TrajError};

const INPUT_SIZE: usize = 2;
const OUTPUT_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_size: 32,
            num_layers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    /// Training fraction; the rest is held out for validation.
    pub split: f64,
    pub base_lr: f64,
    pub max_lr: f64,
    /// Length of one triangular learning-rate cycle, in optimizer steps.
    pub cycle_len: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub w_init: f64,
    pub w_purity: f64,
    pub max_epochs: usize,
    /// Probability clip inside logarithms.
    pub clip_eps: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            split: 0.9,
            base_lr: 2e-4,
            max_lr: 3e-3,
            cycle_len: 400,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
            w_init: 1.0,
            w_purity: 1.0,
            max_epochs: 40,
            clip_eps: 1e-7,
            clip_norm: 5.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(TrajError::Training("split must be in (0, 1)".into()));
        }
        if self.base_lr >= self.max_lr {
            return Err(TrajError::Training("base_lr must be < max_lr".into()));
        }
        if self.batch_size == 0 || self.cycle_len == 0 {
            return Err(TrajError::Training("batch_size and cycle_len must be > 0".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        let phase = (step % self.cycle_len) as f64 / self.cycle_len as f64;
        let tri = if phase < 0.5 {
            2.0 * phase
        } else {
            2.0 * (1.0 - phase)
        };
        self.base_lr + (self.max_lr - self.base_lr) * tri
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ce: f64,
    pub l_init: f64,
    pub l_purity: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
}

/// Parameter layout inside the flat vector, per layer:
/// `W_x (4H x in)`, `W_h (4H x H)`, `b (4H)`; then head `W_y (3 x H)`,
/// `b_y (3)`. Gate order within the `4H` blocks: input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Layout {
    hidden: usize,
    layers: usize,
}

impl Layout {
    fn in_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            INPUT_SIZE
        } else {
            self.hidden
        }
    }

    fn layer_offset(&self, layer: usize) -> usize {
        let h = self.hidden;
        let mut off = 0;
        for l in 0..layer {
            off += 4 * h * self.in_dim(l) + 4 * h * h + 4 * h;
        }
        off
    }

    fn wx(&self, layer: usize) -> usize {
        self.layer_offset(layer)
    }

    fn wh(&self, layer: usize) -> usize {
        self.wx(layer) + 4 * self.hidden * self.in_dim(layer)
    }

    fn bias(&self, layer: usize) -> usize {
        self.wh(layer) + 4 * self.hidden * self.hidden
    }

    fn head_w(&self) -> usize {
        self.layer_offset(self.layers)
    }

    fn head_b(&self) -> usize {
        self.head_w() + OUTPUT_SIZE * self.hidden
    }

    fn total(&self) -> usize {
        self.head_b() + OUTPUT_SIZE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub config: NetworkConfig,
    /// Longest record length seen during training.
    pub max_len: usize,
    pub input_mean: [f64; 2],
    pub input_std: [f64; 2],
    layout: Layout,
    params: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LstmModel {
    /// Fresh model with seeded uniform weight init, forget-gate bias 1 and
    /// zero head bias (so an untrained model on zero input emits s = 0.5).
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        if config.hidden_size == 0 || config.num_layers == 0 {
            return Err(TrajError::Training(
                "hidden_size and num_layers must be >= 1".into(),
            ));
        }
        let layout = Layout {
            hidden: config.hidden_size,
            layers: config.num_layers,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c73_746d_5f69_6e69);
        let mut params = vec![0.0; layout.total()];
        let h = config.hidden_size;
        for l in 0..config.num_layers {
            let input = layout.in_dim(l);
            let rx = 1.0 / (input as f64).sqrt();
            for k in 0..4 * h * input {
                params[layout.wx(l) + k] = rng.random_range(-rx..rx);
            }
            let rh = 1.0 / (h as f64).sqrt();
            for k in 0..4 * h * h {
                params[layout.wh(l) + k] = rng.random_range(-rh..rh);
            }
            // forget-gate bias starts open
            for j in 0..h {
                params[layout.bias(l) + h + j] = 1.0;
            }
        }
        let ry = 1.0 / (h as f64).sqrt();
        for k in 0..OUTPUT_SIZE * h {
            params[layout.head_w() + k] = rng.random_range(-ry..ry);
        }
        Ok(Self {
            config: *config,
            max_len: usize::MAX,
            input_mean: [0.0; 2],
            input_std: [1.0; 2],
            layout,
            params,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&CheckpointFile {
            schema_version: 1,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.schema_version != 1 {
            return Err(TrajError::Training(format!(
                "unsupported checkpoint schema_version {}",
                file.schema_version
            )));
        }
        Ok(file.model)
    }

    fn normalize(&self, i: f64, q: f64) -> [f64; 2] {
        [
            (i - self.input_mean[0]) / self.input_std[0],
            (q - self.input_mean[1]) / self.input_std[1],
        ]
    }

    /// Probability sequences `(s_x, s_y, s_z)` with one emission before any
    /// input (the `t = 0` prediction) and one per consumed sample.
    fn forward_probs(&self, record: &VoltageRecord) -> Result<Vec<[f64; 3]>> {
        let n = record.n_m();
        if n > self.max_len {
            return Err(TrajError::Training(format!(
                "record {} has {} samples, model trained for max {}",
                record.id, n, self.max_len
            )));
        }
        let mut cache = ForwardCache::new(&self.layout, n);
        self.forward_into(record, n, &mut cache);
        Ok(cache.emissions)
    }

    /// Trajectory output: emission `k` is the state estimate at `t = k dt`.
    pub fn forward(&self, record: &VoltageRecord) -> Result<Trajectory> {
        let probs = self.forward_probs(record)?;
        Ok(Trajectory {
            states: probs
                .iter()
                .map(|s| {
                    BlochState::new(
                        2.0 * s[0] - 1.0,
                        2.0 * s[1] - 1.0,
                        2.0 * s[2] - 1.0,
                    )
                })
                .collect(),
            dt: record.dt,
        })
    }

    fn forward_into(&self, record: &VoltageRecord, n: usize, cache: &mut ForwardCache) {
        let h = self.layout.hidden;
        let layers = self.layout.layers;
        let p = &self.params;

        // emission 0: head on the zero hidden state
        cache.emissions.push(self.head(&vec![0.0; h]));

        let mut h_state = vec![0.0; layers * h];
        let mut c_state = vec![0.0; layers * h];
        let mut pre = vec![0.0; 4 * h];
        let mut x = vec![0.0; h.max(INPUT_SIZE)];
        for t in 0..n {
            let norm = self.normalize(record.i_samples[t], record.q_samples[t]);
            x[..2].copy_from_slice(&norm);
            for l in 0..layers {
                let input = self.layout.in_dim(l);
                let wx = self.layout.wx(l);
                let wh = self.layout.wh(l);
                let b = self.layout.bias(l);
                let h_prev = &h_state[l * h..(l + 1) * h];
                for (j, pre_j) in pre.iter_mut().enumerate() {
                    let mut acc = p[b + j];
                    let row = &p[wx + j * input..wx + (j + 1) * input];
                    for (w, xv) in row.iter().zip(&x[..input]) {
                        acc += w * xv;
                    }
                    let row = &p[wh + j * h..wh + (j + 1) * h];
                    for (w, hv) in row.iter().zip(h_prev) {
                        acc += w * hv;
                    }
                    *pre_j = acc;
                }
                let off = (t * layers + l) * h;
                // store the layer input and the previous hidden state
                let xin_off = cache.x_offset(t, l);
                cache.x[xin_off..xin_off + input].copy_from_slice(&x[..input]);
                cache.h_prev[off..off + h].copy_from_slice(h_prev);
                for j in 0..h {
                    let ig = sigmoid(pre[j]);
                    let fg = sigmoid(pre[h + j]);
                    let gg = pre[2 * h + j].tanh();
                    let og = sigmoid(pre[3 * h + j]);
                    let c_new = fg * c_state[l * h + j] + ig * gg;
                    let tc = c_new.tanh();
                    cache.i[off + j] = ig;
                    cache.f[off + j] = fg;
                    cache.g[off + j] = gg;
                    cache.o[off + j] = og;
                    cache.c_prev[off + j] = c_state[l * h + j];
                    cache.tanh_c[off + j] = tc;
                    c_state[l * h + j] = c_new;
                    x[j] = og * tc;
                }
                h_state[l * h..(l + 1) * h].copy_from_slice(&x[..h]);
            }
            let top = &h_state[(layers - 1) * h..layers * h];
            let hh_off = t * h;
            cache.h_top[hh_off..hh_off + h].copy_from_slice(top);
            cache.emissions.push(self.head(top));
        }
    }

    fn head(&self, hidden: &[f64]) -> [f64; 3] {
        let p = &self.params;
        let wy = self.layout.head_w();
        let by = self.layout.head_b();
        let h = self.layout.hidden;
        let mut out = [0.0; 3];
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = p[by + j];
            let row = &p[wy + j * h..wy + (j + 1) * h];
            for (w, hv) in row.iter().zip(hidden) {
                acc += w * hv;
            }
            *o = sigmoid(acc);
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema_version: u32,
    model: LstmModel,
}

/// Per-record forward activations kept for backpropagation.
struct ForwardCache {
    layout: Layout,
    emissions: Vec<[f64; 3]>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    h_prev: Vec<f64>,
    h_top: Vec<f64>,
    x: Vec<f64>,
}

impl ForwardCache {
    fn new(layout: &Layout, n: usize) -> Self {
        let h = layout.hidden;
        let per_step = layout.layers * h;
        let x_per_step = INPUT_SIZE + (layout.layers - 1) * h;
        Self {
            layout: *layout,
            emissions: Vec::with_capacity(n + 1),
            i: vec![0.0; n * per_step],
            f: vec![0.0; n * per_step],
            g: vec![0.0; n * per_step],
            o: vec![0.0; n * per_step],
            c_prev: vec![0.0; n * per_step],
            tanh_c: vec![0.0; n * per_step],
            h_prev: vec![0.0; n * per_step],
            h_top: vec![0.0; n * h],
            x: vec![0.0; n * x_per_step],
        }
    }

    fn x_offset(&self, t: usize, layer: usize) -> usize {
        let x_per_step = INPUT_SIZE + (self.layout.layers - 1) * self.layout.hidden;
        t * x_per_step + if layer == 0 { 0 } else { INPUT_SIZE + (layer - 1) * self.layout.hidden }
    }
}

/// Compute the per-record losses defined by the training objective.
fn record_losses(
    emissions: &[[f64; 3]],
    axis: TomoAxis,
    outcome: u8,
    init: &BlochState,
    cfg: &TrainingConfig,
) -> (f64, f64, f64) {
    let last = emissions.len() - 1;
    let j_axis = axis_index(axis);
    let s = emissions[last][j_axis].clamp(cfg.clip_eps, 1.0 - cfg.clip_eps);
    let l_ce = if outcome == 1 {
        -s.ln()
    } else {
        -(1.0 - s).ln()
    };

    let target = [init.x, init.y, init.z];
    let l_init = (0..3)
        .map(|j| (2.0 * emissions[0][j] - 1.0 - target[j]).powi(2))
        .sum::<f64>()
        / 3.0;

    let mut l_purity = 0.0;
    for e in emissions {
        let purity: f64 = e.iter().map(|s| (2.0 * s - 1.0).powi(2)).sum();
        l_purity += (purity - 1.0).max(0.0);
    }
    l_purity /= emissions.len() as f64;

    (l_ce, l_init, l_purity)
}

fn axis_index(axis: TomoAxis) -> usize {
    match axis {
        TomoAxis::X => 0,
        TomoAxis::Y => 1,
        TomoAxis::Z => 2,
    }
}

/// Public loss evaluation over a batch of probability sequences.
pub fn loss(
    emissions: &[Vec<[f64; 3]>],
    labels: &[(TomoAxis, u8)],
    init_states: &[BlochState],
    cfg: &TrainingConfig,
) -> Result<LossBreakdown> {
    if emissions.len() != labels.len() || emissions.len() != init_states.len() {
        return Err(TrajError::Training("loss: length mismatch".into()));
    }
    if emissions.is_empty() {
        return Err(TrajError::Training("loss: empty batch".into()));
    }
    let mut acc = (0.0, 0.0, 0.0);
    for ((e, (axis, outcome)), init) in emissions.iter().zip(labels).zip(init_states) {
        let (ce, li, lp) = record_losses(e, *axis, *outcome, init, cfg);
        acc.0 += ce;
        acc.1 += li;
        acc.2 += lp;
    }
    let n = emissions.len() as f64;
    let (l_ce, l_init, l_purity) = (acc.0 / n, acc.1 / n, acc.2 / n);
    Ok(LossBreakdown {
        l_ce,
        l_init,
        l_purity,
        total: l_ce + cfg.w_init * l_init + cfg.w_purity * l_purity,
    })
}

/// Forward + backward for one record; accumulates the gradient of
/// `ce + w_init·init + w_purity·purity` into `grad`.
fn record_backward(
    model: &LstmModel,
    record: &VoltageRecord,
    cfg: &TrainingConfig,
    grad: &mut [f64],
) -> Result<(f64, f64, f64)> {
    let axis = record
        .tomo_axis
        .ok_or_else(|| TrajError::Training(format!("record {} missing tomography axis", record.id)))?;
    let outcome = record
        .tomo_outcome
        .ok_or_else(|| TrajError::Training(format!("record {} missing tomography outcome", record.id)))?;
    let n = record.n_m();
    if n > model.max_len {
        return Err(TrajError::Training(format!(
            "record {} longer than trained max length",
            record.id
        )));
    }
    let layout = &model.layout;
    let h = layout.hidden;
    let layers = layout.layers;
    let p = &model.params;

    let mut cache = ForwardCache::new(layout, n);
    model.forward_into(record, n, &mut cache);
    let losses = record_losses(&cache.emissions, axis, outcome, &record.init_state, cfg);

    // gradient w.r.t. each emission's probabilities
    let n_emit = cache.emissions.len();
    let mut d_s = vec![[0.0f64; 3]; n_emit];
    // cross entropy at the final emission
    {
        let j = axis_index(axis);
        let s = cache.emissions[n_emit - 1][j];
        if s > cfg.clip_eps && s < 1.0 - cfg.clip_eps {
            d_s[n_emit - 1][j] += (s - f64::from(outcome)) / (s * (1.0 - s));
        }
    }
    // initial-state penalty on emission 0
    {
        let target = [record.init_state.x, record.init_state.y, record.init_state.z];
        for j in 0..3 {
            d_s[0][j] += cfg.w_init * (4.0 / 3.0) * (2.0 * cache.emissions[0][j] - 1.0 - target[j]);
        }
    }
    // purity penalty on every emission
    {
        let scale = cfg.w_purity / n_emit as f64;
        for (k, e) in cache.emissions.iter().enumerate() {
            let purity: f64 = e.iter().map(|s| (2.0 * s - 1.0).powi(2)).sum();
            if purity > 1.0 {
                for j in 0..3 {
                    d_s[k][j] += scale * 4.0 * (2.0 * e[j] - 1.0);
                }
            }
        }
    }

    let wy = layout.head_w();
    let by = layout.head_b();

    // head backward: each emission k > 0 reads h_top(t = k-1); emission 0
    // reads the zero vector (only the bias receives gradient)
    let mut d_h_top = vec![0.0; n * h];
    for k in 0..n_emit {
        let s = &cache.emissions[k];
        for j in 0..3 {
            if d_s[k][j] == 0.0 {
                continue;
            }
            let du = d_s[k][j] * s[j] * (1.0 - s[j]);
            grad[by + j] += du;
            if k > 0 {
                let t = k - 1;
                let hrow = &cache.h_top[t * h..(t + 1) * h];
                for (jj, hv) in hrow.iter().enumerate() {
                    grad[wy + j * h + jj] += du * hv;
                }
                let wrow = &p[wy + j * h..wy + (j + 1) * h];
                for (jj, w) in wrow.iter().enumerate() {
                    d_h_top[t * h + jj] += du * w;
                }
            }
        }
    }

    // BPTT through the stacked cells
    let mut d_h = vec![0.0; layers * h];
    let mut d_c = vec![0.0; layers * h];
    let mut d_x_lower = vec![0.0; h.max(INPUT_SIZE)];
    let mut d_gates = vec![0.0; 4 * h];
    let mut d_h_prev = vec![0.0; h];
    for t in (0..n).rev() {
        // inject the head gradient into the top layer
        for j in 0..h {
            d_h[(layers - 1) * h + j] += d_h_top[t * h + j];
        }
        for l in (0..layers).rev() {
            let input = layout.in_dim(l);
            let off = (t * layers + l) * h;
            let wx = layout.wx(l);
            let wh = layout.wh(l);
            let b = layout.bias(l);
            let x_off = cache.x_offset(t, l);

            d_x_lower[..input].fill(0.0);
            d_h_prev.fill(0.0);
            for j in 0..h {
                let ig = cache.i[off + j];
                let fg = cache.f[off + j];
                let gg = cache.g[off + j];
                let og = cache.o[off + j];
                let tc = cache.tanh_c[off + j];
                let dh_j = d_h[l * h + j];
                let mut dc_j = d_c[l * h + j] + dh_j * og * (1.0 - tc * tc);
                let do_j = dh_j * tc;
                let di_j = dc_j * gg;
                let df_j = dc_j * cache.c_prev[off + j];
                let dg_j = dc_j * ig;
                dc_j *= fg; // flows to c_{t-1}
                d_c[l * h + j] = dc_j;
                d_gates[j] = di_j * ig * (1.0 - ig);
                d_gates[h + j] = df_j * fg * (1.0 - fg);
                d_gates[2 * h + j] = dg_j * (1.0 - gg * gg);
                d_gates[3 * h + j] = do_j * og * (1.0 - og);
            }
            // parameter gradients plus backprop into the inputs and the
            // previous hidden state, one sweep over the gate rows
            let x_in = &cache.x[x_off..x_off + input];
            let h_prev = &cache.h_prev[off..off + h];
            for (j, &dg) in d_gates.iter().enumerate() {
                if dg == 0.0 {
                    continue;
                }
                grad[b + j] += dg;
                let gx = &mut grad[wx + j * input..wx + (j + 1) * input];
                let rx = &p[wx + j * input..wx + (j + 1) * input];
                for (((g, xv), dx), w) in
                    gx.iter_mut().zip(x_in).zip(d_x_lower[..input].iter_mut()).zip(rx)
                {
                    *g += dg * xv;
                    *dx += dg * w;
                }
                let gh = &mut grad[wh + j * h..wh + (j + 1) * h];
                let rh = &p[wh + j * h..wh + (j + 1) * h];
                for (((g, hv), dh), w) in
                    gh.iter_mut().zip(h_prev).zip(d_h_prev.iter_mut()).zip(rh)
                {
                    *g += dg * hv;
                    *dh += dg * w;
                }
            }
            d_h[l * h..(l + 1) * h].copy_from_slice(&d_h_prev);
            if l > 0 {
                // gradient into the lower layer's hidden output at time t
                for j in 0..h {
                    d_h[(l - 1) * h + j] += d_x_lower[j];
                }
            }
        }
    }
    Ok(losses)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainingConfig) {
        self.step += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.step as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / b1t;
            let v_hat = *v / b2t;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps_opt);
        }
    }
}

/// Batch gradient: records are split into fixed chunks processed in
/// parallel; chunk results are combined in index order, so the sum is
/// independent of the thread count.
fn batch_gradient(
    model: &LstmModel,
    records: &[&VoltageRecord],
    cfg: &TrainingConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let n_params = model.params.len();
    const CHUNK: usize = 32;
    let chunks: Vec<&[&VoltageRecord]> = records.chunks(CHUNK).collect();
    let partials: Result<Vec<(f64, f64, f64, Vec<f64>)>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut grad = vec![0.0; n_params];
            let mut acc = (0.0, 0.0, 0.0);
            for rec in *chunk {
                let (ce, li, lp) = record_backward(model, rec, cfg, &mut grad)?;
                acc.0 += ce;
                acc.1 += li;
                acc.2 += lp;
            }
            Ok((acc.0, acc.1, acc.2, grad))
        })
        .collect();
    let partials = partials?;
    let mut grad = vec![0.0; n_params];
    let mut acc = (0.0, 0.0, 0.0);
    for (ce, li, lp, g) in partials {
        acc.0 += ce;
        acc.1 += li;
        acc.2 += lp;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let n = records.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    let breakdown = LossBreakdown {
        l_ce: acc.0 / n,
        l_init: acc.1 / n,
        l_purity: acc.2 / n,
        total: acc.0 / n + cfg.w_init * acc.1 / n + cfg.w_purity * acc.2 / n,
    };
    Ok((breakdown, grad))
}

fn batch_loss(
    model: &LstmModel,
    records: &[&VoltageRecord],
    cfg: &TrainingConfig,
) -> Result<LossBreakdown> {
    const CHUNK: usize = 64;
    let chunks: Vec<&[&VoltageRecord]> = records.chunks(CHUNK).collect();
    let partials: Result<Vec<(f64, f64, f64)>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut acc = (0.0, 0.0, 0.0);
            for rec in *chunk {
                let e = model.forward_probs(rec)?;
                let (ce, li, lp) = record_losses(
                    &e,
                    rec.tomo_axis
                        .ok_or_else(|| TrajError::Training("missing label".into()))?,
                    rec.tomo_outcome
                        .ok_or_else(|| TrajError::Training("missing label".into()))?,
                    &rec.init_state,
                    cfg,
                );
                acc.0 += ce;
                acc.1 += li;
                acc.2 += lp;
            }
            Ok(acc)
        })
        .collect();
    let mut acc = (0.0, 0.0, 0.0);
    for (ce, li, lp) in partials? {
        acc.0 += ce;
        acc.1 += li;
        acc.2 += lp;
    }
    let n = records.len() as f64;
    Ok(LossBreakdown {
        l_ce: acc.0 / n,
        l_init: acc.1 / n,
        l_purity: acc.2 / n,
        total: acc.0 / n + cfg.w_init * acc.1 / n + cfg.w_purity * acc.2 / n,
    })
}

/// Train a model on labeled records. Deterministic for a fixed seed.
/// Returns the best-validation-loss model and the per-epoch loss curves.
pub fn train(
    records: &[VoltageRecord],
    net: &NetworkConfig,
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<(LstmModel, Vec<EpochStats>)> {
    cfg.validate()?;
    let labeled: Vec<&VoltageRecord> = records
        .iter()
        .filter(|r| r.tomo_axis.is_some() && r.tomo_outcome.is_some() && r.n_m() > 0)
        .collect();
    if labeled.len() < 2 * cfg.batch_size.min(labeled.len().max(1)) && labeled.len() < 4 {
        return Err(TrajError::Training(format!(
            "training needs at least a few labeled records, got {}",
            labeled.len()
        )));
    }

    let mut model = LstmModel::new(net, seed)?;
    model.max_len = labeled.iter().map(|r| r.n_m()).max().unwrap();

    // input standardization from the unpadded samples
    let mut sums = [0.0f64; 2];
    let mut sqs = [0.0f64; 2];
    let mut count = 0usize;
    for rec in &labeled {
        for k in 0..rec.n_m() {
            sums[0] += rec.i_samples[k];
            sums[1] += rec.q_samples[k];
            sqs[0] += rec.i_samples[k] * rec.i_samples[k];
            sqs[1] += rec.q_samples[k] * rec.q_samples[k];
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    for ch in 0..2 {
        let mean = sums[ch] / n;
        let var = (sqs[ch] / n - mean * mean).max(1e-12);
        model.input_mean[ch] = mean;
        model.input_std[ch] = var.sqrt();
    }

    // deterministic split
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7370_6c69_74);
    shuffle(&mut order, &mut shuffle_rng);
    let n_train = ((labeled.len() as f64) * cfg.split).round() as usize;
    let n_train = n_train.clamp(1, labeled.len() - 1);
    let (train_idx, val_idx) = order.split_at(n_train);
    let mut train_idx = train_idx.to_vec();
    let val_set: Vec<&VoltageRecord> = val_idx.iter().map(|&i| labeled[i]).collect();

    let mut adam = Adam::new(model.params.len());
    let mut curves = Vec::new();
    let mut best: Option<(f64, Vec<f64>, usize, [f64; 2], [f64; 2])> = None;
    let mut global_step = 0usize;
    let mut cycle_minima: Vec<f64> = Vec::new();
    let mut current_cycle_min = f64::INFINITY;
    let mut epoch_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6570_6f63_68);

    for epoch in 0..cfg.max_epochs {
        shuffle(&mut train_idx, &mut epoch_rng);
        let mut train_acc = LossBreakdown {
            l_ce: 0.0,
            l_init: 0.0,
            l_purity: 0.0,
            total: 0.0,
        };
        let mut n_batches = 0usize;
        let mut lr = cfg.base_lr;
        for batch_idx in train_idx.chunks(cfg.batch_size) {
            let batch: Vec<&VoltageRecord> = batch_idx.iter().map(|&i| labeled[i]).collect();
            let (losses, mut grad) = batch_gradient(&model, &batch, cfg)?;
            if !losses.total.is_finite() {
                return Err(TrajError::Training(format!(
                    "training diverged at epoch {epoch}: loss = {:?}",
                    losses
                )));
            }
            let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                let scale = cfg.clip_norm / norm;
                for g in &mut grad {
                    *g *= scale;
                }
            }
            lr = cfg.lr_at(global_step);
            adam.update(&mut model.params, &grad, lr, cfg);
            global_step += 1;
            train_acc.l_ce += losses.l_ce;
            train_acc.l_init += losses.l_init;
            train_acc.l_purity += losses.l_purity;
            train_acc.total += losses.total;
            n_batches += 1;

            // annealing-cycle bookkeeping
            current_cycle_min = current_cycle_min.min(losses.total);
            if global_step % cfg.cycle_len == 0 {
                cycle_minima.push(current_cycle_min);
                current_cycle_min = f64::INFINITY;
            }
        }
        let nb = n_batches.max(1) as f64;
        let train_stats = LossBreakdown {
            l_ce: train_acc.l_ce / nb,
            l_init: train_acc.l_init / nb,
            l_purity: train_acc.l_purity / nb,
            total: train_acc.total / nb,
        };
        let val_stats = batch_loss(&model, &val_set, cfg)?;
        curves.push(EpochStats {
            epoch,
            lr,
            train: train_stats,
            val: val_stats,
        });
        if best.as_ref().map_or(true, |(b, ..)| val_stats.total < *b) {
            best = Some((
                val_stats.total,
                model.params.clone(),
                model.max_len,
                model.input_mean,
                model.input_std,
            ));
        }
        // converged once a full annealing cycle brings no improvement
        if cycle_minima.len() >= 2 {
            let last = cycle_minima[cycle_minima.len() - 1];
            let prev = cycle_minima[cycle_minima.len() - 2];
            if last >= prev - 1e-6 {
                break;
            }
        }
    }

    if let Some((_, params, max_len, mean, std)) = best {
        model.params = params;
        model.max_len = max_len;
        model.input_mean = mean;
        model.input_std = std;
    }
    Ok((model, curves))
}

fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
}

/// Verification utility: compare the analytic gradient of the full training
/// loss with central finite differences on one labeled record, returning the
/// maximum relative error over all parameters. The head bias is shifted so
/// the purity penalty is active.
pub fn gradient_check(
    net: &NetworkConfig,
    cfg: &TrainingConfig,
    record: &VoltageRecord,
    seed: u64,
    step: f64,
) -> Result<f64> {
    let axis = record
        .tomo_axis
        .ok_or_else(|| TrajError::Training("gradient_check needs a labeled record".into()))?;
    let outcome = record
        .tomo_outcome
        .ok_or_else(|| TrajError::Training("gradient_check needs a labeled record".into()))?;
    let mut model = LstmModel::new(net, seed)?;
    model.max_len = record.n_m();
    let head_b = model.layout.head_b();
    for j in 0..OUTPUT_SIZE {
        model.params[head_b + j] = 1.5;
    }
    let mut grad = vec![0.0; model.n_params()];
    record_backward(&model, record, cfg, &mut grad)?;
    let loss_of = |m: &LstmModel| -> Result<f64> {
        let e = m.forward_probs(record)?;
        let (ce, li, lp) = record_losses(&e, axis, outcome, &record.init_state, cfg);
        Ok(ce + cfg.w_init * li + cfg.w_purity * lp)
    };
    let mut max_rel: f64 = 0.0;
    for k in 0..model.n_params() {
        let orig = model.params[k];
        model.params[k] = orig + step;
        let fp = loss_of(&model)?;
        model.params[k] = orig - step;
        let fm = loss_of(&model)?;
        model.params[k] = orig;
        let fd = (fp - fm) / (2.0 * step);
        let denom = grad[k].abs().max(fd.abs()).max(1e-6);
        max_rel = max_rel.max((grad[k] - fd).abs() / denom);
    }
    Ok(max_rel)
}

/// Deterministic forward pass over held-out records, keyed by record id.
pub fn predict_dataset(
    records: &[VoltageRecord],
    model: &LstmModel,
) -> Result<Vec<(u64, Trajectory)>> {
    let mut seen = std::collections::HashSet::new();
    for rec in records {
        if !seen.insert(rec.id) {
            return Err(TrajError::Training(format!("duplicate record id {}", rec.id)));
        }
    }
    records
        .par_iter()
        .map(|rec| Ok((rec.id, model.forward(rec)?)))
        .collect()
}
