//! Stacked (bi)directional LSTM sequence classifier with a Leaky ReLU,
//! a dense two-class head and softmax at every step.
//!
//! Gate blocks in every `w`, `u` and `b` tensor are ordered input, forget,
//! cell, output. Batches are zero-padded to a common length; padded steps
//! carry the recurrent state through unchanged and are excluded from the
//! loss.

mod checkpoint;
mod optim;
mod train;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use checkpoint::{load_model, store_loss_trace, store_model, CHECKPOINT_MAGIC};
pub use optim::{clip_global_norm, Adam};
pub use train::{train, train_once, TrainConfig, TrainSequence, TrainedModel};

/// Number of output classes (non-arousal, target arousal).
pub const CLASSES: usize = 2;
/// Probabilities are floored at this value inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub layers: usize,
    /// Hidden units per direction.
    pub hidden: usize,
    pub leaky_slope: f64,
    pub bidirectional: bool,
}

impl NetworkConfig {
    /// Three bidirectional layers of 200 units per direction, slope 0.5.
    pub fn standard(input_dim: usize) -> Self {
        NetworkConfig {
            input_dim,
            layers: 3,
            hidden: 200,
            leaky_slope: 0.5,
            bidirectional: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.layers == 0 || self.hidden == 0 {
            return Err(Error::InvalidParameter(
                "network needs input_dim, layers and hidden >= 1".into(),
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Width of each layer's output (and of the head input).
    pub fn output_dim(&self) -> usize {
        self.hidden * self.directions()
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.output_dim()
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameters of one recurrent direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    /// `4H x D`.
    pub w: Array2<f64>,
    /// `4H x H`.
    pub u: Array2<f64>,
    /// `4H`.
    pub b: Array1<f64>,
}

impl LstmDirection {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmDirection {
            w: Array2::zeros((4 * hidden, input)),
            u: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    fn random(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = 1.0 / (hidden as f64).sqrt();
        let mut d = Self::zeros(input, hidden);
        d.w.mapv_inplace(|_| rng.random_range(-a..a));
        d.u.mapv_inplace(|_| rng.random_range(-a..a));
        d.b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        d
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    /// One step for a single sequence: returns `(h_t, c_t)`.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = self.hidden();
        if x.len() != self.input_dim() || h_prev.len() != h || c_prev.len() != h {
            return Err(Error::Shape(format!(
                "lstm step expects x[{}], h[{h}], c[{h}]; got x[{}], h[{}], c[{}]",
                self.input_dim(),
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        let z = self.w.dot(&Array1::from(x.to_vec())) + self.u.dot(&Array1::from(h_prev.to_vec())) + &self.b;
        let mut h_t = vec![0.0; h];
        let mut c_t = vec![0.0; h];
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let g = z[2 * h + k].tanh();
            let o = sigmoid(z[3 * h + k]);
            c_t[k] = f * c_prev[k] + i * g;
            h_t[k] = o * c_t[k].tanh();
        }
        Ok((h_t, c_t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub forward: LstmDirection,
    /// Runs right to left; absent for unidirectional networks.
    pub backward: Option<LstmDirection>,
}

/// All trainable tensors. Also used to hold gradients of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub layers: Vec<LstmLayer>,
    /// `2 x output_dim`.
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

/// Zero-padded batch of sequences.
#[derive(Debug, Clone)]
pub struct Batch {
    /// One `B x D` matrix per time step.
    pub inputs: Vec<Array2<f64>>,
    /// `lengths[b]` real steps for sequence `b`.
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn new(sequences: &[ArrayView2<f64>]) -> Result<Batch> {
        let first = sequences.first().ok_or(Error::EmptyDataset)?;
        let d = first.ncols();
        if let Some(bad) = sequences.iter().find(|x| x.ncols() != d) {
            return Err(Error::Shape(format!(
                "batch mixes {d} and {} feature columns",
                bad.ncols()
            )));
        }
        let lengths: Vec<usize> = sequences.iter().map(|x| x.nrows()).collect();
        let steps = lengths.iter().copied().max().unwrap_or(0);
        let inputs = (0..steps)
            .map(|t| {
                let mut m = Array2::zeros((sequences.len(), d));
                for (b, x) in sequences.iter().enumerate() {
                    if t < x.nrows() {
                        m.row_mut(b).assign(&x.row(t));
                    }
                }
                m
            })
            .collect();
        Ok(Batch { inputs, lengths })
    }

    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn active(&self, b: usize, t: usize) -> bool {
        t < self.lengths[b]
    }
}

struct DirCache {
    /// Activated gates `[i f g o]`, `B x 4H`.
    gates: Vec<Array2<f64>>,
    cells: Vec<Array2<f64>>,
    h_prev: Vec<Array2<f64>>,
    c_prev: Vec<Array2<f64>>,
}

struct LayerCache {
    inputs: Vec<Array2<f64>>,
    forward: DirCache,
    backward: Option<DirCache>,
}

struct ForwardPass {
    layers: Vec<LayerCache>,
    /// Last recurrent layer output, before the Leaky ReLU.
    top: Vec<Array2<f64>>,
    /// `B x 2` per step.
    probs: Vec<Array2<f64>>,
}

/// Unnormalized weighted negative log-likelihood of a batch and its gradient.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub nll: f64,
    pub weight: f64,
    pub grads: Network,
}

impl BatchGradient {
    /// `nll / weight`.
    pub fn loss(&self) -> f64 {
        if self.weight > 0.0 {
            self.nll / self.weight
        } else {
            0.0
        }
    }
}

fn time_order(steps: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    }
}

fn run_direction(
    dir: &LstmDirection,
    xs: &[Array2<f64>],
    batch: &Batch,
    reverse: bool,
) -> (Vec<Array2<f64>>, DirCache) {
    let steps = xs.len();
    let bsz = batch.size();
    let hd = dir.hidden();
    let mut h = Array2::<f64>::zeros((bsz, hd));
    let mut c = Array2::<f64>::zeros((bsz, hd));
    let empty = || vec![Array2::<f64>::zeros((0, 0)); steps];
    let mut out = empty();
    let mut cache = DirCache {
        gates: empty(),
        cells: empty(),
        h_prev: empty(),
        c_prev: empty(),
    };
    for t in time_order(steps, reverse) {
        let mut z = xs[t].dot(&dir.w.t()) + h.dot(&dir.u.t()) + &dir.b;
        z.slice_mut(s![.., ..2 * hd]).mapv_inplace(sigmoid);
        z.slice_mut(s![.., 2 * hd..3 * hd]).mapv_inplace(f64::tanh);
        z.slice_mut(s![.., 3 * hd..]).mapv_inplace(sigmoid);
        let i = z.slice(s![.., ..hd]);
        let f = z.slice(s![.., hd..2 * hd]);
        let g = z.slice(s![.., 2 * hd..3 * hd]);
        let o = z.slice(s![.., 3 * hd..]);
        let mut c_new = &f * &c + &i * &g;
        let mut h_new = &o * &c_new.mapv(f64::tanh);
        let mut h_out = h_new.clone();
        for b in 0..bsz {
            if !batch.active(b, t) {
                c_new.row_mut(b).assign(&c.row(b));
                h_new.row_mut(b).assign(&h.row(b));
                h_out.row_mut(b).fill(0.0);
            }
        }
        cache.h_prev[t] = std::mem::replace(&mut h, h_new);
        cache.c_prev[t] = std::mem::replace(&mut c, c_new);
        cache.cells[t] = c.clone();
        cache.gates[t] = z;
        out[t] = h_out;
    }
    (out, cache)
}

/// Accumulates parameter gradients into `grad` and returns the gradient
/// with respect to the inputs.
fn backprop_direction(
    dir: &LstmDirection,
    cache: &DirCache,
    xs: &[Array2<f64>],
    d_out: &[Array2<f64>],
    batch: &Batch,
    reverse: bool,
    grad: &mut LstmDirection,
) -> Vec<Array2<f64>> {
    let steps = xs.len();
    let bsz = batch.size();
    let hd = dir.hidden();
    let mut dh_next = Array2::<f64>::zeros((bsz, hd));
    let mut dc_next = Array2::<f64>::zeros((bsz, hd));
    let mut dxs = vec![Array2::<f64>::zeros((0, 0)); steps];
    for t in time_order(steps, !reverse) {
        let gates = &cache.gates[t];
        let i = gates.slice(s![.., ..hd]);
        let f = gates.slice(s![.., hd..2 * hd]);
        let g = gates.slice(s![.., 2 * hd..3 * hd]);
        let o = gates.slice(s![.., 3 * hd..]);
        let tc = cache.cells[t].mapv(f64::tanh);

        let dh = &d_out[t] + &dh_next;
        let d_o = &dh * &tc;
        let dc = &dc_next + &(&dh * &o * &tc.mapv(|v| 1.0 - v * v));
        let d_i = &dc * &g;
        let d_g = &dc * &i;
        let d_f = &dc * &cache.c_prev[t];

        let mut dz = Array2::<f64>::zeros((bsz, 4 * hd));
        dz.slice_mut(s![.., ..hd]).assign(&(&d_i * &i.mapv(|v| v * (1.0 - v))));
        dz.slice_mut(s![.., hd..2 * hd]).assign(&(&d_f * &f.mapv(|v| v * (1.0 - v))));
        dz.slice_mut(s![.., 2 * hd..3 * hd]).assign(&(&d_g * &g.mapv(|v| 1.0 - v * v)));
        dz.slice_mut(s![.., 3 * hd..]).assign(&(&d_o * &o.mapv(|v| v * (1.0 - v))));
        for b in 0..bsz {
            if !batch.active(b, t) {
                dz.row_mut(b).fill(0.0);
            }
        }

        grad.w += &dz.t().dot(&xs[t]);
        grad.u += &dz.t().dot(&cache.h_prev[t]);
        grad.b += &dz.sum_axis(Axis(0));
        dxs[t] = dz.dot(&dir.w);

        let mut dh_prev = dz.dot(&dir.u);
        let mut dc_prev = &dc * &f;
        for b in 0..bsz {
            if !batch.active(b, t) {
                dh_prev.row_mut(b).assign(&dh.row(b));
                dc_prev.row_mut(b).assign(&dc_next.row(b));
            }
        }
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    dxs
}

impl Network {
    pub fn zeros(config: NetworkConfig) -> Result<Network> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|l| {
                let d = config.layer_input_dim(l);
                LstmLayer {
                    forward: LstmDirection::zeros(d, config.hidden),
                    backward: config
                        .bidirectional
                        .then(|| LstmDirection::zeros(d, config.hidden)),
                }
            })
            .collect();
        Ok(Network {
            config,
            layers,
            head_w: Array2::zeros((CLASSES, config.output_dim())),
            head_b: Array1::zeros(CLASSES),
        })
    }

    /// Uniform weights in `+-1/sqrt(H)` (`+-1/sqrt(output_dim)` for the
    /// head), forget-gate bias 1, other biases 0.
    pub fn random(config: NetworkConfig, rng: &mut ChaCha8Rng) -> Result<Network> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|l| {
                let d = config.layer_input_dim(l);
                let forward = LstmDirection::random(d, config.hidden, rng);
                let backward = config
                    .bidirectional
                    .then(|| LstmDirection::random(d, config.hidden, rng));
                LstmLayer { forward, backward }
            })
            .collect();
        let a = 1.0 / (config.output_dim() as f64).sqrt();
        let head_w = Array2::from_shape_fn((CLASSES, config.output_dim()), |_| {
            rng.random_range(-a..a)
        });
        Ok(Network {
            config,
            layers,
            head_w,
            head_b: Array1::zeros(CLASSES),
        })
    }

    pub fn zeros_like(&self) -> Network {
        Network::zeros(self.config).expect("config already validated")
    }

    /// Tensor names and shapes in checkpoint order.
    pub fn tensor_specs(&self) -> Vec<(String, usize, usize)> {
        let mut specs = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let dirs = [("fwd", Some(&layer.forward)), ("bwd", layer.backward.as_ref())];
            for (tag, dir) in dirs {
                if let Some(d) = dir {
                    specs.push((format!("l{l}.{tag}.w"), d.w.nrows(), d.w.ncols()));
                    specs.push((format!("l{l}.{tag}.u"), d.u.nrows(), d.u.ncols()));
                    specs.push((format!("l{l}.{tag}.b"), 1, d.b.len()));
                }
            }
        }
        specs.push(("head.w".into(), self.head_w.nrows(), self.head_w.ncols()));
        specs.push(("head.b".into(), 1, self.head_b.len()));
        specs
    }

    /// Every tensor as a flat slice, in [`Network::tensor_specs`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            for d in std::iter::once(&layer.forward).chain(layer.backward.as_ref()) {
                out.push(d.w.as_slice().expect("standard layout"));
                out.push(d.u.as_slice().expect("standard layout"));
                out.push(d.b.as_slice().expect("standard layout"));
            }
        }
        out.push(self.head_w.as_slice().expect("standard layout"));
        out.push(self.head_b.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            for d in std::iter::once(&mut layer.forward).chain(layer.backward.as_mut()) {
                out.push(d.w.as_slice_mut().expect("standard layout"));
                out.push(d.u.as_slice_mut().expect("standard layout"));
                out.push(d.b.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.head_w.as_slice_mut().expect("standard layout"));
        out.push(self.head_b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn add_assign(&mut self, other: &Network) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn leaky(&self, v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            self.config.leaky_slope * v
        }
    }

    fn run(&self, batch: &Batch) -> Result<ForwardPass> {
        if batch.inputs.first().is_some_and(|x| x.ncols() != self.config.input_dim) {
            return Err(Error::Shape(format!(
                "network expects {} inputs, batch has {}",
                self.config.input_dim,
                batch.inputs[0].ncols()
            )));
        }
        let mut xs = batch.inputs.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (fo, fc) = run_direction(&layer.forward, &xs, batch, false);
            let (out, bc) = match &layer.backward {
                Some(dir) => {
                    let (bo, bc) = run_direction(dir, &xs, batch, true);
                    let joined = fo
                        .iter()
                        .zip(&bo)
                        .map(|(a, b)| concatenate(Axis(1), &[a.view(), b.view()]).expect("same rows"))
                        .collect();
                    (joined, Some(bc))
                }
                None => (fo, None),
            };
            layers.push(LayerCache {
                inputs: std::mem::replace(&mut xs, out),
                forward: fc,
                backward: bc,
            });
        }
        let probs = xs
            .iter()
            .map(|y| {
                let a = y.mapv(|v| self.leaky(v));
                let mut logits = a.dot(&self.head_w.t()) + &self.head_b;
                for mut row in logits.rows_mut() {
                    let m = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
                    row.mapv_inplace(|v| (v - m).exp());
                    let s = row.sum();
                    row.mapv_inplace(|v| v / s);
                }
                logits
            })
            .collect();
        Ok(ForwardPass {
            layers,
            top: xs,
            probs,
        })
    }

    /// Class probabilities, `steps x (B x 2)`; padded rows are meaningless.
    pub fn forward(&self, batch: &Batch) -> Result<Vec<Array2<f64>>> {
        Ok(self.run(batch)?.probs)
    }

    /// Per-step class probabilities of one `M x D` sequence.
    pub fn forward_sequence(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let probs = self.forward(&Batch::new(&[x])?)?;
        let mut out = Array2::zeros((x.nrows(), CLASSES));
        for (t, p) in probs.iter().enumerate() {
            out.row_mut(t).assign(&p.row(0));
        }
        Ok(out)
    }

    /// Weighted NLL summed over active steps, the matching weight sum and
    /// the exact gradient of the NLL sum.
    pub fn loss_and_gradient(
        &self,
        batch: &Batch,
        labels: &[&[u8]],
        class_weights: [f64; CLASSES],
    ) -> Result<BatchGradient> {
        if labels.len() != batch.size() {
            return Err(Error::Shape(format!(
                "{} label tracks for {} sequences",
                labels.len(),
                batch.size()
            )));
        }
        for (b, l) in labels.iter().enumerate() {
            if l.len() != batch.lengths[b] {
                return Err(Error::LengthMismatch {
                    what: format!("labels of sequence {b}"),
                    expected: batch.lengths[b],
                    got: l.len(),
                });
            }
            if l.iter().any(|&y| y as usize >= CLASSES) {
                return Err(Error::NonTargetLabel);
            }
        }
        let pass = self.run(batch)?;
        let mut grads = self.zeros_like();
        let (mut nll, mut weight) = (0.0, 0.0);
        let slope = self.config.leaky_slope;

        let mut d_top = Vec::with_capacity(batch.steps());
        for (t, (p, y)) in pass.probs.iter().zip(&pass.top).enumerate() {
            let mut dl = Array2::<f64>::zeros((batch.size(), CLASSES));
            for b in 0..batch.size() {
                if !batch.active(b, t) {
                    continue;
                }
                let cls = labels[b][t] as usize;
                let w = class_weights[cls];
                let pc = p[[b, cls]];
                weight += w;
                nll -= w * pc.max(PROB_FLOOR).ln();
                if pc >= PROB_FLOOR {
                    for k in 0..CLASSES {
                        let target = if k == cls { 1.0 } else { 0.0 };
                        dl[[b, k]] = w * (p[[b, k]] - target);
                    }
                }
            }
            let a = y.mapv(|v| self.leaky(v));
            grads.head_w += &dl.t().dot(&a);
            grads.head_b += &dl.sum_axis(Axis(0));
            let da = dl.dot(&self.head_w);
            d_top.push(&da * &y.mapv(|v| if v > 0.0 { 1.0 } else { slope }));
        }

        let hd = self.config.hidden;
        let mut d_out = d_top;
        for (l, (layer, cache)) in self.layers.iter().zip(&pass.layers).enumerate().rev() {
            let gl = &mut grads.layers[l];
            let (df, db): (Vec<Array2<f64>>, Option<Vec<Array2<f64>>>) = match &layer.backward {
                Some(_) => (
                    d_out.iter().map(|d| d.slice(s![.., ..hd]).to_owned()).collect(),
                    Some(d_out.iter().map(|d| d.slice(s![.., hd..]).to_owned()).collect()),
                ),
                None => (d_out, None),
            };
            let mut dx = backprop_direction(
                &layer.forward,
                &cache.forward,
                &cache.inputs,
                &df,
                batch,
                false,
                &mut gl.forward,
            );
            if let (Some(dir), Some(bc), Some(db), Some(gb)) =
                (&layer.backward, &cache.backward, db, gl.backward.as_mut())
            {
                let dxb = backprop_direction(dir, bc, &cache.inputs, &db, batch, true, gb);
                for (a, b) in dx.iter_mut().zip(dxb) {
                    *a += &b;
                }
            }
            d_out = dx;
        }

        Ok(BatchGradient {
            nll,
            weight,
            grads,
        })
    }
}

/// Weighted cross-entropy of per-step probabilities (`M x 2`) against 0/1
/// labels, normalized by the summed weights.
pub fn weighted_cross_entropy(
    probs: ArrayView2<f64>,
    labels: &[i8],
    class_weights: [f64; CLASSES],
) -> Result<f64> {
    if probs.nrows() != labels.len() || probs.ncols() != CLASSES {
        return Err(Error::Shape(format!(
            "{} x {} probabilities for {} labels",
            probs.nrows(),
            probs.ncols(),
            labels.len()
        )));
    }
    let (mut nll, mut weight) = (0.0, 0.0);
    for (t, &y) in labels.iter().enumerate() {
        if !(y == 0 || y == 1) {
            return Err(Error::NonTargetLabel);
        }
        let w = class_weights[y as usize];
        nll -= w * probs[[t, y as usize]].max(PROB_FLOOR).ln();
        weight += w;
    }
    Ok(if weight > 0.0 { nll / weight } else { 0.0 })
}

/// Per-column standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation; near-constant columns get 1.
    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for (k, v) in r.iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / n as f64 - m * m).max(0.0).sqrt();
                if s < 1e-12 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        out
    }
}

/// A trained network together with the input columns it reads and the
/// standardization fitted on its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct BilstmModel {
    pub network: Network,
    /// Column count of the feature matrices the model is applied to.
    pub source_dim: usize,
    /// Columns fed to the network; `None` means all.
    pub columns: Option<Vec<usize>>,
    pub scaler: Standardizer,
    pub epochs_run: usize,
    pub final_loss: f64,
}

impl BilstmModel {
    /// Selects columns and standardizes an `M x source_dim` matrix.
    pub fn prepare(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.source_dim {
            return Err(Error::Shape(format!(
                "model expects {} feature columns, got {}",
                self.source_dim,
                x.ncols()
            )));
        }
        let selected = match &self.columns {
            Some(idx) => x.select(Axis(1), idx),
            None => x.to_owned(),
        };
        Ok(self.scaler.apply(selected.view()))
    }

    /// Target-class probability of every window.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let probs = self.network.forward_sequence(self.prepare(x)?.view())?;
        Ok(probs.column(1).to_vec())
    }
}

/// Arithmetic mean of the members' probabilities.
pub fn ensemble_predict(models: &[BilstmModel], x: ArrayView2<f64>) -> Result<Vec<f64>> {
    let (first, rest) = models.split_first().ok_or(Error::EmptyEnsemble)?;
    let mut acc = first.predict(x)?;
    for m in rest {
        for (a, p) in acc.iter_mut().zip(m.predict(x)?) {
            *a += p;
        }
    }
    let n = models.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Sum of absolute first-layer input weights per input column, over all four
/// gates and both directions.
pub fn feature_score(network: &Network) -> Vec<f64> {
    let layer = &network.layers[0];
    let mut scores = vec![0.0; network.config.input_dim];
    for dir in std::iter::once(&layer.forward).chain(layer.backward.as_ref()) {
        for row in dir.w.rows() {
            for (s, w) in scores.iter_mut().zip(row) {
                *s += w.abs();
            }
        }
    }
    scores
}

/// Indices of the `k` highest scores, highest first; ties keep the lower index first.
pub fn select_top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot select {k} of {} features",
            scores.len()
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}
