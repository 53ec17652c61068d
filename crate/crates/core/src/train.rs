//! Cross-entropy objective, reverse-mode gradients through both encoder
//! directions, Adam, and the epoch loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::convlstm::{
    concat_states, run_direction, softmax_channels, CellConfig, ConvLstmParams, DirectionPass, EncoderParams,
    PackedCell,
};
use crate::error::{Error, Result};
use crate::metrics::{argmax_labels, overall_accuracy_counts};
use crate::synthdata::{ImageSequence, LabelMap};
use crate::tensor::{self, Tensor};

/// Probabilities are clamped to this before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Tiles per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 30,
            batch_size: 4,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and >= 0"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::config("epsilon", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        Ok(())
    }
}

/// One tensor per parameter of [`EncoderParams`], same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub forward: ConvLstmParams,
    pub backward: ConvLstmParams,
    pub head: Tensor,
}

impl GradientSet {
    pub fn zeros_like(p: &EncoderParams) -> Self {
        Self {
            forward: ConvLstmParams::zeros(&p.config),
            backward: ConvLstmParams::zeros(&p.config),
            head: Tensor::zeros(p.head.shape()),
        }
    }

    /// Same order as [`EncoderParams::named_tensors`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::with_capacity(17);
        out.extend(self.forward.tensors());
        out.extend(self.backward.tensors());
        out.push(&self.head);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(17);
        out.extend(self.forward.tensors_mut());
        out.extend(self.backward.tensors_mut());
        out.push(&mut self.head);
        out
    }

    fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for x in t.data_mut() {
                *x *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

fn check_one_hot(labels: &Tensor) -> Result<()> {
    let c = *labels.shape().last().unwrap_or(&0);
    for (p, px) in labels.data().chunks_exact(c.max(1)).enumerate() {
        let ones = px.iter().filter(|&&v| v == 1.0).count();
        let zeros = px.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != c {
            return Err(Error::NotOneHot { pixel: p });
        }
    }
    Ok(())
}

/// Mean over pixels of `-Σ_c y_c log(max(p_c, 1e-12))`.
pub fn cross_entropy(probs: &Tensor, labels: &Tensor) -> Result<f64> {
    if probs.shape() != labels.shape() || probs.rank() != 3 {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: probs.shape().to_vec(),
            rhs: labels.shape().to_vec(),
        });
    }
    check_one_hot(labels)?;
    let c = probs.shape()[2];
    let pixels = probs.shape()[0] * probs.shape()[1];
    let mut total = 0.0;
    for (p, y) in probs.data().chunks_exact(c).zip(labels.data().chunks_exact(c)) {
        for (pc, yc) in p.iter().zip(y) {
            if *yc != 0.0 {
                total -= yc * pc.max(LOG_CLAMP).ln();
            }
        }
    }
    Ok(total / pixels as f64)
}

/// Everything the forward pass of one sample produces.
struct Forward {
    fwd: DirectionPass,
    bwd: DirectionPass,
    state: Tensor,
    probs: Tensor,
}

fn check_pass(pass: &DirectionPass) -> Result<()> {
    for (t, s) in pass.steps.iter().enumerate() {
        if !s.c.iter().chain(&s.h).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "forward activation",
                step: Some(t + 1),
            });
        }
    }
    Ok(())
}

fn forward(seq: &ImageSequence, params: &EncoderParams) -> Result<(Forward, PackedCell, PackedCell)> {
    params.validate()?;
    let cfg = &params.config;
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let got = [seq.height(), seq.width(), seq.bands()];
    let want = [cfg.height, cfg.width, cfg.input_channels];
    if got != want {
        return Err(Error::ShapeMismatch {
            op: "training sequence",
            lhs: want.to_vec(),
            rhs: got.to_vec(),
        });
    }
    let fcell = PackedCell::new(&params.forward, cfg)?;
    let bcell = PackedCell::new(&params.backward, cfg)?;
    let fwd = run_direction(&fcell, (0..seq.len()).map(|t| seq.frame_data(t)))?;
    let bwd = run_direction(&bcell, (0..seq.len()).rev().map(|t| seq.frame_data(t)))?;
    check_pass(&fwd)?;
    check_pass(&bwd)?;
    let state = concat_states(fwd.final_c(), bwd.final_c(), cfg);
    let probs = softmax_channels(&state.conv2d_same(&params.head)?);
    Ok((Forward { fwd, bwd, state, probs }, fcell, bcell))
}

/// Loss of one labelled sequence (no gradient).
pub fn loss(seq: &ImageSequence, labels: &LabelMap, params: &EncoderParams) -> Result<f64> {
    let (fw, _, _) = forward(seq, params)?;
    cross_entropy(&fw.probs, &labels.one_hot())
}

/// Loss and its exact gradient with respect to every parameter tensor.
pub fn backward(seq: &ImageSequence, labels: &LabelMap, params: &EncoderParams) -> Result<(f64, GradientSet)> {
    let (fw, fcell, bcell) = forward(seq, params)?;
    let onehot = labels.one_hot();
    if onehot.shape() != fw.probs.shape() {
        return Err(Error::ShapeMismatch {
            op: "labels",
            lhs: fw.probs.shape().to_vec(),
            rhs: onehot.shape().to_vec(),
        });
    }
    let loss = cross_entropy(&fw.probs, &onehot)?;

    let c = params.classes();
    let pixels = (params.config.height * params.config.width) as f64;
    let mut dlogits = fw.probs.sub(&onehot)?;
    for (g, (p, y)) in dlogits
        .data_mut()
        .chunks_exact_mut(c)
        .zip(fw.probs.data().chunks_exact(c).zip(onehot.data().chunks_exact(c)))
    {
        // The clamp makes the loss locally constant in this pixel.
        let clamped = p.iter().zip(y).any(|(pc, yc)| *yc == 1.0 && *pc < LOG_CLAMP);
        for v in g.iter_mut() {
            *v = if clamped { 0.0 } else { *v / pixels };
        }
    }
    let (dstate, dhead) = fw.state.conv2d_same_backward(&params.head, &dlogits)?;

    let r = params.config.hidden_channels;
    let mut dc_fwd = Vec::with_capacity(dstate.len() / 2);
    let mut dc_bwd = Vec::with_capacity(dstate.len() / 2);
    for px in dstate.data().chunks_exact(2 * r) {
        dc_fwd.extend_from_slice(&px[..r]);
        dc_bwd.extend_from_slice(&px[r..]);
    }
    let gf = backprop_direction(&fcell, &fw.fwd, dc_fwd)?;
    let gb = backprop_direction(&bcell, &fw.bwd, dc_bwd)?;
    let grads = GradientSet {
        forward: fcell.unpack(&gf),
        backward: bcell.unpack(&gb),
        head: dhead,
    };
    if !grads.all_finite() {
        return Err(Error::NonFinite {
            what: "gradient",
            step: None,
        });
    }
    Ok((loss, grads))
}

/// Backpropagation through time for one direction, seeded with `∂L/∂c_T`
/// (`h_T` does not reach the loss). Returns the packed kernel gradient.
fn backprop_direction(cell: &PackedCell, pass: &DirectionPass, dc_final: Vec<f64>) -> Result<Vec<f64>> {
    let cfg = &cell.cfg;
    let (d, r) = (cfg.input_channels, cfg.hidden_channels);
    let geom = cell.geom;
    let px = geom.pixels();
    let standard = cfg.standard_lstm_variant;

    let mut dkernel = vec![0.0; cell.kernel.len()];
    let mut dh = vec![0.0; px * r];
    let mut dc = dc_final;
    let mut dz = vec![0.0; px * 4 * r];
    let mut dinput = vec![0.0; px * (d + r)];
    let zeros = vec![0.0; px * r];
    let (mut cols, mut dcols) = (Vec::new(), Vec::new());

    for t in (0..pass.steps.len()).rev() {
        let step = &pass.steps[t];
        let c_prev = if t > 0 { &pass.steps[t - 1].c } else { &zeros };
        for p in 0..px {
            let g = &step.gates[p * 4 * r..(p + 1) * 4 * r];
            let dzp = &mut dz[p * 4 * r..(p + 1) * 4 * r];
            for ch in 0..r {
                let q = p * r + ch;
                let (f, i, j, o) = (g[ch], g[r + ch], g[2 * r + ch], g[3 * r + ch]);
                let c = step.c[q];
                let (dzo, dct) = if standard {
                    let tc = c.tanh();
                    (dh[q] * tc * o * (1.0 - o), dc[q] + dh[q] * o * (1.0 - tc * tc))
                } else {
                    (dh[q] * c * (1.0 - o * o), dc[q] + dh[q] * o)
                };
                dzp[ch] = dct * c_prev[q] * f * (1.0 - f);
                dzp[r + ch] = dct * j * i * (1.0 - i);
                dzp[2 * r + ch] = dct * i * (1.0 - j * j);
                dzp[3 * r + ch] = dzo;
                dc[q] = dct * f;
            }
        }
        tensor::im2col(&step.input, geom, &mut cols);
        tensor::kernel_grad_accumulate(&cols, &dz, geom, &mut dkernel);
        dinput.fill(0.0);
        tensor::input_grad_accumulate(&dz, &cell.kernel, geom, &mut dcols, &mut dinput);
        for (dhp, dip) in dh.chunks_exact_mut(r).zip(dinput.chunks_exact(d + r)) {
            dhp.copy_from_slice(&dip[d..]);
        }
        if !dh.iter().chain(&dc).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "backpropagated gradient",
                step: Some(t + 1),
            });
        }
    }
    Ok(dkernel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        let zeros: Vec<Tensor> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }
}

/// Bias-corrected Adam update of every parameter entry.
pub fn adam_step(
    params: &mut EncoderParams,
    grads: &GradientSet,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::NonFinite {
            what: "gradient passed to adam_step",
            step: None,
        });
    }
    let grads = grads.tensors();
    let mut targets = params.tensors_mut();
    if grads.len() != targets.len() || state.first.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![targets.len()],
            rhs: vec![grads.len()],
        });
    }
    for ((p, g), m) in targets.iter().zip(&grads).zip(&state.first) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, p) in targets.iter_mut().enumerate() {
        let g = grads[k].data();
        let m = state.first[k].data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = state.second[k].data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let (m, v) = (state.first[k].data(), state.second[k].data());
        for ((w, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Uniform `[-s, s]` initialization with `s = 1/√(k·k·fan_in)`.
pub fn init_params(cfg: CellConfig, head_kernel: usize, classes: usize, seed: u64) -> Result<EncoderParams> {
    cfg.validate()?;
    if head_kernel.is_multiple_of(2) {
        return Err(Error::EvenKernel(head_kernel));
    }
    if classes == 0 {
        return Err(Error::config("classes", "must be >= 1"));
    }
    let mut p = EncoderParams::zeros(cfg, head_kernel, classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in p.tensors_mut() {
        let &[k, _, fan_in, _] = t.shape() else {
            unreachable!("kernels are rank 4")
        };
        let s = 1.0 / ((k * k * fan_in) as f64).sqrt();
        for v in t.data_mut() {
            *v = rng.random_range(-s..=s);
        }
    }
    Ok(p)
}

/// A labelled sequence borrowed from a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub sequence: &'a ImageSequence,
    pub labels: &'a LabelMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when there is no validation data.
    pub val_accuracy: Option<f64>,
    pub wall_seconds: f64,
}

impl EpochMetrics {
    /// `epoch \t train_loss \t val_overall_accuracy \t wall_seconds`
    pub fn tsv_line(&self) -> String {
        let acc = self.val_accuracy.map_or("nan".to_string(), |a| format!("{a:.6}"));
        format!(
            "{}\t{:.9}\t{}\t{:.3}",
            self.epoch, self.train_loss, acc, self.wall_seconds
        )
    }
}

pub fn metrics_tsv(log: &[EpochMetrics]) -> String {
    log.iter().map(|m| m.tsv_line() + "\n").collect()
}

/// Pooled overall accuracy of `params` over all samples.
pub fn evaluate_accuracy(samples: &[Sample<'_>], params: &EncoderParams) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let (mut correct, mut total) = (0usize, 0usize);
    for s in samples {
        let probs = crate::convlstm::predict(s.sequence, params)?;
        let pred = argmax_labels(&probs)?;
        let (c, n) = overall_accuracy_counts(&pred, s.labels)?;
        correct += c;
        total += n;
    }
    Ok(Some(correct as f64 / total as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WallClock {
    /// Report wall time per epoch.
    Measure,
    /// Report zero, keeping logs byte-reproducible.
    #[default]
    Omit,
}

/// Trains `params` in place. Each epoch shuffles the training samples with a
/// generator seeded from `cfg.seed`, averages gradients over each batch (in
/// sample order) and applies one Adam step per batch. `on_epoch` runs after
/// every epoch.
pub fn train_loop(
    train: &[Sample<'_>],
    valid: &[Sample<'_>],
    params: &mut EncoderParams,
    cfg: &TrainConfig,
    clock: WallClock,
    mut on_epoch: impl FnMut(&EpochMetrics, &EncoderParams) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("training partition has no samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_7A1A);
    let mut adam = AdamState::new(params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = GradientSet::zeros_like(params);
            for &i in batch {
                let (l, g) = backward(train[i].sequence, train[i].labels, params)?;
                loss_sum += l;
                acc.add_assign(&g);
            }
            acc.scale(1.0 / batch.len() as f64);
            adam_step(params, &acc, &mut adam, cfg)?;
        }
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_accuracy: evaluate_accuracy(valid, params)?,
            wall_seconds: match clock {
                WallClock::Measure => start.elapsed().as_secs_f64(),
                WallClock::Omit => 0.0,
            },
        };
        on_epoch(&metrics, params)?;
        log.push(metrics);
    }
    Ok(log)
}
