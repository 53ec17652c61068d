//! Convolutional LSTM cell, bidirectional sequence encoder and softmax head.
//!
//! The default cell follows these gate equations (`⋆` is a same-padded
//! convolution, there are no learned biases):
//!
//! ```text
//! f_t = σ(x_t ⋆ θ_fx + h_{t-1} ⋆ θ_fh + 1)
//! i_t = σ(x_t ⋆ θ_ix + h_{t-1} ⋆ θ_ih)
//! j_t = tanh(x_t ⋆ θ_jx + h_{t-1} ⋆ θ_jh)
//! o_t = tanh(x_t ⋆ θ_ox + h_{t-1} ⋆ θ_oh)
//! c_t = c_{t-1} ⊙ f_t + i_t ⊙ j_t
//! h_t = o_t ⊙ c_t
//! ```
//!
//! With [`CellConfig::standard_lstm_variant`] set, the output gate uses a
//! sigmoid and `h_t = o_t ⊙ tanh(c_t)`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::synthdata::ImageSequence;
use crate::tensor::{self, read_u32, sigmoid, ConvGeometry, Tensor};

/// Constant added to the forget-gate pre-activation.
pub const FORGET_BIAS: f64 = 1.0;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CLCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellConfig {
    /// Square kernel size, odd.
    pub kernel: usize,
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub height: usize,
    pub width: usize,
    pub standard_lstm_variant: bool,
}

impl CellConfig {
    pub fn new(kernel: usize, input_channels: usize, hidden_channels: usize, height: usize, width: usize) -> Self {
        Self {
            kernel,
            input_channels,
            hidden_channels,
            height,
            width,
            standard_lstm_variant: false,
        }
    }

    pub fn with_standard_variant(mut self, on: bool) -> Self {
        self.standard_lstm_variant = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::config(
                "kernel",
                format!("must be odd and >= 1, got {}", self.kernel),
            ));
        }
        for (name, v) in [
            ("input_channels", self.input_channels),
            ("hidden_channels", self.hidden_channels),
            ("height", self.height),
            ("width", self.width),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn input_kernel_shape(&self) -> [usize; 4] {
        [self.kernel, self.kernel, self.input_channels, self.hidden_channels]
    }

    pub fn hidden_kernel_shape(&self) -> [usize; 4] {
        [self.kernel, self.kernel, self.hidden_channels, self.hidden_channels]
    }

    pub fn state_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.hidden_channels]
    }

    fn packed_geometry(&self) -> ConvGeometry {
        ConvGeometry::new(
            self.height,
            self.width,
            self.input_channels + self.hidden_channels,
            4 * self.hidden_channels,
            self.kernel,
        )
    }
}

/// Gate identifiers, in the order gates are packed internally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget,
    Input,
    Modulation,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Modulation, Gate::Output];

    fn slot(self) -> usize {
        self as usize
    }
}

/// The eight gate kernels of one ConvLSTM direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmParams {
    pub fx: Tensor,
    pub ix: Tensor,
    pub jx: Tensor,
    pub ox: Tensor,
    pub fh: Tensor,
    pub ih: Tensor,
    pub jh: Tensor,
    pub oh: Tensor,
}

impl ConvLstmParams {
    pub const NAMES: [&'static str; 8] = ["fx", "ix", "jx", "ox", "fh", "ih", "jh", "oh"];

    pub fn zeros(cfg: &CellConfig) -> Self {
        let x = cfg.input_kernel_shape();
        let h = cfg.hidden_kernel_shape();
        Self {
            fx: Tensor::zeros(&x),
            ix: Tensor::zeros(&x),
            jx: Tensor::zeros(&x),
            ox: Tensor::zeros(&x),
            fh: Tensor::zeros(&h),
            ih: Tensor::zeros(&h),
            jh: Tensor::zeros(&h),
            oh: Tensor::zeros(&h),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.fx, &self.ix, &self.jx, &self.ox, &self.fh, &self.ih, &self.jh, &self.oh,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.fx,
            &mut self.ix,
            &mut self.jx,
            &mut self.ox,
            &mut self.fh,
            &mut self.ih,
            &mut self.jh,
            &mut self.oh,
        ]
    }

    fn input_kernel(&self, gate: Gate) -> &Tensor {
        match gate {
            Gate::Forget => &self.fx,
            Gate::Input => &self.ix,
            Gate::Modulation => &self.jx,
            Gate::Output => &self.ox,
        }
    }

    fn hidden_kernel(&self, gate: Gate) -> &Tensor {
        match gate {
            Gate::Forget => &self.fh,
            Gate::Input => &self.ih,
            Gate::Modulation => &self.jh,
            Gate::Output => &self.oh,
        }
    }

    pub fn validate(&self, cfg: &CellConfig) -> Result<()> {
        let x = cfg.input_kernel_shape();
        let h = cfg.hidden_kernel_shape();
        for (i, t) in self.tensors().into_iter().enumerate() {
            let want: &[usize] = if i < 4 { &x } else { &h };
            if t.shape() != want {
                return Err(Error::ShapeMismatch {
                    op: "ConvLstmParams",
                    lhs: want.to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Tensor,
    pub c: Tensor,
}

impl CellState {
    pub fn zeros(cfg: &CellConfig) -> Self {
        Self {
            h: Tensor::zeros(&cfg.state_shape()),
            c: Tensor::zeros(&cfg.state_shape()),
        }
    }
}

/// Activations of one cell step, each `[H, W, r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateRecord {
    pub i: Tensor,
    pub j: Tensor,
    pub f: Tensor,
    pub o: Tensor,
    pub c: Tensor,
    pub h: Tensor,
}

impl GateRecord {
    pub fn get(&self, source: TraceSource) -> &Tensor {
        match source {
            TraceSource::Input => &self.i,
            TraceSource::Modulation => &self.j,
            TraceSource::Forget => &self.f,
            TraceSource::Output => &self.o,
            TraceSource::Cell => &self.c,
            TraceSource::Hidden => &self.h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceSource {
    Input,
    Modulation,
    Forget,
    Output,
    Cell,
    Hidden,
}

/// Per-step gate activations of one encoder pass; `steps[t - 1]` holds step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateTrace {
    pub steps: Vec<GateRecord>,
}

impl GateTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn hidden_channels(&self) -> usize {
        self.steps.first().map_or(0, |s| s.i.shape()[2])
    }
}

/// Forward and backward direction parameters plus the classifier kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: CellConfig,
    pub forward: ConvLstmParams,
    pub backward: ConvLstmParams,
    /// `[k_head, k_head, 2r, C]`
    pub head: Tensor,
}

impl EncoderParams {
    pub fn zeros(config: CellConfig, head_kernel: usize, classes: usize) -> Self {
        Self {
            config,
            forward: ConvLstmParams::zeros(&config),
            backward: ConvLstmParams::zeros(&config),
            head: Tensor::zeros(&[head_kernel, head_kernel, 2 * config.hidden_channels, classes]),
        }
    }

    pub fn classes(&self) -> usize {
        self.head.shape()[3]
    }

    pub fn head_kernel(&self) -> usize {
        self.head.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.forward.validate(&self.config)?;
        self.backward.validate(&self.config)?;
        let &[k, k2, cin, classes] = self.head.shape() else {
            return Err(Error::Rank {
                op: "head kernel",
                expected: 4,
                shape: self.head.shape().to_vec(),
            });
        };
        if k != k2 || k % 2 == 0 {
            return Err(Error::EvenKernel(k));
        }
        if cin != 2 * self.config.hidden_channels {
            return Err(Error::ChannelMismatch {
                op: "head kernel",
                expected: 2 * self.config.hidden_channels,
                got: cin,
            });
        }
        if classes == 0 {
            return Err(Error::config("classes", "must be >= 1"));
        }
        Ok(())
    }

    /// All parameter tensors with stable names (`forward.fx`, …, `head`).
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(17);
        for (dir, p) in [("forward", &self.forward), ("backward", &self.backward)] {
            for (name, t) in ConvLstmParams::NAMES.iter().zip(p.tensors()) {
                out.push((format!("{dir}.{name}"), t));
            }
        }
        out.push(("head".to_string(), &self.head));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(17);
        out.extend(self.forward.tensors_mut());
        out.extend(self.backward.tensors_mut());
        out.push(&mut self.head);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let c = &self.config;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [c.kernel, c.input_channels, c.hidden_channels, c.height, c.width] {
            w.write_all(&u32::try_from(v).map_err(io::Error::other)?.to_le_bytes())?;
        }
        w.write_all(&[u8::from(c.standard_lstm_variant)])?;
        let named = self.named_tensors();
        w.write_all(&(named.len() as u32).to_le_bytes())?;
        for (name, t) in named {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            t.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> io::Result<Self> {
        let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad checkpoint magic".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = read_u32(r)? as usize;
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let config = CellConfig::new(dims[0], dims[1], dims[2], dims[3], dims[4]).with_standard_variant(flag[0] != 0);
        let count = read_u32(r)? as usize;
        if count != 17 {
            return Err(bad(format!("expected 17 tensors, found {count}")));
        }
        let mut params = EncoderParams::zeros(config, 1, 1);
        let expected: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (want, slot) in expected.iter().zip(params.tensors_mut()) {
            let len = read_u32(r)? as usize;
            if len > 256 {
                return Err(bad(format!("implausible name length {len}")));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            if name != want.as_bytes() {
                return Err(bad(format!(
                    "expected tensor {want}, found {}",
                    String::from_utf8_lossy(&name)
                )));
            }
            *slot = Tensor::read_from(r)?;
        }
        params.validate().map_err(|e| bad(e.to_string()))?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file)).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// The eight kernels of one direction fused into a single
/// `[k, k, d + r, 4r]` kernel, so one GEMM yields all gate pre-activations.
/// Output channels are grouped by gate in [`Gate::ALL`] order.
pub(crate) struct PackedCell {
    pub cfg: CellConfig,
    pub geom: ConvGeometry,
    pub kernel: Vec<f64>,
}

impl PackedCell {
    pub fn new(p: &ConvLstmParams, cfg: &CellConfig) -> Result<Self> {
        cfg.validate()?;
        p.validate(cfg)?;
        let geom = cfg.packed_geometry();
        let (d, r, k) = (cfg.input_channels, cfg.hidden_channels, cfg.kernel);
        let cin = d + r;
        let cout = 4 * r;
        let mut kernel = vec![0.0; k * k * cin * cout];
        for tap in 0..k * k {
            for ci in 0..cin {
                let row = &mut kernel[(tap * cin + ci) * cout..][..cout];
                for gate in Gate::ALL {
                    let (src, src_c, src_cin) = if ci < d {
                        (p.input_kernel(gate), ci, d)
                    } else {
                        (p.hidden_kernel(gate), ci - d, r)
                    };
                    let from = &src.data()[(tap * src_cin + src_c) * r..][..r];
                    row[gate.slot() * r..][..r].copy_from_slice(from);
                }
            }
        }
        Ok(Self {
            cfg: *cfg,
            geom,
            kernel,
        })
    }

    /// Splits a packed `[k, k, d + r, 4r]` gradient back into the eight kernels.
    pub fn unpack(&self, packed: &[f64]) -> ConvLstmParams {
        let (d, r, k) = (self.cfg.input_channels, self.cfg.hidden_channels, self.cfg.kernel);
        let cin = d + r;
        let cout = 4 * r;
        let mut out = ConvLstmParams::zeros(&self.cfg);
        for tap in 0..k * k {
            for ci in 0..cin {
                let row = &packed[(tap * cin + ci) * cout..][..cout];
                for gate in Gate::ALL {
                    let (dst, dst_c, dst_cin) = if ci < d {
                        (out.input_kernel_mut(gate), ci, d)
                    } else {
                        (out.hidden_kernel_mut(gate), ci - d, r)
                    };
                    dst.data_mut()[(tap * dst_cin + dst_c) * r..][..r].copy_from_slice(&row[gate.slot() * r..][..r]);
                }
            }
        }
        out
    }
}

impl ConvLstmParams {
    fn input_kernel_mut(&mut self, gate: Gate) -> &mut Tensor {
        match gate {
            Gate::Forget => &mut self.fx,
            Gate::Input => &mut self.ix,
            Gate::Modulation => &mut self.jx,
            Gate::Output => &mut self.ox,
        }
    }

    fn hidden_kernel_mut(&mut self, gate: Gate) -> &mut Tensor {
        match gate {
            Gate::Forget => &mut self.fh,
            Gate::Input => &mut self.ih,
            Gate::Modulation => &mut self.jh,
            Gate::Output => &mut self.oh,
        }
    }
}

/// What one step leaves behind for backpropagation.
pub(crate) struct StepCache {
    /// `[H·W, d + r]`: the frame concatenated with `h_{t-1}`.
    pub input: Vec<f64>,
    /// `[H·W, 4r]` gate activations, grouped per pixel as f | i | j | o.
    pub gates: Vec<f64>,
    /// `[H·W, r]`
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) struct DirectionPass {
    pub steps: Vec<StepCache>,
}

impl DirectionPass {
    pub fn final_c(&self) -> &[f64] {
        &self.steps.last().expect("non-empty pass").c
    }

    pub fn trace(&self, cfg: &CellConfig) -> GateTrace {
        let r = cfg.hidden_channels;
        let shape = cfg.state_shape();
        let gate = |s: &StepCache, g: Gate| -> Tensor {
            let data = s
                .gates
                .chunks_exact(4 * r)
                .flat_map(|px| px[g.slot() * r..][..r].iter().copied())
                .collect();
            Tensor::new(shape.to_vec(), data).expect("gate shape")
        };
        let steps = self
            .steps
            .iter()
            .map(|s| GateRecord {
                i: gate(s, Gate::Input),
                j: gate(s, Gate::Modulation),
                f: gate(s, Gate::Forget),
                o: gate(s, Gate::Output),
                c: Tensor::new(shape.to_vec(), s.c.clone()).expect("c shape"),
                h: Tensor::new(shape.to_vec(), s.h.clone()).expect("h shape"),
            })
            .collect();
        GateTrace { steps }
    }
}

/// Runs one direction over the given frames (each `[H, W, d]` raw data),
/// starting from `h₀ = c₀ = 0`, keeping every step's activations.
pub(crate) fn run_direction<'a>(
    cell: &PackedCell,
    frames: impl IntoIterator<Item = &'a [f64]>,
) -> Result<DirectionPass> {
    let cfg = &cell.cfg;
    let (d, r) = (cfg.input_channels, cfg.hidden_channels);
    let px = cfg.height * cfg.width;
    let mut h = vec![0.0; px * r];
    let mut c = vec![0.0; px * r];
    let mut cols = Vec::new();
    let mut steps = Vec::new();
    for frame in frames {
        if frame.len() != px * d {
            return Err(Error::ShapeMismatch {
                op: "cell_step frame",
                lhs: vec![cfg.height, cfg.width, d],
                rhs: vec![frame.len()],
            });
        }
        let mut input = Vec::with_capacity(px * (d + r));
        for (xp, hp) in frame.chunks_exact(d).zip(h.chunks_exact(r)) {
            input.extend_from_slice(xp);
            input.extend_from_slice(hp);
        }
        let (gates, c_new, h_new) = step_raw(cell, &input, &c, &mut cols);
        steps.push(StepCache {
            input,
            gates,
            c: c_new.clone(),
            h: h_new.clone(),
        });
        c = c_new;
        h = h_new;
    }
    if steps.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(DirectionPass { steps })
}

/// One cell update on packed buffers; returns (gates, c_t, h_t).
fn step_raw(cell: &PackedCell, input: &[f64], c_prev: &[f64], cols: &mut Vec<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let r = cell.cfg.hidden_channels;
    let standard = cell.cfg.standard_lstm_variant;
    let px = cell.geom.pixels();
    let mut gates = vec![0.0; px * 4 * r];
    tensor::conv2d_same_into(input, &cell.kernel, cell.geom, cols, &mut gates);
    let mut c = vec![0.0; px * r];
    let mut h = vec![0.0; px * r];
    for p in 0..px {
        let g = &mut gates[p * 4 * r..(p + 1) * 4 * r];
        let (f, rest) = g.split_at_mut(r);
        let (i, rest) = rest.split_at_mut(r);
        let (j, o) = rest.split_at_mut(r);
        for ch in 0..r {
            f[ch] = sigmoid(f[ch] + FORGET_BIAS);
            i[ch] = sigmoid(i[ch]);
            j[ch] = j[ch].tanh();
            o[ch] = if standard { sigmoid(o[ch]) } else { o[ch].tanh() };
            let q = p * r + ch;
            c[q] = c_prev[q] * f[ch] + i[ch] * j[ch];
            h[q] = if standard { o[ch] * c[q].tanh() } else { o[ch] * c[q] };
        }
    }
    (gates, c, h)
}

fn check_frame(x: &Tensor, cfg: &CellConfig) -> Result<()> {
    let want = [cfg.height, cfg.width, cfg.input_channels];
    if x.shape() != want {
        return Err(Error::ShapeMismatch {
            op: "cell_step input",
            lhs: want.to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_sequence(seq: &ImageSequence, cfg: &CellConfig) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let want = [cfg.height, cfg.width, cfg.input_channels];
    let got = [seq.height(), seq.width(), seq.bands()];
    if want != got {
        return Err(Error::ShapeMismatch {
            op: "encode sequence frames",
            lhs: want.to_vec(),
            rhs: got.to_vec(),
        });
    }
    Ok(())
}

/// One ConvLSTM update from `prev` given frame `x` (`[H, W, d]`).
pub fn cell_step(
    x: &Tensor,
    prev: &CellState,
    p: &ConvLstmParams,
    cfg: &CellConfig,
) -> Result<(CellState, GateRecord)> {
    check_frame(x, cfg)?;
    let state = cfg.state_shape();
    for t in [&prev.h, &prev.c] {
        if t.shape() != state {
            return Err(Error::ShapeMismatch {
                op: "cell_step state",
                lhs: state.to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
    }
    let cell = PackedCell::new(p, cfg)?;
    let (d, r) = (cfg.input_channels, cfg.hidden_channels);
    let mut input = Vec::with_capacity(cell.geom.pixels() * (d + r));
    for (xp, hp) in x.data().chunks_exact(d).zip(prev.h.data().chunks_exact(r)) {
        input.extend_from_slice(xp);
        input.extend_from_slice(hp);
    }
    let mut cols = Vec::new();
    let (gates, c, h) = step_raw(&cell, &input, prev.c.data(), &mut cols);
    let pass = DirectionPass {
        steps: vec![StepCache { input, gates, c, h }],
    };
    let record = pass.trace(cfg).steps.pop().expect("one step");
    let next = CellState {
        h: record.h.clone(),
        c: record.c.clone(),
    };
    Ok((next, record))
}

/// Encodes a sequence from zero state; returns `c_T` and, on request, the
/// full gate trace.
pub fn encode(
    seq: &ImageSequence,
    p: &ConvLstmParams,
    cfg: &CellConfig,
    record_trace: bool,
) -> Result<(Tensor, Option<GateTrace>)> {
    check_sequence(seq, cfg)?;
    let cell = PackedCell::new(p, cfg)?;
    let pass = run_direction(&cell, (0..seq.len()).map(|t| seq.frame_data(t)))?;
    let c_final = Tensor::new(cfg.state_shape().to_vec(), pass.final_c().to_vec())?;
    let trace = record_trace.then(|| pass.trace(cfg));
    Ok((c_final, trace))
}

/// `[H, W, 2r]`: forward final cell state, then the final cell state of the
/// time-reversed pass.
pub fn encode_bidirectional(seq: &ImageSequence, p: &EncoderParams) -> Result<Tensor> {
    p.validate()?;
    check_sequence(seq, &p.config)?;
    let fwd = PackedCell::new(&p.forward, &p.config)?;
    let bwd = PackedCell::new(&p.backward, &p.config)?;
    let a = run_direction(&fwd, (0..seq.len()).map(|t| seq.frame_data(t)))?;
    let b = run_direction(&bwd, (0..seq.len()).rev().map(|t| seq.frame_data(t)))?;
    Ok(concat_states(a.final_c(), b.final_c(), &p.config))
}

pub(crate) fn concat_states(a: &[f64], b: &[f64], cfg: &CellConfig) -> Tensor {
    let r = cfg.hidden_channels;
    let mut data = Vec::with_capacity(a.len() * 2);
    for (pa, pb) in a.chunks_exact(r).zip(b.chunks_exact(r)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Tensor::new(vec![cfg.height, cfg.width, 2 * r], data).expect("state shape")
}

/// Per-pixel softmax over the last axis with max subtraction.
pub fn softmax_channels(logits: &Tensor) -> Tensor {
    let c = *logits.shape().last().expect("rank >= 1");
    let mut out = logits.clone();
    for px in out.data_mut().chunks_exact_mut(c.max(1)) {
        let m = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in px.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in px.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Convolutional head followed by a per-pixel softmax; returns `[H, W, C]`
/// class probabilities.
pub fn classify(state: &Tensor, head: &Tensor) -> Result<Tensor> {
    let logits = state.conv2d_same(head)?;
    Ok(softmax_channels(&logits))
}

/// Bidirectional encode plus classification of one sequence.
pub fn predict(seq: &ImageSequence, p: &EncoderParams) -> Result<Tensor> {
    classify(&encode_bidirectional(seq, p)?, &p.head)
}
