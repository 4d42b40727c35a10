//! Model assembly: hyper layers (pooling + bidirectional encoder) feeding a
//! weight generator that rebuilds the main recurrent cell at every time step,
//! plus the prediction head, parameter initialization, and checkpointing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::cells::{
    attend_with_keys, cell_step, encode_bidirectional, generate_weights, generated_widths,
    init_state, project_keys, AttentionParams, CellKind, CellParams, GruParams,
    HyperEncoderParams, LstmParams, RnnState, WeightGenParams,
};
use crate::error::{Error, Result};
use crate::tensor::{self, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            other => Err(Error::config(format!("unknown task '{}'", other))),
        }
    }
}

/// Model dimensions. `t` is the historical window length, `k` the pooling
/// kernel (so the encoder sees `t / k` positions), `t_y` the prediction length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_x: usize,
    pub d_y: usize,
    pub d_s: usize,
    pub d_h: usize,
    pub d_v: usize,
    pub d_a: usize,
    pub t: usize,
    pub k: usize,
    pub t_y: usize,
    pub task: Task,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_x", self.d_x),
            ("d_y", self.d_y),
            ("d_s", self.d_s),
            ("d_h", self.d_h),
            ("d_v", self.d_v),
            ("d_a", self.d_a),
            ("t", self.t),
            ("k", self.k),
            ("t_y", self.t_y),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{} must be positive", name)));
            }
        }
        if self.t % self.k != 0 {
            return Err(Error::config(format!(
                "pooling kernel k={} must divide window length t={}",
                self.k, self.t
            )));
        }
        if self.d_h % 2 != 0 {
            return Err(Error::config(format!(
                "d_h={} must be even (two encoder directions of d_h/2 each)",
                self.d_h
            )));
        }
        if self.task == Task::Classification && self.t_y != 1 {
            return Err(Error::config(
                "classification supports t_y=1 only (one label per instance)",
            ));
        }
        Ok(())
    }

    /// Encoder input length after pooling.
    pub fn t_k(&self) -> usize {
        self.t / self.k
    }

    /// Flat output width of the prediction head.
    pub fn out_width(&self) -> usize {
        self.d_y * self.t_y
    }
}

/// Affine prediction head; linear for regression, softmax over `d_y`
/// classes for classification.
#[derive(Debug, Clone)]
pub struct PredictionHead<T> {
    pub w_out: T,
    pub b_out: T,
}

impl<T> PredictionHead<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> PredictionHead<U> {
        PredictionHead {
            w_out: f(&self.w_out),
            b_out: f(&self.b_out),
        }
    }

    pub fn fields(&self) -> Vec<(&'static str, &T)> {
        vec![("w_out", &self.w_out), ("b_out", &self.b_out)]
    }

    pub fn fields_mut(&mut self) -> Vec<(&'static str, &mut T)> {
        vec![("w_out", &mut self.w_out), ("b_out", &mut self.b_out)]
    }
}

/// The full parameter bundle.
#[derive(Debug, Clone)]
pub struct HyperModel {
    pub config: ModelConfig,
    pub cell_kind: CellKind,
    pub encoder: HyperEncoderParams<Tensor>,
    pub attention: AttentionParams<Tensor>,
    pub weight_gen: WeightGenParams<Tensor>,
    pub head: PredictionHead<Tensor>,
    pub seed: u64,
}

/// How `predict` aggregates over the historical set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    /// Forward with the most recent window only.
    Last,
    /// Elementwise mean over all windows' predictions.
    Mean,
}

impl PredictMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PredictMode::Last => "last",
            PredictMode::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(PredictMode::Last),
            "mean" => Ok(PredictMode::Mean),
            other => Err(Error::config(format!("unknown predict mode '{}'", other))),
        }
    }
}

fn zero_gru(d_in: usize, d_out: usize) -> GruParams<Tensor> {
    GruParams {
        w_xr: Tensor::zeros(Shape::matrix(d_out, d_in)),
        w_xz: Tensor::zeros(Shape::matrix(d_out, d_in)),
        w_xn: Tensor::zeros(Shape::matrix(d_out, d_in)),
        w_hr: Tensor::zeros(Shape::matrix(d_out, d_out)),
        w_hz: Tensor::zeros(Shape::matrix(d_out, d_out)),
        w_hn: Tensor::zeros(Shape::matrix(d_out, d_out)),
        b_r: Tensor::zeros(Shape::vector(d_out)),
        b_z: Tensor::zeros(Shape::vector(d_out)),
        b_n: Tensor::zeros(Shape::vector(d_out)),
    }
}

fn zero_lstm(d_in: usize, d_out: usize) -> LstmParams<Tensor> {
    LstmParams {
        w_xi: Tensor::zeros(Shape::matrix(d_out, d_in)),
        w_xf: Tensor::zeros(Shape::matrix(d_out, d_in)),
        w_xg: Tensor::zeros(Shape::matrix(d_out, d_in)),
        w_xo: Tensor::zeros(Shape::matrix(d_out, d_in)),
        w_hi: Tensor::zeros(Shape::matrix(d_out, d_out)),
        w_hf: Tensor::zeros(Shape::matrix(d_out, d_out)),
        w_hg: Tensor::zeros(Shape::matrix(d_out, d_out)),
        w_ho: Tensor::zeros(Shape::matrix(d_out, d_out)),
        b_i: Tensor::zeros(Shape::vector(d_out)),
        b_f: Tensor::zeros(Shape::vector(d_out)),
        b_g: Tensor::zeros(Shape::vector(d_out)),
        b_o: Tensor::zeros(Shape::vector(d_out)),
    }
}

fn zero_cell(kind: CellKind, d_in: usize, d_out: usize) -> CellParams<Tensor> {
    match kind {
        CellKind::Gru => CellParams::Gru(zero_gru(d_in, d_out)),
        CellKind::Lstm => CellParams::Lstm(zero_lstm(d_in, d_out)),
    }
}

impl HyperModel {
    /// All-zero parameters with the right shapes; used as the skeleton for
    /// initialization and checkpoint loading.
    pub fn zeroed(config: ModelConfig, cell_kind: CellKind, seed: u64) -> Result<Self> {
        config.validate()?;
        let dir_width = config.d_h / 2;
        let (d_ih, d_ix, d_ib) = generated_widths(cell_kind, config.d_s, config.d_x);
        Ok(HyperModel {
            encoder: HyperEncoderParams {
                forward: zero_cell(cell_kind, config.d_x, dir_width),
                backward: zero_cell(cell_kind, config.d_x, dir_width),
            },
            attention: AttentionParams {
                v: Tensor::zeros(Shape::vector(config.d_a)),
                w_s: Tensor::zeros(Shape::matrix(config.d_a, config.d_s)),
                w_h: Tensor::zeros(Shape::matrix(config.d_a, config.d_h)),
                b_s: Tensor::zeros(Shape::vector(config.d_a)),
            },
            weight_gen: WeightGenParams {
                w_c: Tensor::zeros(Shape::matrix(config.d_v, config.d_h)),
                w_hv: Tensor::zeros(Shape::matrix(d_ih, config.d_v)),
                w_xv: Tensor::zeros(Shape::matrix(d_ix, config.d_v)),
                w_bv: Tensor::zeros(Shape::matrix(d_ib, config.d_v)),
                w_init: Tensor::zeros(Shape::matrix(config.d_s, config.d_h)),
                b_init: Tensor::zeros(Shape::vector(config.d_s)),
            },
            head: PredictionHead {
                w_out: Tensor::zeros(Shape::matrix(config.out_width(), config.d_s)),
                b_out: Tensor::zeros(Shape::vector(config.out_width())),
            },
            config,
            cell_kind,
            seed,
        })
    }

    /// Deterministic initialization: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
    /// per weight tensor, biases zero, the encoder LSTM forget bias at 1.0,
    /// and the generator matrices damped by an extra 1/sqrt(d_v).
    pub fn init(config: ModelConfig, cell_kind: CellKind, seed: u64) -> Result<Self> {
        let mut model = HyperModel::zeroed(config, cell_kind, seed)?;
        let d_v = model.config.d_v;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, tensor) in model.named_params_mut() {
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            if leaf.starts_with("b_") {
                if leaf == "b_f" {
                    // Static forget gates start open.
                    tensor.data_mut().fill(1.0);
                }
                continue;
            }
            let fan_in = match tensor.rank() {
                2 => tensor.cols()?,
                _ => tensor.len(),
            };
            let mut bound = 1.0 / (fan_in as f64).sqrt();
            if matches!(leaf, "w_hv" | "w_xv" | "w_bv") {
                bound /= (d_v as f64).sqrt();
            }
            for v in tensor.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(model)
    }

    /// Every learnable tensor with a stable dotted name, in declaration order.
    /// This order defines the checkpoint layout and the optimizer state layout.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self.encoder.forward.fields() {
            out.push((format!("encoder.fwd.{}", name), t));
        }
        for (name, t) in self.encoder.backward.fields() {
            out.push((format!("encoder.bwd.{}", name), t));
        }
        for (name, t) in self.attention.fields() {
            out.push((format!("attn.{}", name), t));
        }
        for (name, t) in self.weight_gen.fields() {
            out.push((format!("gen.{}", name), t));
        }
        for (name, t) in self.head.fields() {
            out.push((format!("head.{}", name), t));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self.encoder.forward.fields_mut() {
            out.push((format!("encoder.fwd.{}", name), t));
        }
        for (name, t) in self.encoder.backward.fields_mut() {
            out.push((format!("encoder.bwd.{}", name), t));
        }
        for (name, t) in self.attention.fields_mut() {
            out.push((format!("attn.{}", name), t));
        }
        for (name, t) in self.weight_gen.fields_mut() {
            out.push((format!("gen.{}", name), t));
        }
        for (name, t) in self.head.fields_mut() {
            out.push((format!("head.{}", name), t));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let mut order = Vec::new();
        let mut f = |t: &Tensor| {
            let v = if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            };
            order.push(v);
            v
        };
        // Traversal order must match named_params(): encoder fwd, encoder
        // bwd, attention, generator, head.
        let encoder = self.encoder.map(&mut f);
        let attention = self.attention.map(&mut f);
        let weight_gen = self.weight_gen.map(&mut f);
        let head = self.head.map(&mut f);
        BoundModel {
            config: self.config.clone(),
            cell_kind: self.cell_kind,
            encoder,
            attention,
            weight_gen,
            head,
            param_vars: order,
        }
    }

    /// Place every parameter on the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        self.bind_with(tape, true)
    }

    /// Place every parameter on the tape as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundModel {
        self.bind_with(tape, false)
    }

    /// Assemble a bound view from vars already on a tape, in `named_params`
    /// order. Lets a caller own leaf creation (the gradient checker re-binds
    /// perturbed parameter values).
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundModel> {
        let expected = self.named_params().len();
        if vars.len() != expected {
            return Err(Error::contract(format!(
                "bind_vars: {} vars for {} parameters",
                vars.len(),
                expected
            )));
        }
        let mut it = vars.iter().copied();
        let mut f = |_: &Tensor| it.next().expect("var count checked");
        let encoder = self.encoder.map(&mut f);
        let attention = self.attention.map(&mut f);
        let weight_gen = self.weight_gen.map(&mut f);
        let head = self.head.map(&mut f);
        Ok(BoundModel {
            config: self.config.clone(),
            cell_kind: self.cell_kind,
            encoder,
            attention,
            weight_gen,
            head,
            param_vars: vars.to_vec(),
        })
    }

    /// Prediction from one historical window: the full pipeline of pooling,
    /// encoding, per-step attention + weight generation, and the head.
    /// Output shape is [d_y x t_y].
    pub fn forward_one(&self, x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind_frozen(&mut tape);
        let out = bound.forward_output(&mut tape, x, x_hat)?;
        tape.value(out)
            .reshape(Shape::matrix(self.config.d_y, self.config.t_y))
    }

    /// One prediction per historical window, in window order.
    pub fn forward_all(&self, x: &Tensor, windows: &[Tensor]) -> Result<Vec<Tensor>> {
        if windows.is_empty() {
            return Err(Error::contract("forward_all: historical set is empty"));
        }
        windows.iter().map(|w| self.forward_one(x, w)).collect()
    }

    /// Deployed prediction: either the most recent window's output or the
    /// elementwise mean over all windows.
    pub fn predict(&self, x: &Tensor, windows: &[Tensor], mode: PredictMode) -> Result<Tensor> {
        if windows.is_empty() {
            return Err(Error::contract("predict: historical set is empty"));
        }
        match mode {
            PredictMode::Last => self.forward_one(x, windows.last().unwrap()),
            PredictMode::Mean => {
                let outputs = self.forward_all(x, windows)?;
                let mut acc = Tensor::zeros(outputs[0].shape().clone());
                for o in &outputs {
                    acc = tensor::add(&acc, o)?;
                }
                Ok(tensor::scale(&acc, 1.0 / outputs.len() as f64))
            }
        }
    }

    /// Final encoder state for one pooled window; the per-window summary of
    /// the local distribution.
    pub fn encoder_final_state(&self, x_hat: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind_frozen(&mut tape);
        let h = bound.encode_window(&mut tape, x_hat)?;
        Ok(tape.value(*h.last().expect("encoder output nonempty")).clone())
    }

    /// One CSV row per historical window holding that window's final encoder
    /// state; the raw material for downstream projection/visualization.
    pub fn export_hidden_states(&self, windows: &[Tensor], path: &Path) -> Result<()> {
        if windows.is_empty() {
            return Err(Error::contract("export_hidden_states: no windows"));
        }
        let mut out = BufWriter::new(File::create(path)?);
        let header: Vec<String> = (0..self.config.d_h).map(|i| format!("h{}", i)).collect();
        writeln!(out, "{}", header.join(","))?;
        for w in windows {
            let state = self.encoder_final_state(w)?;
            let row: Vec<String> = state.data().iter().map(|v| format!("{}", v)).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Tape-bound view of a model: every parameter as a `Var`, in
/// `named_params()` order via `param_vars`.
pub struct BoundModel {
    pub config: ModelConfig,
    pub cell_kind: CellKind,
    pub encoder: HyperEncoderParams<Var>,
    pub attention: AttentionParams<Var>,
    pub weight_gen: WeightGenParams<Var>,
    pub head: PredictionHead<Var>,
    pub param_vars: Vec<Var>,
}

impl BoundModel {
    fn check_series(&self, name: &str, t: &Tensor, expect_cols: Option<usize>) -> Result<()> {
        if t.rank() != 2 || t.rows()? != self.config.d_x {
            return Err(Error::dim(format!(
                "{}: expected [{} x time] series, got {}",
                name, self.config.d_x, t.shape()
            )));
        }
        if let Some(cols) = expect_cols {
            if t.cols()? != cols {
                return Err(Error::dim(format!(
                    "{}: expected {} time steps, got {}",
                    name,
                    cols,
                    t.cols()?
                )));
            }
        }
        Ok(())
    }

    /// Pool one historical window and encode it; returns the per-position
    /// encoder states (each of width d_h).
    pub fn encode_window(&self, tape: &mut Tape, x_hat: &Tensor) -> Result<Vec<Var>> {
        self.check_series("x_hat", x_hat, Some(self.config.t))?;
        let pooled = tensor::avg_pool_1d(x_hat, self.config.k)
            .map_err(|e| Error::dim(format!("hyper-layer pooling: {}", e)))?;
        let cols: Vec<Var> = (0..self.config.t_k())
            .map(|t| {
                let col = pooled.col(t)?;
                Ok(tape.constant(col))
            })
            .collect::<Result<_>>()?;
        encode_bidirectional(tape, &self.encoder, &cols)
    }

    /// Head output before activation, shape [d_y * t_y].
    pub fn forward_logits(&self, tape: &mut Tape, x: &Tensor, x_hat: &Tensor) -> Result<Var> {
        self.check_series("x", x, None)?;
        let t_x = x.cols()?;
        let h = self.encode_window(tape, x_hat)?;
        let h_last = *h.last().expect("encoder output nonempty");
        let keys = project_keys(tape, &self.attention, &h)?;

        let s0 = init_state(tape, &self.weight_gen, h_last)?;
        let mut state = RnnState {
            h: s0,
            cell: match self.cell_kind {
                CellKind::Gru => None,
                CellKind::Lstm => {
                    Some(tape.constant(Tensor::zeros(Shape::vector(self.config.d_s))))
                }
            },
        };

        for t in 0..t_x {
            let x_t = tape.constant(x.col(t)?);
            let (c_t, _alpha) = attend_with_keys(tape, &self.attention, state.h, &keys, &h)?;
            let weights = generate_weights(
                tape,
                &self.weight_gen,
                c_t,
                self.cell_kind,
                self.config.d_s,
                self.config.d_x,
            )?;
            state = cell_step(tape, &weights, x_t, state)
                .map_err(|e| Error::dim(format!("main-layer step {}: {}", t, e)))?;
        }

        let proj = tape.matvec(self.head.w_out, state.h)?;
        tape.add(proj, self.head.b_out)
    }

    /// Head output after activation: identity for regression, softmax over
    /// classes for classification.
    pub fn forward_output(&self, tape: &mut Tape, x: &Tensor, x_hat: &Tensor) -> Result<Var> {
        let logits = self.forward_logits(tape, x, x_hat)?;
        match self.config.task {
            Task::Regression => Ok(logits),
            Task::Classification => tape.softmax(logits),
        }
    }
}

// --- checkpoint format -----------------------------------------------------
//
// Little-endian binary: header (format version, config fields, task, cell
// kind, seed) followed by the named tensors in declaration order, each as
// (name length, name bytes, rank, extents, f64 payload). Round-trips are
// bit-exact.

const CHECKPOINT_VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

impl HyperModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_u32(&mut w, CHECKPOINT_VERSION)?;
        for v in [
            self.config.d_x,
            self.config.d_y,
            self.config.d_s,
            self.config.d_h,
            self.config.d_v,
            self.config.d_a,
            self.config.t,
            self.config.k,
            self.config.t_y,
        ] {
            write_u64(&mut w, v as u64)?;
        }
        w.write_all(&[match self.config.task {
            Task::Regression => 0u8,
            Task::Classification => 1u8,
        }])?;
        w.write_all(&[match self.cell_kind {
            CellKind::Gru => 0u8,
            CellKind::Lstm => 1u8,
        }])?;
        write_u64(&mut w, self.seed)?;

        for (name, tensor) in self.named_params() {
            let bytes = name.as_bytes();
            write_u32(&mut w, bytes.len() as u32)?;
            w.write_all(bytes)?;
            write_u32(&mut w, tensor.rank() as u32)?;
            for &d in tensor.shape().dims() {
                write_u64(&mut w, d as u64)?;
            }
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::data(format!(
                "checkpoint version {} unsupported (expected {})",
                version, CHECKPOINT_VERSION
            )));
        }
        let mut dims = [0usize; 9];
        for d in dims.iter_mut() {
            *d = read_u64(&mut r)? as usize;
        }
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let task = match flags[0] {
            0 => Task::Regression,
            1 => Task::Classification,
            other => return Err(Error::data(format!("bad task tag {}", other))),
        };
        let cell_kind = match flags[1] {
            0 => CellKind::Gru,
            1 => CellKind::Lstm,
            other => return Err(Error::data(format!("bad cell tag {}", other))),
        };
        let seed = read_u64(&mut r)?;
        let config = ModelConfig {
            d_x: dims[0],
            d_y: dims[1],
            d_s: dims[2],
            d_h: dims[3],
            d_v: dims[4],
            d_a: dims[5],
            t: dims[6],
            k: dims[7],
            t_y: dims[8],
            task,
        };
        let mut model = HyperModel::zeroed(config, cell_kind, seed)?;
        for (expected_name, slot) in model.named_params_mut() {
            let name_len = read_u32(&mut r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::data("checkpoint tensor name is not UTF-8"))?;
            if name != expected_name {
                return Err(Error::data(format!(
                    "checkpoint tensor order mismatch: expected '{}', found '{}'",
                    expected_name, name
                )));
            }
            let rank = read_u32(&mut r)? as usize;
            let mut extents = Vec::with_capacity(rank);
            for _ in 0..rank {
                extents.push(read_u64(&mut r)? as usize);
            }
            let shape = Shape::new(extents)?;
            if &shape != slot.shape() {
                return Err(Error::data(format!(
                    "checkpoint tensor '{}' has shape {}, expected {}",
                    name,
                    shape,
                    slot.shape()
                )));
            }
            for v in slot.data_mut() {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        Ok(model)
    }
}
