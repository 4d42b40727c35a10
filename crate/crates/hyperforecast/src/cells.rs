//! Recurrent building blocks.
//!
//! The same `gru_step`/`lstm_step` serve two roles: statically weighted cells
//! inside the bidirectional encoder, and dynamically weighted main cells whose
//! parameters are regenerated at every time step from the attention context.
//! Parameter containers are generic over their element so one struct holds
//! stored tensors (`GruParams<Tensor>`) or tape nodes (`GruParams<Var>`).

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Which recurrent cell a model is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    /// Number of weight groups the generator must produce per target:
    /// reset/update/candidate for GRU, cell/input/forget/output for LSTM.
    pub fn gate_count(&self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::config(format!("unknown cell kind '{}'", other))),
        }
    }
}

/// The nine learnable tensors of a GRU cell.
#[derive(Debug, Clone)]
pub struct GruParams<T> {
    pub w_xr: T,
    pub w_xz: T,
    pub w_xn: T,
    pub w_hr: T,
    pub w_hz: T,
    pub w_hn: T,
    pub b_r: T,
    pub b_z: T,
    pub b_n: T,
}

impl<T> GruParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> GruParams<U> {
        GruParams {
            w_xr: f(&self.w_xr),
            w_xz: f(&self.w_xz),
            w_xn: f(&self.w_xn),
            w_hr: f(&self.w_hr),
            w_hz: f(&self.w_hz),
            w_hn: f(&self.w_hn),
            b_r: f(&self.b_r),
            b_z: f(&self.b_z),
            b_n: f(&self.b_n),
        }
    }

    pub fn fields(&self) -> Vec<(&'static str, &T)> {
        vec![
            ("w_xr", &self.w_xr),
            ("w_xz", &self.w_xz),
            ("w_xn", &self.w_xn),
            ("w_hr", &self.w_hr),
            ("w_hz", &self.w_hz),
            ("w_hn", &self.w_hn),
            ("b_r", &self.b_r),
            ("b_z", &self.b_z),
            ("b_n", &self.b_n),
        ]
    }

    pub fn fields_mut(&mut self) -> Vec<(&'static str, &mut T)> {
        vec![
            ("w_xr", &mut self.w_xr),
            ("w_xz", &mut self.w_xz),
            ("w_xn", &mut self.w_xn),
            ("w_hr", &mut self.w_hr),
            ("w_hz", &mut self.w_hz),
            ("w_hn", &mut self.w_hn),
            ("b_r", &mut self.b_r),
            ("b_z", &mut self.b_z),
            ("b_n", &mut self.b_n),
        ]
    }
}

/// The twelve learnable tensors of an LSTM cell (input, forget, candidate,
/// output gates).
#[derive(Debug, Clone)]
pub struct LstmParams<T> {
    pub w_xi: T,
    pub w_xf: T,
    pub w_xg: T,
    pub w_xo: T,
    pub w_hi: T,
    pub w_hf: T,
    pub w_hg: T,
    pub w_ho: T,
    pub b_i: T,
    pub b_f: T,
    pub b_g: T,
    pub b_o: T,
}

impl<T> LstmParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LstmParams<U> {
        LstmParams {
            w_xi: f(&self.w_xi),
            w_xf: f(&self.w_xf),
            w_xg: f(&self.w_xg),
            w_xo: f(&self.w_xo),
            w_hi: f(&self.w_hi),
            w_hf: f(&self.w_hf),
            w_hg: f(&self.w_hg),
            w_ho: f(&self.w_ho),
            b_i: f(&self.b_i),
            b_f: f(&self.b_f),
            b_g: f(&self.b_g),
            b_o: f(&self.b_o),
        }
    }

    pub fn fields(&self) -> Vec<(&'static str, &T)> {
        vec![
            ("w_xi", &self.w_xi),
            ("w_xf", &self.w_xf),
            ("w_xg", &self.w_xg),
            ("w_xo", &self.w_xo),
            ("w_hi", &self.w_hi),
            ("w_hf", &self.w_hf),
            ("w_hg", &self.w_hg),
            ("w_ho", &self.w_ho),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_g", &self.b_g),
            ("b_o", &self.b_o),
        ]
    }

    pub fn fields_mut(&mut self) -> Vec<(&'static str, &mut T)> {
        vec![
            ("w_xi", &mut self.w_xi),
            ("w_xf", &mut self.w_xf),
            ("w_xg", &mut self.w_xg),
            ("w_xo", &mut self.w_xo),
            ("w_hi", &mut self.w_hi),
            ("w_hf", &mut self.w_hf),
            ("w_hg", &mut self.w_hg),
            ("w_ho", &mut self.w_ho),
            ("b_i", &mut self.b_i),
            ("b_f", &mut self.b_f),
            ("b_g", &mut self.b_g),
            ("b_o", &mut self.b_o),
        ]
    }
}

/// Either cell's parameter bundle; the encoder directions and the generated
/// main-cell weights are both one of these.
#[derive(Debug, Clone)]
pub enum CellParams<T> {
    Gru(GruParams<T>),
    Lstm(LstmParams<T>),
}

impl<T> CellParams<T> {
    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Gru(_) => CellKind::Gru,
            CellParams::Lstm(_) => CellKind::Lstm,
        }
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> CellParams<U> {
        match self {
            CellParams::Gru(p) => CellParams::Gru(p.map(f)),
            CellParams::Lstm(p) => CellParams::Lstm(p.map(f)),
        }
    }

    pub fn fields(&self) -> Vec<(&'static str, &T)> {
        match self {
            CellParams::Gru(p) => p.fields(),
            CellParams::Lstm(p) => p.fields(),
        }
    }

    pub fn fields_mut(&mut self) -> Vec<(&'static str, &mut T)> {
        match self {
            CellParams::Gru(p) => p.fields_mut(),
            CellParams::Lstm(p) => p.fields_mut(),
        }
    }
}

/// Bidirectional encoder over pooled historical windows: one cell per
/// direction, each `d_h / 2` wide so the concatenated state has width `d_h`.
#[derive(Debug, Clone)]
pub struct HyperEncoderParams<T> {
    pub forward: CellParams<T>,
    pub backward: CellParams<T>,
}

impl<T> HyperEncoderParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> HyperEncoderParams<U> {
        HyperEncoderParams {
            forward: self.forward.map(f),
            backward: self.backward.map(f),
        }
    }
}

/// Luong-style additive score parameters: score(s, h_p) = v . tanh(W_s s + W_h h_p + b_s).
#[derive(Debug, Clone)]
pub struct AttentionParams<T> {
    pub v: T,
    pub w_s: T,
    pub w_h: T,
    pub b_s: T,
}

impl<T> AttentionParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> AttentionParams<U> {
        AttentionParams {
            v: f(&self.v),
            w_s: f(&self.w_s),
            w_h: f(&self.w_h),
            b_s: f(&self.b_s),
        }
    }

    pub fn fields(&self) -> Vec<(&'static str, &T)> {
        vec![
            ("v", &self.v),
            ("w_s", &self.w_s),
            ("w_h", &self.w_h),
            ("b_s", &self.b_s),
        ]
    }

    pub fn fields_mut(&mut self) -> Vec<(&'static str, &mut T)> {
        vec![
            ("v", &mut self.v),
            ("w_s", &mut self.w_s),
            ("w_h", &mut self.w_h),
            ("b_s", &mut self.b_s),
        ]
    }
}

/// Maps the attention context to flattened main-cell weights, plus the affine
/// map that produces the initial main state from the last encoder state.
#[derive(Debug, Clone)]
pub struct WeightGenParams<T> {
    pub w_c: T,
    pub w_hv: T,
    pub w_xv: T,
    pub w_bv: T,
    pub w_init: T,
    pub b_init: T,
}

impl<T> WeightGenParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> WeightGenParams<U> {
        WeightGenParams {
            w_c: f(&self.w_c),
            w_hv: f(&self.w_hv),
            w_xv: f(&self.w_xv),
            w_bv: f(&self.w_bv),
            w_init: f(&self.w_init),
            b_init: f(&self.b_init),
        }
    }

    pub fn fields(&self) -> Vec<(&'static str, &T)> {
        vec![
            ("w_c", &self.w_c),
            ("w_hv", &self.w_hv),
            ("w_xv", &self.w_xv),
            ("w_bv", &self.w_bv),
            ("w_init", &self.w_init),
            ("b_init", &self.b_init),
        ]
    }

    pub fn fields_mut(&mut self) -> Vec<(&'static str, &mut T)> {
        vec![
            ("w_c", &mut self.w_c),
            ("w_hv", &mut self.w_hv),
            ("w_xv", &mut self.w_xv),
            ("w_bv", &mut self.w_bv),
            ("w_init", &mut self.w_init),
            ("b_init", &mut self.b_init),
        ]
    }
}

/// Flattened generated-weight widths for one cell kind.
pub fn generated_widths(kind: CellKind, d_s: usize, d_x: usize) -> (usize, usize, usize) {
    let g = kind.gate_count();
    (g * d_s * d_s, g * d_s * d_x, g * d_s)
}

/// Recurrent state: hidden vector plus the LSTM's memory cell when present.
#[derive(Debug, Clone, Copy)]
pub struct RnnState {
    pub h: Var,
    pub cell: Option<Var>,
}

/// One GRU update:
///   r = sigmoid(W_xr x + W_hr s + b_r)
///   z = sigmoid(W_xz x + W_hz s + b_z)
///   n = tanh(W_xn x + r * (W_hn s + b_n))
///   s' = (1 - z) * n + z * s
/// The candidate bias sits inside the reset-gated term.
pub fn gru_step(tape: &mut Tape, p: &GruParams<Var>, x_t: Var, s_prev: Var) -> Result<Var> {
    let gate = |tape: &mut Tape, wx: Var, wh: Var, b: Var| -> Result<Var> {
        let xt = tape.matvec(wx, x_t)?;
        let ht = tape.matvec(wh, s_prev)?;
        let s = tape.add(xt, ht)?;
        tape.add(s, b)
    };
    let r_pre = gate(tape, p.w_xr, p.w_hr, p.b_r)?;
    let r = tape.sigmoid(r_pre);
    let z_pre = gate(tape, p.w_xz, p.w_hz, p.b_z)?;
    let z = tape.sigmoid(z_pre);

    let xn = tape.matvec(p.w_xn, x_t)?;
    let hn = tape.matvec(p.w_hn, s_prev)?;
    let hn_b = tape.add(hn, p.b_n)?;
    let gated = tape.mul(r, hn_b)?;
    let n_pre = tape.add(xn, gated)?;
    let n = tape.tanh(n_pre);

    let d_out = tape.value(z).len();
    let ones = tape.constant(Tensor::filled(Shape::vector(d_out), 1.0));
    let one_minus_z = tape.sub(ones, z)?;
    let new_part = tape.mul(one_minus_z, n)?;
    let carry = tape.mul(z, s_prev)?;
    tape.add(new_part, carry)
}

/// One LSTM update:
///   i = sigmoid(W_xi x + W_hi s + b_i)
///   f = sigmoid(W_xf x + W_hf s + b_f)
///   g = tanh(W_xg x + W_hg s + b_g)
///   o = sigmoid(W_xo x + W_ho s + b_o)
///   c' = f * c + i * g
///   s' = o * tanh(c')
pub fn lstm_step(
    tape: &mut Tape,
    p: &LstmParams<Var>,
    x_t: Var,
    s_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let gate = |tape: &mut Tape, wx: Var, wh: Var, b: Var| -> Result<Var> {
        let xt = tape.matvec(wx, x_t)?;
        let ht = tape.matvec(wh, s_prev)?;
        let s = tape.add(xt, ht)?;
        tape.add(s, b)
    };
    let i_pre = gate(tape, p.w_xi, p.w_hi, p.b_i)?;
    let i = tape.sigmoid(i_pre);
    let f_pre = gate(tape, p.w_xf, p.w_hf, p.b_f)?;
    let f = tape.sigmoid(f_pre);
    let g_pre = gate(tape, p.w_xg, p.w_hg, p.b_g)?;
    let g = tape.tanh(g_pre);
    let o_pre = gate(tape, p.w_xo, p.w_ho, p.b_o)?;
    let o = tape.sigmoid(o_pre);

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c_t = tape.add(keep, write)?;
    let c_act = tape.tanh(c_t);
    let s_t = tape.mul(o, c_act)?;
    Ok((s_t, c_t))
}

fn state_width(p: &CellParams<Var>, tape: &Tape) -> usize {
    match p {
        CellParams::Gru(g) => tape.value(g.b_r).len(),
        CellParams::Lstm(l) => tape.value(l.b_i).len(),
    }
}

fn zero_state(tape: &mut Tape, p: &CellParams<Var>) -> RnnState {
    let width = state_width(p, tape);
    let h = tape.constant(Tensor::zeros(Shape::vector(width)));
    let cell = match p {
        CellParams::Gru(_) => None,
        CellParams::Lstm(_) => {
            Some(tape.constant(Tensor::zeros(Shape::vector(width))))
        }
    };
    RnnState { h, cell }
}

/// Advance one step with whichever cell the params describe.
pub fn cell_step(
    tape: &mut Tape,
    p: &CellParams<Var>,
    x_t: Var,
    state: RnnState,
) -> Result<RnnState> {
    match p {
        CellParams::Gru(g) => {
            let h = gru_step(tape, g, x_t, state.h)?;
            Ok(RnnState { h, cell: None })
        }
        CellParams::Lstm(l) => {
            let c_prev = state
                .cell
                .ok_or_else(|| Error::contract("lstm step needs a cell state"))?;
            let (h, c) = lstm_step(tape, l, x_t, state.h, c_prev)?;
            Ok(RnnState { h, cell: Some(c) })
        }
    }
}

/// Run both encoder directions over the pooled window columns and concatenate
/// per-position states. `cols[t]` is the input at position t; both directions
/// start from zero state. Output row t is `concat(forward_t, backward_t)`.
pub fn encode_bidirectional(
    tape: &mut Tape,
    enc: &HyperEncoderParams<Var>,
    cols: &[Var],
) -> Result<Vec<Var>> {
    if cols.is_empty() {
        return Err(Error::contract("encoder needs at least one input position"));
    }
    let mut fwd = Vec::with_capacity(cols.len());
    let mut state = zero_state(tape, &enc.forward);
    for &x_t in cols {
        state = cell_step(tape, &enc.forward, x_t, state)?;
        fwd.push(state.h);
    }
    let mut bwd = vec![None; cols.len()];
    let mut state = zero_state(tape, &enc.backward);
    for (t, &x_t) in cols.iter().enumerate().rev() {
        state = cell_step(tape, &enc.backward, x_t, state)?;
        bwd[t] = Some(state.h);
    }
    cols.iter()
        .enumerate()
        .map(|(t, _)| tape.concat(&[fwd[t], bwd[t].expect("backward state filled")]))
        .collect()
}

/// Encoder-side projections of the attention scores that do not depend on the
/// decoder state: W_h h_p + b_s for every position p. Hoisting these out of
/// the time loop avoids recomputing them at every step.
pub fn project_keys(tape: &mut Tape, a: &AttentionParams<Var>, h: &[Var]) -> Result<Vec<Var>> {
    h.iter()
        .map(|&h_p| {
            let proj = tape.matvec(a.w_h, h_p)?;
            tape.add(proj, a.b_s)
        })
        .collect()
}

/// Attention over encoder states given precomputed keys: returns the context
/// vector and the weight vector alpha (non-negative, sums to 1).
pub fn attend_with_keys(
    tape: &mut Tape,
    a: &AttentionParams<Var>,
    s_prev: Var,
    keys: &[Var],
    h: &[Var],
) -> Result<(Var, Var)> {
    if keys.is_empty() || keys.len() != h.len() {
        return Err(Error::contract(
            "attend: keys and encoder states must be nonempty and aligned",
        ));
    }
    let ws_s = tape.matvec(a.w_s, s_prev)?;
    let mut scores = Vec::with_capacity(keys.len());
    for &key in keys {
        let pre = tape.add(ws_s, key)?;
        let act = tape.tanh(pre);
        scores.push(tape.dot(a.v, act)?);
    }
    let score_vec = tape.concat(&scores)?;
    let alpha = tape.softmax(score_vec)?;

    let mut context: Option<Var> = None;
    for (p, &h_p) in h.iter().enumerate() {
        let a_p = tape.slice(alpha, p, 1)?;
        let weighted = tape.scale(h_p, a_p)?;
        context = Some(match context {
            Some(c) => tape.add(c, weighted)?,
            None => weighted,
        });
    }
    Ok((context.expect("nonempty encoder states"), alpha))
}

/// Attention in one call: score, softmax, and context vector.
pub fn attend(
    tape: &mut Tape,
    a: &AttentionParams<Var>,
    s_prev: Var,
    h: &[Var],
) -> Result<(Var, Var)> {
    let keys = project_keys(tape, a, h)?;
    attend_with_keys(tape, a, s_prev, &keys, h)
}

/// Generate the main cell's weights for one time step from the context
/// vector: v_t = W_c c_t, then W_Ih = W_hv v_t, W_Ix = W_xv v_t,
/// W_Ib = W_bv v_t, each chunked per gate and reshaped. Generated weights are
/// pure linear maps of v_t; they carry no standing bias of their own.
pub fn generate_weights(
    tape: &mut Tape,
    g: &WeightGenParams<Var>,
    c_t: Var,
    kind: CellKind,
    d_s: usize,
    d_x: usize,
) -> Result<CellParams<Var>> {
    let v_t = tape.matvec(g.w_c, c_t)?;
    let w_ih = tape.matvec(g.w_hv, v_t)?;
    let w_ix = tape.matvec(g.w_xv, v_t)?;
    let w_ib = tape.matvec(g.w_bv, v_t)?;

    let gates = kind.gate_count();
    let h_chunks = tape.chunk(w_ih, gates)?;
    let x_chunks = tape.chunk(w_ix, gates)?;
    let b_chunks = tape.chunk(w_ib, gates)?;

    let mut h_mats = Vec::with_capacity(gates);
    let mut x_mats = Vec::with_capacity(gates);
    for i in 0..gates {
        h_mats.push(tape.reshape_to_matrix(h_chunks[i], d_s, d_s)?);
        x_mats.push(tape.reshape_to_matrix(x_chunks[i], d_s, d_x)?);
    }

    Ok(match kind {
        CellKind::Gru => CellParams::Gru(GruParams {
            w_hr: h_mats[0],
            w_hz: h_mats[1],
            w_hn: h_mats[2],
            w_xr: x_mats[0],
            w_xz: x_mats[1],
            w_xn: x_mats[2],
            b_r: b_chunks[0],
            b_z: b_chunks[1],
            b_n: b_chunks[2],
        }),
        // Chunk order: memory-cell candidate, input, forget, output gates.
        CellKind::Lstm => CellParams::Lstm(LstmParams {
            w_hg: h_mats[0],
            w_hi: h_mats[1],
            w_hf: h_mats[2],
            w_ho: h_mats[3],
            w_xg: x_mats[0],
            w_xi: x_mats[1],
            w_xf: x_mats[2],
            w_xo: x_mats[3],
            b_g: b_chunks[0],
            b_i: b_chunks[1],
            b_f: b_chunks[2],
            b_o: b_chunks[3],
        }),
    })
}

/// Initial main-layer state: affine map of the LAST encoder state.
pub fn init_state(tape: &mut Tape, g: &WeightGenParams<Var>, h_last: Var) -> Result<Var> {
    let proj = tape.matvec(g.w_init, h_last)?;
    tape.add(proj, g.b_init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
        let n = shape.len();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_gru(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> GruParams<Tensor> {
        GruParams {
            w_xr: random_tensor(rng, Shape::matrix(d_out, d_in)),
            w_xz: random_tensor(rng, Shape::matrix(d_out, d_in)),
            w_xn: random_tensor(rng, Shape::matrix(d_out, d_in)),
            w_hr: random_tensor(rng, Shape::matrix(d_out, d_out)),
            w_hz: random_tensor(rng, Shape::matrix(d_out, d_out)),
            w_hn: random_tensor(rng, Shape::matrix(d_out, d_out)),
            b_r: random_tensor(rng, Shape::vector(d_out)),
            b_z: random_tensor(rng, Shape::vector(d_out)),
            b_n: random_tensor(rng, Shape::vector(d_out)),
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

    /// Independent scalar-loop GRU used as an oracle; no tensor kernels.
    fn scalar_gru(p: &GruParams<Tensor>, x: &[f64], s: &[f64]) -> Vec<f64> {
        let d_out = s.len();
        let d_in = x.len();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mat = |m: &Tensor, v: &[f64], i: usize, cols: usize| -> f64 {
            let mut acc = 0.0;
            for j in 0..cols {
                acc += m.data()[i * cols + j] * v[j];
            }
            acc
        };
        let mut out = vec![0.0; d_out];
        for i in 0..d_out {
            let r = sig(mat(&p.w_xr, x, i, d_in) + mat(&p.w_hr, s, i, d_out) + p.b_r.data()[i]);
            let z = sig(mat(&p.w_xz, x, i, d_in) + mat(&p.w_hz, s, i, d_out) + p.b_z.data()[i]);
            let n = (mat(&p.w_xn, x, i, d_in)
                + r * (mat(&p.w_hn, s, i, d_out) + p.b_n.data()[i]))
            .tanh();
            out[i] = (1.0 - z) * n + z * s[i];
        }
        out
    }

    fn bind_gru(tape: &mut Tape, p: &GruParams<Tensor>) -> GruParams<Var> {
        p.map(&mut |t| tape.param(t.clone()))
    }

    #[test]
    fn gru_zero_params_collapse_to_zero_state() {
        let mut tape = Tape::new();
        let p = bind_gru(&mut tape, &zero_gru(3, 2));
        let x = tape.constant(Tensor::vector(vec![0.7, -0.3, 1.9]).unwrap());
        let s0 = tape.constant(Tensor::zeros(Shape::vector(2)));
        let s1 = gru_step(&mut tape, &p, x, s0).unwrap();
        assert_eq!(tape.value(s1).data(), &[0.0, 0.0]);
    }

    #[test]
    fn gru_saturated_update_gate_is_exact_carry() {
        let mut params = zero_gru(2, 2);
        params.b_z = Tensor::filled(Shape::vector(2), 1000.0);
        let mut tape = Tape::new();
        let p = bind_gru(&mut tape, &params);
        let x = tape.constant(Tensor::vector(vec![0.4, -0.9]).unwrap());
        let s_prev = Tensor::vector(vec![0.123456789, -0.987654321]).unwrap();
        let s0 = tape.constant(s_prev.clone());
        let s1 = gru_step(&mut tape, &p, x, s0).unwrap();
        assert_eq!(tape.value(s1), &s_prev);
    }

    #[test]
    fn gru_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let params = random_gru(&mut rng, 3, 4);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let expect = scalar_gru(&params, &x, &s);

            let mut tape = Tape::new();
            let p = bind_gru(&mut tape, &params);
            let xv = tape.constant(Tensor::vector(x.clone()).unwrap());
            let sv = tape.constant(Tensor::vector(s.clone()).unwrap());
            let s1 = gru_step(&mut tape, &p, xv, sv).unwrap();
            for (a, b) in tape.value(s1).data().iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-14, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn gru_frozen_update_gate_keeps_output_tanh_bounded() {
        // z forced to 0: s' = n, and |tanh| < 1 per coordinate.
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let mut params = random_gru(&mut rng, 2, 3);
        params.b_z = Tensor::filled(Shape::vector(3), -1000.0);
        let mut tape = Tape::new();
        let p = bind_gru(&mut tape, &params);
        let x = tape.constant(Tensor::vector(vec![2.0, -3.0]).unwrap());
        let s0 = tape.constant(Tensor::vector(vec![5.0, -5.0, 5.0]).unwrap());
        let s1 = gru_step(&mut tape, &p, x, s0).unwrap();
        assert!(tape.value(s1).data().iter().all(|v| v.abs() < 1.0));
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

    fn random_lstm(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> LstmParams<Tensor> {
        LstmParams {
            w_xi: random_tensor(rng, Shape::matrix(d_out, d_in)),
            w_xf: random_tensor(rng, Shape::matrix(d_out, d_in)),
            w_xg: random_tensor(rng, Shape::matrix(d_out, d_in)),
            w_xo: random_tensor(rng, Shape::matrix(d_out, d_in)),
            w_hi: random_tensor(rng, Shape::matrix(d_out, d_out)),
            w_hf: random_tensor(rng, Shape::matrix(d_out, d_out)),
            w_hg: random_tensor(rng, Shape::matrix(d_out, d_out)),
            w_ho: random_tensor(rng, Shape::matrix(d_out, d_out)),
            b_i: random_tensor(rng, Shape::vector(d_out)),
            b_f: random_tensor(rng, Shape::vector(d_out)),
            b_g: random_tensor(rng, Shape::vector(d_out)),
            b_o: random_tensor(rng, Shape::vector(d_out)),
        }
    }

    /// Independent scalar-loop LSTM oracle.
    fn scalar_lstm(
        p: &LstmParams<Tensor>,
        x: &[f64],
        s: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let d_out = s.len();
        let d_in = x.len();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mat = |m: &Tensor, v: &[f64], i: usize, cols: usize| -> f64 {
            (0..cols).map(|j| m.data()[i * cols + j] * v[j]).sum()
        };
        let mut h_out = vec![0.0; d_out];
        let mut c_out = vec![0.0; d_out];
        for idx in 0..d_out {
            let i = sig(mat(&p.w_xi, x, idx, d_in) + mat(&p.w_hi, s, idx, d_out) + p.b_i.data()[idx]);
            let f = sig(mat(&p.w_xf, x, idx, d_in) + mat(&p.w_hf, s, idx, d_out) + p.b_f.data()[idx]);
            let g = (mat(&p.w_xg, x, idx, d_in) + mat(&p.w_hg, s, idx, d_out) + p.b_g.data()[idx]).tanh();
            let o = sig(mat(&p.w_xo, x, idx, d_in) + mat(&p.w_ho, s, idx, d_out) + p.b_o.data()[idx]);
            c_out[idx] = f * c[idx] + i * g;
            h_out[idx] = o * c_out[idx].tanh();
        }
        (h_out, c_out)
    }

    #[test]
    fn lstm_zero_params_give_zero_state() {
        let mut tape = Tape::new();
        let p = zero_lstm(2, 3).map(&mut |t| tape.param(t.clone()));
        let x = tape.constant(Tensor::vector(vec![1.0, -1.0]).unwrap());
        let s0 = tape.constant(Tensor::zeros(Shape::vector(3)));
        let c0 = tape.constant(Tensor::zeros(Shape::vector(3)));
        let (s1, c1) = lstm_step(&mut tape, &p, x, s0, c0).unwrap();
        assert_eq!(tape.value(s1).data(), &[0.0, 0.0, 0.0]);
        assert_eq!(tape.value(c1).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn lstm_saturated_forget_zero_input_preserves_cell() {
        let mut params = zero_lstm(2, 2);
        params.b_f = Tensor::filled(Shape::vector(2), 1000.0);
        params.b_i = Tensor::filled(Shape::vector(2), -1000.0);
        let mut tape = Tape::new();
        let p = params.map(&mut |t| tape.param(t.clone()));
        let x = tape.constant(Tensor::vector(vec![0.3, 0.6]).unwrap());
        let s0 = tape.constant(Tensor::zeros(Shape::vector(2)));
        let cell = Tensor::vector(vec![0.25, -0.75]).unwrap();
        let c0 = tape.constant(cell.clone());
        let (_, c1) = lstm_step(&mut tape, &p, x, s0, c0).unwrap();
        assert_eq!(tape.value(c1), &cell);
    }

    #[test]
    fn lstm_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let params = random_lstm(&mut rng, 2, 3);
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (eh, ec) = scalar_lstm(&params, &x, &s, &c);

            let mut tape = Tape::new();
            let p = params.map(&mut |t| tape.param(t.clone()));
            let xv = tape.constant(Tensor::vector(x.clone()).unwrap());
            let sv = tape.constant(Tensor::vector(s.clone()).unwrap());
            let cv = tape.constant(Tensor::vector(c.clone()).unwrap());
            let (s1, c1) = lstm_step(&mut tape, &p, xv, sv, cv).unwrap();
            for (a, b) in tape.value(s1).data().iter().zip(&eh) {
                assert!((a - b).abs() <= 1e-14);
            }
            for (a, b) in tape.value(c1).data().iter().zip(&ec) {
                assert!((a - b).abs() <= 1e-14);
            }
        }
    }

    fn encoder_from(fwd: GruParams<Tensor>, bwd: GruParams<Tensor>) -> HyperEncoderParams<Tensor> {
        HyperEncoderParams {
            forward: CellParams::Gru(fwd),
            backward: CellParams::Gru(bwd),
        }
    }

    #[test]
    fn encoder_single_position_uses_same_input_for_both_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fwd = random_gru(&mut rng, 2, 3);
        let bwd = random_gru(&mut rng, 2, 3);
        let x = Tensor::vector(vec![0.5, -0.8]).unwrap();

        let mut tape = Tape::new();
        let enc = encoder_from(fwd.clone(), bwd.clone()).map(&mut |t| tape.param(t.clone()));
        let col = tape.constant(x.clone());
        let h = encode_bidirectional(&mut tape, &enc, &[col]).unwrap();
        assert_eq!(h.len(), 1);

        let zero = vec![0.0; 3];
        let f_expect = scalar_gru(&fwd, x.data(), &zero);
        let b_expect = scalar_gru(&bwd, x.data(), &zero);
        let row = tape.value(h[0]);
        assert_eq!(row.len(), 6);
        for (a, b) in row.data()[..3].iter().zip(&f_expect) {
            assert!((a - b).abs() <= 1e-14);
        }
        for (a, b) in row.data()[3..].iter().zip(&b_expect) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn encoder_zero_params_zero_output() {
        let mut tape = Tape::new();
        let enc = encoder_from(zero_gru(2, 2), zero_gru(2, 2)).map(&mut |t| tape.param(t.clone()));
        let cols: Vec<Var> = (0..4)
            .map(|i| tape.constant(Tensor::vector(vec![i as f64, -(i as f64)]).unwrap()))
            .collect();
        let h = encode_bidirectional(&mut tape, &enc, &cols).unwrap();
        assert_eq!(h.len(), 4);
        for row in h {
            assert!(tape.value(row).data().iter().all(|&v| v == 0.0));
        }
    }

    /// Reversing time and swapping direction parameters reverses the rows and
    /// swaps the concatenated halves.
    #[test]
    fn encoder_time_reversal_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let fwd = random_gru(&mut rng, 2, 2);
        let bwd = random_gru(&mut rng, 2, 2);
        let cols: Vec<Tensor> = (0..5)
            .map(|_| random_tensor(&mut rng, Shape::vector(2)))
            .collect();

        let run = |f: &GruParams<Tensor>, b: &GruParams<Tensor>, inputs: &[Tensor]| -> Vec<Vec<f64>> {
            let mut tape = Tape::new();
            let enc = encoder_from(f.clone(), b.clone()).map(&mut |t| tape.param(t.clone()));
            let vars: Vec<Var> = inputs.iter().map(|c| tape.constant(c.clone())).collect();
            let h = encode_bidirectional(&mut tape, &enc, &vars).unwrap();
            h.iter().map(|&r| tape.value(r).data().to_vec()).collect()
        };

        let original = run(&fwd, &bwd, &cols);
        let reversed_inputs: Vec<Tensor> = cols.iter().rev().cloned().collect();
        let swapped = run(&bwd, &fwd, &reversed_inputs);

        for t in 0..cols.len() {
            let mirror = &swapped[cols.len() - 1 - t];
            let (mf, mb) = mirror.split_at(2);
            let (of, ob) = original[t].split_at(2);
            for (a, b) in of.iter().zip(mb) {
                assert!((a - b).abs() <= 1e-14);
            }
            for (a, b) in ob.iter().zip(mf) {
                assert!((a - b).abs() <= 1e-14);
            }
        }
    }

    fn random_attention(rng: &mut ChaCha8Rng, d_a: usize, d_s: usize, d_h: usize) -> AttentionParams<Tensor> {
        AttentionParams {
            v: random_tensor(rng, Shape::vector(d_a)),
            w_s: random_tensor(rng, Shape::matrix(d_a, d_s)),
            w_h: random_tensor(rng, Shape::matrix(d_a, d_h)),
            b_s: random_tensor(rng, Shape::vector(d_a)),
        }
    }

    #[test]
    fn attention_single_position_returns_that_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = random_attention(&mut rng, 3, 2, 4);
        let mut tape = Tape::new();
        let a = params.map(&mut |t| tape.param(t.clone()));
        let s_prev = tape.constant(random_tensor(&mut rng, Shape::vector(2)));
        let h0 = random_tensor(&mut rng, Shape::vector(4));
        let h = vec![tape.constant(h0.clone())];
        let (c, alpha) = attend(&mut tape, &a, s_prev, &h).unwrap();
        assert_eq!(tape.value(alpha).data(), &[1.0]);
        assert_eq!(tape.value(c), &h0);
    }

    #[test]
    fn attention_identical_rows_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = random_attention(&mut rng, 3, 2, 4);
        let mut tape = Tape::new();
        let a = params.map(&mut |t| tape.param(t.clone()));
        let s_prev = tape.constant(random_tensor(&mut rng, Shape::vector(2)));
        let row = random_tensor(&mut rng, Shape::vector(4));
        let h: Vec<Var> = (0..5).map(|_| tape.constant(row.clone())).collect();
        let (_, alpha) = attend(&mut tape, &a, s_prev, &h).unwrap();
        for &w in tape.value(alpha).data() {
            assert!((w - 0.2).abs() <= 1e-12);
        }
    }

    #[test]
    fn attention_weights_are_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..50 {
            let params = random_attention(&mut rng, 4, 3, 6);
            let mut tape = Tape::new();
            let a = params.map(&mut |t| tape.param(t.clone()));
            let s_prev = tape.constant(random_tensor(&mut rng, Shape::vector(3)));
            let h: Vec<Var> = (0..7)
                .map(|_| {
                    let t = random_tensor(&mut rng, Shape::vector(6));
                    tape.constant(t)
                })
                .collect();
            let (_, alpha) = attend(&mut tape, &a, s_prev, &h).unwrap();
            let w = tape.value(alpha);
            assert!(w.data().iter().all(|&x| x >= 0.0));
            assert!((w.data().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    fn ones_weightgen(kind: CellKind, d_s: usize, d_x: usize, d_v: usize, d_h: usize) -> WeightGenParams<Tensor> {
        let (d_ih, d_ix, d_ib) = generated_widths(kind, d_s, d_x);
        WeightGenParams {
            w_c: Tensor::filled(Shape::matrix(d_v, d_h), 1.0),
            w_hv: Tensor::filled(Shape::matrix(d_ih, d_v), 1.0),
            w_xv: Tensor::filled(Shape::matrix(d_ix, d_v), 1.0),
            w_bv: Tensor::filled(Shape::matrix(d_ib, d_v), 1.0),
            w_init: Tensor::filled(Shape::matrix(d_s, d_h), 1.0),
            b_init: Tensor::zeros(Shape::vector(d_s)),
        }
    }

    fn random_weightgen(
        rng: &mut ChaCha8Rng,
        kind: CellKind,
        d_s: usize,
        d_x: usize,
        d_v: usize,
        d_h: usize,
    ) -> WeightGenParams<Tensor> {
        let (d_ih, d_ix, d_ib) = generated_widths(kind, d_s, d_x);
        WeightGenParams {
            w_c: random_tensor(rng, Shape::matrix(d_v, d_h)),
            w_hv: random_tensor(rng, Shape::matrix(d_ih, d_v)),
            w_xv: random_tensor(rng, Shape::matrix(d_ix, d_v)),
            w_bv: random_tensor(rng, Shape::matrix(d_ib, d_v)),
            w_init: random_tensor(rng, Shape::matrix(d_s, d_h)),
            b_init: random_tensor(rng, Shape::vector(d_s)),
        }
    }

    #[test]
    fn generate_weights_zero_context_is_all_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let gen = random_weightgen(&mut rng, CellKind::Gru, 3, 2, 4, 4);
        let mut tape = Tape::new();
        let g = gen.map(&mut |t| tape.param(t.clone()));
        let c = tape.constant(Tensor::zeros(Shape::vector(4)));
        let w = generate_weights(&mut tape, &g, c, CellKind::Gru, 3, 2).unwrap();
        for (_, var) in w.fields() {
            assert!(tape.value(*var).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn generate_weights_is_linear_in_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let gen = random_weightgen(&mut rng, CellKind::Gru, 2, 2, 3, 3);
        let c0 = random_tensor(&mut rng, Shape::vector(3));

        let run = |scale: f64| -> Vec<Vec<f64>> {
            let mut tape = Tape::new();
            let g = gen.map(&mut |t| tape.param(t.clone()));
            let c = tape.constant(crate::tensor::scale(&c0, scale));
            let w = generate_weights(&mut tape, &g, c, CellKind::Gru, 2, 2).unwrap();
            w.fields()
                .iter()
                .map(|(_, v)| tape.value(**v).data().to_vec())
                .collect()
        };
        let once = run(1.0);
        let twice = run(2.0);
        for (a, b) in once.iter().flatten().zip(twice.iter().flatten()) {
            assert!((2.0 * a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn generate_weights_hand_case_all_ones() {
        // d_s=2, d_x=1, d_v=1, d_h=1, every generator entry 1, c=[1]:
        // v_t = 1, W_Ih = ones(12) -> three 2x2 all-ones matrices.
        let gen = ones_weightgen(CellKind::Gru, 2, 1, 1, 1);
        let mut tape = Tape::new();
        let g = gen.map(&mut |t| tape.param(t.clone()));
        let c = tape.constant(Tensor::vector(vec![1.0]).unwrap());
        let w = generate_weights(&mut tape, &g, c, CellKind::Gru, 2, 1).unwrap();
        let gru = match &w {
            CellParams::Gru(p) => p,
            _ => unreachable!(),
        };
        for var in [gru.w_hr, gru.w_hz, gru.w_hn] {
            let m = tape.value(var);
            assert_eq!(m.shape(), &Shape::matrix(2, 2));
            assert!(m.data().iter().all(|&v| v == 1.0));
        }
        for var in [gru.w_xr, gru.w_xz, gru.w_xn] {
            assert_eq!(tape.value(var).shape(), &Shape::matrix(2, 1));
        }
        for var in [gru.b_r, gru.b_z, gru.b_n] {
            assert_eq!(tape.value(var).data(), &[1.0, 1.0]);
        }
    }

    /// Flattening and concatenating the generated tensors reproduces
    /// (W_Ih || W_Ix || W_Ib) bit-exactly.
    #[test]
    fn generated_weights_round_trip_to_flat_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for kind in [CellKind::Gru, CellKind::Lstm] {
            let (d_s, d_x, d_v, d_h) = (3, 2, 4, 4);
            let gen = random_weightgen(&mut rng, kind, d_s, d_x, d_v, d_h);
            let c0 = random_tensor(&mut rng, Shape::vector(d_h));

            let mut tape = Tape::new();
            let g = gen.map(&mut |t| tape.param(t.clone()));
            let c = tape.constant(c0.clone());
            // Reference flats straight from the maps.
            let v_t = tape.matvec(g.w_c, c).unwrap();
            let w_ih = tape.matvec(g.w_hv, v_t).unwrap();
            let w_ix = tape.matvec(g.w_xv, v_t).unwrap();
            let w_ib = tape.matvec(g.w_bv, v_t).unwrap();
            let w = generate_weights(&mut tape, &g, c, kind, d_s, d_x).unwrap();

            let mut h_flat = Vec::new();
            let mut x_flat = Vec::new();
            let mut b_flat = Vec::new();
            let ordered: Vec<Var> = match &w {
                CellParams::Gru(p) => vec![
                    p.w_hr, p.w_hz, p.w_hn, p.w_xr, p.w_xz, p.w_xn, p.b_r, p.b_z, p.b_n,
                ],
                CellParams::Lstm(p) => vec![
                    p.w_hg, p.w_hi, p.w_hf, p.w_ho, p.w_xg, p.w_xi, p.w_xf, p.w_xo, p.b_g,
                    p.b_i, p.b_f, p.b_o,
                ],
            };
            let gates = kind.gate_count();
            for (i, var) in ordered.iter().enumerate() {
                let flat = tape.value(*var).flatten();
                if i < gates {
                    h_flat.extend_from_slice(flat.data());
                } else if i < 2 * gates {
                    x_flat.extend_from_slice(flat.data());
                } else {
                    b_flat.extend_from_slice(flat.data());
                }
            }
            assert_eq!(h_flat, tape.value(w_ih).data());
            assert_eq!(x_flat, tape.value(w_ix).data());
            assert_eq!(b_flat, tape.value(w_ib).data());
        }
    }

    #[test]
    fn init_state_affine_cases() {
        let d_s = 2;
        let d_h = 2;
        let mut tape = Tape::new();
        // Zero W_init: s_0 = b_init.
        let g = WeightGenParams {
            w_c: Tensor::zeros(Shape::matrix(1, d_h)),
            w_hv: Tensor::zeros(Shape::matrix(12, 1)),
            w_xv: Tensor::zeros(Shape::matrix(6, 1)),
            w_bv: Tensor::zeros(Shape::matrix(6, 1)),
            w_init: Tensor::zeros(Shape::matrix(d_s, d_h)),
            b_init: Tensor::vector(vec![0.5, -0.5]).unwrap(),
        }
        .map(&mut |t| tape.param(t.clone()));
        let h_last = tape.constant(Tensor::vector(vec![3.0, 4.0]).unwrap());
        let s0 = init_state(&mut tape, &g, h_last).unwrap();
        assert_eq!(tape.value(s0).data(), &[0.5, -0.5]);

        // Identity W_init, zero bias: s_0 = last encoder state.
        let mut tape = Tape::new();
        let g = WeightGenParams {
            w_c: Tensor::zeros(Shape::matrix(1, d_h)),
            w_hv: Tensor::zeros(Shape::matrix(12, 1)),
            w_xv: Tensor::zeros(Shape::matrix(6, 1)),
            w_bv: Tensor::zeros(Shape::matrix(6, 1)),
            w_init: Tensor::matrix(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            b_init: Tensor::zeros(Shape::vector(d_s)),
        }
        .map(&mut |t| tape.param(t.clone()));
        let h_last = tape.constant(Tensor::vector(vec![3.0, 4.0]).unwrap());
        let s0 = init_state(&mut tape, &g, h_last).unwrap();
        assert_eq!(tape.value(s0).data(), &[3.0, 4.0]);
    }
}
