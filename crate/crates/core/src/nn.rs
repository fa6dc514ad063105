//! Layers built on the [`Tape`]: embedding lookup, scalar-to-vector linear
//! features, the LSTM cell and its sequence fold, same-padded 1-D convolution,
//! single-head scaled dot-product self-attention, and sum pooling.
//!
//! Vectors are `[1 x d]` rows and sequences are `[n x d]` matrices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Uniform `[-bound, bound]` initialisation.
pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Row `index` of an embedding table, as `[1 x d]`.
pub fn embed(tape: &mut Tape, table: Var, index: usize) -> Result<Var> {
    tape.gather(table, &[index])
}

/// `x · weight + bias` for a column of scalars `x: [n x 1]`, giving `[n x d]`.
/// `weight` is `[1 x d]` and `bias` is `[d]`.
pub fn linear_feature(tape: &mut Tape, weight: Var, bias: Var, x: Var) -> Result<Var> {
    let scaled = tape.matmul(x, weight)?;
    tape.add(scaled, bias)
}

/// Dense layer `x · weight + bias` with `weight: [in x out]`.
pub fn dense(tape: &mut Tape, weight: Var, bias: Var, x: Var) -> Result<Var> {
    let y = tape.matmul(x, weight)?;
    tape.add(y, bias)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_o: Tensor,
    pub w_g: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_o: Tensor,
    pub b_g: Tensor,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = Tensor::zeros(&[hidden, input + hidden]);
        let b = Tensor::zeros(&[hidden]);
        Self {
            w_i: w.clone(),
            w_f: w.clone(),
            w_o: w.clone(),
            w_g: w,
            b_i: b.clone(),
            b_f: b.clone(),
            b_o: b.clone(),
            b_g: b,
        }
    }

    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut w = || uniform(&[hidden, input + hidden], bound, rng);
        let (w_i, w_f, w_o, w_g) = (w(), w(), w(), w());
        let mut b = || uniform(&[hidden], bound, rng);
        let (b_i, b_f, b_o, b_g) = (b(), b(), b(), b());
        Self {
            w_i,
            w_f,
            w_o,
            w_g,
            b_i,
            b_f,
            b_o,
            b_g,
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_i.numel()
    }

    /// Records the parameters as leaves, in field order.
    pub fn bind(&self, tape: &mut Tape) -> Result<LstmVars> {
        let ws = [&self.w_i, &self.w_f, &self.w_o, &self.w_g].map(|t| tape.leaf(t.clone()));
        let bs = [&self.b_i, &self.b_f, &self.b_o, &self.b_g].map(|t| tape.leaf(t.clone()));
        LstmVars::new(tape, ws, bs)
    }
}

/// An LSTM bound to a tape. The four gate matrices are stacked and
/// transposed once so each step is a single matmul.
#[derive(Clone, Debug)]
pub struct LstmVars {
    pub weights: [Var; 4],
    pub biases: [Var; 4],
    stacked: Var,
    stacked_bias: Var,
    hidden: usize,
    input: usize,
}

impl LstmVars {
    /// `weights` and `biases` in gate order i, f, o, g.
    pub fn new(tape: &mut Tape, weights: [Var; 4], biases: [Var; 4]) -> Result<Self> {
        let ws = tape.shape(weights[0]).to_vec();
        if ws.len() != 2 || ws[1] < ws[0] {
            return Err(Error::Shape {
                op: "lstm",
                lhs: ws,
                rhs: vec![],
            });
        }
        let (hidden, input) = (ws[0], ws[1] - ws[0]);
        for (w, b) in weights.iter().zip(&biases) {
            if tape.shape(*w) != ws.as_slice() || tape.shape(*b) != [hidden] {
                return Err(Error::Shape {
                    op: "lstm",
                    lhs: ws,
                    rhs: tape.shape(*b).to_vec(),
                });
            }
        }
        let cat = tape.concat(&weights, 0)?;
        let stacked = tape.transpose(cat)?;
        let stacked_bias = tape.concat(&biases, 0)?;
        Ok(Self {
            weights,
            biases,
            stacked,
            stacked_bias,
            hidden,
            input,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmStep {
    pub h: Var,
    pub c: Var,
    pub i: Var,
    pub f: Var,
    pub o: Var,
    pub g: Var,
}

/// One step. Gates act on `[x_t ; h_prev]`; then
/// `c_t = f ⊙ c_prev + i ⊙ g` and `h_t = o ⊙ tanh(c_t)`.
pub fn lstm_cell(tape: &mut Tape, lstm: &LstmVars, x_t: Var, h_prev: Var, c_prev: Var) -> Result<LstmStep> {
    let z = tape.concat(&[x_t, h_prev], 1)?;
    if tape.shape(z) != [1, lstm.input + lstm.hidden] {
        return Err(Error::Shape {
            op: "lstm_cell",
            lhs: tape.shape(z).to_vec(),
            rhs: vec![1, lstm.input + lstm.hidden],
        });
    }
    let pre = tape.matmul(z, lstm.stacked)?;
    let pre = tape.add(pre, lstm.stacked_bias)?;
    let h = lstm.hidden;
    let gate = |tape: &mut Tape, k: usize| tape.slice(pre, 1, k * h, h);
    let i_pre = gate(tape, 0)?;
    let f_pre = gate(tape, 1)?;
    let o_pre = gate(tape, 2)?;
    let g_pre = gate(tape, 3)?;
    let i = tape.sigmoid(i_pre)?;
    let f = tape.sigmoid(f_pre)?;
    let o = tape.sigmoid(o_pre)?;
    let g = tape.tanh(g_pre)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let squashed = tape.tanh(c)?;
    let h_t = tape.mul(o, squashed)?;
    Ok(LstmStep { h: h_t, c, i, f, o, g })
}

/// Folds the cell over the rows of `sequence` from zero state and returns
/// the last hidden state `[1 x hidden]`.
pub fn lstm_sequence(tape: &mut Tape, lstm: &LstmVars, sequence: Var) -> Result<Var> {
    let shape = tape.shape(sequence).to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Contract(format!("lstm needs a nonempty [n x d] sequence, got {shape:?}")));
    }
    let zero = tape.constant(Tensor::zeros(&[1, lstm.hidden]));
    let (mut h, mut c) = (zero, zero);
    for t in 0..shape[0] {
        let x_t = tape.slice(sequence, 0, t, 1)?;
        let step = lstm_cell(tape, lstm, x_t, h, c)?;
        h = step.h;
        c = step.c;
    }
    Ok(h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvKernel {
    /// `[out_channels x window x in_channels]`
    pub filters: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
}

impl ConvKernel {
    pub fn random<R: Rng + ?Sized>(channels: usize, window: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((window * channels) as f64).sqrt();
        Self {
            filters: uniform(&[channels, window, channels], bound, rng),
            bias: uniform(&[channels], bound, rng),
        }
    }
}

/// Zero-padded 1-D convolution keeping the sequence length. Output row `t`
/// is `bias + Σ_s Σ_c filters[o, s, c] · x[t + s − (window−1)/2, c]`.
pub fn conv1d_same(tape: &mut Tape, filters: Var, bias: Var, sequence: Var) -> Result<Var> {
    let fs = tape.shape(filters).to_vec();
    let xs = tape.shape(sequence).to_vec();
    if fs.len() != 3 || xs.len() != 2 || fs[2] != xs[1] || tape.shape(bias) != [fs[0]] {
        return Err(Error::Shape {
            op: "conv1d_same",
            lhs: fs,
            rhs: xs,
        });
    }
    let (out_ch, window, in_ch) = (fs[0], fs[1], fs[2]);
    if window % 2 == 0 {
        return Err(Error::Config(format!("convolution window must be odd, got {window}")));
    }
    let n = xs[0];
    let pad = (window - 1) / 2;
    let padded = if pad > 0 {
        let zeros = tape.constant(Tensor::zeros(&[pad, in_ch]));
        tape.concat(&[zeros, sequence, zeros], 0)?
    } else {
        sequence
    };
    // im2col: row t holds the window around t, offset-major.
    let shifted = (0..window)
        .map(|s| tape.slice(padded, 0, s, n))
        .collect::<Result<Vec<_>>>()?;
    let cols = tape.concat(&shifted, 1)?;
    let flat = tape.reshape(filters, &[out_ch, window * in_ch])?;
    let kernel = tape.transpose(flat)?;
    let out = tape.matmul(cols, kernel)?;
    tape.add(out, bias)
}

/// Optional learned projections for queries, keys and values, each `[d x d]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionProjections {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

/// `softmax(Q Kᵀ / √d_k)` with `Q = K = V = c` unless projections are given.
/// Returns `(output, weights)`.
pub fn self_attention_weighted(
    tape: &mut Tape,
    c: Var,
    d_k: usize,
    projections: Option<&AttentionProjections>,
) -> Result<(Var, Var)> {
    let shape = tape.shape(c).to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Contract(format!("self-attention needs a nonempty [n x d] input, got {shape:?}")));
    }
    if d_k == 0 {
        return Err(Error::Config("attention d_k must be positive".into()));
    }
    let (q, k, v) = match projections {
        Some(p) => (tape.matmul(c, p.query)?, tape.matmul(c, p.key)?, tape.matmul(c, p.value)?),
        None => (c, c, c),
    };
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    let weights = tape.softmax(scaled, 1)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

pub fn self_attention(tape: &mut Tape, c: Var, d_k: usize) -> Result<Var> {
    Ok(self_attention_weighted(tape, c, d_k, None)?.0)
}

/// Column sums of `[n x d]`, as `[1 x d]`.
pub fn attention_pool(tape: &mut Tape, attended: Var) -> Result<Var> {
    let shape = tape.shape(attended).to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Contract(format!("pooling needs a nonempty [n x d] input, got {shape:?}")));
    }
    let summed = tape.reduce_sum(attended, 0)?;
    tape.reshape(summed, &[1, shape[1]])
}
