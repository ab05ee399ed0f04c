//! Parameter containers and the differentiable layers shared by the encoder,
//! the policy heads and the GRU.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tape::{Tape, VRange};

/// A dense tensor of learnable scalars; vectors use rows = 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Param {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Self {
        Param {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn randn<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            })
            .collect();
        Param { rows, cols, data }
    }

    /// Weight matrix scaled by 1/sqrt(fan_in).
    pub fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Param::randn(rows, cols, 1.0 / (cols as f64).sqrt(), rng)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn register(&self, t: &mut Tape) -> TParam {
        TParam {
            rows: self.rows,
            cols: self.cols,
            range: t.leaves(&self.data),
        }
    }
}

/// On-tape mirror of a [`Param`]; rows are contiguous.
#[derive(Debug, Clone, Copy)]
pub struct TParam {
    pub rows: usize,
    pub cols: usize,
    pub range: VRange,
}

impl TParam {
    pub fn row(&self, i: usize) -> VRange {
        self.range.slice(i * self.cols, (i + 1) * self.cols)
    }
}

/// w·x for a rows×cols weight and a cols vector; output is contiguous.
pub fn matvec(t: &mut Tape, w: &TParam, x: VRange) -> VRange {
    assert_eq!(w.cols as u32, x.len, "matvec width mismatch");
    let start = t.len() as u32;
    for i in 0..w.rows {
        let row = w.row(i);
        t.dot(row, x);
    }
    VRange {
        start,
        len: w.rows as u32,
    }
}

/// w·x + b.
pub fn affine(t: &mut Tape, w: &TParam, b: &TParam, x: VRange) -> VRange {
    let wx = matvec(t, w, x);
    t.add_range(wx, b.range)
}

/// Two-layer feedforward network, tanh after each layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ffn {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
}

impl Ffn {
    pub fn new<R: Rng>(d_in: usize, d_hidden: usize, d_out: usize, rng: &mut R) -> Self {
        Ffn {
            w1: Param::xavier(d_hidden, d_in, rng),
            b1: Param::zeros(1, d_hidden),
            w2: Param::xavier(d_out, d_hidden, rng),
            b2: Param::zeros(1, d_out),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn register(&self, t: &mut Tape) -> TFfn {
        TFfn {
            w1: self.w1.register(t),
            b1: self.b1.register(t),
            w2: self.w2.register(t),
            b2: self.b2.register(t),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TFfn {
    pub w1: TParam,
    pub b1: TParam,
    pub w2: TParam,
    pub b2: TParam,
}

/// tanh(W2 · tanh(W1·x + b1) + b2)
pub fn ffn(t: &mut Tape, f: &TFfn, x: VRange) -> VRange {
    let h = affine(t, &f.w1, &f.b1, x);
    let h = t.tanh_range(h);
    let o = affine(t, &f.w2, &f.b2, h);
    t.tanh_range(o)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Param,
    pub bias: Param,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gain: Param::full(1, d, 1.0),
            bias: Param::zeros(1, d),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gain, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gain, &mut self.bias]
    }

    pub fn register(&self, t: &mut Tape) -> TLayerNorm {
        TLayerNorm {
            gain: self.gain.register(t),
            bias: self.bias.register(t),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TLayerNorm {
    pub gain: TParam,
    pub bias: TParam,
}

pub fn layer_norm(t: &mut Tape, p: &TLayerNorm, x: VRange) -> VRange {
    let d = x.len as f64;
    let total = t.sum(x);
    let inv_d = t.leaf(1.0 / d);
    let mean = t.mul(total, inv_d);
    let start = t.len() as u32;
    for v in x.iter() {
        t.sub(v, mean);
    }
    let centered = VRange { start, len: x.len };
    let sq = t.mul_range(centered, centered);
    let sq_sum = t.sum(sq);
    let var = t.mul(sq_sum, inv_d);
    let eps = t.leaf(LN_EPS);
    let var_eps = t.add(var, eps);
    let std = t.sqrt(var_eps);
    let one = t.leaf(1.0);
    let inv_std = t.div(one, std);
    let normed = t.scale_range(centered, inv_std);
    let scaled = t.mul_range(normed, p.gain.range);
    t.add_range(scaled, p.bias.range)
}

/// Gated recurrent unit weights: update gate z, reset gate r, candidate h̃.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gru {
    pub wz: Param,
    pub uz: Param,
    pub bz: Param,
    pub wr: Param,
    pub ur: Param,
    pub br: Param,
    pub wh: Param,
    pub uh: Param,
    pub bh: Param,
}

impl Gru {
    pub fn new<R: Rng>(d_in: usize, d_hidden: usize, rng: &mut R) -> Self {
        Gru {
            wz: Param::xavier(d_hidden, d_in, rng),
            uz: Param::xavier(d_hidden, d_hidden, rng),
            bz: Param::zeros(1, d_hidden),
            wr: Param::xavier(d_hidden, d_in, rng),
            ur: Param::xavier(d_hidden, d_hidden, rng),
            br: Param::zeros(1, d_hidden),
            wh: Param::xavier(d_hidden, d_in, rng),
            uh: Param::xavier(d_hidden, d_hidden, rng),
            bh: Param::zeros(1, d_hidden),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![
            &self.wz, &self.uz, &self.bz, &self.wr, &self.ur, &self.br, &self.wh, &self.uh,
            &self.bh,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.wz,
            &mut self.uz,
            &mut self.bz,
            &mut self.wr,
            &mut self.ur,
            &mut self.br,
            &mut self.wh,
            &mut self.uh,
            &mut self.bh,
        ]
    }

    pub fn register(&self, t: &mut Tape) -> TGru {
        TGru {
            wz: self.wz.register(t),
            uz: self.uz.register(t),
            bz: self.bz.register(t),
            wr: self.wr.register(t),
            ur: self.ur.register(t),
            br: self.br.register(t),
            wh: self.wh.register(t),
            uh: self.uh.register(t),
            bh: self.bh.register(t),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TGru {
    pub wz: TParam,
    pub uz: TParam,
    pub bz: TParam,
    pub wr: TParam,
    pub ur: TParam,
    pub br: TParam,
    pub wh: TParam,
    pub uh: TParam,
    pub bh: TParam,
}

/// z = σ(Wz·in + Uz·h + bz), r = σ(Wr·in + Ur·h + br),
/// h̃ = tanh(Wh·in + Uh·(r⊙h) + bh), h′ = (1−z)⊙h + z⊙h̃.
pub fn gru_step(t: &mut Tape, g: &TGru, input: VRange, hidden: VRange) -> VRange {
    let gate = |t: &mut Tape, w: &TParam, u: &TParam, b: &TParam, x: VRange, h: VRange| {
        let wx = matvec(t, w, x);
        let uh = matvec(t, u, h);
        let pre = t.add_range(wx, uh);
        t.add_range(pre, b.range)
    };
    let z_pre = gate(t, &g.wz, &g.uz, &g.bz, input, hidden);
    let z = t.map_range(z_pre, Tape::sigmoid);
    let r_pre = gate(t, &g.wr, &g.ur, &g.br, input, hidden);
    let r = t.map_range(r_pre, Tape::sigmoid);
    let rh = t.mul_range(r, hidden);
    let c_pre = gate(t, &g.wh, &g.uh, &g.bh, input, rh);
    let cand = t.tanh_range(c_pre);
    let zh = t.mul_range(z, hidden);
    let zc = t.mul_range(z, cand);
    let keep = t.sub_range(hidden, zh);
    t.add_range(keep, zc)
}

/// Numerically stable softmax over a contiguous logit range.
/// Returns (probabilities, log probabilities), each contiguous.
pub fn log_softmax(t: &mut Tape, logits: VRange) -> (VRange, VRange) {
    assert!(logits.len > 0, "softmax over empty range");
    let max = logits
        .iter()
        .map(|v| t.value(v))
        .fold(f64::NEG_INFINITY, f64::max);
    let max_leaf = t.leaf(max);
    let start = t.len() as u32;
    for v in logits.iter() {
        t.sub(v, max_leaf);
    }
    let shifted = VRange {
        start,
        len: logits.len,
    };
    let exps = t.map_range(shifted, Tape::exp);
    let denom = t.sum(exps);
    let log_denom = t.ln(denom);
    let lp_start = t.len() as u32;
    for v in shifted.iter() {
        t.sub(v, log_denom);
    }
    let logps = VRange {
        start: lp_start,
        len: logits.len,
    };
    let probs = t.map_range(logps, Tape::exp);
    (probs, logps)
}
