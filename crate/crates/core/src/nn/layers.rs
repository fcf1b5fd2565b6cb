//! Layers built on the tape: affine maps, two-layer perceptrons and
//! recurrent cells.

use rand::Rng;

use super::params::{ParamId, ParamSet};
use super::tape::{Tape, Var};

/// Per-forward-pass settings shared by every layer.
pub struct Ctx<'r, R: Rng> {
    pub train: bool,
    pub dropout: f64,
    pub rng: &'r mut R,
}

impl<R: Rng> Ctx<'_, R> {
    /// Inverted dropout; identity outside training.
    pub fn dropout(&mut self, tape: &mut Tape, x: Var) -> Var {
        if !self.train || self.dropout <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.dropout;
        let mask: Vec<f64> = (0..tape.dim(x))
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let m = tape.input(&mask);
        tape.mul(x, m)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform fan-in initialization with zero bias.
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (1.0 / in_dim.max(1) as f64).sqrt();
        let w = ps.add_uniform(format!("{name}.weight"), out_dim, in_dim, bound, rng);
        let b = ps.add_zeros(format!("{name}.bias"), out_dim, 1);
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        tape.affine(self.w, Some(self.b), x)
    }
}

/// Linear, ReLU, dropout, linear. With `linear` set the activation is
/// skipped and the block is an affine map.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
    pub linear: bool,
}

impl Mlp {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        linear: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            hidden: Linear::new(ps, &format!("{name}.0"), in_dim, hidden, rng),
            out: Linear::new(ps, &format!("{name}.1"), hidden, out_dim, rng),
            linear,
        }
    }

    pub fn forward<R: Rng>(&self, tape: &mut Tape, ctx: &mut Ctx<R>, x: Var) -> Var {
        let mut h = self.hidden.forward(tape, x);
        if !self.linear {
            h = tape.relu(h);
        }
        let h = ctx.dropout(tape, h);
        self.out.forward(tape, h)
    }
}

/// One dense layer followed by ReLU and dropout.
#[derive(Debug, Clone, Copy)]
pub struct Dense(pub Linear);

impl Dense {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Dense(Linear::new(ps, name, in_dim, out_dim, rng))
    }

    pub fn forward<R: Rng>(&self, tape: &mut Tape, ctx: &mut Ctx<R>, x: Var) -> Var {
        let h = self.0.forward(tape, x);
        let h = tape.relu(h);
        ctx.dropout(tape, h)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RecurrentState {
    pub h: Var,
    pub c: Var,
}

/// LSTM cell, or an affine recurrence `h' = W [x; h] + b` when `linear`.
#[derive(Debug, Clone, Copy)]
pub struct Recurrent {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
    pub linear: bool,
}

impl Recurrent {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: usize,
        linear: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let gates = if linear { hidden } else { 4 * hidden };
        let bound = (1.0 / hidden as f64).sqrt();
        let wx = ps.add_uniform(format!("{name}.weight_ih"), gates, in_dim, bound, rng);
        let wh = ps.add_uniform(format!("{name}.weight_hh"), gates, hidden, bound, rng);
        let b = ps.add_zeros(format!("{name}.bias"), gates, 1);
        if !linear {
            // Forget-gate bias of one.
            let t = ps.tensor_mut(b);
            for v in &mut t.data[hidden..2 * hidden] {
                *v = 1.0;
            }
        }
        Self {
            wx,
            wh,
            b,
            hidden,
            linear,
        }
    }

    pub fn zero_state(&self, tape: &mut Tape) -> RecurrentState {
        RecurrentState {
            h: tape.zeros(self.hidden),
            c: tape.zeros(self.hidden),
        }
    }

    pub fn step(&self, tape: &mut Tape, x: Var, prev: RecurrentState) -> RecurrentState {
        let ax = tape.affine(self.wx, Some(self.b), x);
        let ah = tape.affine(self.wh, None, prev.h);
        let z = tape.add(ax, ah);
        if self.linear {
            return RecurrentState { h: z, c: prev.c };
        }
        let n = self.hidden;
        let i = tape.slice(z, 0, n);
        let f = tape.slice(z, n, n);
        let g = tape.slice(z, 2 * n, n);
        let o = tape.slice(z, 3 * n, n);
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, prev.c);
        let ig = tape.mul(i, g);
        let c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        RecurrentState { h, c }
    }
}
