//! Dense and LSTM building blocks over a [`ParamStore`].

use rand::Rng;

use super::params::{uniform_init, Bound, ParamStore};
use crate::autodiff::{Graph, Var};
use crate::error::TensorError;
use crate::tensor::Tensor;

type Res<T> = Result<T, TensorError>;

pub(crate) fn add_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) {
    store.insert(format!("{prefix}.w"), uniform_init(rng, &[fan_in, fan_out], fan_in));
    store.insert(format!("{prefix}.b"), uniform_init(rng, &[fan_out], fan_in));
}

/// Gate layout along the last axis: input, forget, candidate, output.
pub(crate) fn add_lstm<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    prefix: &str,
    input: usize,
    hidden: usize,
) {
    store.insert(
        format!("{prefix}.w_ih"),
        uniform_init(rng, &[input, 4 * hidden], hidden),
    );
    store.insert(
        format!("{prefix}.w_hh"),
        uniform_init(rng, &[hidden, 4 * hidden], hidden),
    );
    let mut b = uniform_init(rng, &[4 * hidden], hidden);
    b.data_mut()[hidden..2 * hidden].fill(1.0);
    store.insert(format!("{prefix}.b"), b);
}

/// Applies the linear layer `prefix` to `x: [n, in]`.
pub(crate) fn linear(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Res<Var> {
    let w = p.var(&format!("{prefix}.w"));
    let b = p.var(&format!("{prefix}.b"));
    g.linear(x, w, b)
}

/// Applies a linear layer to every step of `x: [batch, time, in]`.
pub(crate) fn linear_seq(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Res<Var> {
    let s = g.shape(x).to_vec();
    let flat = g.reshape(x, &[s[0] * s[1], s[2]])?;
    let y = linear(g, p, prefix, flat)?;
    let out = g.shape(y)[1];
    g.reshape(y, &[s[0], s[1], out])
}

#[derive(Clone, Copy)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b: Var,
}

impl LstmWeights {
    pub(crate) fn bind(p: &Bound, prefix: &str) -> Self {
        Self {
            w_ih: p.var(&format!("{prefix}.w_ih")),
            w_hh: p.var(&format!("{prefix}.w_hh")),
            b: p.var(&format!("{prefix}.b")),
        }
    }

    pub fn hidden(&self, g: &Graph) -> usize {
        g.shape(self.w_hh)[0]
    }
}

/// One LSTM step:
/// `i, f, o = sigmoid(.)`, `c~ = tanh(.)`, `c = f*c_prev + i*c~`, `h = o*tanh(c)`,
/// with pre-activations `x W_ih + h_prev W_hh + b`.
pub fn lstm_cell(
    g: &mut Graph,
    w: &LstmWeights,
    x: Var,
    h: Var,
    c: Var,
) -> Res<(Var, Var)> {
    let xw = g.linear(x, w.w_ih, w.b)?;
    lstm_gates(g, w, xw, Some(h), c)
}

/// Gate arithmetic given the already-projected input `xw = x W_ih + b`.
/// `h = None` stands for a zero previous hidden state.
fn lstm_gates(
    g: &mut Graph,
    w: &LstmWeights,
    xw: Var,
    h: Option<Var>,
    c: Var,
) -> Res<(Var, Var)> {
    let hidden = w.hidden(g);
    let z = match h {
        Some(h) => {
            let hw = g.matmul(h, w.w_hh)?;
            g.add(xw, hw)?
        }
        None => xw,
    };
    let zi = g.slice(z, 1, 0..hidden)?;
    let zf = g.slice(z, 1, hidden..2 * hidden)?;
    let zc = g.slice(z, 1, 2 * hidden..3 * hidden)?;
    let zo = g.slice(z, 1, 3 * hidden..4 * hidden)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zc);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_new = g.add(keep, write)?;
    let tc = g.tanh(c_new);
    let h_new = g.mul(o, tc)?;
    Ok((h_new, c_new))
}

/// Runs an LSTM from a zero state over `x: [batch, time, in]`, returning all
/// hidden states `[batch, time, hidden]`.
pub fn lstm_sequence(g: &mut Graph, w: &LstmWeights, x: Var) -> Res<Var> {
    let s = g.shape(x).to_vec();
    let (batch, steps, input) = (s[0], s[1], s[2]);
    let hidden = w.hidden(g);
    // Input projections for every step at once; identical to per-step
    // `x_t W_ih + b`.
    let flat = g.reshape(x, &[batch * steps, input])?;
    let proj = g.linear(flat, w.w_ih, w.b)?;
    let proj = g.reshape(proj, &[batch, steps, 4 * hidden])?;

    let mut c = g.constant(Tensor::zeros(&[batch, hidden]));
    let mut h: Option<Var> = None;
    let mut outs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xw = g.slice(proj, 1, t..t + 1)?;
        let xw = g.reshape(xw, &[batch, 4 * hidden])?;
        let (hn, cn) = lstm_gates(g, w, xw, h, c)?;
        outs.push(g.reshape(hn, &[batch, 1, hidden])?);
        h = Some(hn);
        c = cn;
    }
    g.concat(&outs, 1)
}
