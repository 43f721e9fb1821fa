//! Building blocks recorded on a [`Tape`].
//!
//! Weights are stored `in x out` and applied as `x * W + b`, with `x` holding
//! one example per row.

use crate::autodiff::params::{Bound, ParamStore};
use crate::autodiff::tape::{Tape, Var};
use crate::error::Result;

/// Adds `{prefix}.w` (`d_in x d_out`) and `{prefix}.b` (`1 x d_out`).
pub fn init_linear(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, seed: u64) -> Result<()> {
    store.init_glorot(&format!("{prefix}.w"), &[d_in, d_out], seed)?;
    store.init_glorot(&format!("{prefix}.b"), &[1, d_out], seed)
}

pub fn linear(tape: &mut Tape, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = bound.get(&format!("{prefix}.w"))?;
    let b = bound.get(&format!("{prefix}.b"))?;
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}

/// Linear layers `{prefix}.0`, `{prefix}.1`, ... with ReLU between them and
/// nothing after the last.
pub fn mlp(tape: &mut Tape, bound: &Bound, prefix: &str, layers: usize, x: Var) -> Result<Var> {
    let mut h = x;
    for l in 0..layers {
        h = linear(tape, bound, &format!("{prefix}.{l}"), h)?;
        if l + 1 < layers {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

pub fn init_mlp(store: &mut ParamStore, prefix: &str, dims: &[usize], seed: u64) -> Result<()> {
    for (l, pair) in dims.windows(2).enumerate() {
        init_linear(store, &format!("{prefix}.{l}"), pair[0], pair[1], seed)?;
    }
    Ok(())
}

/// GRU weights, gates packed in `z, r, h` order:
/// `{prefix}.w` (`in x 3H`), `{prefix}.b` (`1 x 3H`),
/// `{prefix}.u_zr` (`H x 2H`) and `{prefix}.u_h` (`H x H`).
pub fn init_gru(store: &mut ParamStore, prefix: &str, d_in: usize, hidden: usize, seed: u64) -> Result<()> {
    store.init_glorot(&format!("{prefix}.w"), &[d_in, 3 * hidden], seed)?;
    store.init_glorot(&format!("{prefix}.b"), &[1, 3 * hidden], seed)?;
    store.init_glorot(&format!("{prefix}.u_zr"), &[hidden, 2 * hidden], seed)?;
    store.init_glorot(&format!("{prefix}.u_h"), &[hidden, hidden], seed)
}

#[derive(Debug, Clone, Copy)]
pub struct Gru {
    pub w: Var,
    pub b: Var,
    pub u_zr: Var,
    pub u_h: Var,
    pub hidden: usize,
}

impl Gru {
    pub fn bind(tape: &Tape, bound: &Bound, prefix: &str) -> Result<Gru> {
        let u_h = bound.get(&format!("{prefix}.u_h"))?;
        Ok(Gru {
            w: bound.get(&format!("{prefix}.w"))?,
            b: bound.get(&format!("{prefix}.b"))?,
            u_zr: bound.get(&format!("{prefix}.u_zr"))?,
            u_h,
            hidden: tape.value(u_h).cols(),
        })
    }

    /// Input projection `x * W + b` for every gate at once.
    pub fn project(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.w)?;
        tape.add(xw, self.b)
    }

    /// One step from an already projected input. `xp` may be a single row
    /// shared by every row of `h`, or `h` a single row shared by every row of `xp`.
    ///
    /// z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
    /// h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h), h' = (1 − z) ⊙ h + z ⊙ h̃
    pub fn step_projected(&self, tape: &mut Tape, xp: Var, h: Var) -> Result<Var> {
        tape.gru_step(xp, h, self.u_zr, self.u_h)
    }

    /// [`Gru::step_projected`] built from primitive tape ops.
    pub fn step_projected_unfused(&self, tape: &mut Tape, xp: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        let x_zr = tape.slice_cols(xp, 0..2 * hd)?;
        let x_h = tape.slice_cols(xp, 2 * hd..3 * hd)?;
        let h_zr = tape.matmul(h, self.u_zr)?;
        let pre = tape.add(x_zr, h_zr)?;
        let zr = tape.sigmoid(pre);
        let z = tape.slice_cols(zr, 0..hd)?;
        let r = tape.slice_cols(zr, hd..2 * hd)?;
        let rh = tape.mul(r, h)?;
        let rh_u = tape.matmul(rh, self.u_h)?;
        let pre_h = tape.add(x_h, rh_u)?;
        let cand = tape.tanh(pre_h);
        let delta = tape.sub(cand, h)?;
        let step = tape.mul(z, delta)?;
        tape.add(h, step)
    }

    pub fn cell(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let xp = self.project(tape, x)?;
        self.step_projected(tape, xp, h)
    }
}
