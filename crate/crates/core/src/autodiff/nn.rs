//! Layer-level compositions of tape primitives.

use super::tape::{Tape, Var};
use crate::error::Result;

/// `x · weights + bias` for an `n × in` input, `in × out` weights and `[out]` bias.
pub fn affine(tape: &mut Tape, x: Var, weights: Var, bias: Var) -> Result<Var> {
    let xw = tape.matmul(x, weights)?;
    tape.add_row(xw, bias)
}

/// Single-head scaled dot-product self-attention over the rows of `x`
/// (`tokens × dim`), returning `tokens × head_dim`.
pub fn self_attention(tape: &mut Tape, x: Var, wq: Var, wk: Var, wv: Var) -> Result<Var> {
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    attend(tape, q, k, v)
}

/// Attention given already projected queries, keys and values.
pub fn attend(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let head_dim = tape.value(q).shape()[1] as f64;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / libm::sqrt(head_dim))?;
    let weights = tape.softmax(scaled, 1)?;
    tape.matmul(weights, v)
}
