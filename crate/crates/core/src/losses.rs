//! Contrastive loss stack: fusion contrastive loss, margin contrastive loss,
//! the captioning stand-in and their unweighted total.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{nn, Tape, Tensor, Var};
use crate::bias::BiasScore;
use crate::encoders::uniform;
use crate::error::{Error, Result};
use crate::model::Dataset;

/// Paper-default temperatures.
pub const TAU_B: f64 = 0.2;
pub const TAU_BFCL: f64 = 1.0;
pub const TAU_MCL: f64 = 0.07;

/// One positive `(video, caption)` pair, as corpus indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairRef {
    pub video: usize,
    pub caption: usize,
}

/// `B` aligned positive pairs with their bucket metadata. The negatives of
/// row `i` are the other rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub pairs: Vec<PairRef>,
    pub video_buckets: Vec<i64>,
    pub sentence_buckets: Vec<i64>,
}

impl Batch {
    pub fn from_buckets(pairs: Vec<PairRef>, video_buckets: Vec<i64>, sentence_buckets: Vec<i64>) -> Result<Self> {
        if video_buckets.len() != pairs.len() || sentence_buckets.len() != pairs.len() {
            return Err(Error::ShapeMismatch {
                op: "batch",
                detail: alloc::format!(
                    "{} pairs, {} video buckets, {} sentence buckets",
                    pairs.len(),
                    video_buckets.len(),
                    sentence_buckets.len()
                ),
            });
        }
        let distinct: BTreeSet<&PairRef> = pairs.iter().collect();
        if distinct.len() != pairs.len() {
            return Err(Error::InvalidConfig(alloc::string::String::from("duplicate pair in batch")));
        }
        Ok(Self { pairs, video_buckets, sentence_buckets })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The same batch with rows reordered so that new row `k` is old row `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            pairs: order.iter().map(|&i| self.pairs[i]).collect(),
            video_buckets: order.iter().map(|&i| self.video_buckets[i]).collect(),
            sentence_buckets: order.iter().map(|&i| self.sentence_buckets[i]).collect(),
        }
    }
}

/// `s_pos/τ − log Σ_k exp(s_k/τ)` over one row of `B` scores, the positive included
/// in the denominator.
pub fn norm_term(tape: &mut Tape, logits_row: Var, positive: usize, tau: f64) -> Result<Var> {
    let b = tape.value(logits_row).len();
    if b < 2 {
        return Err(Error::BatchTooSmall { need: 2, got: b });
    }
    if positive >= b {
        return Err(Error::ShapeMismatch { op: "norm_term", detail: alloc::format!("positive {positive} of {b}") });
    }
    let scaled = tape.scale(logits_row, 1.0 / tau)?;
    let lse = tape.log_sum_exp(scaled)?;
    let pos = tape.gather(scaled, &[positive], &[])?;
    tape.sub(pos, lse)
}

/// Bidirectional fusion contrastive loss on a `B × B` fused matrix: rows score
/// video→text, columns text→video.
pub fn loss_bfcl(tape: &mut Tape, fused: Var, tau: f64) -> Result<Var> {
    let b = match tape.value(fused).dims2() {
        Some((r, c)) if r == c => r,
        _ => {
            return Err(Error::ShapeMismatch {
                op: "loss_bfcl",
                detail: alloc::format!("expected a square matrix, got {:?}", tape.value(fused).shape()),
            })
        }
    };
    if b < 2 {
        return Err(Error::BatchTooSmall { need: 2, got: b });
    }
    let logits = tape.scale(fused, 1.0 / tau)?;
    let diag_idx: Vec<usize> = (0..b).map(|i| i * b + i).collect();
    let diag = tape.gather(logits, &diag_idx, &[b, 1])?;
    let row_lse = tape.log_sum_exp_axis(logits, 1)?;
    let col_lse = tape.log_sum_exp_axis(logits, 0)?;
    let col_lse = tape.reshape(col_lse, &[b, 1])?;
    let rows = tape.sub(diag, row_lse)?;
    let cols = tape.sub(diag, col_lse)?;
    let both = tape.add(rows, cols)?;
    let total = tape.sum(both)?;
    tape.scale(total, -0.5 / b as f64)
}

/// How the bias angle enters the margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginOrientation {
    /// `M = min(ξ̂, π − θ̂)`.
    #[default]
    Literal,
    /// `M = min(π − ξ̂, π − θ̂)`.
    Complement,
}

impl MarginOrientation {
    pub fn bias_angle(self, xi_hat: f64) -> f64 {
        match self {
            MarginOrientation::Literal => xi_hat,
            MarginOrientation::Complement => PI - xi_hat,
        }
    }
}

/// Margin for one pair. The bias angle is a constant here; only `θ̂` carries gradient.
pub fn margin(tape: &mut Tape, bias: &BiasScore, theta: Var, orientation: MarginOrientation) -> Result<Var> {
    let xi = tape.leaf(Tensor::full(tape.value(theta).shape(), orientation.bias_angle(bias.xi_hat)));
    let neg = tape.neg(theta)?;
    let room = tape.offset(neg, PI)?;
    tape.min(xi, room)
}

/// Margin contrastive loss
/// `-Σ_i log[exp(cos(θ̂_ii + M_ii)/τ) / (exp(cos(θ̂_ii + M_ii)/τ) + Σ_{j≠i} exp(cos θ̂_ij / τ))]`.
///
/// Negatives use the unmargined cosines. Returns the loss and the `[B, 1]` margins.
pub fn loss_mcl(
    tape: &mut Tape,
    cos: Var,
    theta: Var,
    bias: &[BiasScore],
    orientation: MarginOrientation,
    tau: f64,
) -> Result<(Var, Var)> {
    let b = bias.len();
    if b < 2 {
        return Err(Error::BatchTooSmall { need: 2, got: b });
    }
    for m in [cos, theta] {
        if tape.value(m).dims2() != Some((b, b)) {
            return Err(Error::ShapeMismatch {
                op: "loss_mcl",
                detail: alloc::format!("expected {b}x{b}, got {:?}", tape.value(m).shape()),
            });
        }
    }
    let diag_idx: Vec<usize> = (0..b).map(|i| i * b + i).collect();
    let theta_pos = tape.gather(theta, &diag_idx, &[b, 1])?;
    let xi: Vec<f64> = bias.iter().map(|s| orientation.bias_angle(s.xi_hat)).collect();
    let xi = tape.leaf(Tensor::new(vec![b, 1], xi)?);
    let neg_theta = tape.neg(theta_pos)?;
    let room = tape.offset(neg_theta, PI)?;
    let margins = tape.min(xi, room)?;

    let shifted = tape.add(theta_pos, margins)?;
    let pos_cos = tape.cos(shifted)?;
    let pos = tape.scale(pos_cos, 1.0 / tau)?;

    let neg_idx: Vec<usize> = (0..b).flat_map(|i| (0..b).filter(move |&j| j != i).map(move |j| i * b + j)).collect();
    let negs = tape.gather(cos, &neg_idx, &[b, b - 1])?;
    let negs = tape.scale(negs, 1.0 / tau)?;
    let logits = tape.concat(&[pos, negs], 1)?;
    let lse = tape.log_sum_exp_axis(logits, 1)?;
    let per_row = tape.sub(lse, pos)?;
    Ok((tape.sum(per_row)?, margins))
}

/// Position-wise caption classifier standing in for the captioning objective:
/// logits for position `p` of caption `i` are `(video_i + pos_p) · W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    /// `max_len × d`.
    pub positions: Tensor,
    /// `d × vocab`.
    pub w_out: Tensor,
    pub b_out: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    pub positions: Var,
    pub w_out: Var,
    pub b_out: Var,
}

impl DecoderParams {
    /// Output layer starts at zero, so the initial prediction is uniform.
    pub fn init(rng: &mut impl Rng, dim: usize, vocab: usize, max_len: usize) -> Self {
        Self {
            positions: uniform(rng, &[max_len, dim], 0.1),
            w_out: Tensor::zeros(&[dim, vocab]),
            b_out: Tensor::zeros(&[vocab]),
        }
    }

    pub fn max_len(&self) -> usize {
        self.positions.shape()[0]
    }

    pub(crate) fn tensors(&self) -> [&Tensor; 3] {
        [&self.positions, &self.w_out, &self.b_out]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.positions, &mut self.w_out, &mut self.b_out]
    }
}

impl DecoderVars {
    pub(crate) fn from_slice(v: &[Var]) -> Self {
        Self { positions: v[0], w_out: v[1], b_out: v[2] }
    }
}

/// Mean token cross-entropy of the stand-in decoder. Captions longer than
/// the position table are truncated; empty captions contribute nothing.
pub fn loss_gen(tape: &mut Tape, batch: &Batch, dataset: &Dataset, videos: Var, vars: &DecoderVars) -> Result<Var> {
    let max_len = tape.value(vars.positions).shape()[0];
    let vocab = tape.value(vars.w_out).shape()[1];
    let mut rows = Vec::new();
    let mut positions = Vec::new();
    let mut gold = Vec::new();
    for (i, p) in batch.pairs.iter().enumerate() {
        let ids = dataset.token_ids(p.video, p.caption);
        if ids.is_empty() {
            log::warn!("empty caption {}#{} contributes nothing to the captioning loss", p.video, p.caption);
        }
        for (pos, &id) in ids.iter().take(max_len).enumerate() {
            rows.push(i);
            positions.push(pos);
            gold.push(id);
        }
    }
    if rows.is_empty() {
        return Ok(tape.leaf_scalar(0.0));
    }
    let n = rows.len();
    let h = tape.rows(videos, &rows)?;
    let p = tape.rows(vars.positions, &positions)?;
    let x = tape.add(h, p)?;
    let logits = nn::affine(tape, x, vars.w_out, vars.b_out)?;
    let lse = tape.log_sum_exp_axis(logits, 1)?;
    let gold_idx: Vec<usize> = gold.iter().enumerate().map(|(k, &g)| k * vocab + g).collect();
    let picked = tape.gather(logits, &gold_idx, &[n, 1])?;
    let ce = tape.sub(lse, picked)?;
    tape.mean(ce)
}

/// Which terms of the total loss take part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveTerms {
    pub b: bool,
    pub bfcl: bool,
    pub mcl: bool,
    pub gen: bool,
}

impl Default for ActiveTerms {
    fn default() -> Self {
        Self { b: true, bfcl: true, mcl: true, gen: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub b: f64,
    pub bfcl: f64,
    pub mcl: f64,
    pub gen: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { b: 1.0, bfcl: 1.0, mcl: 1.0, gen: 1.0 }
    }
}

/// Graph nodes of the individual terms; `None` for terms not built.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossNodes {
    pub b: Option<Var>,
    pub bfcl: Option<Var>,
    pub mcl: Option<Var>,
    pub gen: Option<Var>,
    pub margins: Option<Var>,
}

/// Values of every loss term for one batch. Inactive terms read 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_b: f64,
    pub l_bfcl: f64,
    pub l_mcl: f64,
    pub l_gen: f64,
    pub l_gmc: f64,
    pub margins: Vec<f64>,
    pub active: ActiveTerms,
}

/// Weighted sum of the active terms (unit weights give `L_gen + L_bfcl + L_b + L_mcl`).
pub fn loss_gmc(tape: &mut Tape, nodes: &LossNodes, active: ActiveTerms, weights: LossWeights) -> Result<(Var, LossReport)> {
    let terms = [
        ("l_b", nodes.b, active.b, weights.b),
        ("l_bfcl", nodes.bfcl, active.bfcl, weights.bfcl),
        ("l_mcl", nodes.mcl, active.mcl, weights.mcl),
        ("l_gen", nodes.gen, active.gen, weights.gen),
    ];
    let mut values = [0.0; 4];
    let mut parts = Vec::new();
    for (k, (name, node, on, w)) in terms.into_iter().enumerate() {
        if !on {
            continue;
        }
        let node = node.ok_or(Error::InvalidConfig(alloc::format!("active term {name} was not built")))?;
        let v = tape.scalar(node);
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term: name });
        }
        values[k] = v;
        parts.push(if w == 1.0 { node } else { tape.scale(node, w)? });
    }
    let total = match parts.split_first() {
        None => tape.leaf_scalar(0.0),
        Some((&first, rest)) => {
            let mut acc = first;
            for &p in rest {
                acc = tape.add(acc, p)?;
            }
            acc
        }
    };
    let margins = nodes.margins.map(|m| tape.value(m).data().to_vec()).unwrap_or_default();
    let report = LossReport {
        l_b: values[0],
        l_bfcl: values[1],
        l_mcl: values[2],
        l_gen: values[3],
        l_gmc: tape.scalar(total),
        margins,
        active,
    };
    Ok((total, report))
}

/// Result of the two-pair margin balancing problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginBalance {
    pub theta_a: f64,
    pub theta_b: f64,
    pub margin_a: f64,
    pub margin_b: f64,
    pub iterations: usize,
}

impl MarginBalance {
    pub fn total_a(&self) -> f64 {
        self.theta_a + self.margin_a
    }

    pub fn total_b(&self) -> f64 {
        self.theta_b + self.margin_b
    }
}

/// Maximises `cos(θ_a + M_a) + cos(θ_b + M_b)` subject to `θ_a + θ_b = total`
/// by projected gradient ascent on `θ_a ∈ [0, total]`, with margins from
/// [`margin`] at bias angles `xi_a`, `xi_b`.
pub fn balance_margins(
    xi_a: f64,
    xi_b: f64,
    total: f64,
    orientation: MarginOrientation,
    step: f64,
    max_iter: usize,
) -> Result<MarginBalance> {
    if !(0.0..=PI).contains(&total) {
        return Err(Error::InvalidConfig(alloc::format!("angle budget {total} outside [0, π]")));
    }
    let (bias_a, bias_b) = (BiasScore { y_hat: libm::cos(xi_a), xi_hat: xi_a }, BiasScore { y_hat: libm::cos(xi_b), xi_hat: xi_b });
    let mut theta_a = total / 2.0;
    let mut iterations = 0;
    let mut margins = (0.0, 0.0);
    for it in 0..max_iter {
        iterations = it + 1;
        let mut tape = Tape::new();
        let ta = tape.leaf_scalar(theta_a);
        let neg = tape.neg(ta)?;
        let tb = tape.offset(neg, total)?;
        let ma = margin(&mut tape, &bias_a, ta, orientation)?;
        let mb = margin(&mut tape, &bias_b, tb, orientation)?;
        let sa = tape.add(ta, ma)?;
        let sb = tape.add(tb, mb)?;
        let ca = tape.cos(sa)?;
        let cb = tape.cos(sb)?;
        let objective = tape.add(ca, cb)?;
        tape.backward(objective)?;
        margins = (tape.scalar(ma), tape.scalar(mb));
        let g = tape.grad(ta).map_or(0.0, |g| g.data()[0]);
        let next = (theta_a + step * g).clamp(0.0, total);
        let moved = (next - theta_a).abs();
        theta_a = next;
        if moved < 1e-12 {
            break;
        }
    }
    Ok(MarginBalance { theta_a, theta_b: total - theta_a, margin_a: margins.0, margin_b: margins.1, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn norm_term_uniform_and_saturated() {
        let mut tape = Tape::new();
        let row = tape.leaf(Tensor::vector(vec![0.3; 5]));
        let n = norm_term(&mut tape, row, 2, 1.0).unwrap();
        assert!(approx(tape.scalar(n), libm::log(1.0 / 5.0), 1e-14));
        let row = tape.leaf(Tensor::vector(vec![-50.0, 800.0, -50.0]));
        let n = norm_term(&mut tape, row, 1, 1.0).unwrap();
        assert!(tape.scalar(n) <= 0.0 && tape.scalar(n) > -1e-300);
        let one = tape.leaf(Tensor::vector(vec![1.0]));
        assert_eq!(norm_term(&mut tape, one, 0, 1.0), Err(Error::BatchTooSmall { need: 2, got: 1 }));
    }

    #[test]
    fn bfcl_uniform_matrix_is_ln_b() {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::full(&[4, 4], 0.7));
        let l = loss_bfcl(&mut tape, m, 1.0).unwrap();
        assert!(approx(tape.scalar(l), libm::log(4.0), 1e-14));
    }

    #[test]
    fn bfcl_dominant_diagonal_approaches_zero() {
        let mut tape = Tape::new();
        let mut data = vec![0.0; 9];
        for i in 0..3 {
            data[i * 3 + i] = 40.0;
        }
        let m = tape.leaf(Tensor::matrix(3, 3, data).unwrap());
        let l = loss_bfcl(&mut tape, m, 1.0).unwrap();
        assert!(tape.scalar(l) < 1e-15);
    }

    #[test]
    fn bfcl_rejects_non_square() {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::zeros(&[2, 3]));
        assert!(matches!(loss_bfcl(&mut tape, m, 1.0), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn margin_branches() {
        let mut tape = Tape::new();
        let theta = tape.leaf_scalar(1.1);
        let zero = BiasScore { y_hat: 1.0, xi_hat: 0.0 };
        let m = margin(&mut tape, &zero, theta, MarginOrientation::Literal).unwrap();
        assert_eq!(tape.scalar(m), 0.0);

        let theta = tape.leaf_scalar(PI / 3.0);
        let full = BiasScore { y_hat: -1.0, xi_hat: PI };
        let m = margin(&mut tape, &full, theta, MarginOrientation::Literal).unwrap();
        assert!(approx(tape.scalar(m), 2.0 * PI / 3.0, 1e-15));
        let s = tape.add(theta, m).unwrap();
        let c = tape.cos(s).unwrap();
        assert_eq!(tape.scalar(s), PI);
        assert_eq!(tape.scalar(c), -1.0);

        let m = margin(&mut tape, &full, theta, MarginOrientation::Complement).unwrap();
        assert_eq!(tape.scalar(m), 0.0);
    }

    #[test]
    fn mcl_closed_form_at_clamp() {
        // M = π − θ on the diagonal, all negative cosines −1, B = 2: ln 2 per pair
        let mut tape = Tape::new();
        let cos = tape.leaf(Tensor::matrix(2, 2, vec![0.5, -1.0, -1.0, 0.5]).unwrap());
        let theta = tape.acos_clamped(cos, crate::autodiff::ACOS_EPS).unwrap();
        let bias = [BiasScore { y_hat: -1.0, xi_hat: PI }; 2];
        let (l, margins) = loss_mcl(&mut tape, cos, theta, &bias, MarginOrientation::Literal, TAU_MCL).unwrap();
        assert!(approx(tape.scalar(l), 2.0 * libm::log(2.0), 1e-12));
        let ms = tape.value(margins).data();
        assert!(approx(ms[0], PI - libm::acos(0.5), 1e-15));
    }

    #[test]
    fn gmc_sums_active_terms() {
        let mut tape = Tape::new();
        let vals = [0.5, 1.25, 2.0, 3.5];
        let vars: Vec<Var> = vals.iter().map(|&v| tape.leaf_scalar(v)).collect();
        let nodes = LossNodes { b: Some(vars[0]), bfcl: Some(vars[1]), mcl: Some(vars[2]), gen: Some(vars[3]), margins: None };
        let (total, report) = loss_gmc(&mut tape, &nodes, ActiveTerms::default(), LossWeights::default()).unwrap();
        assert_eq!(tape.scalar(total), 7.25);
        assert_eq!(report.l_gmc, report.l_b + report.l_bfcl + report.l_mcl + report.l_gen);

        let off = ActiveTerms { mcl: false, ..ActiveTerms::default() };
        let (_, report) = loss_gmc(&mut tape, &nodes, off, LossWeights::default()).unwrap();
        assert_eq!(report.l_mcl, 0.0);
        assert_eq!(report.l_gmc, 5.25);

        let none = ActiveTerms { b: false, bfcl: false, mcl: false, gen: false };
        let (_, report) = loss_gmc(&mut tape, &LossNodes::default(), none, LossWeights::default()).unwrap();
        assert_eq!(report.l_gmc, 0.0);
    }

    #[test]
    fn batch_rejects_duplicates() {
        let p = PairRef { video: 0, caption: 1 };
        assert!(Batch::from_buckets(vec![p, p], vec![1, 1], vec![2, 2]).is_err());
        assert!(Batch::from_buckets(vec![p], vec![1, 1], vec![2]).is_err());
    }
}
