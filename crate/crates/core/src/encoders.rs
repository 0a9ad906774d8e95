//! Toy video/text encoders and the fusion head scoring every (video, text) pair.
//!
//! The synthetic backbone is a learnable embedding per video and a mean of
//! learnable token embeddings per caption. Imported features replace both
//! with fixed vectors. Either way each side then goes through one
//! affine + tanh projection.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{nn, Tape, Tensor, Var, ACOS_EPS};
use crate::error::{Error, Result};
use crate::losses::Batch;
use crate::model::Dataset;

/// Fixed per-id feature vectors loaded from outside.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImportedFeatures {
    pub video: BTreeMap<String, Vec<f64>>,
    /// Keyed by `(video_id, caption_index)`.
    pub text: BTreeMap<(String, usize), Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum FeatureProvider {
    #[default]
    Synthetic,
    Imported(ImportedFeatures),
}

impl FeatureProvider {
    pub fn is_synthetic(&self) -> bool {
        matches!(self, FeatureProvider::Synthetic)
    }
}

pub(crate) fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    uniform(rng, &[fan_in, fan_out], libm::sqrt(6.0 / (fan_in + fan_out) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `num_videos × d`; empty with imported features.
    pub video_table: Tensor,
    /// `vocab × d`; empty with imported features.
    pub token_table: Tensor,
    pub video_w: Tensor,
    pub video_b: Tensor,
    pub text_w: Tensor,
    pub text_b: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub video_table: Var,
    pub token_table: Var,
    pub video_w: Var,
    pub video_b: Var,
    pub text_w: Var,
    pub text_b: Var,
}

impl EncoderParams {
    pub fn init(rng: &mut impl Rng, dim: usize, num_videos: usize, vocab: usize, synthetic: bool) -> Self {
        let (videos, tokens) = if synthetic { (num_videos, vocab) } else { (0, 0) };
        Self {
            video_table: uniform(rng, &[videos, dim], 1.0),
            token_table: uniform(rng, &[tokens, dim], 1.0),
            video_w: xavier(rng, dim, dim),
            video_b: Tensor::zeros(&[dim]),
            text_w: xavier(rng, dim, dim),
            text_b: Tensor::zeros(&[dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.video_w.shape()[1]
    }

    pub(crate) fn tensors(&self) -> [&Tensor; 6] {
        [&self.video_table, &self.token_table, &self.video_w, &self.video_b, &self.text_w, &self.text_b]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.video_table,
            &mut self.token_table,
            &mut self.video_w,
            &mut self.video_b,
            &mut self.text_w,
            &mut self.text_b,
        ]
    }
}

impl EncoderVars {
    pub(crate) fn from_slice(v: &[Var]) -> Self {
        Self { video_table: v[0], token_table: v[1], video_w: v[2], video_b: v[3], text_w: v[4], text_b: v[5] }
    }
}

/// Encodes both sides of a batch; row `i` of each matrix is positive pair `i`.
pub fn encode_batch(
    tape: &mut Tape,
    batch: &Batch,
    dataset: &Dataset,
    provider: &FeatureProvider,
    vars: &EncoderVars,
) -> Result<(Var, Var)> {
    let dim = tape.value(vars.video_w).shape()[0];
    let b = batch.len();
    let (raw_video, raw_text) = match provider {
        FeatureProvider::Synthetic => {
            let rows: Vec<usize> = batch.pairs.iter().map(|p| p.video).collect();
            let videos = tape.rows(vars.video_table, &rows)?;
            let mut texts = Vec::with_capacity(b);
            for p in &batch.pairs {
                let ids = dataset.token_ids(p.video, p.caption);
                let row = if ids.is_empty() {
                    tape.leaf(Tensor::zeros(&[1, dim]))
                } else {
                    let embedded = tape.rows(vars.token_table, ids)?;
                    tape.mean_axis(embedded, 0)?
                };
                texts.push(row);
            }
            (videos, tape.concat(&texts, 0)?)
        }
        FeatureProvider::Imported(features) => {
            let mut vdata = Vec::with_capacity(b * dim);
            let mut tdata = Vec::with_capacity(b * dim);
            for p in &batch.pairs {
                let video_id = &dataset.corpus.videos()[p.video].video_id;
                let v = features.video.get(video_id).ok_or_else(|| Error::UnknownFeature(video_id.clone()))?;
                let t = features
                    .text
                    .get(&(video_id.clone(), p.caption))
                    .ok_or_else(|| Error::UnknownFeature(format!("{}/text_{}", video_id, p.caption)))?;
                for vec in [v, t] {
                    if vec.len() != dim {
                        return Err(Error::ShapeMismatch {
                            op: "encode_batch",
                            detail: format!("feature for `{}` has {} values, expected {}", video_id, vec.len(), dim),
                        });
                    }
                }
                vdata.extend_from_slice(v);
                tdata.extend_from_slice(t);
            }
            (tape.leaf(Tensor::matrix(b, dim, vdata)?), tape.leaf(Tensor::matrix(b, dim, tdata)?))
        }
    };
    let v = nn::affine(tape, raw_video, vars.video_w, vars.video_b)?;
    let v = tape.tanh(v)?;
    let t = nn::affine(tape, raw_text, vars.text_w, vars.text_b)?;
    let t = tape.tanh(t)?;
    Ok((v, t))
}

/// Self-attention over the token pair `[video, text]`, mean-pooled, then a
/// two-layer MLP (affine + tanh, affine) down to one scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionHead {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl FusionHead {
    pub fn init(rng: &mut impl Rng, dim: usize, attn_dim: usize, mlp_dim: usize) -> Self {
        Self {
            wq: xavier(rng, dim, attn_dim),
            wk: xavier(rng, dim, attn_dim),
            wv: xavier(rng, dim, attn_dim),
            w1: xavier(rng, attn_dim, mlp_dim),
            b1: Tensor::zeros(&[mlp_dim]),
            w2: xavier(rng, mlp_dim, 1),
            b2: Tensor::zeros(&[1]),
        }
    }

    pub(crate) fn tensors(&self) -> [&Tensor; 7] {
        [&self.wq, &self.wk, &self.wv, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor; 7] {
        [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

impl HeadVars {
    pub(crate) fn from_slice(v: &[Var]) -> Self {
        Self { wq: v[0], wk: v[1], wv: v[2], w1: v[3], b1: v[4], w2: v[5], b2: v[6] }
    }
}

fn head_tail(tape: &mut Tape, attended: Var, head: &HeadVars) -> Result<Var> {
    let pooled = tape.mean_axis(attended, 0)?;
    let hidden = nn::affine(tape, pooled, head.w1, head.b1)?;
    let hidden = tape.tanh(hidden)?;
    nn::affine(tape, hidden, head.w2, head.b2)
}

/// Fused score of one video row (`1 × d`) and one text row (`1 × d`), as a `1 × 1` node.
pub fn fusion_pair(tape: &mut Tape, video: Var, text: Var, head: &HeadVars) -> Result<Var> {
    let tokens = tape.concat(&[video, text], 0)?;
    let attended = nn::self_attention(tape, tokens, head.wq, head.wk, head.wv)?;
    head_tail(tape, attended, head)
}

/// `B × B` fused scores; entry `(i, j)` is the head applied to `(video_i, text_j)`.
///
/// Query/key/value projections are computed once per row and shared by every
/// pair, which is exact because the projections act row-wise.
pub fn fusion_matrix(tape: &mut Tape, videos: Var, texts: Var, head: &HeadVars) -> Result<Var> {
    let (bv, dv) = tape.value(videos).dims2().ok_or_else(|| dims_error(tape, videos, texts))?;
    let (bt, dt) = tape.value(texts).dims2().ok_or_else(|| dims_error(tape, videos, texts))?;
    if dv != dt || bv != bt || bv == 0 {
        return Err(dims_error(tape, videos, texts));
    }
    let b = bv;
    let proj = |tape: &mut Tape, x: Var| -> Result<[Var; 3]> {
        Ok([tape.matmul(x, head.wq)?, tape.matmul(x, head.wk)?, tape.matmul(x, head.wv)?])
    };
    let pv = proj(tape, videos)?;
    let pt = proj(tape, texts)?;
    let mut scores = Vec::with_capacity(b * b);
    for i in 0..b {
        let vi: Vec<Var> = pv.iter().map(|&m| tape.rows(m, &[i])).collect::<Result<_>>()?;
        for j in 0..b {
            let mut qkv = [vi[0]; 3];
            for k in 0..3 {
                let tj = tape.rows(pt[k], &[j])?;
                qkv[k] = tape.concat(&[vi[k], tj], 0)?;
            }
            let attended = nn::attend(tape, qkv[0], qkv[1], qkv[2])?;
            scores.push(head_tail(tape, attended, head)?);
        }
    }
    let flat = tape.concat(&scores, 0)?;
    tape.reshape(flat, &[b, b])
}

fn dims_error(tape: &Tape, a: Var, b: Var) -> Error {
    Error::ShapeMismatch {
        op: "fusion_matrix",
        detail: format!("{:?} vs {:?}", tape.value(a).shape(), tape.value(b).shape()),
    }
}

/// Pairwise encoder cosines and their clamped angles `θ̂`.
pub fn dual_cosines(tape: &mut Tape, videos: Var, texts: Var) -> Result<(Var, Var)> {
    let cos = tape.cosine_matrix(videos, texts)?;
    let theta = tape.acos_clamped(cos, ACOS_EPS)?;
    Ok((cos, theta))
}
