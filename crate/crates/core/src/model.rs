//! Training data view and the full parameter set.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::bias::{BiasTable, Codebooks};
use crate::corpus::{Corpus, Vocab};
use crate::encoders::{EncoderParams, EncoderVars, FusionHead, HeadVars};
use crate::error::Result;
use crate::losses::{Batch, DecoderParams, DecoderVars, PairRef};

/// Corpus plus everything derived from it that training needs.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Corpus,
    pub vocab: Vocab,
    pub scores: BiasTable,
    token_ids: Vec<Vec<Vec<usize>>>,
}

impl Dataset {
    pub fn new(corpus: Corpus) -> Result<Self> {
        let vocab = Vocab::from_corpus(&corpus);
        let scores = BiasTable::compute(&corpus)?;
        let token_ids = corpus
            .videos()
            .iter()
            .map(|v| v.captions.iter().map(|c| vocab.encode(&c.tokens)).collect())
            .collect();
        Ok(Self { corpus, vocab, scores, token_ids })
    }

    pub fn token_ids(&self, video: usize, caption: usize) -> &[usize] {
        &self.token_ids[video][caption]
    }

    /// A batch over the given pairs, bucket metadata filled from the score table.
    pub fn batch(&self, pairs: Vec<PairRef>) -> Result<Batch> {
        let video_buckets = pairs.iter().map(|p| self.scores.get(p.video, p.caption).video_bucket).collect();
        let sentence_buckets = pairs.iter().map(|p| self.scores.get(p.video, p.caption).sentence_bucket).collect();
        Batch::from_buckets(pairs, video_buckets, sentence_buckets)
    }
}

/// Layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub attn_dim: usize,
    pub mlp_dim: usize,
    pub codebook_dim: usize,
    pub max_caption_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoders: EncoderParams,
    pub head: FusionHead,
    pub decoder: DecoderParams,
    pub codebooks: Codebooks,
}

/// Tape leaves for every dense parameter, in [`Model::dense`] order.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub encoders: EncoderVars,
    pub head: HeadVars,
    pub decoder: DecoderVars,
}

pub(crate) const DENSE_COUNT: usize = 16;

impl ModelVars {
    pub fn from_slice(vars: &[Var]) -> Self {
        Self {
            encoders: EncoderVars::from_slice(&vars[0..6]),
            head: HeadVars::from_slice(&vars[6..13]),
            decoder: DecoderVars::from_slice(&vars[13..16]),
        }
    }
}

impl Model {
    pub fn init(dims: &ModelDims, num_videos: usize, vocab: usize, synthetic: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoders = EncoderParams::init(&mut rng, dims.feature_dim, num_videos, vocab, synthetic);
        let head = FusionHead::init(&mut rng, dims.feature_dim, dims.attn_dim, dims.mlp_dim);
        let decoder = DecoderParams::init(&mut rng, dims.feature_dim, vocab, dims.max_caption_len);
        let codebooks = Codebooks::new(dims.codebook_dim, seed);
        Self { encoders, head, decoder, codebooks }
    }

    /// Dense parameters in a fixed order.
    pub fn dense(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(DENSE_COUNT);
        out.extend(self.encoders.tensors());
        out.extend(self.head.tensors());
        out.extend(self.decoder.tensors());
        out
    }

    pub fn dense_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(DENSE_COUNT);
        out.extend(self.encoders.tensors_mut());
        out.extend(self.head.tensors_mut());
        out.extend(self.decoder.tensors_mut());
        out
    }

    /// Registers every dense parameter as a leaf; returns the leaves in order.
    pub fn register(&self, tape: &mut Tape) -> (ModelVars, Vec<Var>) {
        let leaves: Vec<Var> = self.dense().into_iter().map(|t| tape.leaf(t.clone())).collect();
        (ModelVars::from_slice(&leaves), leaves)
    }

    pub fn num_parameters(&self) -> usize {
        self.dense().iter().map(|t| t.len()).sum()
    }
}
