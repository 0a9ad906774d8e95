//! Finite-difference checks of each assembled loss on small random models.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, Tape, Tensor, Var, FD_STEP};
use crate::bias::{loss_b, CodebookVars};
use crate::corpus::Corpus;
use crate::encoders::{dual_cosines, encode_batch, fusion_matrix, FeatureProvider};
use crate::error::{Error, Result};
use crate::losses::{loss_bfcl, loss_gen, loss_gmc, loss_mcl, ActiveTerms, Batch, PairRef};
use crate::model::{Dataset, Model, ModelDims, ModelVars, DENSE_COUNT};
use crate::synth::{zipf_corpus, ZipfConfig};
use crate::trainer::{batch_bias_scores, loss_nodes, TrainConfig};

/// Threshold the gradient suite must stay under.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Distance kept from the `acos` clamp and from `min` ties.
const BOUNDARY_GAP: f64 = 1e-3;
const MAX_RESAMPLES: usize = 64;
/// Dense probe parameters are uniform in `[-PROBE_SCALE, PROBE_SCALE]`.
const PROBE_SCALE: f64 = 1.0;
/// Index of the fusion output bias among the dense parameters. Every fused
/// score shares it and the contrastive loss is shift-invariant, so its true
/// gradient is exactly zero; it is held fixed rather than checked against noise.
const FUSED_BIAS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    B,
    Bfcl,
    Mcl,
    Gen,
    Gmc,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [LossKind::B, LossKind::Bfcl, LossKind::Mcl, LossKind::Gen, LossKind::Gmc];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::B => "b",
            LossKind::Bfcl => "bfcl",
            LossKind::Mcl => "mcl",
            LossKind::Gen => "gen",
            LossKind::Gmc => "gmc",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown loss `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: LossKind,
    pub seed: u64,
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Points rejected for sitting too close to a clamp or tie, or for lacking
    /// enough distinct sentence buckets.
    pub resamples: usize,
}

/// Small problem a gradient check runs on.
pub struct Probe {
    pub dataset: Dataset,
    pub config: TrainConfig,
    pub model: Model,
    pub batch: Batch,
}

impl Probe {
    /// A random tiny model and batch derived from `seed`.
    pub fn random(seed: u64) -> Result<Self> {
        let records = zipf_corpus(&ZipfConfig {
            num_videos: 4,
            captions_per_video: 3,
            max_details: 1,
            seed,
            ..ZipfConfig::default()
        });
        let dataset = Dataset::new(Corpus::from_records(records, crate::corpus::DEFAULT_N_MAX)?)?;
        let config = TrainConfig {
            codebook_dim: 6,
            feature_dim: 5,
            attn_dim: 4,
            mlp_dim: 4,
            max_caption_len: 6,
            batch_size: 4,
            seed,
            ..TrainConfig::toy()
        };
        let dims: ModelDims = config.dims();
        let mut model = Model::init(&dims, dataset.corpus.num_videos(), dataset.vocab.len(), true, seed);
        // Training initialisation leaves many gradients tiny (and the output layer at
        // exactly zero); finite differences resolve a wider draw much better.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        for t in model.dense_mut() {
            let shape = t.shape().to_vec();
            *t = crate::encoders::uniform(&mut rng, &shape, PROBE_SCALE);
        }
        let mut pairs: Vec<PairRef> =
            dataset.corpus.pairs().into_iter().map(|(video, caption)| PairRef { video, caption }).collect();
        pairs.shuffle(&mut rng);
        // Rows with distinct sentence buckets, so no negative coincides with its positive.
        let mut seen = alloc::collections::BTreeSet::new();
        pairs.retain(|p| seen.insert(dataset.scores.get(p.video, p.caption).sentence_bucket));
        if pairs.len() < config.batch_size {
            return Err(Error::CorpusTooSmall { available: pairs.len(), batch_size: config.batch_size });
        }
        pairs.truncate(config.batch_size);
        let batch = dataset.batch(pairs)?;
        Ok(Self { dataset, config, model, batch })
    }

    /// Whether every clamp and `min` in the margin loss is at least [`BOUNDARY_GAP`] from its kink.
    pub fn away_from_boundaries(&self) -> Result<bool> {
        let mut tape = Tape::new();
        let (vars, _) = self.model.register(&mut tape);
        let (v, t) = encode_batch(&mut tape, &self.batch, &self.dataset, &FeatureProvider::Synthetic, &vars.encoders)?;
        let (cos, theta) = dual_cosines(&mut tape, v, t)?;
        let limit = 1.0 - crate::autodiff::ACOS_EPS - BOUNDARY_GAP;
        if tape.value(cos).data().iter().any(|c| c.abs() > limit) {
            return Ok(false);
        }
        let b = self.batch.len();
        let bias = batch_bias_scores(&self.batch, &self.model.codebooks)?;
        for (i, s) in bias.iter().enumerate() {
            if s.y_hat.abs() > limit {
                return Ok(false);
            }
            let room = PI - tape.value(theta).data()[i * b + i];
            if (self.config.margin_orientation.bias_angle(s.xi_hat) - room).abs() < BOUNDARY_GAP {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Dense parameters except the fused-score bias, then the batch's codebook
    /// rows (video keys, then sentence keys).
    pub fn points(&self) -> Vec<Tensor> {
        let mut points: Vec<Tensor> = self
            .model
            .dense()
            .into_iter()
            .enumerate()
            .filter(|&(i, _)| i != FUSED_BIAS)
            .map(|(_, t)| t.clone())
            .collect();
        let d = self.config.codebook_dim;
        let mut keys = |book: &crate::bias::Codebook, buckets: &[i64]| {
            let mut ks: Vec<i64> = buckets.to_vec();
            ks.sort_unstable();
            ks.dedup();
            for k in ks {
                points.push(Tensor::matrix(1, d, book.vector(k).into_owned()).expect("row shape"));
            }
        };
        keys(&self.model.codebooks.video, &self.batch.video_buckets);
        keys(&self.model.codebooks.sentence, &self.batch.sentence_buckets);
        points
    }

    fn split(&self, tape: &mut Tape, leaves: &[Var]) -> (ModelVars, CodebookVars) {
        let mut dense = leaves[..DENSE_COUNT - 1].to_vec();
        dense.insert(FUSED_BIAS, tape.leaf(self.model.head.b2.clone()));
        let vars = ModelVars::from_slice(&dense);
        let mut books = CodebookVars::default();
        let mut rest = leaves[DENSE_COUNT - 1..].iter().copied();
        for (map, buckets) in
            [(&mut books.video, &self.batch.video_buckets), (&mut books.sentence, &self.batch.sentence_buckets)]
        {
            let mut ks: Vec<i64> = buckets.clone();
            ks.sort_unstable();
            ks.dedup();
            for k in ks {
                map.insert(k, rest.next().expect("one leaf per bucket"));
            }
        }
        (vars, books)
    }

    /// Builds the chosen loss from leaves laid out as in [`Probe::points`].
    ///
    /// With `centre`, each term of the total is shifted by the given constant
    /// before weighting. The gradient is unchanged, but finite differences of
    /// one term are then not rounded away against the magnitude of the others.
    pub fn build(&self, kind: LossKind, tape: &mut Tape, leaves: &[Var], centre: Option<[f64; 4]>) -> Result<Var> {
        let (vars, books) = self.split(tape, leaves);
        let provider = FeatureProvider::Synthetic;
        let cfg = &self.config;
        match kind {
            LossKind::B => loss_b(tape, &self.batch, &books, cfg.tau1),
            LossKind::Bfcl => {
                let (v, t) = encode_batch(tape, &self.batch, &self.dataset, &provider, &vars.encoders)?;
                let fused = fusion_matrix(tape, v, t, &vars.head)?;
                loss_bfcl(tape, fused, cfg.tau2)
            }
            LossKind::Mcl => {
                let (v, t) = encode_batch(tape, &self.batch, &self.dataset, &provider, &vars.encoders)?;
                let (cos, theta) = dual_cosines(tape, v, t)?;
                let bias = batch_bias_scores(&self.batch, &self.model.codebooks)?;
                loss_mcl(tape, cos, theta, &bias, cfg.margin_orientation, cfg.tau3).map(|(l, _)| l)
            }
            LossKind::Gen => {
                let (v, _) = encode_batch(tape, &self.batch, &self.dataset, &provider, &vars.encoders)?;
                loss_gen(tape, &self.batch, &self.dataset, v, &vars.decoder)
            }
            LossKind::Gmc => {
                let active = ActiveTerms::default();
                let (mut nodes, _) = loss_nodes(
                    tape,
                    &self.model,
                    &vars,
                    &books,
                    &self.batch,
                    &self.dataset,
                    &provider,
                    cfg,
                    active,
                )?;
                if let Some(centre) = centre {
                    for (node, c) in [&mut nodes.b, &mut nodes.bfcl, &mut nodes.mcl, &mut nodes.gen].into_iter().zip(centre) {
                        if let Some(v) = node {
                            *v = tape.offset(*v, -c)?;
                        }
                    }
                }
                loss_gmc(tape, &nodes, active, cfg.weights).map(|(total, _)| total)
            }
        }
    }

    /// Values of the four terms at [`Probe::points`], used to centre the total.
    pub fn term_values(&self) -> Result<[f64; 4]> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = self.points().into_iter().map(|p| tape.leaf(p)).collect();
        let (vars, books) = self.split(&mut tape, &leaves);
        let (nodes, _) = loss_nodes(
            &mut tape,
            &self.model,
            &vars,
            &books,
            &self.batch,
            &self.dataset,
            &FeatureProvider::Synthetic,
            &self.config,
            ActiveTerms::default(),
        )?;
        let value = |n: Option<Var>| n.map_or(0.0, |v| tape.scalar(v));
        Ok([value(nodes.b), value(nodes.bfcl), value(nodes.mcl), value(nodes.gen)])
    }
}

/// Gradient check of one loss at a random point derived from `seed`.
///
/// Points too close to a clamp or tie are redrawn from the next seed in a
/// fixed sequence, so the result is still a pure function of `seed`.
pub fn gradcheck_loss(kind: LossKind, seed: u64) -> Result<GradCheckReport> {
    let mut resamples = 0;
    let probe = loop {
        match Probe::random(seed.wrapping_add((resamples as u64) << 32)) {
            Ok(candidate) if candidate.away_from_boundaries()? => break candidate,
            Ok(_) | Err(Error::CorpusTooSmall { .. }) => {}
            Err(e) => return Err(e),
        }
        resamples += 1;
        if resamples > MAX_RESAMPLES {
            return Err(Error::InvalidConfig(String::from("no point away from clamp boundaries")));
        }
    };
    let points = probe.points();
    let coordinates = points.iter().map(Tensor::len).sum();
    let centre = Some(probe.term_values()?);
    let max_rel_error = grad_check(|tape, leaves| probe.build(kind, tape, leaves, centre), &points, FD_STEP)?;
    Ok(GradCheckReport { loss: kind, seed, max_rel_error, coordinates, resamples })
}
