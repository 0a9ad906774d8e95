//! Two-phase training: a warm-up without the margin loss, then the full
//! objective. Batching, initialisation and updates are all seeded, so a
//! config plus a dataset determines every logged number.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Tensor, Var};
use crate::bias::{bias_score, loss_b, BiasScore, CodebookVars, Codebooks};
use crate::encoders::{dual_cosines, encode_batch, fusion_matrix, FeatureProvider};
use crate::error::{Error, Result};
use crate::losses::{
    loss_bfcl, loss_gen, loss_gmc, loss_mcl, ActiveTerms, Batch, LossNodes, LossReport, LossWeights,
    MarginOrientation, PairRef, TAU_B, TAU_BFCL, TAU_MCL,
};
use crate::model::{Dataset, Model, ModelDims, ModelVars};

/// Loss terms switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_b: bool,
    pub no_bfcl: bool,
    pub no_mcl: bool,
    pub no_gen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub codebook_dim: usize,
    pub feature_dim: usize,
    pub attn_dim: usize,
    pub mlp_dim: usize,
    pub max_caption_len: usize,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 is plain gradient descent.
    pub momentum: f64,
    pub seed: u64,
    pub margin_orientation: MarginOrientation,
    pub ablation: Ablation,
    pub weights: LossWeights,
    pub freeze_bias_after_warmup: bool,
    /// Whether the captioning term runs during warm-up.
    pub gen_in_warmup: bool,
    pub log_every: usize,
    /// Number of fixed batches used by [`Trainer::evaluate`].
    pub eval_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl TrainConfig {
    /// Desk-scale defaults used by the shipped fixtures.
    pub fn toy() -> Self {
        Self {
            tau1: TAU_B,
            tau2: TAU_BFCL,
            tau3: TAU_MCL,
            codebook_dim: crate::bias::CODEBOOK_DIM,
            feature_dim: 16,
            attn_dim: 8,
            mlp_dim: 16,
            max_caption_len: 24,
            warmup_steps: 300,
            total_steps: 500,
            batch_size: 24,
            learning_rate: 1e-2,
            momentum: 0.0,
            seed: 0,
            margin_orientation: MarginOrientation::Literal,
            ablation: Ablation::default(),
            weights: LossWeights::default(),
            freeze_bias_after_warmup: false,
            gen_in_warmup: true,
            log_every: 10,
            eval_batches: 4,
        }
    }

    /// Full-size MSVD schedule: 6000 warm-up iterations, batch 24, lr 1e-5, 768-d features.
    pub fn msvd() -> Self {
        Self {
            feature_dim: 768,
            attn_dim: 768,
            mlp_dim: 768,
            warmup_steps: 6000,
            total_steps: 12000,
            batch_size: 24,
            learning_rate: 1e-5,
            ..Self::toy()
        }
    }

    /// Full-size MSR-VTT schedule: 14000 warm-up iterations.
    pub fn msrvtt() -> Self {
        Self { warmup_steps: 14000, total_steps: 28000, ..Self::msvd() }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            feature_dim: self.feature_dim,
            attn_dim: self.attn_dim,
            mlp_dim: self.mlp_dim,
            codebook_dim: self.codebook_dim,
            max_caption_len: self.max_caption_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, tau) in [("tau1", self.tau1), ("tau2", self.tau2), ("tau3", self.tau3)] {
            if !(tau > 0.0 && tau.is_finite()) {
                return bad(alloc::format!("{name} must be positive, got {tau}"));
            }
        }
        if self.warmup_steps > self.total_steps {
            return bad(alloc::format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if self.batch_size < 2 {
            return bad(alloc::format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        for (name, d) in [
            ("codebook_dim", self.codebook_dim),
            ("feature_dim", self.feature_dim),
            ("attn_dim", self.attn_dim),
            ("mlp_dim", self.mlp_dim),
            ("max_caption_len", self.max_caption_len),
        ] {
            if d == 0 {
                return bad(alloc::format!("{name} must be positive"));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(alloc::format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(alloc::format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| alloc::format!("{:02x}", b)).collect()
    }

    /// Terms active at a phase, after ablation.
    pub fn active_terms(&self, phase: Phase) -> ActiveTerms {
        let a = &self.ablation;
        let warm = phase == Phase::Warmup;
        ActiveTerms {
            b: !a.no_b,
            bfcl: !a.no_bfcl,
            mcl: !a.no_mcl && !warm,
            gen: !a.no_gen && (!warm || self.gen_in_warmup),
        }
    }

    pub fn phase(&self, step: usize) -> Phase {
        if step < self.warmup_steps {
            Phase::Warmup
        } else {
            Phase::Full
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Full,
}

/// Seeded epoch-wise shuffling of all corpus pairs into batches of `B`.
///
/// Each epoch draws an independent ChaCha stream, so the batches of an epoch
/// depend only on `(seed, epoch)`. Pairs left over after the last full batch
/// are skipped for that epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pairs: Vec<PairRef>,
    batch_size: usize,
    seed: u64,
}

/// Batches of one epoch plus the pairs that did not fill a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochBatches {
    pub batches: Vec<Vec<PairRef>>,
    pub leftover: Vec<PairRef>,
}

pub fn make_batches(dataset: &Dataset, batch_size: usize, seed: u64) -> Result<BatchPlan> {
    if batch_size < 2 {
        return Err(Error::BatchTooSmall { need: 2, got: batch_size });
    }
    let pairs: Vec<PairRef> =
        dataset.corpus.pairs().into_iter().map(|(video, caption)| PairRef { video, caption }).collect();
    if pairs.len() < batch_size {
        return Err(Error::CorpusTooSmall { available: pairs.len(), batch_size });
    }
    Ok(BatchPlan { pairs, batch_size, seed })
}

impl BatchPlan {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.pairs.len() / self.batch_size
    }

    pub fn epoch(&self, epoch: u64) -> EpochBatches {
        let mut order = self.pairs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        let full = self.batches_per_epoch() * self.batch_size;
        let leftover = order.split_off(full);
        let batches = order.chunks(self.batch_size).map(<[PairRef]>::to_vec).collect();
        EpochBatches { batches, leftover }
    }

    /// `(epoch, index within epoch)` of a global step.
    pub fn position(&self, step: usize) -> (u64, usize) {
        let per = self.batches_per_epoch();
        ((step / per) as u64, step % per)
    }
}

/// Nodes and values of one assembled objective.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: Var,
    pub report: LossReport,
    pub fused: Var,
}

fn in_term<T>(term: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { term },
        other => other,
    })
}

/// Bias scores of each batch row, read from the current codebooks.
pub fn batch_bias_scores(batch: &Batch, codebooks: &Codebooks) -> Result<Vec<BiasScore>> {
    batch
        .video_buckets
        .iter()
        .zip(&batch.sentence_buckets)
        .map(|(&v, &s)| bias_score(v, s, codebooks))
        .collect()
}

/// Builds every active loss term for `batch` on `tape`, plus the fused score matrix.
///
/// Differentiable inputs come from `vars` and `books`; the margin's bias
/// angles are read from `model.codebooks` as constants.
#[allow(clippy::too_many_arguments)]
pub fn loss_nodes(
    tape: &mut Tape,
    model: &Model,
    vars: &ModelVars,
    books: &CodebookVars,
    batch: &Batch,
    dataset: &Dataset,
    provider: &FeatureProvider,
    config: &TrainConfig,
    active: ActiveTerms,
) -> Result<(LossNodes, Var)> {
    let mut nodes = LossNodes::default();
    if active.b {
        nodes.b = Some(in_term("l_b", loss_b(tape, batch, books, config.tau1))?);
    }
    let (videos, texts) = in_term("encoders", encode_batch(tape, batch, dataset, provider, &vars.encoders))?;
    let fused = in_term("l_bfcl", fusion_matrix(tape, videos, texts, &vars.head))?;
    if active.bfcl {
        nodes.bfcl = Some(in_term("l_bfcl", loss_bfcl(tape, fused, config.tau2))?);
    }
    if active.mcl {
        let bias = batch_bias_scores(batch, &model.codebooks)?;
        let (l, margins) = in_term("l_mcl", {
            dual_cosines(tape, videos, texts)
                .and_then(|(cos, theta)| loss_mcl(tape, cos, theta, &bias, config.margin_orientation, config.tau3))
        })?;
        nodes.mcl = Some(l);
        nodes.margins = Some(margins);
    }
    if active.gen {
        nodes.gen = Some(in_term("l_gen", loss_gen(tape, batch, dataset, videos, &vars.decoder))?);
    }
    Ok((nodes, fused))
}

/// [`loss_nodes`] combined into the weighted total.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    tape: &mut Tape,
    model: &Model,
    vars: &ModelVars,
    books: &CodebookVars,
    batch: &Batch,
    dataset: &Dataset,
    provider: &FeatureProvider,
    config: &TrainConfig,
    active: ActiveTerms,
) -> Result<Objective> {
    let (nodes, fused) = loss_nodes(tape, model, vars, books, batch, dataset, provider, config, active)?;
    let (total, report) = loss_gmc(tape, &nodes, active, config.weights)?;
    Ok(Objective { total, report, fused })
}

/// Fraction of rows whose largest entry sits on the diagonal (first index wins ties).
pub fn recall_at_1(scores: &Tensor) -> f64 {
    let Some((rows, cols)) = scores.dims2() else { return 0.0 };
    if rows == 0 {
        return 0.0;
    }
    let hits = (0..rows)
        .filter(|&i| {
            let row = scores.row(i);
            let mut best = 0;
            for j in 1..cols {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best == i
        })
        .count();
    hits as f64 / rows as f64
}

/// Heavy-ball buffers, present only when momentum is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Velocity {
    pub dense: Vec<Tensor>,
    pub video: BTreeMap<i64, Vec<f64>>,
    pub sentence: BTreeMap<i64, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub epoch: u64,
    pub cursor: usize,
}

/// Everything needed to resume a run bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub config: TrainConfig,
    pub config_hash: String,
    pub model: Model,
    pub velocity: Option<Velocity>,
    pub rng: RngState,
}

/// One JSONL log row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub phase: Phase,
    pub l_b: f64,
    pub l_bfcl: f64,
    pub l_mcl: f64,
    pub l_gen: f64,
    pub l_gmc: f64,
    pub recall_at_1: f64,
}

/// Mean losses (all four terms, unit weights) and recall over the fixed evaluation batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub l_b: f64,
    pub l_bfcl: f64,
    pub l_mcl: f64,
    pub l_gen: f64,
    pub l_gmc: f64,
    pub recall_at_1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub initial: EvalReport,
    #[serde(rename = "final")]
    pub final_: EvalReport,
    pub log: Vec<LogRow>,
}

/// Owns the parameters of one run.
pub struct Trainer<'a> {
    config: TrainConfig,
    dataset: &'a Dataset,
    provider: &'a FeatureProvider,
    model: Model,
    velocity: Option<Velocity>,
    step: usize,
    plan: BatchPlan,
    epoch_cache: Option<(u64, EpochBatches)>,
}

/// Stream reserved for the evaluation batches.
const EVAL_STREAM: u64 = u64::MAX;

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, dataset: &'a Dataset, provider: &'a FeatureProvider) -> Result<Self> {
        config.validate()?;
        let model = Model::init(
            &config.dims(),
            dataset.corpus.num_videos(),
            dataset.vocab.len(),
            provider.is_synthetic(),
            config.seed,
        );
        Self::assemble(config, dataset, provider, model, None, 0)
    }

    pub fn resume(checkpoint: Checkpoint, dataset: &'a Dataset, provider: &'a FeatureProvider) -> Result<Self> {
        if checkpoint.config.fingerprint() != checkpoint.config_hash {
            return Err(Error::InvalidConfig(String::from("checkpoint config hash does not match its config")));
        }
        checkpoint.config.validate()?;
        Self::assemble(checkpoint.config, dataset, provider, checkpoint.model, checkpoint.velocity, checkpoint.step)
    }

    fn assemble(
        config: TrainConfig,
        dataset: &'a Dataset,
        provider: &'a FeatureProvider,
        model: Model,
        velocity: Option<Velocity>,
        step: usize,
    ) -> Result<Self> {
        let plan = make_batches(dataset, config.batch_size, config.seed)?;
        let velocity = match velocity {
            Some(v) => Some(v),
            None if config.momentum > 0.0 => Some(Velocity {
                dense: model.dense().into_iter().map(|t| Tensor::zeros(t.shape())).collect(),
                video: BTreeMap::new(),
                sentence: BTreeMap::new(),
            }),
            None => None,
        };
        Ok(Self { config, dataset, provider, model, velocity, step, plan, epoch_cache: None })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn plan(&self) -> &BatchPlan {
        &self.plan
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (epoch, cursor) = self.plan.position(self.step);
        Checkpoint {
            step: self.step,
            config: self.config.clone(),
            config_hash: self.config.fingerprint(),
            model: self.model.clone(),
            velocity: self.velocity.clone(),
            rng: crate::trainer::RngState { seed: self.config.seed, epoch, cursor },
        }
    }

    /// The batch consumed at global step `step`.
    pub fn batch_for_step(&mut self, step: usize) -> Result<Batch> {
        let (epoch, index) = self.plan.position(step);
        if self.epoch_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            self.epoch_cache = Some((epoch, self.plan.epoch(epoch)));
        }
        let pairs = self.epoch_cache.as_ref().unwrap().1.batches[index].clone();
        self.dataset.batch(pairs)
    }

    /// One descent step; returns the losses measured before the update.
    pub fn train_step(&mut self, batch: &Batch, phase: Phase) -> Result<LossReport> {
        self.train_step_with_recall(batch, phase).map(|(r, _)| r)
    }

    fn train_step_with_recall(&mut self, batch: &Batch, phase: Phase) -> Result<(LossReport, f64)> {
        let mut tape = Tape::new();
        let (vars, leaves) = self.model.register(&mut tape);
        let books = self.model.codebooks.register(&mut tape, batch)?;
        let active = self.config.active_terms(phase);
        let obj = objective(
            &mut tape,
            &self.model,
            &vars,
            &books,
            batch,
            self.dataset,
            self.provider,
            &self.config,
            active,
        )?;
        let recall = recall_at_1(tape.value(obj.fused));
        tape.backward(obj.total)?;

        let lr = self.config.learning_rate;
        let mu = self.config.momentum;
        for (i, (param, leaf)) in self.model.dense_mut().into_iter().zip(&leaves).enumerate() {
            let Some(g) = tape.grad(*leaf) else { continue };
            match &mut self.velocity {
                Some(vel) => {
                    let v = vel.dense[i].data_mut();
                    for ((p, vk), gk) in param.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                        *vk = mu * *vk + gk;
                        *p -= lr * *vk;
                    }
                }
                None => {
                    for (p, gk) in param.data_mut().iter_mut().zip(g.data()) {
                        *p -= lr * gk;
                    }
                }
            }
        }
        let frozen = phase == Phase::Full && self.config.freeze_bias_after_warmup;
        if !frozen {
            self.update_codebooks(&tape, &books);
        }
        Ok((obj.report, recall))
    }

    fn update_codebooks(&mut self, tape: &Tape, books: &CodebookVars) {
        let lr = self.config.learning_rate;
        let mu = self.config.momentum;
        let Self { model, velocity, .. } = self;
        let (vel_video, vel_sentence) = match velocity {
            Some(v) => (Some(&mut v.video), Some(&mut v.sentence)),
            None => (None, None),
        };
        let sides = [
            (&mut model.codebooks.video, &books.video, vel_video),
            (&mut model.codebooks.sentence, &books.sentence, vel_sentence),
        ];
        for (book, map, mut vel) in sides {
            for (&key, &var) in map {
                let Some(g) = tape.grad(var) else { continue };
                let row = book.entry_mut(key);
                match vel.as_deref_mut() {
                    Some(vmap) => {
                        let v = vmap.entry(key).or_insert_with(|| alloc::vec![0.0; row.len()]);
                        for ((p, vk), gk) in row.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                            *vk = mu * *vk + gk;
                            *p -= lr * *vk;
                        }
                    }
                    None => {
                        for (p, gk) in row.iter_mut().zip(g.data()) {
                            *p -= lr * gk;
                        }
                    }
                }
            }
        }
    }

    /// Fixed evaluation batches: the first `eval_batches` of a reserved shuffle stream.
    pub fn eval_batches(&self) -> Result<Vec<Batch>> {
        let mut order = self.plan.pairs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(EVAL_STREAM);
        order.shuffle(&mut rng);
        order
            .chunks_exact(self.config.batch_size)
            .take(self.config.eval_batches.max(1))
            .map(|c| self.dataset.batch(c.to_vec()))
            .collect()
    }

    /// All four terms with unit weights, regardless of phase or ablation.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let batches = self.eval_batches()?;
        let config = TrainConfig { weights: LossWeights::default(), ..self.config.clone() };
        let mut acc = [0.0; 6];
        for batch in &batches {
            let mut tape = Tape::new();
            let (vars, _) = self.model.register(&mut tape);
            let books = self.model.codebooks.register(&mut tape, batch)?;
            let obj = objective(
                &mut tape,
                &self.model,
                &vars,
                &books,
                batch,
                self.dataset,
                self.provider,
                &config,
                ActiveTerms::default(),
            )?;
            let r = &obj.report;
            for (a, v) in acc.iter_mut().zip([r.l_b, r.l_bfcl, r.l_mcl, r.l_gen, r.l_gmc, recall_at_1(tape.value(obj.fused))]) {
                *a += v;
            }
        }
        let k = batches.len() as f64;
        Ok(EvalReport {
            l_b: acc[0] / k,
            l_bfcl: acc[1] / k,
            l_mcl: acc[2] / k,
            l_gen: acc[3] / k,
            l_gmc: acc[4] / k,
            recall_at_1: acc[5] / k,
        })
    }

    /// Runs from the current step to `total_steps`, handing each log row to `sink`.
    pub fn run(&mut self, mut sink: impl FnMut(&LogRow)) -> Result<RunSummary> {
        let initial = self.evaluate()?;
        let mut log = Vec::new();
        let every = self.config.log_every.max(1);
        while self.step < self.config.total_steps {
            let step = self.step;
            let phase = self.config.phase(step);
            let batch = self.batch_for_step(step)?;
            let (r, recall) = self.train_step_with_recall(&batch, phase)?;
            self.step += 1;
            if step % every == 0 || self.step == self.config.total_steps {
                let row = LogRow {
                    step,
                    phase,
                    l_b: r.l_b,
                    l_bfcl: r.l_bfcl,
                    l_mcl: r.l_mcl,
                    l_gen: r.l_gen,
                    l_gmc: r.l_gmc,
                    recall_at_1: recall,
                };
                sink(&row);
                log.push(row);
            }
        }
        let final_ = self.evaluate()?;
        Ok(RunSummary { initial, final_, log })
    }
}

/// Trains from scratch and returns the final checkpoint with the run summary.
pub fn run(
    config: TrainConfig,
    dataset: &Dataset,
    provider: &FeatureProvider,
    sink: impl FnMut(&LogRow),
) -> Result<(Checkpoint, RunSummary)> {
    let mut trainer = Trainer::new(config, dataset, provider)?;
    let summary = trainer.run(sink)?;
    Ok((trainer.checkpoint(), summary))
}

/// Trains only the bias-extractor codebooks with their triplet loss.
/// Returns the loss of every step.
pub fn fit_bias_extractor(
    dataset: &Dataset,
    codebooks: &mut Codebooks,
    batch_size: usize,
    steps: usize,
    learning_rate: f64,
    tau1: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let plan = make_batches(dataset, batch_size, seed)?;
    let mut losses = Vec::with_capacity(steps);
    let mut cache: Option<(u64, EpochBatches)> = None;
    for step in 0..steps {
        let (epoch, index) = plan.position(step);
        if cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            cache = Some((epoch, plan.epoch(epoch)));
        }
        let batch = dataset.batch(cache.as_ref().unwrap().1.batches[index].clone())?;
        let mut tape = Tape::new();
        let vars = codebooks.register(&mut tape, &batch)?;
        let loss = loss_b(&mut tape, &batch, &vars, tau1)?;
        losses.push(tape.scalar(loss));
        tape.backward(loss)?;
        codebooks.apply_gradients(&tape, &vars, learning_rate);
    }
    Ok(losses)
}

/// The four loss configurations of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationRow {
    /// Captioning loss only.
    Baseline,
    /// Captioning + margin contrastive + bias-extractor losses.
    PlusMclB,
    /// Captioning + fusion contrastive loss.
    PlusBfcl,
    /// Every term.
    Full,
}

impl AblationRow {
    pub const ALL: [AblationRow; 4] = [AblationRow::Baseline, AblationRow::PlusMclB, AblationRow::PlusBfcl, AblationRow::Full];

    pub fn label(self) -> &'static str {
        match self {
            AblationRow::Baseline => "baseline",
            AblationRow::PlusMclB => "+mcl+b",
            AblationRow::PlusBfcl => "+bfcl",
            AblationRow::Full => "full",
        }
    }

    pub fn ablation(self) -> Ablation {
        match self {
            AblationRow::Baseline => Ablation { no_b: true, no_bfcl: true, no_mcl: true, no_gen: false },
            AblationRow::PlusMclB => Ablation { no_bfcl: true, ..Ablation::default() },
            AblationRow::PlusBfcl => Ablation { no_b: true, no_mcl: true, ..Ablation::default() },
            AblationRow::Full => Ablation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub configuration: AblationRow,
    pub label: String,
    pub ablation: Ablation,
    pub initial: EvalReport,
    #[serde(rename = "final")]
    pub final_: EvalReport,
}

/// Trains each ablation row from the same seed and reports its evaluation.
pub fn ablate(config: &TrainConfig, dataset: &Dataset, provider: &FeatureProvider) -> Result<Vec<AblationResult>> {
    AblationRow::ALL
        .iter()
        .map(|&row| {
            let cfg = TrainConfig { ablation: row.ablation(), ..config.clone() };
            let (_, summary) = run(cfg, dataset, provider, |_| {})?;
            Ok(AblationResult {
                configuration: row,
                label: String::from(row.label()),
                ablation: row.ablation(),
                initial: summary.initial,
                final_: summary.final_,
            })
        })
        .collect()
}
