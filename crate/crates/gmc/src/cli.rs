//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 validation or input failure (including usage
//! errors), 2 when `gradcheck` exceeds its tolerance.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gmc_core::bias::{histogram, BiasTable, HistLevel, RankOrder};
use gmc_core::corpus::{Corpus, Vocab};
use gmc_core::diagnostics::{gradcheck_loss, LossKind, GRADCHECK_TOLERANCE};
use gmc_core::encoders::FeatureProvider;
use gmc_core::metrics::MetricReport;
use gmc_core::model::Dataset;
use gmc_core::synth::{zipf_corpus, ZipfConfig};
use gmc_core::trainer::{ablate, TrainConfig, Trainer};

use crate::io;
use crate::manifest::{self, RunManifest};

/// Environment variable overriding every configured seed.
pub const SEED_ENV: &str = "GMC_SEED";

#[derive(Debug, Parser)]
#[command(name = "gmc", version, about = "Granularity-bias scoring and margin-contrastive training")]
pub struct Cli {
    /// Where to write the run manifest (default: derived from --out).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset and print corpus statistics.
    Ingest(IngestArgs),
    /// Information-content scores and buckets for every caption.
    ScoreBias(ScoreArgs),
    /// Rank/frequency CSV of information-content buckets.
    Hist(HistArgs),
    /// Warm-up then full training; writes log, checkpoint, summary and manifest.
    Train(TrainArgs),
    /// BLEU@1-4, ROUGE-L and CIDEr of candidate captions against a dataset's references.
    EvalMetrics(EvalArgs),
    /// Finite-difference check of the loss gradients.
    Gradcheck(GradcheckArgs),
    /// Train every ablation configuration and report their evaluations.
    Ablate(AblateArgs),
    /// Write a synthetic long-tail dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelArg {
    Sentence,
    Video,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderArg {
    Desc,
    Asc,
}

#[derive(Debug, Args, Serialize)]
pub struct HistArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "sentence")]
    pub level: LevelArg,
    /// `desc`: rank 1 is the highest score, so rank grows with information content.
    #[arg(long, value_enum, default_value = "desc")]
    pub rank_order: OrderArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// TrainConfig JSON; fields left out take the toy defaults.
    #[arg(long, conflicts_with = "resume")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Fixed feature vectors instead of the synthetic encoders.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint (its config is used).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub freeze_bias_after_warmup: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// References: every caption of the candidate's video.
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSONL rows `{"video_id", "caption"}`.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    B,
    Bfcl,
    Mcl,
    Gen,
    Gmc,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::B => LossKind::B,
            LossArg::Bfcl => LossKind::Bfcl,
            LossArg::Mcl => LossKind::Mcl,
            LossArg::Gen => LossKind::Gen,
            LossArg::Gmc => LossKind::Gmc,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// Loss to check; all of them when omitted.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// First seed (GMC_SEED overrides it; default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub points: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub videos: usize,
    #[arg(long, default_value_t = 20)]
    pub captions: usize,
    #[arg(long, default_value_t = 1.1)]
    pub exponent: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

enum Outcome {
    Ok,
    ThresholdExceeded,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::ThresholdExceeded) => 2,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("{SEED_ENV}=`{s}` is not an unsigned integer"))?)),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("{SEED_ENV}: {e}"),
    }
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    let manifest_override = cli.manifest.clone();
    let manifest_at = |out: Option<&Path>, dir: bool| manifest_override.clone().unwrap_or_else(|| manifest::default_path(out, dir));
    match cli.command {
        Command::Ingest(a) => {
            let corpus = io::read_dataset(&a.dataset)?;
            emit_json(a.out.as_deref(), &ingest_summary(&corpus))?;
            let mut m = RunManifest::new("ingest", serde_json::to_value(&a)?, None);
            m.add_input(&a.dataset)?;
            m.write(&manifest_at(a.out.as_deref(), false))?;
        }
        Command::ScoreBias(a) => {
            let corpus = io::read_dataset(&a.dataset)?;
            let rows = score_rows(&corpus)?;
            emit_jsonl(a.out.as_deref(), &rows)?;
            let mut m = RunManifest::new("score-bias", serde_json::to_value(&a)?, None);
            m.add_input(&a.dataset)?;
            m.write(&manifest_at(a.out.as_deref(), false))?;
        }
        Command::Hist(a) => {
            let corpus = io::read_dataset(&a.dataset)?;
            let table = BiasTable::compute(&corpus)?;
            let level = match a.level {
                LevelArg::Sentence => HistLevel::Sentence,
                LevelArg::Video => HistLevel::Video,
            };
            let order = match a.rank_order {
                OrderArg::Desc => RankOrder::Desc,
                OrderArg::Asc => RankOrder::Asc,
            };
            let mut csv = String::from("rank,frequency\n");
            for (rank, freq) in histogram(&table, level, order) {
                csv.push_str(&format!("{rank},{freq}\n"));
            }
            emit_text(a.out.as_deref(), &csv)?;
            let mut m = RunManifest::new("hist", serde_json::to_value(&a)?, None);
            m.add_input(&a.dataset)?;
            m.write(&manifest_at(a.out.as_deref(), false))?;
        }
        Command::Train(a) => {
            let manifest_path = manifest_at(Some(&a.out), true);
            train(a, &manifest_path)?;
        }
        Command::EvalMetrics(a) => {
            let corpus = io::read_dataset(&a.dataset)?;
            let (rows, mean) = eval_metrics(&corpus, &a.candidates)?;
            emit_jsonl(a.out.as_deref(), &rows)?;
            if a.out.is_some() {
                println!("{}", serde_json::to_string(&mean)?);
            }
            let mut m = RunManifest::new("eval-metrics", serde_json::to_value(&a)?, None);
            m.add_input(&a.dataset)?;
            m.add_input(&a.candidates)?;
            m.write(&manifest_at(a.out.as_deref(), false))?;
        }
        Command::Gradcheck(a) => {
            let seed = env_seed()?.or(a.seed).unwrap_or(0);
            let losses: Vec<LossKind> = match a.loss {
                Some(l) => vec![l.into()],
                None => LossKind::ALL.to_vec(),
            };
            let mut worst: f64 = 0.0;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for &kind in &losses {
                for s in seed..seed.saturating_add(a.points.max(1)) {
                    let r = gradcheck_loss(kind, s)?;
                    worst = worst.max(r.max_rel_error);
                    writeln!(
                        out,
                        "{}",
                        serde_json::json!({
                            "loss": kind.name(),
                            "seed": s,
                            "max_rel_error": r.max_rel_error,
                            "coordinates": r.coordinates,
                            "resamples": r.resamples,
                            "pass": r.max_rel_error < GRADCHECK_TOLERANCE,
                        })
                    )?;
                }
            }
            let m = RunManifest::new("gradcheck", serde_json::to_value(&a)?, Some(seed));
            m.write(&manifest_at(None, false))?;
            if !(worst < GRADCHECK_TOLERANCE) {
                eprintln!("max relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}");
                return Ok(Outcome::ThresholdExceeded);
            }
        }
        Command::Ablate(a) => {
            let mut config = load_config(a.config.as_deref())?;
            if let Some(seed) = env_seed()? {
                config.seed = seed;
            }
            config.validate()?;
            let corpus = io::read_dataset(&a.dataset)?;
            let provider = load_provider(a.features.as_deref())?;
            let dataset = Dataset::new(corpus)?;
            let rows = ablate(&config, &dataset, &provider)?;
            emit_jsonl(a.out.as_deref(), &rows)?;
            let mut m = RunManifest::new("ablate", serde_json::to_value(&config)?, Some(config.seed));
            m.add_input(&a.dataset)?;
            for p in [&a.config, &a.features].into_iter().flatten() {
                m.add_input(p)?;
            }
            m.write(&manifest_at(a.out.as_deref(), false))?;
        }
        Command::Synth(a) => {
            let config = ZipfConfig {
                num_videos: a.videos,
                captions_per_video: a.captions,
                exponent: a.exponent,
                seed: env_seed()?.or(a.seed).unwrap_or(0),
                ..ZipfConfig::default()
            };
            if config.num_videos == 0 || config.captions_per_video == 0 {
                bail!("--videos and --captions must be positive");
            }
            if !(config.exponent > 0.0 && config.exponent.is_finite()) {
                bail!("--exponent must be positive");
            }
            io::write_dataset(&a.out, &zipf_corpus(&config))?;
            let m = RunManifest::new("synth", serde_json::to_value(&config)?, Some(config.seed));
            m.write(&manifest_at(Some(&a.out), false))?;
        }
    }
    Ok(Outcome::Ok)
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    Ok(match path {
        Some(p) => io::read_json(p)?,
        None => TrainConfig::toy(),
    })
}

fn load_provider(path: Option<&Path>) -> Result<FeatureProvider> {
    Ok(match path {
        Some(p) => FeatureProvider::Imported(io::read_features(p)?),
        None => FeatureProvider::Synthetic,
    })
}

fn train(a: TrainArgs, manifest_path: &Path) -> Result<()> {
    let corpus = io::read_dataset(&a.dataset)?;
    let provider = load_provider(a.features.as_deref())?;
    let dataset = Dataset::new(corpus)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let checkpoint = io::load_checkpoint(path)?;
            Trainer::resume(checkpoint, &dataset, &provider)?
        }
        None => {
            let mut config = load_config(a.config.as_deref())?;
            if let Some(seed) = env_seed()? {
                config.seed = seed;
            }
            if a.freeze_bias_after_warmup {
                config.freeze_bias_after_warmup = true;
            }
            Trainer::new(config, &dataset, &provider)?
        }
    };
    let config = trainer.config().clone();
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let log_path = a.out.join("log.jsonl");
    let log_file = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut log = BufWriter::new(log_file);
    let mut write_err = None;
    let summary = trainer.run(|row| {
        if write_err.is_none() {
            let line = serde_json::to_string(row).expect("serializable");
            if let Err(e) = writeln!(log, "{line}") {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context(format!("writing {}", log_path.display()));
    }
    log.flush()?;
    io::save_checkpoint(&a.out.join("checkpoint.json"), &trainer.checkpoint())?;
    io::write_json(&a.out.join("summary.json"), &serde_json::json!({ "initial": summary.initial, "final": summary.final_ }))?;
    println!("{}", serde_json::to_string(&serde_json::json!({ "initial": summary.initial, "final": summary.final_ }))?);

    let mut m = RunManifest::new("train", serde_json::to_value(&config)?, Some(config.seed));
    m.add_input(&a.dataset)?;
    for p in [&a.config, &a.features, &a.resume].into_iter().flatten() {
        m.add_input(p)?;
    }
    m.write(manifest_path)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    videos: usize,
    captions: usize,
    vocab_size: usize,
    single_caption_videos: usize,
    /// Distinct n-grams per order, starting at 1.
    ngram_types: Vec<usize>,
}

fn ingest_summary(corpus: &Corpus) -> IngestSummary {
    let df = corpus.df();
    IngestSummary {
        videos: corpus.num_videos(),
        captions: corpus.num_captions(),
        vocab_size: Vocab::from_corpus(corpus).len(),
        single_caption_videos: corpus.videos().iter().filter(|v| v.captions.len() == 1).count(),
        ngram_types: (1..=df.n_max()).map(|n| df.level_len(n)).collect(),
    }
}

#[derive(Debug, Serialize)]
struct ScoreRow<'a> {
    video_id: &'a str,
    caption_index: usize,
    sentence_score: f64,
    video_score: f64,
    sentence_bucket: i64,
    video_bucket: i64,
}

fn score_rows(corpus: &Corpus) -> Result<Vec<ScoreRow<'_>>> {
    let table = BiasTable::compute(corpus)?;
    Ok(table
        .iter()
        .map(|(v, c, s)| ScoreRow {
            video_id: &corpus.videos()[v].video_id,
            caption_index: c,
            sentence_score: s.sentence_score,
            video_score: s.video_score,
            sentence_bucket: s.sentence_bucket,
            video_bucket: s.video_bucket,
        })
        .collect())
}

#[derive(Debug, Serialize)]
struct MetricRow {
    video_id: String,
    caption: String,
    #[serde(flatten)]
    report: MetricReport,
}

fn eval_metrics(corpus: &Corpus, candidates: &Path) -> Result<(Vec<MetricRow>, MetricReport)> {
    let mut rows = Vec::new();
    for (line, c) in io::read_candidates(candidates)? {
        let video = corpus
            .video(&c.video_id)
            .with_context(|| format!("{}:{}", candidates.display(), line))?;
        let refs: Vec<Vec<String>> = video.captions.iter().map(|r| r.tokens.clone()).collect();
        let tokens = gmc_core::corpus::tokenize(&c.caption);
        let report = MetricReport::compute(&tokens, &refs, corpus.df())
            .with_context(|| format!("{}:{}", candidates.display(), line))?;
        rows.push(MetricRow { video_id: c.video_id, caption: c.caption, report });
    }
    let reports: Vec<MetricReport> = rows.iter().map(|r| r.report.clone()).collect();
    let mean = MetricReport::mean(&reports).context("no candidates")?;
    Ok((rows, mean))
}

fn emit_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit_text(out, &text)
}

fn emit_jsonl<T: Serialize>(out: Option<&Path>, rows: &[T]) -> Result<()> {
    match out {
        Some(p) => Ok(io::write_jsonl(p, rows)?),
        None => {
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            for row in rows {
                serde_json::to_writer(&mut w, row)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            Ok(())
        }
    }
}
