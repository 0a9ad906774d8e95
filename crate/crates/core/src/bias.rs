//! Information-content bias extractor.
//!
//! Each caption is scored by its leave-one-out CIDEr against the other
//! captions of its video; each video by the mean of its caption scores.
//! Scores are rounded (two decimals for sentences, one for videos) and the
//! rounded values index two learnable codebooks, `ψ` for videos and `φ` for
//! sentences. The bias score of a pair is the cosine between its two codebook
//! vectors and `ξ̂` is the corresponding angle.

use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var, ACOS_EPS};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::losses::Batch;
use crate::metrics::{cider_vectors, tfidf, TfIdfVector};

/// Default codebook width.
pub const CODEBOOK_DIM: usize = 64;

/// Half-width of the uniform codebook initializer.
const INIT_RANGE: f64 = 0.1;
/// Initial vectors shorter than this are re-drawn.
const MIN_INIT_NORM: f64 = 1e-3;

/// Leave-one-out CIDEr of caption `caption_index` of `video_id` against its
/// same-video peers, with document frequencies from the whole corpus.
///
/// A video with a single caption has no consensus signal and scores 0.
pub fn info_score_sentence(corpus: &Corpus, video_id: &str, caption_index: usize) -> Result<f64> {
    let video = corpus.video(video_id)?;
    if caption_index >= video.captions.len() {
        return Err(Error::UnknownCaption { video_id: video_id.to_string(), index: caption_index });
    }
    let vectors: Vec<TfIdfVector> = video.captions.iter().map(|c| tfidf(&c.tokens, corpus.df())).collect();
    leave_one_out(video_id, &vectors, caption_index)
}

fn leave_one_out(video_id: &str, vectors: &[TfIdfVector], index: usize) -> Result<f64> {
    if vectors.len() < 2 {
        log::warn!("video `{}` has a single caption; its information score is 0", video_id);
        return Ok(0.0);
    }
    let refs: Vec<TfIdfVector> = vectors
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != index)
        .map(|(_, v)| v.clone())
        .collect();
    cider_vectors(&vectors[index], &refs)
}

/// Mean of the raw sentence scores of a video's captions, rounded to one decimal.
pub fn info_score_video(corpus: &Corpus, video_id: &str) -> Result<f64> {
    let video = corpus.video(video_id)?;
    let vectors: Vec<TfIdfVector> = video.captions.iter().map(|c| tfidf(&c.tokens, corpus.df())).collect();
    let scores = (0..vectors.len())
        .map(|i| leave_one_out(video_id, &vectors, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(round_to(mean(&scores), 1))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Rounds half away from zero to `decimals` places.
pub fn round_to(value: f64, decimals: i32) -> f64 {
    let scale = libm::pow(10.0, decimals as f64);
    libm::round(value * scale) / scale
}

/// Integer codebook key of a score at the given precision, e.g. `round(s × 100)`.
pub fn bucket_of(value: f64, decimals: i32) -> i64 {
    libm::round(value * libm::pow(10.0, decimals as f64)) as i64
}

/// Rounded information-content statistics for one caption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoContentScore {
    /// Unrounded leave-one-out CIDEr.
    pub raw_sentence_score: f64,
    pub sentence_score: f64,
    pub video_score: f64,
    pub sentence_bucket: i64,
    pub video_bucket: i64,
}

/// Information-content scores for every caption of a corpus, `[video][caption]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    entries: Vec<Vec<InfoContentScore>>,
}

impl BiasTable {
    pub fn compute(corpus: &Corpus) -> Result<Self> {
        let mut entries = Vec::with_capacity(corpus.num_videos());
        for video in corpus.videos() {
            let vectors: Vec<TfIdfVector> =
                video.captions.iter().map(|c| tfidf(&c.tokens, corpus.df())).collect();
            let raw = (0..vectors.len())
                .map(|i| leave_one_out(&video.video_id, &vectors, i))
                .collect::<Result<Vec<_>>>()?;
            let video_score = round_to(mean(&raw), 1);
            entries.push(
                raw.iter()
                    .map(|&s| InfoContentScore {
                        raw_sentence_score: s,
                        sentence_score: round_to(s, 2),
                        video_score,
                        sentence_bucket: bucket_of(s, 2),
                        video_bucket: bucket_of(video_score, 1),
                    })
                    .collect(),
            );
        }
        Ok(Self { entries })
    }

    pub fn get(&self, video: usize, caption: usize) -> &InfoContentScore {
        &self.entries[video][caption]
    }

    pub fn video(&self, video: usize) -> &[InfoContentScore] {
        &self.entries[video]
    }

    pub fn num_videos(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &InfoContentScore)> {
        self.entries
            .iter()
            .enumerate()
            .flat_map(|(v, caps)| caps.iter().enumerate().map(move |(c, s)| (v, c, s)))
    }

    /// Number of captions per `(video_bucket, sentence_bucket)` pair.
    pub fn pair_frequencies(&self) -> BTreeMap<(i64, i64), usize> {
        let mut out = BTreeMap::new();
        for (_, _, s) in self.iter() {
            *out.entry((s.video_bucket, s.sentence_bucket)).or_insert(0) += 1;
        }
        out
    }
}

/// Which side of the extractor a codebook serves; salts the initializer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Video,
    Sentence,
}

/// Lookup table from score bucket to a learnable vector.
///
/// Entries not yet written are generated on demand from `(seed, side, key)`,
/// so a lookup never depends on the order in which buckets were visited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    dim: usize,
    seed: u64,
    side: Side,
    table: BTreeMap<i64, Vec<f64>>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Codebook {
    pub fn new(dim: usize, seed: u64, side: Side) -> Self {
        Self { dim, seed, side, table: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The seeded initial vector for `key`; never shorter than 1e-3.
    pub fn initial(&self, key: i64) -> Vec<f64> {
        let salt = match self.side {
            Side::Video => 0x5649_4445_4f00_0000u64,
            Side::Sentence => 0x5345_4e54_0000_0000u64,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ salt ^ splitmix(key as u64)));
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect();
            if libm::sqrt(v.iter().map(|x| x * x).sum()) >= MIN_INIT_NORM {
                return v;
            }
        }
    }

    pub fn vector(&self, key: i64) -> Cow<'_, [f64]> {
        match self.table.get(&key) {
            Some(v) => Cow::Borrowed(v),
            None => Cow::Owned(self.initial(key)),
        }
    }

    /// Mutable access, materialising the initial vector if needed.
    pub fn entry_mut(&mut self, key: i64) -> &mut Vec<f64> {
        if !self.table.contains_key(&key) {
            let init = self.initial(key);
            self.table.insert(key, init);
        }
        self.table.get_mut(&key).unwrap()
    }

    /// Overwrites the vector of a bucket.
    pub fn set(&mut self, key: i64, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "codebook",
                detail: alloc::format!("expected {} values, got {}", self.dim, vector.len()),
            });
        }
        self.table.insert(key, vector);
        Ok(())
    }

    /// Buckets that have been materialised.
    pub fn keys(&self) -> impl Iterator<Item = i64> + '_ {
        self.table.keys().copied()
    }
}

/// The video-side `ψ` and sentence-side `φ` codebooks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebooks {
    pub video: Codebook,
    pub sentence: Codebook,
}

/// Leaf handles for the codebook rows used by one batch.
#[derive(Debug, Clone, Default)]
pub struct CodebookVars {
    pub video: BTreeMap<i64, Var>,
    pub sentence: BTreeMap<i64, Var>,
}

impl Codebooks {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { video: Codebook::new(dim, seed, Side::Video), sentence: Codebook::new(dim, seed, Side::Sentence) }
    }

    /// Puts one `1 × d` leaf per distinct bucket of the batch onto the tape.
    /// Repeated buckets share a leaf, hence share their gradient.
    pub fn register(&self, tape: &mut Tape, batch: &Batch) -> Result<CodebookVars> {
        let mut vars = CodebookVars::default();
        let d = self.video.dim;
        for &k in &batch.video_buckets {
            if !vars.video.contains_key(&k) {
                let t = Tensor::matrix(1, d, self.video.vector(k).into_owned())?;
                vars.video.insert(k, tape.leaf(t));
            }
        }
        for &k in &batch.sentence_buckets {
            if !vars.sentence.contains_key(&k) {
                let t = Tensor::matrix(1, d, self.sentence.vector(k).into_owned())?;
                vars.sentence.insert(k, tape.leaf(t));
            }
        }
        Ok(vars)
    }

    /// Gradient-descent update of the rows registered in `vars`.
    pub fn apply_gradients(&mut self, tape: &Tape, vars: &CodebookVars, learning_rate: f64) {
        for (book, map) in [(&mut self.video, &vars.video), (&mut self.sentence, &vars.sentence)] {
            for (&key, &var) in map {
                if let Some(g) = tape.grad(var) {
                    let row = book.entry_mut(key);
                    for (p, gv) in row.iter_mut().zip(g.data()) {
                        *p -= learning_rate * gv;
                    }
                }
            }
        }
    }
}

/// `ŷ_b` and its angle `ξ̂` for one video/sentence bucket pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasScore {
    /// Cosine clamped to `[-1 + ε, 1 - ε]`.
    pub y_hat: f64,
    pub xi_hat: f64,
}

impl BiasScore {
    pub fn from_cosine(cosine: f64) -> Self {
        let y_hat = cosine.clamp(-1.0 + ACOS_EPS, 1.0 - ACOS_EPS);
        Self { y_hat, xi_hat: libm::acos(y_hat) }
    }
}

pub fn bias_score(video_bucket: i64, sentence_bucket: i64, codebooks: &Codebooks) -> Result<BiasScore> {
    let psi = codebooks.video.vector(video_bucket);
    let phi = codebooks.sentence.vector(sentence_bucket);
    let (np, nf) = (norm(&psi), norm(&phi));
    if np == 0.0 || nf == 0.0 {
        return Err(Error::ZeroNorm { context: alloc::format!("codebook pair ({video_bucket}, {sentence_bucket})") });
    }
    let dot: f64 = psi.iter().zip(phi.iter()).map(|(a, b)| a * b).sum();
    Ok(BiasScore::from_cosine(dot / (np * nf)))
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Bias-extractor triplet loss over a batch:
/// `-Σ_i log softmax_j(cos(ψ(v_i), φ(t_j)) / τ₁)[i]`, negatives being the
/// other sentence buckets of the batch.
pub fn loss_b(tape: &mut Tape, batch: &Batch, vars: &CodebookVars, tau1: f64) -> Result<Var> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::BatchTooSmall { need: 2, got: b });
    }
    let videos: Vec<Var> = batch.video_buckets.iter().map(|k| vars.video[k]).collect();
    let sentences: Vec<Var> = batch.sentence_buckets.iter().map(|k| vars.sentence[k]).collect();
    let psi = tape.concat(&videos, 0)?;
    let phi = tape.concat(&sentences, 0)?;
    let cos = tape.cosine_matrix(psi, phi)?;
    let logits = tape.scale(cos, 1.0 / tau1)?;
    let lse = tape.log_sum_exp_axis(logits, 1)?;
    let diag_idx: Vec<usize> = (0..b).map(|i| i * b + i).collect();
    let diag = tape.gather(logits, &diag_idx, &[b, 1])?;
    let per_row = tape.sub(lse, diag)?;
    tape.sum(per_row)
}

/// Rank ordering for the information-content histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RankOrder {
    /// Rank 1 is the highest score; rank grows as the score falls.
    #[default]
    Desc,
    Asc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HistLevel {
    Sentence,
    Video,
}

/// `(rank, frequency)` rows over distinct buckets.
///
/// Sentence level counts captions per sentence bucket; video level counts
/// videos per video bucket.
pub fn histogram(table: &BiasTable, level: HistLevel, order: RankOrder) -> Vec<(usize, usize)> {
    let mut freq: BTreeMap<i64, usize> = BTreeMap::new();
    match level {
        HistLevel::Sentence => {
            for (_, _, s) in table.iter() {
                *freq.entry(s.sentence_bucket).or_insert(0) += 1;
            }
        }
        HistLevel::Video => {
            for v in 0..table.num_videos() {
                if let Some(first) = table.video(v).first() {
                    *freq.entry(first.video_bucket).or_insert(0) += 1;
                }
            }
        }
    }
    // BTreeMap iterates ascending by bucket, i.e. ascending score
    let mut rows: Vec<usize> = freq.into_values().collect();
    if order == RankOrder::Desc {
        rows.reverse();
    }
    rows.into_iter().enumerate().map(|(i, f)| (i + 1, f)).collect()
}

/// Mean `ŷ` over the most frequent and the least frequent `(video, sentence)`
/// bucket pairs, each group holding `ceil(fraction * pairs)` pairs.
/// Pairs are ordered by descending frequency, ties by bucket key.
pub fn frequency_contrast(table: &BiasTable, codebooks: &Codebooks, fraction: f64) -> Result<(f64, f64)> {
    let mut pairs: Vec<((i64, i64), usize)> = table.pair_frequencies().into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let k = libm::ceil(fraction * pairs.len() as f64) as usize;
    let k = k.clamp(1, pairs.len().max(1));
    let mean_y = |group: &[((i64, i64), usize)]| -> Result<f64> {
        let mut sum = 0.0;
        for &((v, s), _) in group {
            sum += bias_score(v, s, codebooks)?.y_hat;
        }
        Ok(sum / group.len() as f64)
    };
    if pairs.is_empty() {
        return Err(Error::EmptyReferences);
    }
    Ok((mean_y(&pairs[..k])?, mean_y(&pairs[pairs.len() - k..])?))
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = alloc::vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with tie-averaged ranks; `None` for constant input.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let (mx, my) = (mean(&rx), mean(&ry));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / libm::sqrt(sxx * syy))
}
