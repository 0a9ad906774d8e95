//! Caption metrics: CIDEr, BLEU@N and ROUGE-L.
//!
//! CIDEr here is the classic consensus score without the length penalty of
//! CIDEr-D. A cosine against an empty or all-zero TF-IDF vector counts as 0.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{ngrams, DfTable};
use crate::error::{Error, Result};

/// ROUGE-L recall weight `β²`.
pub const ROUGE_BETA_SQ: f64 = 1.2;

/// CIDEr scale factor.
pub const CIDER_SCALE: f64 = 10.0;

/// Sparse TF-IDF weights, one map per n-gram order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TfIdfVector {
    levels: Vec<BTreeMap<Vec<String>, f64>>,
    norms: Vec<f64>,
}

impl TfIdfVector {
    pub fn level(&self, n: usize) -> &BTreeMap<Vec<String>, f64> {
        &self.levels[n - 1]
    }

    pub fn norm(&self, n: usize) -> f64 {
        self.norms[n - 1]
    }

    pub fn n_max(&self) -> usize {
        self.levels.len()
    }

    /// Cosine at order `n`; zero when either side has zero norm.
    pub fn cosine(&self, other: &TfIdfVector, n: usize) -> f64 {
        let (na, nb) = (self.norm(n), other.norm(n));
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let (a, b) = (self.level(n), other.level(n));
        let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let dot: f64 = small.iter().filter_map(|(k, w)| large.get(k).map(|u| w * u)).sum();
        dot / (na * nb)
    }
}

/// `g_ω = tf(ω) · ln(N / max(df(ω), 1))` per order; zero weights are not stored.
pub fn tfidf(tokens: &[String], df: &DfTable) -> TfIdfVector {
    let num_videos = df.num_videos().max(1) as f64;
    let mut levels = Vec::with_capacity(df.n_max());
    let mut norms = Vec::with_capacity(df.n_max());
    for n in 1..=df.n_max() {
        let counts = ngrams(tokens, n).expect("n >= 1");
        let total: usize = counts.values().sum();
        let mut level = BTreeMap::new();
        for (gram, count) in counts {
            let idf = libm::log(num_videos / df.df(gram).max(1) as f64);
            let weight = count as f64 / total as f64 * idf;
            if weight > 0.0 {
                level.insert(gram.to_vec(), weight);
            }
        }
        norms.push(libm::sqrt(level.values().map(|w| w * w).sum()));
        levels.push(level);
    }
    TfIdfVector { levels, norms }
}

/// CIDEr from precomputed TF-IDF vectors.
pub fn cider_vectors(candidate: &TfIdfVector, references: &[TfIdfVector]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::EmptyReferences);
    }
    let n_max = candidate.n_max();
    let m = references.len() as f64;
    let mut total = 0.0;
    for n in 1..=n_max {
        let level: f64 = references.iter().map(|r| candidate.cosine(r, n)).sum();
        total += level / m;
    }
    Ok(CIDER_SCALE * total / n_max as f64)
}

pub fn cider(candidate: &[String], references: &[Vec<String>], df: &DfTable) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::EmptyReferences);
    }
    let cand = tfidf(candidate, df);
    let refs: Vec<TfIdfVector> = references.iter().map(|r| tfidf(r, df)).collect();
    cider_vectors(&cand, &refs)
}

/// BLEU@1..=max_n for one candidate: clipped n-gram precision, closest-length
/// brevity penalty, uniform geometric mean. Key `N` holds BLEU@N.
pub fn bleu(candidate: &[String], references: &[Vec<String>], max_n: usize) -> Result<BTreeMap<usize, f64>> {
    if references.is_empty() {
        return Err(Error::EmptyReferences);
    }
    if max_n == 0 {
        return Err(Error::InvalidNGramOrder);
    }
    let mut out: BTreeMap<usize, f64> = (1..=max_n).map(|n| (n, 0.0)).collect();
    if candidate.is_empty() {
        return Ok(out);
    }

    let c = candidate.len();
    // closest reference length, ties broken toward the shorter one
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap();
    let bp = if c > r { 1.0 } else { libm::exp(1.0 - r as f64 / c as f64) };

    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngrams(candidate, n)?;
        let total: usize = cand.values().sum();
        let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
        for reference in references {
            for (gram, count) in ngrams(reference, n)? {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
        let clipped: usize = cand.iter().map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        if clipped == 0 || total == 0 {
            // every higher order also has a zero precision factor
            break;
        }
        log_sum += libm::log(clipped as f64 / total as f64);
        out.insert(n, bp * libm::exp(log_sum / n as f64));
    }
    Ok(out)
}

/// Length of the longest common subsequence, two-row dynamic program.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure with `β² = 1.2`, maximised over references.
pub fn rouge_l(candidate: &[String], references: &[Vec<String>]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::EmptyReferences);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let best = references
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| {
            let lcs = lcs_len(candidate, r) as f64;
            if lcs == 0.0 {
                return 0.0;
            }
            let p = lcs / candidate.len() as f64;
            let rec = lcs / r.len() as f64;
            (1.0 + ROUGE_BETA_SQ) * p * rec / (rec + ROUGE_BETA_SQ * p)
        })
        .fold(0.0, f64::max);
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: BTreeMap<usize, f64>,
    pub rouge_l: f64,
    pub cider: f64,
}

impl MetricReport {
    pub fn compute(candidate: &[String], references: &[Vec<String>], df: &DfTable) -> Result<Self> {
        Ok(Self {
            bleu: bleu(candidate, references, 4)?,
            rouge_l: rouge_l(candidate, references)?,
            cider: cider(candidate, references, df)?,
        })
    }

    /// Element-wise arithmetic mean of several reports.
    pub fn mean(reports: &[MetricReport]) -> Option<Self> {
        let first = reports.first()?;
        let k = reports.len() as f64;
        let bleu = first
            .bleu
            .keys()
            .map(|&n| (n, reports.iter().map(|r| r.bleu.get(&n).copied().unwrap_or(0.0)).sum::<f64>() / k))
            .collect();
        Some(Self {
            bleu,
            rouge_l: reports.iter().map(|r| r.rouge_l).sum::<f64>() / k,
            cider: reports.iter().map(|r| r.cider).sum::<f64>() / k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Corpus};
    use alloc::string::ToString;

    fn corpus(records: &[(&str, &[&str])]) -> Corpus {
        Corpus::from_records(
            records.iter().map(|(id, caps)| (id.to_string(), caps.to_vec())),
            4,
        )
        .unwrap()
    }

    #[test]
    fn tfidf_hand_value() {
        let c = corpus(&[("v1", &["a dog"]), ("v2", &["a cat"])]);
        let v = tfidf(&tokenize("a dog"), c.df());
        let dog = v.level(1).get(&tokenize("dog")).copied().unwrap();
        assert!((dog - 0.5 * libm::log(2.0)).abs() < 1e-15);
        // "a" appears in every video: idf 0, not stored
        assert!(v.level(1).get(&tokenize("a")).is_none());
        assert_eq!(tfidf(&[], c.df()).level(1).len(), 0);
    }

    #[test]
    fn cider_identity_and_orthogonality() {
        let c = corpus(&[
            ("v1", &["a brown dog runs fast"]),
            ("v2", &["a cat sleeps on a sofa"]),
            ("v3", &["the man cooks pasta"]),
        ]);
        let cand = tokenize("a brown dog runs fast");
        let score = cider(&cand, &[cand.clone()], c.df()).unwrap();
        assert!((score - 10.0).abs() < 1e-12);
        let other = tokenize("the man cooks pasta");
        assert_eq!(cider(&cand, &[other], c.df()).unwrap(), 0.0);
        assert_eq!(cider(&cand, &[], c.df()), Err(Error::EmptyReferences));
    }

    #[test]
    fn bleu_basics() {
        let s = tokenize("a dog is running in the park");
        let b = bleu(&s, &[s.clone()], 4).unwrap();
        assert!((b[&4] - 1.0).abs() < 1e-15);
        let b = bleu(&s, &[tokenize("cats sleep")], 4).unwrap();
        assert_eq!(b[&1], 0.0);
        let b = bleu(&[], &[s.clone()], 4).unwrap();
        assert!(b.values().all(|&v| v == 0.0));
    }

    #[test]
    fn rouge_basics() {
        let s = tokenize("a dog is running");
        assert!((rouge_l(&s, &[s.clone()]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(rouge_l(&s, &[tokenize("cats sleep")]).unwrap(), 0.0);
        assert_eq!(rouge_l(&[], &[s.clone()]).unwrap(), 0.0);
        assert_eq!(lcs_len(&tokenize("a b c d"), &tokenize("b d a")), 2);
    }
}
