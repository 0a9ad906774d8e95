//! Brute-force reference implementations of the caption metrics and of InfoNCE.
//!
//! Everything here works on plain token lists with linear scans, so it shares
//! no code with the library: n-grams are rebuilt window by window, document
//! frequencies are recounted per query and LCS uses the full table.

#![allow(dead_code)]

/// `[video][caption][token]`.
pub type Videos = Vec<Vec<Vec<String>>>;

pub fn windows(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

fn occurrences(list: &[Vec<String>], gram: &[String]) -> usize {
    list.iter().filter(|g| g.as_slice() == gram).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

/// Number of videos with at least one caption containing `gram`.
pub fn document_frequency(videos: &Videos, gram: &[String]) -> usize {
    videos
        .iter()
        .filter(|caps| caps.iter().any(|c| windows(c, gram.len()).iter().any(|g| g.as_slice() == gram)))
        .count()
}

/// TF-IDF weights of the distinct order-`n` grams of `tokens`.
pub fn weights(tokens: &[String], videos: &Videos, n: usize) -> Vec<(Vec<String>, f64)> {
    let all = windows(tokens, n);
    let big_n = videos.len() as f64;
    distinct(&all)
        .into_iter()
        .map(|g| {
            let tf = occurrences(&all, &g) as f64 / all.len() as f64;
            let df = document_frequency(videos, &g).max(1) as f64;
            let w = tf * (big_n / df).ln();
            (g, w)
        })
        .collect()
}

fn cosine(a: &[(Vec<String>, f64)], b: &[(Vec<String>, f64)]) -> f64 {
    let mut dot = 0.0;
    for (ga, wa) in a {
        for (gb, wb) in b {
            if ga == gb {
                dot += wa * wb;
            }
        }
    }
    let na = a.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    let nb = b.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Classic CIDEr: `10/N Σ_n mean_j cos(g^n(c), g^n(s_j))`.
pub fn cider(candidate: &[String], references: &[Vec<String>], videos: &Videos, n_max: usize) -> f64 {
    let mut total = 0.0;
    for n in 1..=n_max {
        let c = weights(candidate, videos, n);
        let level: f64 = references.iter().map(|r| cosine(&c, &weights(r, videos, n))).sum();
        total += level / references.len() as f64;
    }
    10.0 * total / n_max as f64
}

/// Leave-one-out CIDEr of caption `i` of video `v`; 0 for a single-caption video.
pub fn sentence_score(videos: &Videos, v: usize, i: usize) -> f64 {
    let caps = &videos[v];
    if caps.len() < 2 {
        return 0.0;
    }
    let refs: Vec<Vec<String>> = caps.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, c)| c.clone()).collect();
    cider(&caps[i], &refs, videos, 4)
}

/// BLEU@1..=max_n, index `n - 1` holding BLEU@n.
pub fn bleu(candidate: &[String], references: &[Vec<String>], max_n: usize) -> Vec<f64> {
    let mut out = vec![0.0; max_n];
    let c = candidate.len();
    if c == 0 {
        return out;
    }
    let mut lens: Vec<usize> = references.iter().map(|r| r.len()).collect();
    lens.sort();
    let mut r = lens[0];
    for &len in &lens {
        if (len as i64 - c as i64).abs() < (r as i64 - c as i64).abs() {
            r = len;
        }
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };

    let mut precisions = Vec::new();
    for n in 1..=max_n {
        let cand = windows(candidate, n);
        let ref_grams: Vec<Vec<Vec<String>>> = references.iter().map(|r| windows(r, n)).collect();
        let mut clipped = 0;
        for g in distinct(&cand) {
            let best = ref_grams.iter().map(|rg| occurrences(rg, &g)).max().unwrap_or(0);
            clipped += occurrences(&cand, &g).min(best);
        }
        let p = if cand.is_empty() { 0.0 } else { clipped as f64 / cand.len() as f64 };
        precisions.push(p);
        if precisions.iter().any(|&p| p == 0.0) {
            continue;
        }
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / n as f64;
        out[n - 1] = bp * log_mean.exp();
    }
    out
}

/// LCS length through the full `(|a|+1) × (|b|+1)` table.
pub fn lcs(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    t[a.len()][b.len()]
}

pub fn rouge_l(candidate: &[String], references: &[Vec<String>]) -> f64 {
    let beta_sq = 1.2;
    let mut best: f64 = 0.0;
    for r in references {
        let l = lcs(candidate, r) as f64;
        if l == 0.0 {
            continue;
        }
        let p = l / candidate.len() as f64;
        let rec = l / r.len() as f64;
        best = best.max((1.0 + beta_sq) * p * rec / (rec + beta_sq * p));
    }
    best
}

/// Random corpus over a small vocabulary: `(video id, captions)` records plus
/// the same captions as token lists.
pub fn random_corpus(rng: &mut impl rand::Rng, max_videos: usize, max_captions: usize, vocab: usize) -> (Vec<(String, Vec<String>)>, Videos) {
    let words: Vec<String> = (0..vocab).map(|i| format!("w{i}")).collect();
    let num_videos = rng.gen_range(1..=max_videos);
    let mut records = Vec::new();
    let mut videos = Vec::new();
    for v in 0..num_videos {
        let num_caps = rng.gen_range(1..=max_captions);
        let mut texts = Vec::new();
        let mut toks = Vec::new();
        for _ in 0..num_caps {
            let len = rng.gen_range(1..=8);
            let caption: Vec<String> = (0..len).map(|_| words[rng.gen_range(0..vocab)].clone()).collect();
            texts.push(caption.join(" "));
            toks.push(caption);
        }
        records.push((format!("v{v}"), texts));
        videos.push(toks);
    }
    (records, videos)
}

pub fn vector_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Standard InfoNCE over paired rows: `Σ_i [ln Σ_j exp(c_ij/τ) − c_ii/τ]`.
pub fn info_nce(videos: &[Vec<f64>], texts: &[Vec<f64>], tau: f64) -> f64 {
    let mut total = 0.0;
    for (i, v) in videos.iter().enumerate() {
        let logits: Vec<f64> = texts.iter().map(|t| vector_cosine(v, t) / tau).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        total += lse - logits[i];
    }
    total
}
