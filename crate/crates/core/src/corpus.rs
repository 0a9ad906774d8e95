//! Caption corpora, tokenization, n-gram extraction and document frequencies.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest n-gram order tracked by default.
pub const DEFAULT_N_MAX: usize = 4;

/// Lowercases, splits on whitespace and strips ASCII punctuation from both ends of each token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| raw.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Contiguous length-`n` windows of `tokens` with their multiplicities.
pub fn ngrams(tokens: &[String], n: usize) -> Result<BTreeMap<&[String], usize>> {
    if n == 0 {
        return Err(Error::InvalidNGramOrder);
    }
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub video_id: String,
    pub text: String,
    pub tokens: Vec<String>,
}

impl Caption {
    pub fn new(video_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self { video_id: video_id.into(), text, tokens }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub captions: Vec<Caption>,
}

/// Per-video document frequencies of every n-gram up to `n_max`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfTable {
    n_max: usize,
    num_videos: usize,
    /// `levels[n - 1]` maps an n-gram to the number of videos containing it.
    levels: Vec<BTreeMap<Vec<String>, usize>>,
}

impl DfTable {
    pub fn build(videos: &[VideoEntry], n_max: usize) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::InvalidNGramOrder);
        }
        let mut levels: Vec<BTreeMap<Vec<String>, usize>> = (0..n_max).map(|_| BTreeMap::new()).collect();
        for video in videos {
            for (n, level) in (1..=n_max).zip(levels.iter_mut()) {
                let mut seen: BTreeSet<&[String]> = BTreeSet::new();
                for caption in &video.captions {
                    seen.extend(ngrams(&caption.tokens, n)?.into_keys());
                }
                for gram in seen {
                    *level.entry(gram.to_vec()).or_insert(0) += 1;
                }
            }
        }
        Ok(Self { n_max, num_videos: videos.len(), levels })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn num_videos(&self) -> usize {
        self.num_videos
    }

    /// Number of videos whose references contain `gram`; 0 when unseen.
    pub fn df(&self, gram: &[String]) -> usize {
        let n = gram.len();
        if n == 0 || n > self.n_max {
            return 0;
        }
        self.levels[n - 1].get(gram).copied().unwrap_or(0)
    }

    /// All stored `(n-gram, df)` entries of order `n`.
    pub fn level(&self, n: usize) -> impl Iterator<Item = (&[String], usize)> {
        self.levels
            .get(n.wrapping_sub(1))
            .into_iter()
            .flat_map(|m| m.iter().map(|(k, &v)| (k.as_slice(), v)))
    }

    pub fn level_len(&self, n: usize) -> usize {
        self.levels.get(n.wrapping_sub(1)).map_or(0, BTreeMap::len)
    }
}

/// Ingested videos plus their document-frequency table. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    videos: Vec<VideoEntry>,
    index: BTreeMap<String, usize>,
    df: DfTable,
}

impl Corpus {
    /// Builds a corpus from `(video_id, captions)` records in input order.
    pub fn from_records<I, S>(records: I, n_max: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<S>)>,
        S: AsRef<str>,
    {
        let mut videos = Vec::new();
        let mut index = BTreeMap::new();
        for (video_id, captions) in records {
            if captions.is_empty() {
                return Err(Error::EmptyCaptions(video_id));
            }
            if index.contains_key(&video_id) {
                return Err(Error::DuplicateVideo(video_id));
            }
            index.insert(video_id.clone(), videos.len());
            let captions = captions.iter().map(|c| Caption::new(video_id.clone(), c.as_ref())).collect();
            videos.push(VideoEntry { video_id, captions });
        }
        let df = DfTable::build(&videos, n_max)?;
        Ok(Self { videos, index, df })
    }

    pub fn videos(&self) -> &[VideoEntry] {
        &self.videos
    }

    pub fn df(&self) -> &DfTable {
        &self.df
    }

    pub fn num_videos(&self) -> usize {
        self.videos.len()
    }

    pub fn num_captions(&self) -> usize {
        self.videos.iter().map(|v| v.captions.len()).sum()
    }

    pub fn video_index(&self, video_id: &str) -> Option<usize> {
        self.index.get(video_id).copied()
    }

    pub fn video(&self, video_id: &str) -> Result<&VideoEntry> {
        self.video_index(video_id)
            .map(|i| &self.videos[i])
            .ok_or_else(|| Error::UnknownVideo(video_id.to_string()))
    }

    /// Every `(video index, caption index)` pair in corpus order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.videos
            .iter()
            .enumerate()
            .flat_map(|(v, e)| (0..e.captions.len()).map(move |c| (v, c)))
            .collect()
    }
}

/// Token vocabulary with id 0 reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Vocab {
    pub const UNK: &'static str = "<unk>";
    pub const UNK_ID: usize = 0;

    /// Every distinct corpus token, sorted, after `<unk>`.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let distinct: BTreeSet<&String> =
            corpus.videos().iter().flat_map(|v| v.captions.iter().flat_map(|c| c.tokens.iter())).collect();
        Self::from_tokens(distinct.into_iter().cloned())
    }

    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut list = alloc::vec![String::from(Self::UNK)];
        list.extend(tokens.into_iter().filter(|t| t != Self::UNK));
        let ids = list.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens: list, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}
