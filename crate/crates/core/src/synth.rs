//! Synthetic long-tail caption corpora.
//!
//! Every video gets a subject, an action and a place. Most of its captions
//! are coarse (subject + action), some add the place, and a minority append
//! Zipf-distributed detail phrases, so specific captions are rare.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const SUBJECTS: &[&str] = &[
    "dog", "cat", "man", "woman", "child", "bird", "horse", "chef", "girl", "boy", "player", "dancer",
    "monkey", "band", "car", "baby", "teacher", "crowd", "rabbit", "singer",
];
const ACTIONS: &[&str] = &[
    "running", "jumping", "eating", "singing", "dancing", "cooking", "swimming", "playing", "talking",
    "driving", "sleeping", "climbing", "walking", "painting", "riding", "laughing",
];
const PLACES: &[&str] = &[
    "park", "kitchen", "street", "beach", "stage", "field", "garden", "forest", "room", "pool", "road",
    "studio",
];
const ADJECTIVES: &[&str] = &[
    "red", "small", "wooden", "shiny", "old", "striped", "tall", "bright", "wet", "broken", "golden",
    "soft", "heavy", "plastic", "green", "blue", "noisy", "dusty", "tiny", "silver",
];
const NOUNS: &[&str] = &[
    "hat", "ball", "scarf", "bucket", "guitar", "umbrella", "bag", "rope", "lamp", "bottle", "chair",
    "flag", "basket", "kite", "drum", "box", "bell", "shoe", "cup", "book",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZipfConfig {
    pub num_videos: usize,
    pub captions_per_video: usize,
    /// Exponent `s` of the `1 / k^s` detail-phrase distribution.
    pub exponent: f64,
    /// Probability of a coarse caption.
    pub head_share: f64,
    /// Probability of a caption that adds the place.
    pub mid_share: f64,
    pub max_details: usize,
    pub seed: u64,
}

impl Default for ZipfConfig {
    fn default() -> Self {
        Self {
            num_videos: 50,
            captions_per_video: 20,
            exponent: 1.1,
            head_share: 0.5,
            mid_share: 0.3,
            max_details: 3,
            seed: 0,
        }
    }
}

/// Detail phrase of Zipf rank `k` (0-based).
fn detail(k: usize) -> String {
    format!("{} {}", ADJECTIVES[k % ADJECTIVES.len()], NOUNS[(k / ADJECTIVES.len()) % NOUNS.len()])
}

/// `(video_id, captions)` records in video order.
pub fn zipf_corpus(config: &ZipfConfig) -> Vec<(String, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let phrases = ADJECTIVES.len() * NOUNS.len();
    let weights: Vec<f64> = (1..=phrases).map(|k| 1.0 / libm::pow(k as f64, config.exponent)).collect();
    let zipf = WeightedIndex::new(&weights).expect("positive weights");
    (0..config.num_videos)
        .map(|v| {
            let subject = SUBJECTS[rng.gen_range(0..SUBJECTS.len())];
            let action = ACTIONS[rng.gen_range(0..ACTIONS.len())];
            let place = PLACES[rng.gen_range(0..PLACES.len())];
            let head = format!("a {} is {}", subject, action);
            let mid = format!("{} in the {}", head, place);
            let captions = (0..config.captions_per_video)
                .map(|_| {
                    let u: f64 = rng.gen();
                    if u < config.head_share {
                        head.clone()
                    } else if u < config.head_share + config.mid_share {
                        mid.clone()
                    } else {
                        let n = rng.gen_range(1..=config.max_details.max(1));
                        let details: Vec<String> = (0..n).map(|_| detail(zipf.sample(&mut rng))).collect();
                        format!("{} with a {}", mid, details.join(" and a "))
                    }
                })
                .collect();
            (format!("video{}", v), captions)
        })
        .collect()
}
