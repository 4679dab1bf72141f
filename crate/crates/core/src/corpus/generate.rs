use crate::corpus::{filter_short, Corpus, Utterance, Vocabulary, WordAlignment};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Surface forms available for synthetic vocabularies, in the order they
/// are taken. Every entry gets its own acoustic template.
pub const WORD_POOL: &[&str] = &[
    "oh", "i", "see", "that", "'s", "really", "neat", "and", "so", "we", "did", "you", "know",
    "they", "'re", "just", "well", "me", "it", "a", "of", "go", "she", "tell", "because",
    "goes", "funny", "thing", "east", "would", "in", "couple", "the", "to", "yeah", "uh",
    "like", "think", "have", "what", "right", "was", "not", "but", "there", "this", "mean",
    "good",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    /// Content words, excluding the three reserved tokens.
    pub vocab_size: usize,
    pub num_utterances: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Realization length is the template length times a factor drawn
    /// uniformly from `[1 - jitter, 1 + jitter]`.
    pub jitter: f64,
    pub min_duration: usize,
    pub max_duration: usize,
    /// Noise-only frames inserted between consecutive words.
    pub pause_frames: usize,
    /// Train/val/test fractions.
    pub split: [f64; 3],
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            vocab_size: 12,
            num_utterances: 400,
            min_words: 3,
            max_words: 8,
            feature_dim: 16,
            noise_sigma: 0.05,
            jitter: 0.1,
            min_duration: 8,
            max_duration: 40,
            pause_frames: 0,
            split: [0.75, 0.10, 0.15],
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 4 {
            return bad(format!("vocab_size {} < 4", self.vocab_size));
        }
        if self.vocab_size > WORD_POOL.len() {
            return bad(format!(
                "vocab_size {} exceeds the {} available word templates",
                self.vocab_size,
                WORD_POOL.len()
            ));
        }
        if !(3 <= self.min_words && self.min_words <= self.max_words && self.max_words <= 10) {
            return bad(format!(
                "words per utterance [{}, {}] must lie within [3, 10]",
                self.min_words, self.max_words
            ));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if !(0.0..=0.3).contains(&self.jitter) {
            return bad(format!("jitter {} outside [0, 0.3]", self.jitter));
        }
        if !(8 <= self.min_duration && self.min_duration <= self.max_duration && self.max_duration <= 40) {
            return bad(format!(
                "durations [{}, {}] must lie within [8, 40]",
                self.min_duration, self.max_duration
            ));
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} must be in [0,1] and sum to 1", self.split));
        }
        if self.num_utterances == 0 {
            return bad("num_utterances must be positive".into());
        }
        Ok(())
    }

    /// Floor-based split sizes; the remainder goes to train.
    pub fn split_sizes(&self) -> [usize; 3] {
        let n = self.num_utterances;
        let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let val = floor(self.split[1]);
        let test = floor(self.split[2]);
        [n - val - test, val, test]
    }
}

/// Acoustic prototype of a word: a smooth `L x d` trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct WordTemplate {
    pub word: String,
    pub prototype: Tensor,
}

impl WordTemplate {
    pub fn duration(&self) -> usize {
        self.prototype.rows()
    }
}

/// Deterministic template for `word` under corpus seed `seed`.
///
/// Cumulative sum of Gaussian steps, mean-centred per dimension and scaled
/// to unit RMS, stored at `f32` precision.
pub fn word_template(seed: u64, word: &str, config: &CorpusConfig) -> WordTemplate {
    let mut rng = Rng::new(seed).derive(&format!("template/{word}"));
    let len = rng.int_inclusive(config.min_duration, config.max_duration);
    let d = config.feature_dim;
    let mut data = vec![0.0; len * d];
    for k in 0..d {
        let mut acc = 0.0;
        for t in 0..len {
            acc += rng.normal();
            data[t * d + k] = acc;
        }
        let mean = (0..len).map(|t| data[t * d + k]).sum::<f64>() / len as f64;
        for t in 0..len {
            data[t * d + k] -= mean;
        }
    }
    let rms = (data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64).sqrt();
    let scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    for v in &mut data {
        *v = ((*v * scale) as f32) as f64;
    }
    WordTemplate {
        word: word.to_string(),
        prototype: Tensor::matrix(len, d, data).expect("template shape"),
    }
}

/// Linear time warp of `proto` to `new_len` frames.
fn time_warp(proto: &Tensor, new_len: usize) -> Vec<f64> {
    let (len, d) = (proto.rows(), proto.cols());
    if new_len == len {
        return proto.data().to_vec();
    }
    let mut out = vec![0.0; new_len * d];
    for i in 0..new_len {
        let pos = if new_len > 1 {
            i as f64 * (len - 1) as f64 / (new_len - 1) as f64
        } else {
            0.0
        };
        let lo = (pos.floor() as usize).min(len - 1);
        let hi = (lo + 1).min(len - 1);
        let frac = pos - lo as f64;
        for k in 0..d {
            out[i * d + k] = if frac == 0.0 {
                proto.get2(lo, k)
            } else {
                (1.0 - frac) * proto.get2(lo, k) + frac * proto.get2(hi, k)
            };
        }
    }
    out
}

/// Generates the full corpus. Deterministic in `(config, rng seed)`; only
/// draws from `rng` (templates use streams derived from its seed).
pub fn generate_corpus(config: &CorpusConfig, rng: &mut Rng) -> Result<Corpus> {
    config.validate()?;
    let words: Vec<&str> = WORD_POOL[..config.vocab_size].to_vec();
    let vocab = Vocabulary::new(words.iter().copied())?;
    let templates: Vec<WordTemplate> = words
        .iter()
        .map(|w| word_template(rng.seed(), w, config))
        .collect();
    let d = config.feature_dim;

    let mut utterances = Vec::with_capacity(config.num_utterances);
    for u in 0..config.num_utterances {
        let n_words = rng.int_inclusive(config.min_words, config.max_words);
        let mut frames: Vec<f64> = Vec::new();
        let mut transcript = Vec::with_capacity(n_words);
        let mut alignments = Vec::with_capacity(n_words);
        for w in 0..n_words {
            if w > 0 && config.pause_frames > 0 {
                for _ in 0..config.pause_frames * d {
                    let v = if config.noise_sigma > 0.0 {
                        config.noise_sigma * rng.normal()
                    } else {
                        0.0
                    };
                    frames.push((v as f32) as f64);
                }
            }
            let tpl = &templates[rng.below(templates.len())];
            let factor = rng.uniform_range(1.0 - config.jitter, 1.0 + config.jitter);
            let new_len = ((tpl.duration() as f64 * factor).round() as usize).max(2);
            let mut realization = time_warp(&tpl.prototype, new_len);
            if config.noise_sigma > 0.0 {
                for v in &mut realization {
                    *v += config.noise_sigma * rng.normal();
                }
            }
            let start = frames.len() / d;
            frames.extend(realization.iter().map(|&v| (v as f32) as f64));
            alignments.push(WordAlignment {
                word: tpl.word.clone(),
                start_frame: start,
                end_frame: start + new_len - 1,
            });
            transcript.push(tpl.word.clone());
        }
        let t = frames.len() / d;
        utterances.push(Utterance {
            id: format!("utt{u:05}"),
            features: Tensor::matrix(t, d, frames)?,
            words: transcript,
            alignments: Some(alignments),
        });
    }

    let [n_train, n_val, _] = config.split_sizes();
    let mut rest = utterances;
    let mut val_test = rest.split_off(n_train);
    let test = val_test.split_off(n_val);
    Ok(Corpus {
        vocab,
        train: filter_short(rest, 3),
        val: filter_short(val_test, 3),
        test: filter_short(test, 3),
    })
}
