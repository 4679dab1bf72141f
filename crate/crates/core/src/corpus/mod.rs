//! Synthetic word-sequence corpus with exact word alignments, plus the
//! transcript preprocessing rules and on-disk formats.

mod generate;
mod io;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use generate::{generate_corpus, word_template, CorpusConfig, WordTemplate, WORD_POOL};
pub use io::{
    read_alignments, read_corpus, read_features, read_manifest, read_transcripts, read_vocab,
    write_alignments, write_corpus, write_features, write_manifest, write_transcripts,
    write_vocab, FEATURE_MAGIC, FEATURE_VERSION,
};

pub const EOS: &str = "#eos#";
pub const SOS: &str = "#sos#";
pub const UNK: &str = "#unk#";
pub const EOS_ID: usize = 0;
pub const SOS_ID: usize = 1;
pub const UNK_ID: usize = 2;

/// Input frame duration in seconds.
pub const FRAME_SECONDS: f64 = 0.010;

/// Word/index bijection. Indices 0..3 are `#eos#`, `#sos#`, `#unk#`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from non-reserved words, in the given order.
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![EOS.to_string(), SOS.to_string(), UNK.to_string()];
        all.extend(words.into_iter().map(Into::into));
        Self::from_full_list(all)
    }

    /// Builds from a complete list whose first three entries must be the
    /// reserved tokens.
    pub fn from_full_list(words: Vec<String>) -> Result<Self> {
        if words.len() < 3 || words[0] != EOS || words[1] != SOS || words[2] != UNK {
            return Err(Error::Data(
                "vocabulary must start with #eos#, #sos#, #unk#".into(),
            ));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("invalid vocabulary entry {w:?}")));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Words that may appear in transcripts (everything but the reserved three).
    pub fn content_words(&self) -> &[String] {
        &self.words[3..]
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Index of `word`, or `#unk#`.
    pub fn id_or_unk(&self, word: &str) -> usize {
        self.id(word).unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn encode(&self, words: &[String]) -> Vec<usize> {
        words.iter().map(|w| self.id_or_unk(w)).collect()
    }
}

/// Inclusive frame span of one word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordAlignment {
    pub word: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `T x d`, one row per 10 ms frame.
    pub features: Tensor,
    pub words: Vec<String>,
    pub alignments: Option<Vec<WordAlignment>>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Checks the alignment invariants: one span per word, ordered,
    /// non-overlapping, and inside the feature matrix.
    pub fn validate(&self) -> Result<()> {
        let Some(al) = &self.alignments else {
            return Ok(());
        };
        if al.len() != self.words.len() {
            return Err(Error::Data(format!(
                "{}: {} alignments for {} words",
                self.id,
                al.len(),
                self.words.len()
            )));
        }
        let mut prev_end: Option<usize> = None;
        for (a, w) in al.iter().zip(&self.words) {
            if &a.word != w || a.start_frame > a.end_frame {
                return Err(Error::Data(format!("{}: bad alignment {a:?}", self.id)));
            }
            if prev_end.is_some_and(|e| a.start_frame <= e) {
                return Err(Error::Data(format!(
                    "{}: overlapping alignment at {a:?}",
                    self.id
                )));
            }
            prev_end = Some(a.end_frame);
        }
        if let Some(e) = prev_end {
            if e >= self.num_frames() {
                return Err(Error::Data(format!(
                    "{}: alignment ends at frame {e} but utterance has {} frames",
                    self.id,
                    self.num_frames()
                )));
            }
        }
        Ok(())
    }
}

/// Train/validation/test splits with their shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub train: Vec<Utterance>,
    pub val: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = (Split, &Utterance)> {
        Split::ALL
            .into_iter()
            .flat_map(move |s| self.split(s).iter().map(move |u| (s, u)))
    }
}

/// Splits tokens before every apostrophe, keeping the apostrophe on the
/// following piece: `they're` becomes `they`, `'re`. Empty pieces are
/// dropped, so a token that starts with an apostrophe is left whole.
pub fn split_compounds<S: AsRef<str>>(transcript: &[S]) -> Vec<String> {
    let mut out = Vec::with_capacity(transcript.len());
    for token in transcript {
        let token = token.as_ref();
        let mut start = 0;
        for (i, ch) in token.char_indices() {
            if ch == '\'' && i > start {
                out.push(token[start..i].to_string());
                start = i;
            }
        }
        if start < token.len() {
            out.push(token[start..].to_string());
        }
    }
    out
}

/// Keeps utterances with at least `min_words` words, order preserved.
pub fn filter_short(utterances: Vec<Utterance>, min_words: usize) -> Vec<Utterance> {
    utterances
        .into_iter()
        .filter(|u| u.words.len() >= min_words)
        .collect()
}

/// Converts a time in seconds to a 10 ms frame index (floor).
///
/// A 1e-9 guard absorbs decimal representation error so that times lying
/// exactly on a frame boundary (e.g. 9.88 s) map to that frame.
pub fn time_to_frame(t_seconds: f64) -> Result<usize> {
    if !(t_seconds >= 0.0) || !t_seconds.is_finite() {
        return Err(Error::Domain(format!(
            "time {t_seconds} must be finite and non-negative"
        )));
    }
    Ok((t_seconds / FRAME_SECONDS + 1e-9).floor() as usize)
}
