//! Word boundaries from attention peaks, signed frame errors against
//! forced alignments, and the per-split mean/std report.

mod io;

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::corpus::{Split, WordAlignment};
use crate::decoding::{wer, DecodeResult};
use crate::error::{Error, Result};
use crate::model::{AttentionTrace, REDUCTION_FACTOR};

pub use io::{read_boundaries, write_boundaries};

/// How a reduced frame `r` maps back to an input frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FrameMapping {
    /// `4r`
    #[default]
    WindowStart,
    /// `4r + 3`
    WindowEnd,
}

impl FrameMapping {
    pub fn input_frame(self, reduced: usize) -> usize {
        match self {
            FrameMapping::WindowStart => REDUCTION_FACTOR * reduced,
            FrameMapping::WindowEnd => REDUCTION_FACTOR * reduced + REDUCTION_FACTOR - 1,
        }
    }
}

/// Which ground-truth frame a prediction is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferencePoint {
    Start,
    #[default]
    End,
}

impl ReferencePoint {
    pub fn frame(self, a: &WordAlignment) -> usize {
        match self {
            ReferencePoint::Start => a.start_frame,
            ReferencePoint::End => a.end_frame,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordBoundary {
    pub word: String,
    pub reduced_frame: usize,
    pub input_frame: usize,
    /// Peak attention probability.
    pub max_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPrediction {
    pub utt_id: String,
    pub words: Vec<WordBoundary>,
}

impl BoundaryPrediction {
    pub fn input_frames(&self) -> Vec<usize> {
        self.words.iter().map(|w| w.input_frame).collect()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Peak of attention row `k` for each word `k`. Rows past the last word
/// (the `#eos#` step) are ignored.
pub fn predict_boundaries(
    utt_id: &str,
    trace: &AttentionTrace,
    words: &[String],
    mapping: FrameMapping,
) -> Result<BoundaryPrediction> {
    if trace.num_rows() < words.len() {
        return Err(Error::Dimension(format!(
            "{utt_id}: trace has {} rows for {} words",
            trace.num_rows(),
            words.len()
        )));
    }
    let words = words
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let row = trace.row(k);
            let r = argmax_row(row);
            WordBoundary {
                word: w.clone(),
                reduced_frame: r,
                input_frame: mapping.input_frame(r),
                max_prob: row[r],
            }
        })
        .collect();
    Ok(BoundaryPrediction {
        utt_id: utt_id.to_string(),
        words,
    })
}

/// `predicted[k] - groundtruth[k]`; positive means the prediction is late.
pub fn frame_errors(predicted: &[usize], groundtruth: &[usize]) -> Result<Vec<i64>> {
    if predicted.len() != groundtruth.len() {
        return Err(Error::Dimension(format!(
            "{} predicted frames vs {} ground-truth frames",
            predicted.len(),
            groundtruth.len()
        )));
    }
    Ok(predicted
        .iter()
        .zip(groundtruth)
        .map(|(&p, &g)| p as i64 - g as i64)
        .collect())
}

/// Frame errors of a prediction against an utterance's alignment; the
/// words must match one to one.
pub fn utterance_errors(
    pred: &BoundaryPrediction,
    alignment: &[WordAlignment],
    point: ReferencePoint,
) -> Result<Vec<i64>> {
    if pred.words.len() != alignment.len()
        || pred.words.iter().zip(alignment).any(|(p, a)| p.word != a.word)
    {
        return Err(Error::Data(format!(
            "{}: predicted words do not match the alignment",
            pred.utt_id
        )));
    }
    let gt: Vec<usize> = alignment.iter().map(|a| point.frame(a)).collect();
    frame_errors(&pred.input_frames(), &gt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroWerSelection {
    pub ids: Vec<String>,
    /// Selected over decoded; 0 for no decodes.
    pub fraction: f64,
}

/// Ids of decodes whose hypothesis matches the reference exactly, in input
/// order.
pub fn select_zero_wer(
    decodes: &[DecodeResult],
    references: &HashMap<String, Vec<String>>,
) -> Result<ZeroWerSelection> {
    let mut ids = Vec::new();
    for d in decodes {
        let r = references
            .get(&d.utt_id)
            .ok_or_else(|| Error::Data(format!("no reference for {}", d.utt_id)))?;
        if wer(r, &d.hypothesis)?.wer == 0.0 {
            ids.push(d.utt_id.clone());
        }
    }
    let fraction = if decodes.is_empty() {
        0.0
    } else {
        ids.len() as f64 / decodes.len() as f64
    };
    Ok(ZeroWerSelection { ids, fraction })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub words: usize,
}

impl ErrorStats {
    pub fn of(errors: &[i64]) -> Option<Self> {
        if errors.is_empty() {
            return None;
        }
        let n = errors.len() as f64;
        let mean = errors.iter().map(|&e| e as f64).sum::<f64>() / n;
        let var = errors.iter().map(|&e| (e as f64 - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            words: errors.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitReport {
    pub split: Split,
    pub utterances: usize,
    pub all_words: ErrorStats,
    /// Absent when every utterance has a single word.
    pub without_last: Option<ErrorStats>,
    pub zero_wer_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameErrorReport {
    /// In `Split::ALL` order, only splits with data.
    pub splits: Vec<SplitReport>,
}

/// Errors of one utterance, tagged with its split.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceErrors {
    pub split: Split,
    pub utt_id: String,
    pub errors: Vec<i64>,
}

/// Pools word errors per split, once with every word and once without each
/// utterance's final word.
pub fn aggregate_report(
    utterances: &[UtteranceErrors],
    zero_wer_fractions: &HashMap<Split, f64>,
) -> Result<FrameErrorReport> {
    if utterances.is_empty() {
        return Err(Error::Domain("no utterances to aggregate".into()));
    }
    if let Some(u) = utterances.iter().find(|u| u.errors.is_empty()) {
        return Err(Error::Domain(format!("{} contributes no words", u.utt_id)));
    }
    let mut splits = Vec::new();
    for split in Split::ALL {
        let mine: Vec<&UtteranceErrors> = utterances.iter().filter(|u| u.split == split).collect();
        if mine.is_empty() {
            continue;
        }
        let all: Vec<i64> = mine.iter().flat_map(|u| u.errors.iter().copied()).collect();
        let trimmed: Vec<i64> = mine
            .iter()
            .flat_map(|u| u.errors[..u.errors.len() - 1].iter().copied())
            .collect();
        splits.push(SplitReport {
            split,
            utterances: mine.len(),
            all_words: ErrorStats::of(&all).expect("non-empty"),
            without_last: ErrorStats::of(&trimmed),
            zero_wer_fraction: zero_wer_fractions.get(&split).copied(),
        });
    }
    Ok(FrameErrorReport { splits })
}

impl FrameErrorReport {
    pub fn split(&self, split: Split) -> Option<&SplitReport> {
        self.splits.iter().find(|s| s.split == split)
    }

    /// Four rows (without-last mean/std, all-words mean/std) by
    /// Train/Val/Test columns; `-` marks missing data.
    pub fn table(&self) -> String {
        let cell = |split: Split, f: &dyn Fn(&SplitReport) -> Option<f64>| {
            self.split(split)
                .and_then(f)
                .map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
        };
        type Getter = Box<dyn Fn(&SplitReport) -> Option<f64>>;
        let rows: [(&str, Getter); 4] = [
            ("W/o Last Word - Mean", Box::new(|s| s.without_last.map(|e| e.mean))),
            ("W/o Last Word - Std Dev", Box::new(|s| s.without_last.map(|e| e.std))),
            ("All Words - Mean", Box::new(|s| Some(s.all_words.mean))),
            ("All Words - Std Dev", Box::new(|s| Some(s.all_words.std))),
        ];
        let mut out = String::new();
        writeln!(out, "{:<24}{:>10}{:>10}{:>10}", "Avg. Frame Error", "Train", "Val", "Test").unwrap();
        for (label, get) in &rows {
            write!(out, "{label:<24}").unwrap();
            for split in Split::ALL {
                write!(out, "{:>10}", cell(split, get.as_ref())).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// `key<TAB>value` lines such as `val.without_last.mean`.
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        for s in &self.splits {
            let p = s.split.name();
            writeln!(out, "{p}.utterances\t{}", s.utterances).unwrap();
            let mut stats = |tag: &str, e: &ErrorStats| {
                writeln!(out, "{p}.{tag}.words\t{}", e.words).unwrap();
                writeln!(out, "{p}.{tag}.mean\t{}", e.mean).unwrap();
                writeln!(out, "{p}.{tag}.std\t{}", e.std).unwrap();
            };
            stats("all", &s.all_words);
            if let Some(e) = &s.without_last {
                stats("without_last", e);
            }
            if let Some(f) = s.zero_wer_fraction {
                writeln!(out, "{p}.zero_wer_fraction\t{f}").unwrap();
            }
        }
        out
    }
}

/// Share of `|e| <= tolerance`.
pub fn fraction_within(errors: &[i64], tolerance: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|&&e| (e.abs() as f64) <= tolerance).count() as f64 / errors.len() as f64
}
