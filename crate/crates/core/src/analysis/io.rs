use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::{BoundaryPrediction, WordBoundary};
use crate::binio::{parse_num, read_text, tab_fields, write_file};
use crate::error::Result;

/// `utt_id<TAB>word<TAB>reduced_frame<TAB>input_frame<TAB>max_prob` per word.
pub fn write_boundaries(path: &Path, predictions: &[BoundaryPrediction]) -> Result<()> {
    let mut s = String::new();
    for p in predictions {
        for w in &p.words {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                p.utt_id, w.word, w.reduced_frame, w.input_frame, w.max_prob
            )
            .unwrap();
        }
    }
    write_file(path, s.as_bytes())
}

/// Groups consecutive lines with the same id.
pub fn read_boundaries(path: &Path) -> Result<Vec<BoundaryPrediction>> {
    let text = read_text(path)?;
    let mut out: Vec<BoundaryPrediction> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let f = tab_fields(line, 5, path, i)?;
        let w = WordBoundary {
            word: f[1].to_string(),
            reduced_frame: parse_num(f[2], path, i)?,
            input_frame: parse_num(f[3], path, i)?,
            max_prob: parse_num(f[4], path, i)?,
        };
        match out.last_mut() {
            Some(p) if p.utt_id == f[0] => p.words.push(w),
            _ => out.push(BoundaryPrediction {
                utt_id: f[0].to_string(),
                words: vec![w],
            }),
        }
    }
    Ok(out)
}
