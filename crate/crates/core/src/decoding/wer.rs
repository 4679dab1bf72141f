use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WerStats {
    pub wer: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl WerStats {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

#[derive(Clone, Copy)]
struct Cell {
    s: usize,
    d: usize,
    i: usize,
}

impl Cell {
    fn key(&self) -> (usize, usize) {
        (self.s + self.d + self.i, self.d + self.i)
    }
}

/// Levenshtein alignment with unit costs. Among minimum-cost alignments the
/// one with the most substitutions wins; the (S, D, I) split is then unique,
/// which makes `D(ref, hyp) == I(hyp, ref)` hold exactly.
pub fn wer<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> Result<WerStats> {
    if reference.is_empty() {
        return Err(Error::Domain("WER undefined for an empty reference".into()));
    }
    let (n, m) = (reference.len(), hypothesis.len());
    let mut prev: Vec<Cell> = (0..=m).map(|j| Cell { s: 0, d: 0, i: j }).collect();
    for i in 1..=n {
        let mut cur = Vec::with_capacity(m + 1);
        cur.push(Cell { s: 0, d: i, i: 0 });
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let diag = prev[j - 1];
            let mut best = Cell {
                s: diag.s + usize::from(!same),
                ..diag
            };
            let left = cur[j - 1];
            let ins = Cell { i: left.i + 1, ..left };
            if ins.key() < best.key() {
                best = ins;
            }
            let up = prev[j];
            let del = Cell { d: up.d + 1, ..up };
            if del.key() < best.key() {
                best = del;
            }
            cur.push(best);
        }
        prev = cur;
    }
    let c = prev[m];
    Ok(WerStats {
        wer: (c.s + c.d + c.i) as f64 / n as f64,
        substitutions: c.s,
        deletions: c.d,
        insertions: c.i,
        reference_len: n,
    })
}

/// Total errors over total reference words.
pub fn corpus_wer(stats: &[WerStats]) -> Result<f64> {
    let words: usize = stats.iter().map(|s| s.reference_len).sum();
    if words == 0 {
        return Err(Error::Domain("no reference words".into()));
    }
    Ok(stats.iter().map(WerStats::errors).sum::<usize>() as f64 / words as f64)
}
