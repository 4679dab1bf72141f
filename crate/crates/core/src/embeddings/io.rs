use std::fmt::Write as _;
use std::path::Path;

use crate::binio::{parse_num, read_file, read_text, tab_fields, to_u32, write_file, Reader, Writer};
use crate::embeddings::{Neighbor, SpeechWordVector};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"A2WE";
pub const EMBEDDING_VERSION: u32 = 1;

pub fn write_embeddings(path: &Path, vectors: &[SpeechWordVector]) -> Result<()> {
    let dim = vectors.first().map_or(0, |v| v.vector.len());
    if let Some(v) = vectors.iter().find(|v| v.vector.len() != dim) {
        return Err(Error::Dimension(format!(
            "{}/{}: vector of dim {} in a file of dim {dim}",
            v.utt_id,
            v.word,
            v.vector.len()
        )));
    }
    let mut w = Writer::default();
    w.bytes(EMBEDDING_MAGIC);
    w.u32(EMBEDDING_VERSION);
    w.u32(to_u32(vectors.len(), "embedding count")?);
    w.u32(to_u32(dim, "embedding dim")?);
    for v in vectors {
        w.string(&v.utt_id)?;
        w.string(&v.word)?;
        w.u32(to_u32(v.position, "position")?);
        for &x in &v.vector {
            w.f64(x);
        }
    }
    write_file(path, &w.buf)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<SpeechWordVector>> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(EMBEDDING_MAGIC)?;
    r.version(EMBEDDING_VERSION)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(r.remaining()));
    for _ in 0..count {
        let utt_id = r.string()?;
        let word = r.string()?;
        let position = r.u32()? as usize;
        let vector = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        out.push(SpeechWordVector {
            utt_id,
            word,
            position,
            vector,
        });
    }
    r.finish()?;
    Ok(out)
}

/// `utt_id<TAB>word<TAB>x<TAB>y` per point.
pub fn write_projection(path: &Path, labels: &[(&str, &str)], coords: &Tensor) -> Result<()> {
    if coords.rows() != labels.len() || coords.cols() != 2 {
        return Err(Error::Dimension(format!(
            "{} labels for a {:?} projection",
            labels.len(),
            coords.shape()
        )));
    }
    let mut s = String::new();
    for (i, (id, word)) in labels.iter().enumerate() {
        writeln!(s, "{id}\t{word}\t{}\t{}", coords.get2(i, 0), coords.get2(i, 1)).unwrap();
    }
    write_file(path, s.as_bytes())
}

pub fn read_projection(path: &Path) -> Result<Vec<(String, String, f64, f64)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let f = tab_fields(line, 4, path, i)?;
        out.push((f[0].to_string(), f[1].to_string(), parse_num(f[2], path, i)?, parse_num(f[3], path, i)?));
    }
    Ok(out)
}

/// `query_word<TAB>rank<TAB>neighbor_word<TAB>score`, ranks from 1.
pub fn write_nn_report(path: &Path, rows: &[(String, Vec<(String, Neighbor)>)]) -> Result<()> {
    let mut s = String::new();
    for (query, neighbors) in rows {
        for (rank, (word, n)) in neighbors.iter().enumerate() {
            writeln!(s, "{query}\t{}\t{word}\t{}", rank + 1, n.score).unwrap();
        }
    }
    write_file(path, s.as_bytes())
}
