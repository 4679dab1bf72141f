use std::path::Path;

use crate::binio::{read_file, to_u32, write_file, Reader, Writer};
use crate::corpus::{read_transcripts, write_transcripts};
use crate::error::Result;
use crate::model::AttentionTrace;
use crate::numerics::Tensor;

pub const TRACE_MAGIC: &[u8; 4] = b"A2WA";
pub const TRACE_VERSION: u32 = 1;

/// `utt_id<TAB>space-separated words` per line.
pub fn write_hypotheses(path: &Path, entries: &[(String, Vec<String>)]) -> Result<()> {
    write_transcripts(path, entries.iter().map(|(id, w)| (id.as_str(), w.as_slice())))
}

pub fn read_hypotheses(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    read_transcripts(path)
}

pub fn write_trace(path: &Path, utt_id: &str, trace: &AttentionTrace) -> Result<()> {
    let mut w = Writer::default();
    w.bytes(TRACE_MAGIC);
    w.u32(TRACE_VERSION);
    w.string(utt_id)?;
    w.u32(to_u32(trace.num_rows(), "trace rows")?);
    w.u32(to_u32(trace.num_frames(), "trace frames")?);
    for &v in trace.alpha.data() {
        w.f64(v);
    }
    write_file(path, &w.buf)
}

pub fn read_trace(path: &Path) -> Result<(String, AttentionTrace)> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(TRACE_MAGIC)?;
    r.version(TRACE_VERSION)?;
    let id = r.string()?;
    let rows = r.u32()? as usize;
    let frames = r.u32()? as usize;
    let n = rows
        .checked_mul(frames)
        .filter(|&n| n.checked_mul(8) == Some(r.remaining()))
        .ok_or_else(|| r.err(format!("payload does not hold {rows}x{frames} f64 values")))?;
    let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let alpha = Tensor::matrix(rows, frames, data).map_err(|e| r.err(e.to_string()))?;
    Ok((id, AttentionTrace { alpha }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn trace_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.a2wa");
        let t = AttentionTrace::from_rows(&[vec![0.1, 0.2, 0.7], vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]).unwrap();
        write_trace(&p, "utt00001", &t).unwrap();
        let (id, back) = read_trace(&p).unwrap();
        assert_eq!(id, "utt00001");
        assert_eq!(back.alpha.shape(), t.alpha.shape());
        for (a, b) in back.alpha.data().iter().zip(t.alpha.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 8 + 4 + 4 + 6 * 8);
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_trace(&p), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(read_trace(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn hypotheses_roundtrip_with_empty_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hyp.txt");
        let e = vec![
            ("a".to_string(), vec!["x".to_string(), "y".to_string()]),
            ("b".to_string(), vec![]),
        ];
        write_hypotheses(&p, &e).unwrap();
        assert_eq!(read_hypotheses(&p).unwrap(), e);
    }
}
