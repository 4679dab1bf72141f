use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::binio::{parse_num, read_file, read_text, tab_fields, to_u32, write_file, Reader, Writer};
use crate::corpus::{Corpus, Split, Utterance, Vocabulary, WordAlignment};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"A2WF";
pub const FEATURE_VERSION: u32 = 1;

/// Writes a `T x d` feature matrix: magic, version, `T`, `d` (all `u32`
/// little-endian) followed by `T*d` `f32` values row-major. Values are
/// narrowed to `f32`.
pub fn write_features(path: &Path, features: &Tensor) -> Result<()> {
    if features.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "features must be T x d, got {:?}",
            features.shape()
        )));
    }
    let mut w = Writer::default();
    w.bytes(FEATURE_MAGIC);
    w.u32(FEATURE_VERSION);
    w.u32(to_u32(features.rows(), "frame count")?);
    w.u32(to_u32(features.cols(), "feature dim")?);
    for &v in features.data() {
        w.f32(v as f32);
    }
    write_file(path, &w.buf)
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(FEATURE_MAGIC)?;
    r.version(FEATURE_VERSION)?;
    let t = r.u32()? as usize;
    let d = r.u32()? as usize;
    if t == 0 || d == 0 {
        return Err(r.err(format!("empty feature shape {t}x{d}")));
    }
    let count = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4).map(|_| n))
        .ok_or_else(|| r.err(format!("shape {t}x{d} overflows")))?;
    if count * 4 != r.remaining() {
        return Err(r.err(format!(
            "shape {t}x{d} needs {} payload bytes, found {}",
            count * 4,
            r.remaining()
        )));
    }
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(f64::from(r.f32()?));
    }
    Tensor::matrix(t, d, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut s = String::new();
    for w in vocab.words() {
        s.push_str(w);
        s.push('\n');
    }
    write_file(path, s.as_bytes())
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = read_text(path)?;
    let words: Vec<String> = text.lines().map(str::to_string).collect();
    Vocabulary::from_full_list(words).map_err(|e| Error::format(path, e.to_string()))
}

/// `utt_id<TAB>word<TAB>start_frame<TAB>end_frame` per line.
pub fn write_alignments<'a, I>(path: &Path, utterances: I) -> Result<()>
where
    I: IntoIterator<Item = &'a Utterance>,
{
    let mut s = String::new();
    for u in utterances {
        for a in u.alignments.iter().flatten() {
            writeln!(s, "{}\t{}\t{}\t{}", u.id, a.word, a.start_frame, a.end_frame).unwrap();
        }
    }
    write_file(path, s.as_bytes())
}

/// Alignments grouped by utterance id, in file order within each utterance.
pub fn read_alignments(path: &Path) -> Result<HashMap<String, Vec<WordAlignment>>> {
    let text = read_text(path)?;
    let mut out: HashMap<String, Vec<WordAlignment>> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let f = tab_fields(line, 4, path, i)?;
        out.entry(f[0].to_string()).or_default().push(WordAlignment {
            word: f[1].to_string(),
            start_frame: parse_num(f[2], path, i)?,
            end_frame: parse_num(f[3], path, i)?,
        });
    }
    Ok(out)
}

/// `utt_id<TAB>space-separated words` per line.
pub fn write_transcripts<'a, I>(path: &Path, entries: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a [String])>,
{
    let mut s = String::new();
    for (id, words) in entries {
        writeln!(s, "{id}\t{}", words.join(" ")).unwrap();
    }
    write_file(path, s.as_bytes())
}

/// Transcripts in file order.
pub fn read_transcripts(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let f = tab_fields(line, 2, path, i)?;
        out.push((
            f[0].to_string(),
            f[1].split_whitespace().map(str::to_string).collect(),
        ));
    }
    Ok(out)
}

/// `utt_id<TAB>relative feature path` per line.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut s = String::new();
    for (id, rel) in entries {
        writeln!(s, "{id}\t{rel}").unwrap();
    }
    write_file(path, s.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let f = tab_fields(line, 2, path, i)?;
        out.push((f[0].to_string(), f[1].to_string()));
    }
    Ok(out)
}

fn feature_rel_path(id: &str) -> String {
    format!("feats/{id}.a2wf")
}

/// Writes the corpus tree: `vocab.txt`, `{train,val,test}.lst`,
/// `transcripts.txt`, `alignments.txt` and `feats/<utt_id>.a2wf`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    write_vocab(&dir.join("vocab.txt"), &corpus.vocab)?;
    for split in Split::ALL {
        let utts = corpus.split(split);
        let entries: Vec<(String, String)> = utts
            .iter()
            .map(|u| (u.id.clone(), feature_rel_path(&u.id)))
            .collect();
        write_manifest(&dir.join(format!("{}.lst", split.name())), &entries)?;
        for (u, (_, rel)) in utts.iter().zip(&entries) {
            write_features(&dir.join(rel), &u.features)?;
        }
    }
    let all: Vec<&Utterance> = corpus.all().map(|(_, u)| u).collect();
    write_transcripts(
        &dir.join("transcripts.txt"),
        all.iter().map(|u| (u.id.as_str(), u.words.as_slice())),
    )?;
    write_alignments(&dir.join("alignments.txt"), all.iter().copied())
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let vocab = read_vocab(&dir.join("vocab.txt"))?;
    let transcripts: HashMap<String, Vec<String>> =
        read_transcripts(&dir.join("transcripts.txt"))?.into_iter().collect();
    let align_path = dir.join("alignments.txt");
    let mut alignments = if align_path.exists() {
        read_alignments(&align_path)?
    } else {
        HashMap::new()
    };
    let mut read_split = |split: Split| -> Result<Vec<Utterance>> {
        let manifest_path = dir.join(format!("{}.lst", split.name()));
        let mut utts = Vec::new();
        for (id, rel) in read_manifest(&manifest_path)? {
            let feat_path: PathBuf = dir.join(&rel);
            let features = read_features(&feat_path)?;
            let words = transcripts.get(&id).cloned().ok_or_else(|| {
                Error::Data(format!("no transcript for {id} listed in {}", manifest_path.display()))
            })?;
            let u = Utterance {
                id: id.clone(),
                features,
                words,
                alignments: alignments.remove(&id),
            };
            u.validate()?;
            utts.push(u);
        }
        Ok(utts)
    };
    let train = read_split(Split::Train)?;
    let val = read_split(Split::Val)?;
    let test = read_split(Split::Test)?;
    Ok(Corpus {
        vocab,
        train,
        val,
        test,
    })
}
