use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

use a2w::corpus::read_transcripts;
use a2w::decoding::{corpus_wer, read_hypotheses, wer, write_hypotheses, write_trace};
use a2w::model::AttentionTrace;

const SMALL: &str = "\
# tiny model and corpus
vocab_size = 4
num_utterances = 40
max_words = 4
encoder_hidden = 8
decoder_hidden = 8
attn_dim = 8
embed_dim = 4
conv_channels = 2
conv_width = 5
epochs = 2
";

fn a2w(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_a2w"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run a2w")
}

fn ok(args: &[&str]) -> String {
    let out = a2w(args);
    assert!(
        out.status.success(),
        "a2w {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Generates and trains the tiny setup; returns (config, corpus, model) paths.
fn trained(dir: &Path) -> (String, String, String) {
    let conf = dir.join("small.conf");
    std::fs::write(&conf, SMALL).unwrap();
    let (conf, corpus, model) = (
        p(&conf).to_string(),
        p(&dir.join("corpus")).to_string(),
        p(&dir.join("model")).to_string(),
    );
    ok(&["gen-corpus", "--out", &corpus, "--config", &conf, "--seed", "3"]);
    ok(&["train", "--corpus", &corpus, "--out", &model, "--config", &conf]);
    (conf, corpus, format!("{model}/checkpoint.a2wc"))
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_corpus_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["gen-corpus", "--out", p(&a), "--seed", "42"]);
    ok(&["gen-corpus", "--out", p(&b), "--seed", "42"]);
    let (ta, tb) = (read_dir_bytes(&a), read_dir_bytes(&b));
    assert!(ta.len() > 300);
    assert_eq!(ta, tb);
}

#[test]
fn vocab_size_flag_adds_reserved_tokens() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-corpus", "--out", p(dir.path()), "--vocab-size", "12"]);
    let vocab = std::fs::read_to_string(dir.path().join("vocab.txt")).unwrap();
    assert_eq!(vocab.lines().count(), 15);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    std::fs::write(&conf, "vocab_size = 6\n").unwrap();
    let out = dir.path().join("corpus");
    ok(&["gen-corpus", "--out", p(&out), "--config", p(&conf), "--vocab-size", "5"]);
    let resolved = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(resolved.lines().any(|l| l == "vocab_size = 5"));
    assert_eq!(std::fs::read_to_string(out.join("vocab.txt")).unwrap().lines().count(), 8);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(a2w(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(a2w(&["gen-corpus"]).status.code(), Some(1));
    assert_eq!(a2w(&["--help"]).status.code(), Some(0));
    let out = p(dir.path());
    assert_eq!(a2w(&["gen-corpus", "--out", out, "--set", "bogus=1"]).status.code(), Some(1));
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "vocab_size 12\n").unwrap();
    assert_eq!(a2w(&["gen-corpus", "--out", out, "--config", p(&conf)]).status.code(), Some(1));
    let missing = dir.path().join("missing.a2wc");
    let r = a2w(&["decode", "--corpus", out, "--ckpt", p(&missing), "--out", out]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing.a2wc"));
    let garbage = dir.path().join("garbage.a2wc");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let r = a2w(&["decode", "--corpus", out, "--ckpt", p(&garbage), "--out", out]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn decode_defaults_to_beam_one_and_prints_file_wer() {
    let dir = tempfile::tempdir().unwrap();
    let (conf, corpus, ckpt) = trained(dir.path());
    let dec = dir.path().join("dec");
    let stdout = ok(&["decode", "--corpus", &corpus, "--ckpt", &ckpt, "--split", "val", "--out", p(&dec), "--config", &conf]);
    let info = std::fs::read_to_string(dec.join("decode.txt")).unwrap();
    assert!(info.lines().any(|l| l == "beam = 1"));

    let refs: HashMap<String, Vec<String>> = read_transcripts(&Path::new(&corpus).join("transcripts.txt"))
        .unwrap()
        .into_iter()
        .collect();
    let hyps = read_hypotheses(&dec.join("hyp.txt")).unwrap();
    let stats: Vec<_> = hyps.iter().map(|(id, h)| wer(&refs[id], h).unwrap()).collect();
    let expected = corpus_wer(&stats).unwrap();
    assert_eq!(stdout.trim(), format!("val WER {expected:.6} over {} utterances", hyps.len()));
    for (id, _) in &hyps {
        assert!(dec.join("traces").join(format!("{id}.a2wa")).exists());
    }
}

#[test]
fn resume_extends_a_finished_run() {
    let dir = tempfile::tempdir().unwrap();
    let (conf, corpus, _) = trained(dir.path());
    let model = dir.path().join("model");
    ok(&["train", "--corpus", &corpus, "--out", p(&model), "--config", &conf, "--resume", "--epochs", "3"]);
    let metrics = std::fs::read_to_string(model.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let fresh = dir.path().join("fresh");
    ok(&["train", "--corpus", &corpus, "--out", p(&fresh), "--config", &conf, "--epochs", "3"]);
    assert_eq!(
        std::fs::read(model.join("checkpoint.a2wc")).unwrap(),
        std::fs::read(fresh.join("checkpoint.a2wc")).unwrap()
    );
}

fn one_hot_trace(frames: usize, peaks: &[usize]) -> AttentionTrace {
    let rows: Vec<Vec<f64>> = peaks
        .iter()
        .map(|&r| {
            let mut row = vec![0.0; frames];
            row[r] = 1.0;
            row
        })
        .collect();
    AttentionTrace::from_rows(&rows).unwrap()
}

/// Decode directory holding one utterance whose attention peaks sit at
/// the given reduced frames, followed by an `#eos#` row.
fn fixture_decode(dir: &Path, hyp: &[&str], peaks: &[usize]) {
    let words: Vec<String> = hyp.iter().map(|w| w.to_string()).collect();
    let mut rows = peaks.to_vec();
    rows.push(peaks.last().copied().unwrap_or(0));
    write_hypotheses(&dir.join("hyp.txt"), &[("u1".to_string(), words)]).unwrap();
    write_trace(&dir.join("traces/u1.a2wa"), "u1", &one_hot_trace(300, &rows)).unwrap();
    std::fs::write(dir.join("decode.txt"), "split = val\nbeam = 1\n").unwrap();
}

#[test]
fn analyze_attn_reproduces_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let dec = dir.path().join("dec");
    let words = ["i", "was", "going", "to", "say"];
    // 4 x [247, 252, 253, 261, 273] = [988, 1008, 1012, 1044, 1092]
    fixture_decode(&dec, &words, &[247, 252, 253, 261, 273]);
    let ends = [988, 1005, 1013, 1042, 1100];
    let mut al = String::new();
    let mut start = 900;
    for (w, e) in words.iter().zip(ends) {
        al.push_str(&format!("u1\t{w}\t{start}\t{e}\n"));
        start = e + 1;
    }
    let al_path = dir.path().join("alignments.txt");
    std::fs::write(&al_path, al).unwrap();
    let out = dir.path().join("report");
    let stdout = ok(&["analyze-attn", "--decodes", p(&dec), "--alignments", p(&al_path), "--zero-wer-only", "--out", p(&out)]);
    assert!(stdout.contains("All Words - Mean"));

    let table = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(table.lines().count(), 5);
    let kv: HashMap<String, String> = std::fs::read_to_string(out.join("report.tsv"))
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('\t').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect();
    let num = |k: &str| kv[k].parse::<f64>().unwrap();
    assert!((num("val.all.mean") + 0.8).abs() < 1e-12);
    assert!((num("val.all.std") - 3.867816).abs() < 1e-6);
    assert_eq!(num("val.without_last.mean"), 1.0);
    assert!((num("val.without_last.std") - 1.581139).abs() < 1e-6);

    let b = a2w::analysis::read_boundaries(&out.join("boundaries.tsv")).unwrap();
    let gt: Vec<usize> = ends.to_vec();
    let errors = a2w::analysis::frame_errors(&b[0].input_frames(), &gt).unwrap();
    assert_eq!(errors, vec![0, 3, -1, 2, -8]);
}

#[test]
fn analyze_attn_with_no_exact_decodes() {
    let dir = tempfile::tempdir().unwrap();
    let dec = dir.path().join("dec");
    fixture_decode(&dec, &["a", "c"], &[1, 2]);
    let al_path = dir.path().join("alignments.txt");
    std::fs::write(&al_path, "u1\ta\t0\t3\nu1\tb\t4\t9\n").unwrap();
    let out = dir.path().join("report");
    let stdout = ok(&["analyze-attn", "--decodes", p(&dec), "--alignments", p(&al_path), "--zero-wer-only", "--out", p(&out)]);
    assert!(stdout.contains("no 0-WER utterances"));
}

#[test]
fn embedding_tools_default_k_and_sample_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (conf, corpus, ckpt) = trained(dir.path());
    let emb = dir.path().join("e.a2we");
    ok(&["embed", "--corpus", &corpus, "--ckpt", &ckpt, "--out", p(&emb), "--config", &conf]);
    let n = a2w::embeddings::read_embeddings(&emb).unwrap().len();
    assert!(n > 300, "only {n} vectors");

    let nn = dir.path().join("nn.tsv");
    ok(&["nn", "--embeddings", p(&emb), "--out", p(&nn)]);
    let report = std::fs::read_to_string(&nn).unwrap();
    let max_rank = report
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap().parse::<usize>().unwrap())
        .max()
        .unwrap();
    assert_eq!(max_rank, 10);

    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["project", "--embeddings", p(&emb), "--out", p(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        std::fs::read(&out).unwrap()
    };
    let pca = run("pca.tsv", &["--method", "pca"]);
    assert_eq!(String::from_utf8_lossy(&pca).lines().count(), 300);
    let tsne_args = ["--set", "tsne_iterations=60", "--seed", "5"];
    assert_eq!(run("t1.tsv", &tsne_args), run("t2.tsv", &tsne_args));
}
