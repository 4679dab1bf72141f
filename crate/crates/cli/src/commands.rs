use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use a2w::analysis::{
    aggregate_report, fraction_within, predict_boundaries, utterance_errors, write_boundaries, BoundaryPrediction,
    UtteranceErrors,
};
use a2w::corpus::{generate_corpus, read_alignments, read_corpus, write_corpus, Corpus, Split, WordAlignment};
use a2w::decoding::{beam_decode, corpus_wer, read_hypotheses, read_trace, wer, write_hypotheses, write_trace};
use a2w::embeddings::{
    extract_embeddings, neighbors_of, pca_project, read_embeddings, same_word_purity, sample_indices, to_matrix,
    tsne_project, write_embeddings, write_nn_report, write_projection,
};
use a2w::model::encode;
use a2w::numerics::Rng;
use a2w::training::{load_checkpoint, Checkpoint, Trainer, CHECKPOINT_FILE};
use a2w::{Error, Result};

use crate::config::{Projection, RunConfig};
use crate::{Command, Common};

const DECODE_INFO: &str = "decode.txt";
const HYP_FILE: &str = "hyp.txt";
const TRACE_DIR: &str = "traces";
const CONFIG_FILE: &str = "config.txt";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Config file first, then `--set` overrides, then dedicated flags.
fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.load_file(path)?;
    }
    cfg.apply_overrides(&common.overrides)?;
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    log::info!("resolved config:\n{}", cfg.render());
    Ok(cfg)
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenCorpus {
            out,
            seed,
            vocab_size,
            common,
        } => {
            let cfg = resolve(
                &common,
                &[("corpus_seed", opt(&seed)), ("vocab_size", opt(&vocab_size))],
            )?;
            gen_corpus(&cfg, &out)
        }
        Command::Train {
            corpus,
            out,
            epochs,
            seed,
            resume,
            common,
        } => {
            let cfg = resolve(&common, &[("epochs", opt(&epochs)), ("init_seed", opt(&seed))])?;
            train(&cfg, &corpus, &out, resume)
        }
        Command::Decode {
            corpus,
            ckpt,
            split,
            beam,
            out,
            common,
        } => {
            let cfg = resolve(&common, &[("beam", opt(&beam))])?;
            decode(&cfg, &corpus, &ckpt, Split::parse(&split)?, &out)
        }
        Command::AnalyzeAttn {
            decodes,
            alignments,
            zero_wer_only,
            drop_last_word,
            out,
            common,
        } => {
            let cfg = resolve(&common, &[])?;
            analyze(&cfg, &decodes, &alignments, zero_wer_only, drop_last_word, &out)
        }
        Command::Embed {
            corpus,
            ckpt,
            split,
            out,
            common,
        } => {
            let cfg = resolve(&common, &[])?;
            embed(&cfg, &corpus, &ckpt, Split::parse(&split)?, &out)
        }
        Command::Nn {
            embeddings,
            k,
            metric,
            words,
            out,
            common,
        } => {
            let cfg = resolve(&common, &[("k", opt(&k)), ("metric", metric)])?;
            nn(&cfg, &embeddings, &words, &out)
        }
        Command::Project {
            embeddings,
            sample,
            method,
            seed,
            out,
            common,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("sample", opt(&sample)),
                    ("projection", method),
                    ("sample_seed", opt(&seed)),
                    ("tsne_seed", opt(&seed)),
                ],
            )?;
            project(&cfg, &embeddings, &out)
        }
    }
}

fn gen_corpus(cfg: &RunConfig, out: &Path) -> Result<()> {
    let corpus = generate_corpus(&cfg.corpus, &mut Rng::new(cfg.corpus_seed))?;
    create_dir(out)?;
    write_corpus(out, &corpus)?;
    write_text(&out.join(CONFIG_FILE), &cfg.render())?;
    println!(
        "wrote {} train / {} val / {} test utterances, {} vocabulary entries to {}",
        corpus.train.len(),
        corpus.val.len(),
        corpus.test.len(),
        corpus.vocab.len(),
        out.display()
    );
    Ok(())
}

fn train(cfg: &RunConfig, corpus_dir: &Path, out: &Path, resume: bool) -> Result<()> {
    let corpus = read_corpus(corpus_dir)?;
    let input_dim = corpus
        .train
        .first()
        .ok_or_else(|| Error::Data(format!("{}: empty training split", corpus_dir.display())))?
        .feature_dim();
    create_dir(out)?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut trainer = if resume && ckpt_path.exists() {
        let ckpt = load_checkpoint(&ckpt_path)?;
        log::info!("resuming from {} after epoch {}", ckpt_path.display(), ckpt.epoch);
        let mut t = Trainer::resume(&corpus, ckpt)?;
        t.set_epochs(cfg.train.epochs);
        t
    } else {
        let mc = cfg.model_config(input_dim, corpus.vocab.len());
        Trainer::new(&corpus, mc, cfg.train, cfg.init_seed)?
    }
    .with_output(out);
    write_text(&out.join(CONFIG_FILE), &cfg.render())?;
    trainer.run()?;
    let ck = trainer.checkpoint();
    if let Some(m) = ck.metrics.last() {
        println!(
            "epoch {} train_nll {:.6} val_wer {}",
            m.epoch,
            m.train_nll,
            m.val_wer.map_or("n/a".to_string(), |w| format!("{w:.6}"))
        );
    }
    Ok(())
}

fn decode_split(cfg: &RunConfig, corpus: &Corpus, ckpt: &Checkpoint, split: Split) -> Result<Vec<a2w::decoding::DecodeResult>> {
    corpus
        .split(split)
        .iter()
        .map(|u| beam_decode(u, &corpus.vocab, &ckpt.params, &ckpt.model_config, cfg.beam, cfg.max_len()))
        .collect()
}

fn decode(cfg: &RunConfig, corpus_dir: &Path, ckpt_path: &Path, split: Split, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let corpus = read_corpus(corpus_dir)?;
    let utts = corpus.split(split);
    if utts.is_empty() {
        return Err(Error::Data(format!("split {} is empty", split.name())));
    }
    let results = decode_split(cfg, &corpus, &ckpt, split)?;
    create_dir(&out.join(TRACE_DIR))?;
    let mut stats = Vec::with_capacity(results.len());
    let mut truncated = 0;
    for (u, r) in utts.iter().zip(&results) {
        stats.push(wer(&u.words, &r.hypothesis)?);
        write_trace(&trace_path(out, &r.utt_id), &r.utt_id, &r.trace)?;
        truncated += usize::from(r.truncated);
    }
    let hyps: Vec<(String, Vec<String>)> = results.iter().map(|r| (r.utt_id.clone(), r.hypothesis.clone())).collect();
    write_hypotheses(&out.join(HYP_FILE), &hyps)?;
    let corpus_wer = corpus_wer(&stats)?;
    let info = format!(
        "split = {}\nbeam = {}\nutterances = {}\ntruncated = {truncated}\nwer = {corpus_wer}\n",
        split.name(),
        cfg.beam,
        results.len()
    );
    write_text(&out.join(DECODE_INFO), &info)?;
    write_text(&out.join(CONFIG_FILE), &cfg.render())?;
    println!("{} WER {corpus_wer:.6} over {} utterances", split.name(), results.len());
    Ok(())
}

fn trace_path(dir: &Path, utt_id: &str) -> PathBuf {
    dir.join(TRACE_DIR).join(format!("{utt_id}.a2wa"))
}

fn read_decode_split(dir: &Path) -> Result<Split> {
    let path = dir.join(DECODE_INFO);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let value = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == "split")
        .map(|(_, v)| v.trim().to_string())
        .ok_or_else(|| Error::Format {
            path: path.clone(),
            reason: "no split entry".into(),
        })?;
    Split::parse(&value)
}

fn analyze(
    cfg: &RunConfig,
    decode_dirs: &[PathBuf],
    alignments_path: &Path,
    zero_wer_only: bool,
    drop_last_word: bool,
    out: &Path,
) -> Result<()> {
    let alignments = read_alignments(alignments_path)?;
    let mut all_errors = Vec::new();
    let mut fractions = HashMap::new();
    let mut boundaries: Vec<BoundaryPrediction> = Vec::new();
    let mut durations: BTreeMap<&'static str, Vec<usize>> = BTreeMap::new();
    let mut pooled: BTreeMap<&'static str, Vec<i64>> = BTreeMap::new();
    for dir in decode_dirs {
        let split = read_decode_split(dir)?;
        let hyps = read_hypotheses(&dir.join(HYP_FILE))?;
        let mut selected = 0;
        for (id, hyp) in &hyps {
            let (trace_id, trace) = read_trace(&trace_path(dir, id))?;
            if &trace_id != id {
                return Err(Error::Data(format!("trace for {id} is labelled {trace_id}")));
            }
            let al: &[WordAlignment] = alignments
                .get(id)
                .ok_or_else(|| Error::Data(format!("no alignment for {id}")))?;
            let reference: Vec<&str> = al.iter().map(|a| a.word.as_str()).collect();
            let exact = !reference.is_empty() && wer(&reference, hyp)?.wer == 0.0;
            selected += usize::from(exact);
            if zero_wer_only && !exact {
                continue;
            }
            let mut pred = predict_boundaries(id, &trace, hyp, cfg.frame_mapping)?;
            if exact {
                let errors = utterance_errors(&pred, al, cfg.reference_point)?;
                let keep = errors.len() - usize::from(drop_last_word);
                pooled.entry(split.name()).or_default().extend(&errors[..keep]);
                durations
                    .entry(split.name())
                    .or_default()
                    .extend(al.iter().map(|a| a.end_frame - a.start_frame + 1));
                all_errors.push(UtteranceErrors {
                    split,
                    utt_id: id.clone(),
                    errors,
                });
            }
            if drop_last_word {
                pred.words.pop();
            }
            boundaries.push(pred);
        }
        let fraction = if hyps.is_empty() {
            0.0
        } else {
            selected as f64 / hyps.len() as f64
        };
        log::info!("{}: {selected} of {} utterances decoded without errors", dir.display(), hyps.len());
        fractions.insert(split, fraction);
    }
    create_dir(out)?;
    write_boundaries(&out.join("boundaries.tsv"), &boundaries)?;
    write_text(&out.join(CONFIG_FILE), &cfg.render())?;
    if all_errors.is_empty() {
        println!("no 0-WER utterances");
        return Ok(());
    }
    let report = aggregate_report(&all_errors, &fractions)?;
    let mut kv = report.key_values();
    for (split, errors) in &pooled {
        let d = &durations[split];
        let half = d.iter().sum::<usize>() as f64 / d.len() as f64 / 2.0;
        writeln!(kv, "{split}.half_mean_duration\t{half}").unwrap();
        writeln!(kv, "{split}.within_half_duration\t{}", fraction_within(errors, half)).unwrap();
    }
    let table = report.table();
    write_text(&out.join("report.txt"), &table)?;
    write_text(&out.join("report.tsv"), &kv)?;
    print!("{table}");
    Ok(())
}

fn embed(cfg: &RunConfig, corpus_dir: &Path, ckpt_path: &Path, split: Split, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let corpus = read_corpus(corpus_dir)?;
    let results = decode_split(cfg, &corpus, &ckpt, split)?;
    let mut vectors = Vec::new();
    for (u, r) in corpus.split(split).iter().zip(&results) {
        let b = predict_boundaries(&r.utt_id, &r.trace, &r.hypothesis, cfg.frame_mapping)?;
        let enc = encode(&u.features, &ckpt.params, &ckpt.model_config)?;
        vectors.extend(extract_embeddings(r, &b, &enc, cfg.include_eos)?);
    }
    write_embeddings(out, &vectors)?;
    println!("wrote {} vectors from {} utterances to {}", vectors.len(), results.len(), out.display());
    Ok(())
}

fn nn(cfg: &RunConfig, path: &Path, words: &[String], out: &Path) -> Result<()> {
    let vectors = read_embeddings(path)?;
    if vectors.len() < 2 {
        return Err(Error::Data(format!("{}: need at least 2 vectors", path.display())));
    }
    // first token of each requested word type, in file order
    let mut queries: Vec<usize> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, v) in vectors.iter().enumerate() {
        if (words.is_empty() || words.contains(&v.word)) && seen.insert(v.word.as_str()) {
            queries.push(i);
        }
    }
    if let Some(w) = words.iter().find(|w| !seen.contains(w.as_str())) {
        return Err(Error::Data(format!("{}: no token of {w:?}", path.display())));
    }
    let mut rows = Vec::with_capacity(queries.len());
    for &q in &queries {
        let neighbors = neighbors_of(&vectors, q, cfg.k, cfg.metric)?
            .into_iter()
            .map(|n| (vectors[n.index].word.clone(), n))
            .collect();
        rows.push((vectors[q].word.clone(), neighbors));
    }
    write_nn_report(out, &rows)?;
    let (purity, tokens) = same_word_purity(&vectors, 5, cfg.metric)?;
    println!(
        "{} queries written to {}; same-word 1-NN rate {purity:.4} over {tokens} tokens",
        rows.len(),
        out.display()
    );
    Ok(())
}

fn project(cfg: &RunConfig, path: &Path, out: &Path) -> Result<()> {
    let vectors = read_embeddings(path)?;
    let mut rng = Rng::new(cfg.sample_seed).derive("sample");
    let picked: Vec<_> = sample_indices(vectors.len(), cfg.sample, &mut rng)
        .into_iter()
        .map(|i| vectors[i].clone())
        .collect();
    let data = to_matrix(&picked)?;
    let coords = match cfg.projection {
        Projection::Pca => pca_project(&data)?.coords,
        Projection::Tsne => {
            let r = tsne_project(&data, &cfg.tsne)?;
            if let Some(kl) = r.kl.last() {
                log::info!("t-SNE final KL {kl:.6}");
            }
            r.coords
        }
    };
    let labels: Vec<(&str, &str)> = picked.iter().map(|v| (v.utt_id.as_str(), v.word.as_str())).collect();
    write_projection(out, &labels, &coords)?;
    println!("projected {} of {} vectors to {}", picked.len(), vectors.len(), out.display());
    Ok(())
}
