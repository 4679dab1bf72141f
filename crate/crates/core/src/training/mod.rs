//! Adam with global-norm clipping, the batch-size-1 training loop and
//! checkpoint persistence.

mod checkpoint;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binio::write_file;
use crate::corpus::Corpus;
use crate::decoding::{corpus_wer, greedy_decode, wer};
use crate::error::{Error, Result};
use crate::model::{init_params, loss_and_grad, validate_params, ModelConfig, ModelParams};
use crate::numerics::{ParamSet, Rng};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub grad_clip_norm: f64,
    pub shuffle_seed: u64,
    /// Log a progress line every this many steps; 0 disables.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip_norm: 5.0,
            shuffle_seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    /// `learning_rate = 0` is accepted so that a frozen run can be checked.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config(format!("grad clip norm {} must be > 0", self.grad_clip_norm)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("adam epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// First and second moments plus the number of updates applied.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// One Adam step on clipped gradients. Returns the pre-clip gradient norm.
pub fn adam_update(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<f64> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) || !params.same_layout(&state.v) {
        return Err(Error::Dimension("parameter, gradient and moment layouts differ".into()));
    }
    if let Some((name, _)) = grads
        .iter()
        .find(|(_, t)| t.data().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Numeric(format!("non-finite gradient in {name}")));
    }
    let mut g = grads.clone();
    let norm = clip_global_norm(&mut g, config.grad_clip_norm);
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    let lr = config.learning_rate;
    let tensors = params
        .tensors_mut()
        .iter_mut()
        .zip(g.tensors())
        .zip(state.m.tensors_mut().iter_mut().zip(state.v.tensors_mut()));
    for ((p, g), (m, v)) in tensors {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (k, &gk) in g.data().iter().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-utterance negative log-likelihood over the epoch.
    pub train_nll: f64,
    /// Greedy-decoding WER on the validation split; absent if it is empty.
    pub val_wer: Option<f64>,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    /// Seed used for weight initialisation. The shuffle stream of epoch `e`
    /// is derived from `train_config.shuffle_seed` and `e`, so the epoch
    /// counter is the whole RNG state.
    pub init_seed: u64,
    pub metrics: Vec<EpochMetrics>,
}

/// `epoch<TAB>train_nll<TAB>val_wer`; an empty validation split logs `nan`.
pub fn format_metrics(metrics: &[EpochMetrics]) -> String {
    let mut s = String::new();
    for m in metrics {
        let wer = m.val_wer.map_or_else(|| "nan".to_string(), |w| w.to_string());
        writeln!(s, "{}\t{}\t{}", m.epoch, m.train_nll, wer).unwrap();
    }
    s
}

pub const CHECKPOINT_FILE: &str = "checkpoint.a2wc";
pub const METRICS_FILE: &str = "metrics.tsv";

/// Epoch-at-a-time training driver.
pub struct Trainer<'c> {
    corpus: &'c Corpus,
    ckpt: Checkpoint,
    out_dir: Option<PathBuf>,
}

fn check_corpus(corpus: &Corpus, config: &ModelConfig) -> Result<()> {
    if corpus.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if corpus.vocab.len() != config.vocab_size {
        return Err(Error::Config(format!(
            "corpus vocabulary has {} entries, model expects {}",
            corpus.vocab.len(),
            config.vocab_size
        )));
    }
    if let Some(u) = corpus.all().map(|(_, u)| u).find(|u| u.feature_dim() != config.input_dim) {
        return Err(Error::Dimension(format!(
            "utterance {} has {}-dim features, model expects {}",
            u.id,
            u.feature_dim(),
            config.input_dim
        )));
    }
    Ok(())
}

impl<'c> Trainer<'c> {
    /// Fresh weights from `init_seed`.
    pub fn new(
        corpus: &'c Corpus,
        model_config: ModelConfig,
        train_config: TrainConfig,
        init_seed: u64,
    ) -> Result<Self> {
        train_config.validate()?;
        model_config.validate()?;
        check_corpus(corpus, &model_config)?;
        let params = init_params(&model_config, &mut Rng::new(init_seed))?;
        let adam = AdamState::new(&params);
        Ok(Self {
            corpus,
            ckpt: Checkpoint {
                model_config,
                train_config,
                params,
                adam,
                epoch: 0,
                init_seed,
                metrics: Vec::new(),
            },
            out_dir: None,
        })
    }

    pub fn resume(corpus: &'c Corpus, ckpt: Checkpoint) -> Result<Self> {
        ckpt.train_config.validate()?;
        validate_params(&ckpt.params, &ckpt.model_config)?;
        check_corpus(corpus, &ckpt.model_config)?;
        Ok(Self {
            corpus,
            ckpt,
            out_dir: None,
        })
    }

    /// Write `checkpoint.a2wc` and `metrics.tsv` into `dir` after every epoch.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ckpt
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.ckpt
    }

    /// Raises the epoch budget, e.g. to continue a finished run.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.ckpt.train_config.epochs = epochs;
    }

    /// Visiting order for epoch `epoch` (0-based).
    pub fn epoch_order(shuffle_seed: u64, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        Rng::new(shuffle_seed)
            .derive_indexed("shuffle", epoch as u64)
            .shuffle(&mut order);
        order
    }

    /// One shuffled pass over the training split. The checkpoint is only
    /// updated if the whole epoch succeeds.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let cfg = self.ckpt.train_config;
        let mc = self.ckpt.model_config;
        let epoch = self.ckpt.epoch + 1;
        let train = &self.corpus.train;
        let vocab = &self.corpus.vocab;
        let mut params = self.ckpt.params.clone();
        let mut adam = self.ckpt.adam.clone();
        let mut total = 0.0;
        let order = Self::epoch_order(cfg.shuffle_seed, self.ckpt.epoch, train.len());
        for (step, &i) in order.iter().enumerate() {
            let utt = &train[i];
            let diverged = |e: Error| Error::Diverged {
                epoch,
                step: step + 1,
                reason: format!("{}: {e}", utt.id),
            };
            let targets = vocab.encode(&utt.words);
            let (nll, _, grads) = loss_and_grad(&utt.features, &targets, &params, &mc).map_err(|e| {
                if e.is_numeric() {
                    diverged(e)
                } else {
                    e
                }
            })?;
            adam_update(&mut params, &grads, &mut adam, &cfg).map_err(diverged)?;
            if !params.is_finite() {
                return Err(diverged(Error::Numeric("non-finite parameters".into())));
            }
            total += nll;
            if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
                log::info!(
                    "epoch {epoch} step {}/{} mean nll {:.4}",
                    step + 1,
                    train.len(),
                    total / (step + 1) as f64
                );
            }
        }
        let val_wer = if self.corpus.val.is_empty() {
            None
        } else {
            let mut stats = Vec::with_capacity(self.corpus.val.len());
            for utt in &self.corpus.val {
                let r = greedy_decode(utt, vocab, &params, &mc, None)?;
                stats.push(wer(&utt.words, &r.hypothesis)?);
            }
            Some(corpus_wer(&stats)?)
        };
        let metrics = EpochMetrics {
            epoch,
            train_nll: total / train.len() as f64,
            val_wer,
        };
        log::info!(
            "epoch {epoch} train_nll {:.4} val_wer {}",
            metrics.train_nll,
            val_wer.map_or("n/a".to_string(), |w| format!("{w:.4}"))
        );
        self.ckpt.params = params;
        self.ckpt.adam = adam;
        self.ckpt.epoch = epoch;
        self.ckpt.metrics.push(metrics);
        if let Some(dir) = &self.out_dir {
            write_outputs(dir, &self.ckpt)?;
        }
        Ok(metrics)
    }

    /// Runs epochs until `train_config.epochs` have completed.
    pub fn run(&mut self) -> Result<()> {
        while self.ckpt.epoch < self.ckpt.train_config.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }
}

fn write_outputs(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    // write then rename so an interrupted save never clobbers the last good one
    let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
    save_checkpoint(&tmp, ckpt)?;
    let dest = dir.join(CHECKPOINT_FILE);
    std::fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
    write_file(&dir.join(METRICS_FILE), format_metrics(&ckpt.metrics).as_bytes())
}

/// Trains from scratch; writes per-epoch outputs when `out_dir` is given.
pub fn train(
    corpus: &Corpus,
    model_config: ModelConfig,
    train_config: TrainConfig,
    init_seed: u64,
    out_dir: Option<&Path>,
) -> Result<Checkpoint> {
    let mut t = Trainer::new(corpus, model_config, train_config, init_seed)?;
    if let Some(dir) = out_dir {
        t = t.with_output(dir);
    }
    t.run()?;
    Ok(t.into_checkpoint())
}
