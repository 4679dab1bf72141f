//! `key = value` run configuration with command-line overrides.

use std::fmt::Write as _;
use std::path::Path;

use a2w::analysis::{FrameMapping, ReferencePoint};
use a2w::corpus::CorpusConfig;
use a2w::embeddings::{Metric, TsneConfig};
use a2w::model::ModelConfig;
use a2w::training::TrainConfig;
use a2w::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    Pca,
    Tsne,
}

/// Every tunable of every subcommand, with defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub corpus_seed: u64,
    pub encoder_hidden: usize,
    pub embed_dim: usize,
    pub conv_channels: usize,
    pub conv_width: usize,
    pub attn_dim: usize,
    pub decoder_hidden: usize,
    pub init_seed: u64,
    pub train: TrainConfig,
    pub beam: usize,
    /// 0 means `2 T' + 10`.
    pub max_len: usize,
    pub reference_point: ReferencePoint,
    pub frame_mapping: FrameMapping,
    pub include_eos: bool,
    pub metric: Metric,
    pub k: usize,
    pub sample: usize,
    pub sample_seed: u64,
    pub projection: Projection,
    pub tsne: TsneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::with_dims(1, 4);
        Self {
            corpus: CorpusConfig::default(),
            corpus_seed: 42,
            encoder_hidden: m.encoder_hidden,
            embed_dim: m.embed_dim,
            conv_channels: m.conv_channels,
            conv_width: m.conv_width,
            attn_dim: m.attn_dim,
            decoder_hidden: m.decoder_hidden,
            init_seed: 1,
            train: TrainConfig::default(),
            beam: 1,
            max_len: 0,
            reference_point: ReferencePoint::End,
            frame_mapping: FrameMapping::WindowStart,
            include_eos: true,
            metric: Metric::Cosine,
            k: 10,
            sample: 300,
            sample_seed: 0,
            projection: Projection::Tsne,
            tsne: TsneConfig::default(),
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value {value:?} for {key}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

fn start_end(key: &str, value: &str) -> Result<bool> {
    match value {
        "start" => Ok(true),
        "end" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.corpus;
        let t = &mut self.train;
        match key {
            "vocab_size" => c.vocab_size = num(key, value)?,
            "num_utterances" => c.num_utterances = num(key, value)?,
            "min_words" => c.min_words = num(key, value)?,
            "max_words" => c.max_words = num(key, value)?,
            "feature_dim" => c.feature_dim = num(key, value)?,
            "noise_sigma" => c.noise_sigma = num(key, value)?,
            "jitter" => c.jitter = num(key, value)?,
            "min_duration" => c.min_duration = num(key, value)?,
            "max_duration" => c.max_duration = num(key, value)?,
            "pause_frames" => c.pause_frames = num(key, value)?,
            "split_train" => c.split[0] = num(key, value)?,
            "split_val" => c.split[1] = num(key, value)?,
            "split_test" => c.split[2] = num(key, value)?,
            "corpus_seed" => self.corpus_seed = num(key, value)?,
            "encoder_hidden" => self.encoder_hidden = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "conv_channels" => self.conv_channels = num(key, value)?,
            "conv_width" => self.conv_width = num(key, value)?,
            "attn_dim" => self.attn_dim = num(key, value)?,
            "decoder_hidden" => self.decoder_hidden = num(key, value)?,
            "init_seed" => self.init_seed = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "learning_rate" => t.learning_rate = num(key, value)?,
            "beta1" => t.beta1 = num(key, value)?,
            "beta2" => t.beta2 = num(key, value)?,
            "epsilon" => t.epsilon = num(key, value)?,
            "grad_clip_norm" => t.grad_clip_norm = num(key, value)?,
            "shuffle_seed" => t.shuffle_seed = num(key, value)?,
            "log_every" => t.log_every = num(key, value)?,
            "beam" => self.beam = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "reference_point" => {
                self.reference_point = if start_end(key, value)? {
                    ReferencePoint::Start
                } else {
                    ReferencePoint::End
                }
            }
            "frame_mapping" => {
                self.frame_mapping = if start_end(key, value)? {
                    FrameMapping::WindowStart
                } else {
                    FrameMapping::WindowEnd
                }
            }
            "include_eos" => self.include_eos = flag(key, value)?,
            "metric" => self.metric = Metric::parse(value)?,
            "k" => self.k = num(key, value)?,
            "sample" => self.sample = num(key, value)?,
            "sample_seed" => self.sample_seed = num(key, value)?,
            "projection" => {
                self.projection = match value {
                    "pca" => Projection::Pca,
                    "tsne" => Projection::Tsne,
                    _ => return Err(bad(key, value)),
                }
            }
            "perplexity" => self.tsne.perplexity = num(key, value)?,
            "tsne_iterations" => self.tsne.iterations = num(key, value)?,
            "tsne_learning_rate" => self.tsne.learning_rate = num(key, value)?,
            "tsne_seed" => self.tsne.seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file: `key = value` lines, `#` starts a comment.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected `key = value`", path.display(), i + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(())
    }

    /// Applies `KEY=VALUE` overrides; dashes in keys may stand for
    /// underscores.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
            self.set(&k.trim().replace('-', "_"), v.trim())?;
        }
        Ok(())
    }

    pub fn model_config(&self, input_dim: usize, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            encoder_hidden: self.encoder_hidden,
            vocab_size,
            embed_dim: self.embed_dim,
            conv_channels: self.conv_channels,
            conv_width: self.conv_width,
            attn_dim: self.attn_dim,
            decoder_hidden: self.decoder_hidden,
        }
    }

    pub fn max_len(&self) -> Option<usize> {
        (self.max_len > 0).then_some(self.max_len)
    }

    /// The resolved configuration in the config-file syntax.
    pub fn render(&self) -> String {
        let c = &self.corpus;
        let t = &self.train;
        let se = |start: bool| if start { "start" } else { "end" };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("vocab_size", c.vocab_size.to_string());
        kv("num_utterances", c.num_utterances.to_string());
        kv("min_words", c.min_words.to_string());
        kv("max_words", c.max_words.to_string());
        kv("feature_dim", c.feature_dim.to_string());
        kv("noise_sigma", c.noise_sigma.to_string());
        kv("jitter", c.jitter.to_string());
        kv("min_duration", c.min_duration.to_string());
        kv("max_duration", c.max_duration.to_string());
        kv("pause_frames", c.pause_frames.to_string());
        kv("split_train", c.split[0].to_string());
        kv("split_val", c.split[1].to_string());
        kv("split_test", c.split[2].to_string());
        kv("corpus_seed", self.corpus_seed.to_string());
        kv("encoder_hidden", self.encoder_hidden.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("conv_channels", self.conv_channels.to_string());
        kv("conv_width", self.conv_width.to_string());
        kv("attn_dim", self.attn_dim.to_string());
        kv("decoder_hidden", self.decoder_hidden.to_string());
        kv("init_seed", self.init_seed.to_string());
        kv("epochs", t.epochs.to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("beta1", t.beta1.to_string());
        kv("beta2", t.beta2.to_string());
        kv("epsilon", t.epsilon.to_string());
        kv("grad_clip_norm", t.grad_clip_norm.to_string());
        kv("shuffle_seed", t.shuffle_seed.to_string());
        kv("log_every", t.log_every.to_string());
        kv("beam", self.beam.to_string());
        kv("max_len", self.max_len.to_string());
        kv("reference_point", se(self.reference_point == ReferencePoint::Start).into());
        kv("frame_mapping", se(self.frame_mapping == FrameMapping::WindowStart).into());
        kv("include_eos", self.include_eos.to_string());
        kv(
            "metric",
            match self.metric {
                Metric::Cosine => "cosine",
                Metric::Euclidean => "euclidean",
            }
            .into(),
        );
        kv("k", self.k.to_string());
        kv("sample", self.sample.to_string());
        kv("sample_seed", self.sample_seed.to_string());
        kv(
            "projection",
            match self.projection {
                Projection::Pca => "pca",
                Projection::Tsne => "tsne",
            }
            .into(),
        );
        kv("perplexity", self.tsne.perplexity.to_string());
        kv("tsne_iterations", self.tsne.iterations.to_string());
        kv("tsne_learning_rate", self.tsne.learning_rate.to_string());
        kv("tsne_seed", self.tsne.seed.to_string());
        s
    }
}
