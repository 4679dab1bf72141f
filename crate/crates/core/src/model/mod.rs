//! The acoustic-to-word network: three-layer pyramidal BLSTM encoder
//! (time reduction x4), location-aware attention and an LSTM decoder over
//! words, with explicit backward passes.

mod attention;
mod decoder;
mod encoder;
mod lstm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Rng, Tensor};

pub use attention::{attend, AttentionWeights};
pub use decoder::{
    decode_step, loss, loss_and_grad, utterance_loss, DecoderSession, DecoderState,
};
pub use encoder::{encode, reduced_length, EncoderStates, ENCODER_LAYERS, REDUCTION_FACTOR};
pub use lstm::{lstm_step, LstmWeights};

/// Model weights are a named-tensor store; see [`param_layout`] for names.
pub type ModelParams = ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input feature dimension `d`.
    pub input_dim: usize,
    /// Encoder LSTM units per direction `H`.
    pub encoder_hidden: usize,
    /// Output vocabulary size `V`, reserved tokens included.
    pub vocab_size: usize,
    /// Decoder input word embedding size `E`.
    pub embed_dim: usize,
    /// Location-feature channels `K`.
    pub conv_channels: usize,
    /// Location-feature kernel width `w` (odd).
    pub conv_width: usize,
    /// Attention projection size `A`.
    pub attn_dim: usize,
    /// Decoder LSTM state size `S`.
    pub decoder_hidden: usize,
}

impl ModelConfig {
    /// Desk-scale defaults for a given input dim and vocabulary size.
    pub fn with_dims(input_dim: usize, vocab_size: usize) -> Self {
        Self {
            input_dim,
            encoder_hidden: 64,
            vocab_size,
            embed_dim: 32,
            conv_channels: 10,
            conv_width: 25,
            attn_dim: 64,
            decoder_hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.encoder_hidden,
            self.embed_dim,
            self.conv_channels,
            self.conv_width,
            self.attn_dim,
            self.decoder_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("all model dims must be >= 1: {self:?}")));
        }
        if self.conv_width % 2 == 0 {
            return Err(Error::Config(format!(
                "attention conv width {} must be odd",
                self.conv_width
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config(format!(
                "vocab size {} < 4 (three reserved tokens plus one word)",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Size of an encoder state and of a speech-word vector: `2H`.
    pub fn encoder_dim(&self) -> usize {
        2 * self.encoder_hidden
    }
}

pub(crate) const DIRECTIONS: [&str; 2] = ["fw", "bw"];

/// Canonical tensor names and shapes, in storage order.
pub fn param_layout(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let h = c.encoder_hidden;
    let s = c.decoder_hidden;
    let mut out = Vec::new();
    for layer in 0..ENCODER_LAYERS {
        let n_in = if layer == 0 { c.input_dim } else { 4 * h };
        for dir in DIRECTIONS {
            let p = format!("enc{}.{dir}", layer + 1);
            out.push((format!("{p}.wx"), vec![4 * h, n_in]));
            out.push((format!("{p}.wh"), vec![4 * h, h]));
            out.push((format!("{p}.b"), vec![4 * h]));
        }
    }
    out.push(("att.w".into(), vec![c.attn_dim, s]));
    out.push(("att.vh".into(), vec![c.attn_dim, 2 * h]));
    out.push(("att.u".into(), vec![c.attn_dim, c.conv_channels]));
    out.push(("att.f".into(), vec![c.conv_channels, c.conv_width]));
    out.push(("att.v".into(), vec![c.attn_dim]));
    out.push(("att.b".into(), vec![c.attn_dim]));
    out.push(("dec.embed".into(), vec![c.vocab_size, c.embed_dim]));
    out.push(("dec.wx".into(), vec![4 * s, c.embed_dim + 2 * h]));
    out.push(("dec.wh".into(), vec![4 * s, s]));
    out.push(("dec.b".into(), vec![4 * s]));
    out.push(("out.w".into(), vec![c.vocab_size, s + 2 * h]));
    out.push(("out.b".into(), vec![c.vocab_size]));
    out
}

pub fn zero_params(config: &ModelConfig) -> ModelParams {
    let mut p = ParamSet::new();
    for (name, shape) in param_layout(config) {
        p.insert(name, Tensor::zeros(&shape));
    }
    p
}

/// Uniform `±1/sqrt(fan_in)` weights, zero biases except LSTM forget
/// gates at 1, embeddings uniform `±0.1`.
pub fn init_params(config: &ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
    config.validate()?;
    let mut p = ParamSet::new();
    for (name, shape) in param_layout(config) {
        let n: usize = shape.iter().product();
        let is_lstm_bias = name.starts_with("enc") && name.ends_with(".b") || name == "dec.b";
        let data: Vec<f64> = if is_lstm_bias {
            // LSTM biases
            let hidden = shape[0] / 4;
            (0..n)
                .map(|k| if (hidden..2 * hidden).contains(&k) { 1.0 } else { 0.0 })
                .collect()
        } else if name == "att.b" || name == "out.b" {
            vec![0.0; n]
        } else {
            let scale = match name.as_str() {
                "dec.embed" => 0.1,
                "att.v" => 1.0 / (shape[0] as f64).sqrt(),
                _ => 1.0 / (shape[1] as f64).sqrt(),
            };
            (0..n).map(|_| rng.uniform_range(-scale, scale)).collect()
        };
        p.insert(name, Tensor::new(shape, data)?);
    }
    Ok(p)
}

/// Checks names, order and shapes against the config layout.
pub fn validate_params(params: &ModelParams, config: &ModelConfig) -> Result<()> {
    let layout = param_layout(config);
    if layout.len() != params.len() {
        return Err(Error::Data(format!(
            "expected {} tensors, found {}",
            layout.len(),
            params.len()
        )));
    }
    for ((name, shape), (pname, t)) in layout.iter().zip(params.iter()) {
        if name != pname || shape.as_slice() != t.shape() {
            return Err(Error::Data(format!(
                "tensor {pname:?} {:?} does not match expected {name:?} {shape:?}",
                t.shape()
            )));
        }
    }
    if !params.is_finite() {
        return Err(Error::Numeric("parameters contain non-finite values".into()));
    }
    Ok(())
}

/// Per-decoded-token attention distributions over reduced encoder frames.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// `U x T'`
    pub alpha: Tensor,
}

impl AttentionTrace {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(Self {
            alpha: Tensor::from_rows(rows)?,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.alpha.rows()
    }

    pub fn num_frames(&self) -> usize {
        self.alpha.cols()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.alpha.row(r)
    }

    /// Largest deviation of a row sum from 1, or `f64::INFINITY` if any
    /// entry is negative.
    pub fn max_row_error(&self) -> f64 {
        (0..self.num_rows())
            .map(|r| {
                let row = self.row(r);
                if row.iter().any(|&a| a < 0.0) {
                    f64::INFINITY
                } else {
                    (row.iter().sum::<f64>() - 1.0).abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Typed read-only view of a parameter set.
pub(crate) struct ModelView<'a> {
    pub config: ModelConfig,
    pub enc: Vec<[LstmWeights<'a>; 2]>,
    pub att: AttentionWeights<'a>,
    pub embed: &'a [f64],
    pub dec: LstmWeights<'a>,
    pub out_w: &'a [f64],
    pub out_b: &'a [f64],
}

impl<'a> ModelView<'a> {
    pub fn new(params: &'a ModelParams, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        validate_params(params, config)?;
        let t = |name: &str| params.get(name);
        let mut enc = Vec::with_capacity(ENCODER_LAYERS);
        for layer in 1..=ENCODER_LAYERS {
            let dir = |d: &str| -> Result<LstmWeights<'a>> {
                LstmWeights::from_tensors(
                    params.get(&format!("enc{layer}.{d}.wx"))?,
                    params.get(&format!("enc{layer}.{d}.wh"))?,
                    params.get(&format!("enc{layer}.{d}.b"))?,
                )
            };
            enc.push([dir("fw")?, dir("bw")?]);
        }
        Ok(Self {
            config: *config,
            enc,
            att: AttentionWeights {
                w: t("att.w")?.data(),
                vh: t("att.vh")?.data(),
                u: t("att.u")?.data(),
                f: t("att.f")?.data(),
                v: t("att.v")?.data(),
                b: t("att.b")?.data(),
                attn_dim: config.attn_dim,
                state_dim: config.decoder_hidden,
                enc_dim: config.encoder_dim(),
                channels: config.conv_channels,
                width: config.conv_width,
            },
            embed: t("dec.embed")?.data(),
            dec: LstmWeights::from_tensors(t("dec.wx")?, t("dec.wh")?, t("dec.b")?)?,
            out_w: t("out.w")?.data(),
            out_b: t("out.b")?.data(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_init_and_zero() {
        let c = ModelConfig::with_dims(4, 8);
        let p = init_params(&c, &mut Rng::new(1)).unwrap();
        validate_params(&p, &c).unwrap();
        validate_params(&zero_params(&c), &c).unwrap();
        assert_eq!(p.get("att.f").unwrap().shape(), &[10, 25]);
        assert_eq!(p.get("out.w").unwrap().shape(), &[8, 64 + 128]);
    }

    #[test]
    fn forget_bias_initialised_to_one() {
        let c = ModelConfig::with_dims(2, 5);
        let p = init_params(&c, &mut Rng::new(1)).unwrap();
        let b = p.get("enc1.fw.b").unwrap().data();
        let h = c.encoder_hidden;
        assert!(b[..h].iter().all(|&v| v == 0.0));
        assert!(b[h..2 * h].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn config_rejects_even_width_and_tiny_vocab() {
        let mut c = ModelConfig::with_dims(2, 5);
        c.conv_width = 4;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ModelConfig::with_dims(2, 3);
        assert!(c.validate().is_err());
    }
}
