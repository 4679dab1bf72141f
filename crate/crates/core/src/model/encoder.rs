use crate::error::{Error, Result};
use crate::model::lstm::{backward_direction, run_direction, LstmGrads, LstmSeqCache};
use crate::model::{ModelConfig, ModelParams, ModelView};
use crate::numerics::Tensor;

pub const ENCODER_LAYERS: usize = 3;
/// Two pair-concatenations between the three layers.
pub const REDUCTION_FACTOR: usize = 4;

/// Top-layer BLSTM outputs, one row per reduced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    /// `T' x 2H`, forward half then backward half.
    pub h: Tensor,
    pub reduction_factor: usize,
}

impl EncoderStates {
    pub fn num_frames(&self) -> usize {
        self.h.rows()
    }

    pub fn dim(&self) -> usize {
        self.h.cols()
    }
}

/// `floor(floor(T/2)/2)`.
pub fn reduced_length(frames: usize) -> usize {
    frames / 2 / 2
}

pub(crate) struct LayerCache {
    /// Input sequence to this layer, `len x n_in`.
    pub input: Vec<f64>,
    pub len: usize,
    pub dirs: [LstmSeqCache; 2],
}

pub(crate) struct EncoderCache {
    pub layers: Vec<LayerCache>,
    pub input_frames: usize,
}

fn blstm_layer(w: &[crate::model::LstmWeights; 2], input: Vec<f64>, len: usize) -> (Vec<f64>, LayerCache) {
    let h = w[0].n_hidden;
    let mut out = vec![0.0; len * 2 * h];
    let fw = run_direction(&w[0], &input, len, false, &mut out, 2 * h, 0);
    let bw = run_direction(&w[1], &input, len, true, &mut out, 2 * h, h);
    (
        out,
        LayerCache {
            input,
            len,
            dirs: [fw, bw],
        },
    )
}

pub(crate) fn encode_cached(
    view: &ModelView,
    features: &Tensor,
) -> Result<(EncoderStates, EncoderCache)> {
    let t = features.rows();
    if t < REDUCTION_FACTOR {
        return Err(Error::InputTooShort {
            frames: t,
            min: REDUCTION_FACTOR,
        });
    }
    if features.cols() != view.config.input_dim {
        return Err(Error::Dimension(format!(
            "features have {} dims, model expects {}",
            features.cols(),
            view.config.input_dim
        )));
    }
    let h = view.config.encoder_hidden;
    let mut layers = Vec::with_capacity(ENCODER_LAYERS);
    let mut seq = features.data().to_vec();
    let mut len = t;
    for (layer, w) in view.enc.iter().enumerate() {
        if layer > 0 {
            // pair-concatenation is a reshape of the first 2*floor(len/2) rows
            len /= 2;
            seq.truncate(len * 4 * h);
        }
        let (out, cache) = blstm_layer(w, seq, len);
        layers.push(cache);
        seq = out;
    }
    let states = EncoderStates {
        h: Tensor::matrix(len, 2 * h, seq)?,
        reduction_factor: REDUCTION_FACTOR,
    };
    if !states.h.is_finite() {
        return Err(Error::Numeric("encoder produced non-finite states".into()));
    }
    Ok((
        states,
        EncoderCache {
            layers,
            input_frames: t,
        },
    ))
}

/// Runs the pyramidal encoder; `T' = floor(floor(T/2)/2)`.
pub fn encode(features: &Tensor, params: &ModelParams, config: &ModelConfig) -> Result<EncoderStates> {
    let view = ModelView::new(params, config)?;
    encode_cached(&view, features).map(|(s, _)| s)
}

/// Backward from `d_states` (`T' x 2H`). Returns the gradient with respect
/// to the input features (`T x d`).
pub(crate) fn encode_backward(
    view: &ModelView,
    cache: &EncoderCache,
    d_states: &[f64],
    grads: &mut [[LstmGrads; 2]],
) -> Vec<f64> {
    let h = view.config.encoder_hidden;
    let mut d_out = d_states.to_vec();
    for (layer, lc) in cache.layers.iter().enumerate().rev() {
        let w = &view.enc[layer];
        let n_in = w[0].n_in;
        let mut d_in = vec![0.0; lc.len * n_in];
        for dir in 0..2 {
            backward_direction(
                &w[dir],
                &lc.dirs[dir],
                &lc.input,
                &d_out,
                2 * h,
                dir * h,
                &mut d_in,
                &mut grads[layer][dir],
            );
        }
        if layer > 0 {
            // undo the reshape; a dropped odd frame gets zero gradient
            let prev_len = cache.layers[layer - 1].len;
            d_in.resize(prev_len * 2 * h, 0.0);
        }
        d_out = d_in;
    }
    debug_assert_eq!(d_out.len(), cache.input_frames * view.config.input_dim);
    d_out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::numerics::{grad_check, ParamSet, Rng};
    use proptest::prelude::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_dim: 3,
            encoder_hidden: 2,
            vocab_size: 5,
            embed_dim: 2,
            conv_channels: 2,
            conv_width: 3,
            attn_dim: 2,
            decoder_hidden: 2,
        }
    }

    fn features(t: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::matrix(t, d, (0..t * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn reduction_examples() {
        assert_eq!(reduced_length(16), 4);
        assert_eq!(reduced_length(17), 4);
        assert_eq!(reduced_length(4), 1);
        let c = tiny_config();
        let p = init_params(&c, &mut Rng::new(3)).unwrap();
        for (t, want) in [(16, 4), (17, 4), (4, 1)] {
            let s = encode(&features(t, 3, t as u64), &p, &c).unwrap();
            assert_eq!(s.num_frames(), want);
            assert_eq!(s.dim(), 4);
            assert_eq!(s.reduction_factor, 4);
        }
    }

    #[test]
    fn too_short_input_rejected() {
        let c = tiny_config();
        let p = init_params(&c, &mut Rng::new(3)).unwrap();
        assert!(matches!(
            encode(&features(3, 3, 1), &p, &c),
            Err(Error::InputTooShort { frames: 3, .. })
        ));
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let c = tiny_config();
        let params = init_params(&c, &mut Rng::new(8)).unwrap();
        let x = features(11, 3, 2);
        let mut rng = Rng::new(99);
        let r: Vec<f64> = (0..reduced_length(11) * 4).map(|_| rng.normal()).collect();
        let mut probe = ParamSet::new();
        for (name, t) in params.iter().filter(|(n, _)| n.starts_with("enc")) {
            probe.insert(name, t.clone());
        }
        probe.insert("x", x.clone());
        let f = |p: &ParamSet| -> Result<(f64, ParamSet)> {
            let mut full = params.clone();
            for (name, t) in p.iter().filter(|(n, _)| n.starts_with("enc")) {
                full.insert(name, t.clone());
            }
            let view = ModelView::new(&full, &c)?;
            let (states, cache) = encode_cached(&view, p.get("x")?)?;
            let loss: f64 = states.h.data().iter().zip(&r).map(|(a, b)| a * b).sum();
            let mut g: Vec<[LstmGrads; 2]> = view
                .enc
                .iter()
                .map(|w| [LstmGrads::zeros(w[0].n_in, 2), LstmGrads::zeros(w[1].n_in, 2)])
                .collect();
            let dx = encode_backward(&view, &cache, &r, &mut g);
            let mut out = p.zeros_like();
            for (layer, lg) in g.iter().enumerate() {
                for (dir, name) in ["fw", "bw"].iter().enumerate() {
                    let pre = format!("enc{}.{name}", layer + 1);
                    out.get_mut(&format!("{pre}.wx"))?.data_mut().copy_from_slice(&lg[dir].wx);
                    out.get_mut(&format!("{pre}.wh"))?.data_mut().copy_from_slice(&lg[dir].wh);
                    out.get_mut(&format!("{pre}.b"))?.data_mut().copy_from_slice(&lg[dir].b);
                }
            }
            out.get_mut("x")?.data_mut().copy_from_slice(&dx);
            Ok((loss, out))
        };
        let report = grad_check(f, &probe, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn length_formula_holds(t in 4usize..=200) {
            let c = tiny_config();
            let p = init_params(&c, &mut Rng::new(1)).unwrap();
            let s = encode(&features(t, 3, t as u64), &p, &c).unwrap();
            prop_assert_eq!(s.num_frames(), (t / 2) / 2);
        }
    }
}
