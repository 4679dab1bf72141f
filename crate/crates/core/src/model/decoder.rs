use crate::corpus::{Utterance, Vocabulary, EOS_ID, SOS_ID};
use crate::error::{Error, Result};
use crate::model::attention::{AttentionCache, AttentionGrads};
use crate::model::encoder::{encode_backward, encode_cached};
use crate::model::lstm::{step_backward, step_from_projection, LstmGrads, LstmStepCache};
use crate::model::{
    param_layout, AttentionTrace, EncoderStates, ModelConfig, ModelParams, ModelView,
};
use crate::numerics::{axpy, gemv_acc, gemv_t_acc, ger_acc, log_softmax_slice, ParamSet, Tensor};

/// Recurrent decoder state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    /// Alignment produced by the previous step, over reduced frames.
    pub prev_alpha: Vec<f64>,
}

impl DecoderState {
    /// Zero LSTM state and a uniform initial alignment.
    pub fn initial(config: &ModelConfig, frames: usize) -> Self {
        Self {
            h: vec![0.0; config.decoder_hidden],
            c: vec![0.0; config.decoder_hidden],
            prev_alpha: vec![1.0 / frames as f64; frames],
        }
    }
}

struct StepCache {
    att: AttentionCache,
    /// `[embedding(y_prev) ; context]`
    x: Vec<f64>,
    lstm: LstmStepCache,
    /// `[h ; context]`
    o: Vec<f64>,
    log_probs: Vec<f64>,
}

/// Decoder bound to one utterance's encoder states, with the encoder-side
/// attention projection computed once.
pub struct DecoderSession<'a> {
    view: ModelView<'a>,
    enc: EncoderStates,
    vh_h: Vec<f64>,
}

impl<'a> DecoderSession<'a> {
    pub fn new(params: &'a ModelParams, config: &ModelConfig, enc: EncoderStates) -> Result<Self> {
        let view = ModelView::new(params, config)?;
        Self::from_view(view, enc)
    }

    fn from_view(view: ModelView<'a>, enc: EncoderStates) -> Result<Self> {
        if enc.dim() != view.config.encoder_dim() {
            return Err(Error::Dimension(format!(
                "encoder states have dim {}, model expects {}",
                enc.dim(),
                view.config.encoder_dim()
            )));
        }
        let vh_h = view.att.project_encoder(enc.h.data());
        Ok(Self { view, enc, vh_h })
    }

    /// Runs the encoder and binds the result.
    pub fn for_features(params: &'a ModelParams, config: &ModelConfig, features: &Tensor) -> Result<Self> {
        let view = ModelView::new(params, config)?;
        let (enc, _) = encode_cached(&view, features)?;
        Self::from_view(view, enc)
    }

    pub fn encoder_states(&self) -> &EncoderStates {
        &self.enc
    }

    pub fn config(&self) -> &ModelConfig {
        &self.view.config
    }

    pub fn initial_state(&self) -> DecoderState {
        DecoderState::initial(&self.view.config, self.enc.num_frames())
    }

    fn step_cached(&self, y_prev: usize, state: &DecoderState) -> Result<StepCache> {
        let c = &self.view.config;
        if y_prev >= c.vocab_size {
            return Err(Error::Domain(format!(
                "token index {y_prev} out of range for vocabulary of {}",
                c.vocab_size
            )));
        }
        let att = self
            .view
            .att
            .forward(&state.h, self.enc.h.data(), &self.vh_h, &state.prev_alpha)?;
        let e = c.embed_dim;
        let mut x = Vec::with_capacity(e + c.encoder_dim());
        x.extend_from_slice(&self.view.embed[y_prev * e..(y_prev + 1) * e]);
        x.extend_from_slice(&att.context);
        let dec = &self.view.dec;
        let mut wx_x = vec![0.0; 4 * dec.n_hidden];
        gemv_acc(dec.wx, &x, &mut wx_x);
        let lstm = step_from_projection(dec, &wx_x, &state.h, &state.c);
        let mut o = Vec::with_capacity(c.decoder_hidden + c.encoder_dim());
        o.extend_from_slice(&lstm.h);
        o.extend_from_slice(&att.context);
        let mut logits = self.view.out_b.to_vec();
        gemv_acc(self.view.out_w, &o, &mut logits);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("decoder produced non-finite logits".into()));
        }
        // log_probs holds logits until the caller needs probabilities
        Ok(StepCache {
            att,
            x,
            lstm,
            o,
            log_probs: logits,
        })
    }

    /// One decoding step: returns `(logits, new_state, alpha)`.
    pub fn step(&self, y_prev: usize, state: &DecoderState) -> Result<(Vec<f64>, DecoderState, Vec<f64>)> {
        let cache = self.step_cached(y_prev, state)?;
        let new_state = DecoderState {
            h: cache.lstm.h,
            c: cache.lstm.c,
            prev_alpha: cache.att.alpha.clone(),
        };
        Ok((cache.log_probs, new_state, cache.att.alpha))
    }
}

/// Single decoder step against precomputed encoder states.
pub fn decode_step(
    y_prev: usize,
    state: &DecoderState,
    enc: &EncoderStates,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(Vec<f64>, DecoderState, Vec<f64>)> {
    DecoderSession::new(params, config, enc.clone())?.step(y_prev, state)
}

fn check_targets(targets: &[usize], config: &ModelConfig) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::Domain("empty transcript".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= config.vocab_size) {
        return Err(Error::Domain(format!(
            "target index {bad} out of range for vocabulary of {}",
            config.vocab_size
        )));
    }
    Ok(())
}

struct Forward<'a> {
    session: DecoderSession<'a>,
    enc_cache: crate::model::encoder::EncoderCache,
    states: Vec<DecoderState>,
    steps: Vec<StepCache>,
    outputs: Vec<usize>,
    nll: f64,
}

fn forward<'a>(
    features: &Tensor,
    targets: &[usize],
    params: &'a ModelParams,
    config: &ModelConfig,
) -> Result<Forward<'a>> {
    check_targets(targets, config)?;
    let view = ModelView::new(params, config)?;
    let (enc, enc_cache) = encode_cached(&view, features)?;
    let session = DecoderSession::from_view(view, enc)?;

    let inputs: Vec<usize> = std::iter::once(SOS_ID).chain(targets.iter().copied()).collect();
    let outputs: Vec<usize> = targets.iter().copied().chain(std::iter::once(EOS_ID)).collect();
    let mut state = session.initial_state();
    let mut states = Vec::with_capacity(inputs.len());
    let mut steps = Vec::with_capacity(inputs.len());
    let mut nll = 0.0;
    for (&y_in, &y_out) in inputs.iter().zip(&outputs) {
        let mut cache = session.step_cached(y_in, &state)?;
        cache.log_probs = log_softmax_slice(&cache.log_probs);
        nll -= cache.log_probs[y_out];
        let next = DecoderState {
            h: cache.lstm.h.clone(),
            c: cache.lstm.c.clone(),
            prev_alpha: cache.att.alpha.clone(),
        };
        states.push(std::mem::replace(&mut state, next));
        steps.push(cache);
    }
    if !nll.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {nll}")));
    }
    Ok(Forward {
        session,
        enc_cache,
        states,
        steps,
        outputs,
        nll,
    })
}

fn trace_of(steps: &[StepCache]) -> Result<AttentionTrace> {
    let rows: Vec<Vec<f64>> = steps.iter().map(|s| s.att.alpha.clone()).collect();
    AttentionTrace::from_rows(&rows)
}

/// Teacher-forced cross entropy: the decoder reads `#sos#` then the gold
/// words and must predict the gold words then `#eos#`. Returns the summed
/// negative log-likelihood and the attention trace (one row per target).
pub fn loss(
    features: &Tensor,
    targets: &[usize],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(f64, AttentionTrace)> {
    let fwd = forward(features, targets, params, config)?;
    Ok((fwd.nll, trace_of(&fwd.steps)?))
}

/// [`loss`] on an utterance; out-of-vocabulary words map to `#unk#`.
pub fn utterance_loss(
    utt: &Utterance,
    vocab: &Vocabulary,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(f64, AttentionTrace)> {
    loss(&utt.features, &vocab.encode(&utt.words), params, config)
}

/// Loss, attention trace and the gradient for every parameter.
pub fn loss_and_grad(
    features: &Tensor,
    targets: &[usize],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(f64, AttentionTrace, ModelParams)> {
    let fwd = forward(features, targets, params, config)?;
    let view = &fwd.session.view;
    let c = &view.config;
    let (s_dim, e_dim, enc_dim) = (c.decoder_hidden, c.embed_dim, c.encoder_dim());
    let frames = fwd.session.enc.num_frames();
    let enc_h = fwd.session.enc.h.data();

    let mut g_att = AttentionGrads::zeros(&view.att);
    let mut g_dec = LstmGrads::zeros(view.dec.n_in, s_dim);
    let mut g_embed = vec![0.0; view.embed.len()];
    let mut g_out_w = vec![0.0; view.out_w.len()];
    let mut g_out_b = vec![0.0; view.out_b.len()];
    let mut d_enc_h = vec![0.0; enc_h.len()];
    let mut d_vh_h = vec![0.0; fwd.session.vh_h.len()];

    let mut dh_next = vec![0.0; s_dim];
    let mut dc_next = vec![0.0; s_dim];
    let mut d_alpha_next = vec![0.0; frames];
    let inputs: Vec<usize> = std::iter::once(SOS_ID)
        .chain(targets.iter().copied())
        .collect();

    for t in (0..fwd.steps.len()).rev() {
        let step = &fwd.steps[t];
        let prev = &fwd.states[t];

        let mut d_logits: Vec<f64> = step.log_probs.iter().map(|lp| lp.exp()).collect();
        d_logits[fwd.outputs[t]] -= 1.0;
        ger_acc(&d_logits, &step.o, &mut g_out_w);
        axpy(1.0, &d_logits, &mut g_out_b);
        let mut d_o = vec![0.0; s_dim + enc_dim];
        gemv_t_acc(view.out_w, &d_logits, &mut d_o);

        let mut dh = d_o[..s_dim].to_vec();
        axpy(1.0, &dh_next, &mut dh);
        let mut d_context = d_o[s_dim..].to_vec();

        let (dz, dh_prev, dc_prev) =
            step_backward(&view.dec, &step.lstm, &prev.h, &prev.c, &dh, &dc_next, &mut g_dec);
        ger_acc(&dz, &step.x, &mut g_dec.wx);
        let mut d_x = vec![0.0; e_dim + enc_dim];
        gemv_t_acc(view.dec.wx, &dz, &mut d_x);
        let y = inputs[t];
        axpy(1.0, &d_x[..e_dim], &mut g_embed[y * e_dim..(y + 1) * e_dim]);
        axpy(1.0, &d_x[e_dim..], &mut d_context);

        let (d_s, d_prev_alpha) = view.att.backward(
            &step.att,
            &prev.h,
            enc_h,
            &prev.prev_alpha,
            &d_alpha_next,
            &d_context,
            &mut g_att,
            &mut d_vh_h,
            &mut d_enc_h,
        );
        dh_next = dh_prev;
        axpy(1.0, &d_s, &mut dh_next);
        dc_next = dc_prev;
        // the initial alignment is a constant
        d_alpha_next = d_prev_alpha;
    }
    view.att
        .backward_projection(enc_h, &d_vh_h, &mut g_att, &mut d_enc_h);

    let mut g_enc: Vec<[LstmGrads; 2]> = view
        .enc
        .iter()
        .map(|w| {
            [
                LstmGrads::zeros(w[0].n_in, w[0].n_hidden),
                LstmGrads::zeros(w[1].n_in, w[1].n_hidden),
            ]
        })
        .collect();
    encode_backward(view, &fwd.enc_cache, &d_enc_h, &mut g_enc);

    let mut grads = ParamSet::new();
    let mut flat: Vec<Vec<f64>> = Vec::new();
    for layer in g_enc {
        for dir in layer {
            flat.push(dir.wx);
            flat.push(dir.wh);
            flat.push(dir.b);
        }
    }
    flat.extend([g_att.w, g_att.vh, g_att.u, g_att.f, g_att.v, g_att.b]);
    flat.extend([g_embed, g_dec.wx, g_dec.wh, g_dec.b, g_out_w, g_out_b]);
    for ((name, shape), data) in param_layout(c).into_iter().zip(flat) {
        grads.insert(name, Tensor::new(shape, data)?);
    }
    let trace = trace_of(&fwd.steps)?;
    Ok((fwd.nll, trace, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, zero_params};
    use crate::numerics::{grad_check, Rng};

    fn toy_config() -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            encoder_hidden: 3,
            vocab_size: 6,
            embed_dim: 3,
            conv_channels: 2,
            conv_width: 3,
            attn_dim: 4,
            decoder_hidden: 3,
        }
    }

    fn features(t: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::matrix(t, d, (0..t * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_loss() {
        let c = toy_config();
        let p = zero_params(&c);
        let (nll, trace) = loss(&features(12, 4, 1), &[3, 4, 5], &p, &c).unwrap();
        assert!((nll - 4.0 * (6f64).ln()).abs() < 1e-12);
        assert_eq!(trace.num_rows(), 4);
        assert_eq!(trace.num_frames(), 3);
    }

    #[test]
    fn output_bias_alone_sets_logits() {
        let c = toy_config();
        let mut p = zero_params(&c);
        let beta = vec![0.1, -0.4, 2.0, 0.0, 0.3, -1.0];
        p.insert("out.b", Tensor::vector(beta.clone()).unwrap());
        let session = DecoderSession::for_features(&p, &c, &features(8, 4, 2)).unwrap();
        let mut state = session.initial_state();
        for y in [SOS_ID, 3, 4] {
            let (logits, next, _) = session.step(y, &state).unwrap();
            assert_eq!(logits, beta);
            state = next;
        }
    }

    #[test]
    fn decode_step_matches_session() {
        let c = toy_config();
        let p = init_params(&c, &mut Rng::new(5)).unwrap();
        let session = DecoderSession::for_features(&p, &c, &features(8, 4, 3)).unwrap();
        let s0 = session.initial_state();
        let a = session.step(SOS_ID, &s0).unwrap();
        let b = decode_step(SOS_ID, &s0, session.encoder_states(), &p, &c).unwrap();
        assert_eq!(a, b);
        assert!(a.0.iter().all(|v| v.is_finite()));
        assert!(matches!(
            session.step(99, &s0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn empty_transcript_is_an_error() {
        let c = toy_config();
        let p = zero_params(&c);
        assert!(matches!(
            loss(&features(8, 4, 1), &[], &p, &c),
            Err(Error::Domain(_))
        ));
    }

    /// One-step fixture: zero weights except the output bias, chosen so the
    /// target (#eos# after an empty transcript is impossible, so a single
    /// word plus #eos#) gets a known probability at every step.
    #[test]
    fn hand_set_probability_fixture() {
        let c = toy_config();
        let mut p = zero_params(&c);
        // logits [ln 2, 0, 0, ln 3, 0, 0]: p(eos) = 2/9, p(word 3) = 3/9
        p.insert(
            "out.b",
            Tensor::vector(vec![2f64.ln(), 0.0, 0.0, 3f64.ln(), 0.0, 0.0]).unwrap(),
        );
        let (nll, _) = loss(&features(8, 4, 9), &[3], &p, &c).unwrap();
        let want = -(3.0f64 / 9.0).ln() - (2.0f64 / 9.0).ln();
        assert!((nll - want).abs() < 1e-12, "{nll} vs {want}");
    }

    #[test]
    fn loss_is_order_sensitive() {
        let c = toy_config();
        let p = init_params(&c, &mut Rng::new(12)).unwrap();
        let x = features(16, 4, 4);
        let (a, _) = loss(&x, &[3, 4, 5], &p, &c).unwrap();
        let (b, _) = loss(&x, &[5, 3, 4], &p, &c).unwrap();
        assert!(a >= 0.0 && b >= 0.0);
        assert!((a - b).abs() > 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = ModelConfig {
            encoder_hidden: 5,
            decoder_hidden: 5,
            ..toy_config()
        };
        let mut p = init_params(&c, &mut Rng::new(0)).unwrap();
        // move off the small-init regime, where many gradients sit near
        // the round-off floor of central differences
        let mut rng = Rng::new(100);
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                *v += 0.5 * rng.normal();
            }
        }
        let x = features(12, 4, 200);
        let targets = [3, 5];
        let report = grad_check(
            |p| loss_and_grad(&x, &targets, p, &c).map(|(l, _, g)| (l, g)),
            &p,
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}
