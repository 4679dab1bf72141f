use crate::error::{Error, Result};
use crate::model::{DecoderState, EncoderStates, ModelConfig, ModelParams, ModelView};
use crate::numerics::{
    axpy, conv1d_same_backward, conv1d_same_into, dot, gemv_acc, gemv_t_acc, ger_acc,
    softmax_backward, softmax_slice,
};

/// Borrowed attention weights.
///
/// Scores are `e_i = v . tanh(W s + Vh h_i + U f_i + b)` where `f` is the
/// previous alignment convolved with the `K x w` kernels `F`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights<'a> {
    /// `A x S`
    pub w: &'a [f64],
    /// `A x 2H`
    pub vh: &'a [f64],
    /// `A x K`
    pub u: &'a [f64],
    /// `K x w`
    pub f: &'a [f64],
    pub v: &'a [f64],
    pub b: &'a [f64],
    pub attn_dim: usize,
    pub state_dim: usize,
    pub enc_dim: usize,
    pub channels: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionGrads {
    pub w: Vec<f64>,
    pub vh: Vec<f64>,
    pub u: Vec<f64>,
    pub f: Vec<f64>,
    pub v: Vec<f64>,
    pub b: Vec<f64>,
}

impl AttentionGrads {
    pub fn zeros(a: &AttentionWeights) -> Self {
        Self {
            w: vec![0.0; a.w.len()],
            vh: vec![0.0; a.vh.len()],
            u: vec![0.0; a.u.len()],
            f: vec![0.0; a.f.len()],
            v: vec![0.0; a.v.len()],
            b: vec![0.0; a.b.len()],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    /// Location features, `T' x K`.
    pub loc: Vec<f64>,
    /// `tanh` of the score pre-activations, `T' x A`.
    pub th: Vec<f64>,
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
}

impl<'a> AttentionWeights<'a> {
    /// `Vh h_i` for every reduced frame; `T' x A`.
    pub(crate) fn project_encoder(&self, enc_h: &[f64]) -> Vec<f64> {
        let frames = enc_h.len() / self.enc_dim;
        let mut out = vec![0.0; frames * self.attn_dim];
        for i in 0..frames {
            gemv_acc(
                self.vh,
                &enc_h[i * self.enc_dim..(i + 1) * self.enc_dim],
                &mut out[i * self.attn_dim..(i + 1) * self.attn_dim],
            );
        }
        out
    }

    pub(crate) fn forward(
        &self,
        s_prev: &[f64],
        enc_h: &[f64],
        vh_h: &[f64],
        prev_alpha: &[f64],
    ) -> Result<AttentionCache> {
        let frames = prev_alpha.len();
        let a = self.attn_dim;
        let k = self.channels;
        if frames * self.enc_dim != enc_h.len() {
            return Err(Error::Dimension(format!(
                "previous attention has {frames} frames, encoder has {}",
                enc_h.len() / self.enc_dim
            )));
        }
        let mut loc = vec![0.0; frames * k];
        conv1d_same_into(prev_alpha, self.f, k, self.width, &mut loc);

        let mut ws = self.b.to_vec();
        gemv_acc(self.w, s_prev, &mut ws);

        let mut th = vec![0.0; frames * a];
        let mut scores = vec![0.0; frames];
        for i in 0..frames {
            let pre = &mut th[i * a..(i + 1) * a];
            pre.copy_from_slice(&ws);
            axpy(1.0, &vh_h[i * a..(i + 1) * a], pre);
            gemv_acc(self.u, &loc[i * k..(i + 1) * k], pre);
            pre.iter_mut().for_each(|x| *x = x.tanh());
            scores[i] = dot(self.v, pre);
        }
        let alpha = softmax_slice(&scores)?;
        let mut context = vec![0.0; self.enc_dim];
        for (i, &al) in alpha.iter().enumerate() {
            axpy(al, &enc_h[i * self.enc_dim..(i + 1) * self.enc_dim], &mut context);
        }
        Ok(AttentionCache {
            loc,
            th,
            alpha,
            context,
        })
    }

    /// Backward of [`Self::forward`]. `d_alpha` is the gradient flowing into
    /// this step's alignment from later steps; `d_context` from the
    /// decoder. Encoder gradients are split into the direct path
    /// (`d_enc_h`) and the projected path (`d_vh_h`, resolved once per
    /// utterance). Returns `(d_s_prev, d_prev_alpha)`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        cache: &AttentionCache,
        s_prev: &[f64],
        enc_h: &[f64],
        prev_alpha: &[f64],
        d_alpha: &[f64],
        d_context: &[f64],
        grads: &mut AttentionGrads,
        d_vh_h: &mut [f64],
        d_enc_h: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let frames = prev_alpha.len();
        let a = self.attn_dim;
        let k = self.channels;
        let e = self.enc_dim;

        let mut da = d_alpha.to_vec();
        for i in 0..frames {
            let h_i = &enc_h[i * e..(i + 1) * e];
            da[i] += dot(d_context, h_i);
            axpy(cache.alpha[i], d_context, &mut d_enc_h[i * e..(i + 1) * e]);
        }
        let d_scores = softmax_backward(&cache.alpha, &da);

        let mut d_ws = vec![0.0; a];
        let mut d_loc = vec![0.0; frames * k];
        let mut d_pre = vec![0.0; a];
        for i in 0..frames {
            let th_i = &cache.th[i * a..(i + 1) * a];
            let g = d_scores[i];
            axpy(g, th_i, &mut grads.v);
            for j in 0..a {
                d_pre[j] = g * self.v[j] * (1.0 - th_i[j] * th_i[j]);
            }
            axpy(1.0, &d_pre, &mut d_ws);
            axpy(1.0, &d_pre, &mut d_vh_h[i * a..(i + 1) * a]);
            ger_acc(&d_pre, &cache.loc[i * k..(i + 1) * k], &mut grads.u);
            gemv_t_acc(self.u, &d_pre, &mut d_loc[i * k..(i + 1) * k]);
        }
        axpy(1.0, &d_ws, &mut grads.b);
        ger_acc(&d_ws, s_prev, &mut grads.w);
        let mut d_s = vec![0.0; self.state_dim];
        gemv_t_acc(self.w, &d_ws, &mut d_s);

        let mut d_prev_alpha = vec![0.0; frames];
        conv1d_same_backward(
            prev_alpha,
            self.f,
            k,
            self.width,
            &d_loc,
            &mut d_prev_alpha,
            &mut grads.f,
        );
        (d_s, d_prev_alpha)
    }

    /// Resolves the projected-path gradient: `dVh += sum_i d_i h_i^T`,
    /// `dh_i += Vh^T d_i`.
    pub(crate) fn backward_projection(
        &self,
        enc_h: &[f64],
        d_vh_h: &[f64],
        grads: &mut AttentionGrads,
        d_enc_h: &mut [f64],
    ) {
        let a = self.attn_dim;
        let e = self.enc_dim;
        for i in 0..enc_h.len() / e {
            let d_i = &d_vh_h[i * a..(i + 1) * a];
            ger_acc(d_i, &enc_h[i * e..(i + 1) * e], &mut grads.vh);
            gemv_t_acc(self.vh, d_i, &mut d_enc_h[i * e..(i + 1) * e]);
        }
    }
}

/// Location-aware attention for one decoder step. Scores condition on the
/// previous decoder hidden state and on convolutional features of the
/// previous alignment. Returns `(alpha, context)`.
pub fn attend(
    state: &DecoderState,
    enc: &EncoderStates,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let view = ModelView::new(params, config)?;
    if state.h.len() != config.decoder_hidden {
        return Err(Error::Dimension(format!(
            "decoder state has {} units, config says {}",
            state.h.len(),
            config.decoder_hidden
        )));
    }
    let vh_h = view.att.project_encoder(enc.h.data());
    let cache = view
        .att
        .forward(&state.h, enc.h.data(), &vh_h, &state.prev_alpha)?;
    Ok((cache.alpha, cache.context))
}
