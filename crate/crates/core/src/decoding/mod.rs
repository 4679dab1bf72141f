//! Greedy and beam decoding with attention capture, and WER scoring.

mod io;
mod wer;

use crate::corpus::{Utterance, Vocabulary, EOS_ID, SOS_ID};
use crate::error::{Error, Result};
use crate::model::{AttentionTrace, DecoderSession, DecoderState, ModelConfig, ModelParams};
use crate::numerics::log_softmax_slice;

pub use io::{read_hypotheses, read_trace, write_hypotheses, write_trace, TRACE_MAGIC, TRACE_VERSION};
pub use wer::{corpus_wer, wer, WerStats};

/// Anything that scores the next token given a recurrent state.
pub trait StepModel {
    type State: Clone;

    fn initial_state(&self) -> Self::State;

    /// Log-probabilities over the vocabulary, the next state and the
    /// attention row of this step.
    fn step(&self, y_prev: usize, state: &Self::State) -> Result<(Vec<f64>, Self::State, Vec<f64>)>;
}

impl StepModel for DecoderSession<'_> {
    type State = DecoderState;

    fn initial_state(&self) -> DecoderState {
        DecoderSession::initial_state(self)
    }

    fn step(&self, y_prev: usize, state: &DecoderState) -> Result<(Vec<f64>, DecoderState, Vec<f64>)> {
        let (logits, next, alpha) = DecoderSession::step(self, y_prev, state)?;
        Ok((log_softmax_slice(&logits), next, alpha))
    }
}

/// Token-level search output.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens, `#eos#` excluded.
    pub tokens: Vec<usize>,
    /// One attention row per step, including the `#eos#` step.
    pub alphas: Vec<Vec<f64>>,
    /// Probability of the chosen token at each step.
    pub max_probs: Vec<f64>,
    pub log_prob: f64,
    /// No `#eos#` within `max_len` steps.
    pub truncated: bool,
}

impl Hypothesis {
    /// Log-probability divided by the number of steps taken.
    pub fn normalized_score(&self) -> f64 {
        self.log_prob / self.alphas.len() as f64
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding; ties go to the lower token index.
pub fn greedy_search<M: StepModel>(model: &M, max_len: usize) -> Result<Hypothesis> {
    if max_len == 0 {
        return Err(Error::Domain("max_len must be >= 1".into()));
    }
    let mut state = model.initial_state();
    let mut y = SOS_ID;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        alphas: Vec::new(),
        max_probs: Vec::new(),
        log_prob: 0.0,
        truncated: true,
    };
    for _ in 0..max_len {
        let (lp, next, alpha) = model.step(y, &state)?;
        y = argmax(&lp);
        hyp.log_prob += lp[y];
        hyp.max_probs.push(lp[y].exp());
        hyp.alphas.push(alpha);
        if y == EOS_ID {
            hyp.truncated = false;
            break;
        }
        hyp.tokens.push(y);
        state = next;
    }
    Ok(hyp)
}

struct Live<S> {
    hyp: Hypothesis,
    last: usize,
    state: S,
}

/// Beam search over log-probabilities. Each step keeps the `beam` best
/// expansions of all live hypotheses (ties: earlier hypothesis, then lower
/// token); expansions ending in `#eos#` are complete. Hypotheses still live
/// at `max_len` compete as truncated candidates. The winner maximises
/// log-probability divided by step count.
pub fn beam_search<M: StepModel>(model: &M, beam: usize, max_len: usize) -> Result<Hypothesis> {
    if beam == 0 {
        return Err(Error::Domain("beam must be >= 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Domain("max_len must be >= 1".into()));
    }
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            alphas: Vec::new(),
            max_probs: Vec::new(),
            log_prob: 0.0,
            truncated: true,
        },
        last: SOS_ID,
        state: model.initial_state(),
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut expanded = Vec::with_capacity(live.len());
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (h, l) in live.iter().enumerate() {
            let (lp, next, alpha) = model.step(l.last, &l.state)?;
            for (tok, &p) in lp.iter().enumerate() {
                cands.push((l.hyp.log_prob + p, h, tok));
            }
            expanded.push((lp, next, alpha));
        }
        // stable sort keeps (hypothesis, token) order among equal scores
        cands.sort_by(|a, b| b.0.total_cmp(&a.0));
        cands.truncate(beam);
        let mut next_live = Vec::new();
        for (score, h, tok) in cands {
            let (lp, next, alpha) = &expanded[h];
            let mut hyp = live[h].hyp.clone();
            hyp.log_prob = score;
            hyp.max_probs.push(lp[tok].exp());
            hyp.alphas.push(alpha.clone());
            if tok == EOS_ID {
                hyp.truncated = false;
                done.push(hyp);
            } else {
                hyp.tokens.push(tok);
                next_live.push(Live {
                    hyp,
                    last: tok,
                    state: next.clone(),
                });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }
    done.extend(live.into_iter().map(|l| l.hyp));
    let mut best = 0;
    for (i, h) in done.iter().enumerate() {
        if h.normalized_score() > done[best].normalized_score() {
            best = i;
        }
    }
    Ok(done.swap_remove(best))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub utt_id: String,
    /// Decoded words, `#eos#` excluded.
    pub hypothesis: Vec<String>,
    /// One row per step including the `#eos#` step, so
    /// `hypothesis.len() + 1` rows unless truncated.
    pub trace: AttentionTrace,
    pub max_probs: Vec<f64>,
    pub truncated: bool,
}

/// `2 T' + 10` steps.
pub fn default_max_len(reduced_frames: usize) -> usize {
    2 * reduced_frames + 10
}

fn finish(utt: &Utterance, vocab: &Vocabulary, hyp: Hypothesis) -> Result<DecodeResult> {
    let hypothesis = hyp
        .tokens
        .iter()
        .map(|&t| {
            vocab
                .word(t)
                .map(str::to_string)
                .ok_or_else(|| Error::Data(format!("token {t} outside vocabulary")))
        })
        .collect::<Result<_>>()?;
    Ok(DecodeResult {
        utt_id: utt.id.clone(),
        hypothesis,
        trace: AttentionTrace::from_rows(&hyp.alphas)?,
        max_probs: hyp.max_probs,
        truncated: hyp.truncated,
    })
}

fn session<'a>(
    utt: &Utterance,
    vocab: &Vocabulary,
    params: &'a ModelParams,
    config: &ModelConfig,
) -> Result<DecoderSession<'a>> {
    if vocab.len() != config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries, model expects {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    DecoderSession::for_features(params, config, &utt.features)
}

/// Beam-1 decoding. `max_len` defaults to [`default_max_len`].
pub fn greedy_decode(
    utt: &Utterance,
    vocab: &Vocabulary,
    params: &ModelParams,
    config: &ModelConfig,
    max_len: Option<usize>,
) -> Result<DecodeResult> {
    let s = session(utt, vocab, params, config)?;
    let max_len = max_len.unwrap_or_else(|| default_max_len(s.encoder_states().num_frames()));
    let hyp = greedy_search(&s, max_len)?;
    finish(utt, vocab, hyp)
}

pub fn beam_decode(
    utt: &Utterance,
    vocab: &Vocabulary,
    params: &ModelParams,
    config: &ModelConfig,
    beam: usize,
    max_len: Option<usize>,
) -> Result<DecodeResult> {
    let s = session(utt, vocab, params, config)?;
    let max_len = max_len.unwrap_or_else(|| default_max_len(s.encoder_states().num_frames()));
    let hyp = beam_search(&s, beam, max_len)?;
    finish(utt, vocab, hyp)
}
