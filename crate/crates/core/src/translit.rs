//! Character-level transliteration: GRU encoder, additive attention, GRU
//! decoder and k-best beam search.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use swipeforge_nn::{
    argmax, cross_entropy, Adam, AdamConfig, CellKind, CellState, Checkpoint, Dense, Embedding,
    Mat, ParamId, ParamStore, RecurrentCell, Tape, Var,
};

use crate::data::Alphabet;
use crate::error::{CoreError, Result};
use crate::synth::item_seed;

pub const MODULE_KIND: &str = "translit";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslitConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    /// Ablation: replace attention with the final encoder state.
    pub use_attention: bool,
    pub lr: f64,
    pub epochs: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TranslitConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 64,
            attention_dim: 64,
            use_attention: true,
            lr: 0.001,
            epochs: 20,
            clip_norm: Some(5.0),
            seed: 11,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TranslitModel {
    pub config: TranslitConfig,
    pub source: Alphabet,
    pub target: Alphabet,
    store: ParamStore,
    src_embed: Embedding,
    encoder: RecurrentCell,
    tgt_embed: Embedding,
    decoder: RecurrentCell,
    attn_state: Dense,
    attn_keys: Dense,
    attn_v: ParamId,
    output: Dense,
}

/// Encoder outputs on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `n x hidden` per-position encodings.
    pub states: Var,
    /// `n x attention_dim` key projections.
    pub keys: Var,
    /// `1 x hidden` final encoder state.
    pub last: Var,
    pub len: usize,
}

/// One decoder step on a tape.
#[derive(Clone, Copy, Debug)]
pub struct DecodeStep {
    /// `1 x (|T| + 1)` log-probabilities; the last column is the end marker.
    pub log_probs: Var,
    pub state: Var,
    /// `1 x n` attention weights.
    pub attention: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub log_prob: f64,
}

#[derive(Serialize, Deserialize)]
struct Hyper {
    config: TranslitConfig,
    source: Alphabet,
    target: Alphabet,
}

/// `3 n + 5`.
pub fn default_max_len(source_len: usize) -> usize {
    3 * source_len + 5
}

impl TranslitModel {
    pub fn new(source: Alphabet, target: Alphabet, config: TranslitConfig) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(CoreError::Config(
                "transliteration alphabets must be non-empty".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (e, h, a) = (config.embed_dim, config.hidden_dim, config.attention_dim);
        let t = target.len();
        let src_embed = Embedding::new(&mut store, "src_embed", source.len(), e, &mut rng);
        let encoder = RecurrentCell::new(&mut store, "encoder", CellKind::Gru, e, h, &mut rng);
        let tgt_embed = Embedding::new(&mut store, "tgt_embed", t + 1, e, &mut rng);
        let decoder = RecurrentCell::new(&mut store, "decoder", CellKind::Gru, e + h, h, &mut rng);
        let attn_state = Dense::new(&mut store, "attn_state", h, a, &mut rng);
        let attn_keys = Dense::new(&mut store, "attn_keys", h, a, &mut rng);
        let attn_v = store.add_fan_in("attn_v", a, 1, &mut rng);
        let output = Dense::new(&mut store, "output", 2 * h, t + 1, &mut rng);
        Ok(Self {
            config,
            source,
            target,
            store,
            src_embed,
            encoder,
            tgt_embed,
            decoder,
            attn_state,
            attn_keys,
            attn_v,
            output,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Index of the end marker in output distributions.
    pub fn end_token(&self) -> usize {
        self.target.len()
    }

    /// Decoder input index used before the first output.
    pub fn start_token(&self) -> usize {
        self.target.len()
    }

    pub fn source_embedding(&self, tape: &mut Tape<'_>, source: &str) -> Result<Var> {
        if source.is_empty() {
            return Err(CoreError::invalid("encode_source", "empty source"));
        }
        let ids = self.source.encode(source)?;
        Ok(self.src_embed.forward(tape, &ids)?)
    }

    /// Encodes an already embedded `n x embed_dim` source.
    pub fn encode_embedded(&self, tape: &mut Tape<'_>, xs: Var) -> Result<Encoded> {
        let (states, last) = self.encoder.run(tape, xs, false)?;
        self.encoded_from(tape, states, last.h)
    }

    /// Wraps arbitrary encodings for the decoder.
    pub fn encoded_from(&self, tape: &mut Tape<'_>, states: Var, last: Var) -> Result<Encoded> {
        let keys = self.attn_keys.forward(tape, states)?;
        Ok(Encoded {
            states,
            keys,
            last,
            len: tape.shape(states).0,
        })
    }

    pub fn encode_source(&self, tape: &mut Tape<'_>, source: &str) -> Result<Encoded> {
        let xs = self.source_embedding(tape, source)?;
        self.encode_embedded(tape, xs)
    }

    /// Per-position encodings of `source` as a plain matrix.
    pub fn encodings(&self, source: &str) -> Result<Mat> {
        let mut tape = Tape::new(&self.store);
        let enc = self.encode_source(&mut tape, source)?;
        Ok(tape.value(enc.states).clone())
    }

    pub fn attention(&self, tape: &mut Tape<'_>, enc: &Encoded, state: Var) -> Result<(Var, Var)> {
        if !self.config.use_attention {
            let mut w = Mat::zeros((1, enc.len));
            w[[0, enc.len - 1]] = 1.0;
            let w = tape.input(w)?;
            return Ok((w, enc.last));
        }
        let q = self.attn_state.forward(tape, state)?;
        let e = tape.add(enc.keys, q)?;
        let e = tape.tanh(e)?;
        let v = tape.param(self.attn_v);
        let scores = tape.matmul(e, v)?;
        let scores = tape.transpose(scores)?;
        let weights = tape.softmax_rows(scores)?;
        let context = tape.matmul(weights, enc.states)?;
        Ok((weights, context))
    }

    pub fn decode_step(
        &self,
        tape: &mut Tape<'_>,
        enc: &Encoded,
        state: Var,
        prev: usize,
    ) -> Result<DecodeStep> {
        if prev > self.target.len() {
            return Err(CoreError::invalid(
                "decode_step",
                format!("token {prev} out of range"),
            ));
        }
        let (attention, context) = self.attention(tape, enc, state)?;
        let emb = self.tgt_embed.forward(tape, &[prev])?;
        let x = tape.concat_cols(&[emb, context])?;
        let next = self
            .decoder
            .step(tape, x, &CellState { h: state, c: None })?;
        let joined = tape.concat_cols(&[next.h, context])?;
        let logits = self.output.forward(tape, joined)?;
        let log_probs = tape.log_softmax_rows(logits)?;
        Ok(DecodeStep {
            log_probs,
            state: next.h,
            attention,
        })
    }

    fn tokens_to_string(&self, tokens: &[usize]) -> String {
        self.target.decode(tokens)
    }

    /// Greedy decode with per-step attention weights.
    pub fn greedy_with_attention(&self, source: &str) -> Result<(String, Vec<Vec<f64>>)> {
        let mut tape = Tape::new(&self.store);
        let enc = self.encode_source(&mut tape, source)?;
        let max_len = default_max_len(source.chars().count());
        let (mut state, mut prev) = (enc.last, self.start_token());
        let (mut out, mut trace) = (Vec::new(), Vec::new());
        while out.len() < max_len {
            let step = self.decode_step(&mut tape, &enc, state, prev)?;
            trace.push(tape.value(step.attention).row(0).to_vec());
            let tok = argmax(&tape.value(step.log_probs).row(0).to_vec());
            if tok == self.end_token() {
                break;
            }
            out.push(tok);
            state = step.state;
            prev = tok;
        }
        Ok((self.tokens_to_string(&out), trace))
    }

    pub fn greedy(&self, source: &str) -> Result<String> {
        Ok(self.greedy_with_attention(source)?.0)
    }

    /// Up to `k` hypotheses sorted by log-probability, ties broken by
    /// token order with the end marker last. A hypothesis reaching
    /// `max_len` tokens is finished without an end marker.
    pub fn beam_search_hypotheses(
        &self,
        source: &str,
        k: usize,
        max_len: usize,
    ) -> Result<Vec<BeamHypothesis>> {
        if k == 0 || max_len == 0 {
            return Err(CoreError::invalid(
                "beam_search",
                "k and max_len must be at least 1",
            ));
        }
        let mut tape = Tape::new(&self.store);
        let enc = self.encode_source(&mut tape, source)?;
        let end = self.end_token();
        let mut beam: Vec<(BeamHypothesis, Var)> = vec![(
            BeamHypothesis {
                tokens: Vec::new(),
                log_prob: 0.0,
                finished: false,
            },
            enc.last,
        )];
        while beam.iter().any(|(h, _)| !h.finished) {
            let mut next: Vec<(BeamHypothesis, Var)> = Vec::new();
            for (hyp, state) in beam {
                if hyp.finished {
                    next.push((hyp, state));
                    continue;
                }
                let prev = hyp.tokens.last().copied().unwrap_or(self.start_token());
                let step = self.decode_step(&mut tape, &enc, state, prev)?;
                let lp = tape.value(step.log_probs).row(0).to_vec();
                for (tok, &l) in lp.iter().enumerate() {
                    let mut tokens = hyp.tokens.clone();
                    let finished = if tok == end {
                        true
                    } else {
                        tokens.push(tok);
                        tokens.len() >= max_len
                    };
                    next.push((
                        BeamHypothesis {
                            tokens,
                            log_prob: hyp.log_prob + l,
                            finished,
                        },
                        step.state,
                    ));
                }
            }
            next.sort_by(|a, b| compare_hypotheses(&a.0, &b.0, end));
            next.truncate(k);
            beam = next;
        }
        Ok(beam.into_iter().map(|(h, _)| h).collect())
    }

    pub fn beam_search(&self, source: &str, k: usize, max_len: usize) -> Result<Vec<Candidate>> {
        Ok(self
            .beam_search_hypotheses(source, k, max_len)?
            .into_iter()
            .map(|h| Candidate {
                text: self.tokens_to_string(&h.tokens),
                log_prob: h.log_prob,
            })
            .collect())
    }

    /// Beam search with the default length cap.
    pub fn transliterate(&self, source: &str, k: usize) -> Result<Vec<Candidate>> {
        self.beam_search(source, k, default_max_len(source.chars().count()))
    }

    /// Mean teacher-forced cross-entropy of one pair on `tape`.
    pub fn pair_loss(&self, tape: &mut Tape<'_>, source: &str, target: &[usize]) -> Result<Var> {
        let enc = self.encode_source(tape, source)?;
        let mut state = enc.last;
        let mut prev = self.start_token();
        let mut rows = Vec::with_capacity(target.len() + 1);
        for &tok in target.iter().chain(std::iter::once(&self.end_token())) {
            let (_, context) = self.attention(tape, &enc, state)?;
            let emb = self.tgt_embed.forward(tape, &[prev])?;
            let x = tape.concat_cols(&[emb, context])?;
            let next = self
                .decoder
                .step(tape, x, &CellState { h: state, c: None })?;
            let joined = tape.concat_cols(&[next.h, context])?;
            rows.push(self.output.forward(tape, joined)?);
            state = next.h;
            prev = tok;
        }
        let logits = tape.concat_rows(&rows)?;
        let mut targets = target.to_vec();
        targets.push(self.end_token());
        Ok(cross_entropy(tape, logits, &targets)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let hyper = Hyper {
            config: self.config.clone(),
            source: self.source.clone(),
            target: self.target.clone(),
        };
        Checkpoint::from_store(
            MODULE_KIND,
            serde_json::to_value(hyper).expect("hyperparameters serialise"),
            &self.store,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(MODULE_KIND)?;
        let hyper: Hyper = serde_json::from_value(ck.hyperparameters.clone())?;
        let mut model = Self::new(hyper.source, hyper.target, hyper.config)?;
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }
}

fn compare_hypotheses(a: &BeamHypothesis, b: &BeamHypothesis, end: usize) -> Ordering {
    b.log_prob
        .partial_cmp(&a.log_prob)
        .unwrap_or(Ordering::Equal)
        .then_with(|| tie_key(a, end).cmp(&tie_key(b, end)))
}

fn tie_key(h: &BeamHypothesis, end: usize) -> Vec<usize> {
    let mut key = h.tokens.clone();
    if h.finished {
        key.push(end);
    }
    key
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslitPair {
    pub source: String,
    pub target: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TranslitTrainingReport {
    pub epoch_losses: Vec<f64>,
    /// Pairs dropped for an empty source or target.
    pub skipped: usize,
}

pub fn train_translit(
    source: &Alphabet,
    target: &Alphabet,
    pairs: &[TranslitPair],
    config: &TranslitConfig,
) -> Result<(TranslitModel, TranslitTrainingReport)> {
    let model = TranslitModel::new(source.clone(), target.clone(), config.clone())?;
    train_translit_from(model, pairs)
}

pub fn train_translit_from(
    mut model: TranslitModel,
    pairs: &[TranslitPair],
) -> Result<(TranslitModel, TranslitTrainingReport)> {
    if pairs.is_empty() {
        return Err(CoreError::invalid("train_translit", "empty dataset"));
    }
    let mut report = TranslitTrainingReport::default();
    let mut data: Vec<(&str, Vec<usize>)> = Vec::with_capacity(pairs.len());
    for p in pairs {
        model.source.encode(&p.source)?;
        let t = model.target.encode(&p.target)?;
        if p.source.is_empty() || t.is_empty() {
            report.skipped += 1;
        } else {
            data.push((p.source.as_str(), t));
        }
    }
    if data.is_empty() && model.config.epochs > 0 {
        return Err(CoreError::invalid("train_translit", "no usable pairs"));
    }
    let cfg = AdamConfig {
        clip_norm: model.config.clip_norm,
        ..AdamConfig::with_lr(model.config.lr)
    };
    let mut adam = Adam::for_all(&model.store, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(model.config.seed, 1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..model.config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (src, tgt) = &data[i];
            let grads = {
                let mut tape = Tape::new(&model.store);
                let loss = model.pair_loss(&mut tape, src, tgt)?;
                total += tape.scalar(loss);
                tape.backward(loss)?
            };
            adam.step(&mut model.store, &grads)?;
        }
        report.epoch_losses.push(total / data.len() as f64);
    }
    Ok((model, report))
}

/// Fraction of pairs whose greedy output equals the target exactly.
pub fn sequence_accuracy(model: &TranslitModel, pairs: &[TranslitPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for p in pairs {
        if model.greedy(&p.source)? == p.target {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}
