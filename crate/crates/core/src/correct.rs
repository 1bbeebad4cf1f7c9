//! Vocabulary correction by learned distance between word encodings.
//!
//! A word is encoded by summing bidirectional-LSTM character vectors and
//! min-max normalising the sum. Two encodings give a squared-difference
//! vector which a small dense network turns into a scalar distance; the
//! closest vocabulary word wins unless its distance exceeds a threshold.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use swipeforge_nn::{
    argmax, cross_entropy, Adam, AdamConfig, Bidirectional, CellKind, Checkpoint, Dense, Embedding,
    Mat, ParamStore, Tape, Var,
};

use crate::data::Alphabet;
use crate::error::{CoreError, Result};
use crate::synth::item_seed;

pub const MODULE_KIND: &str = "correct";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectConfig {
    /// Encoding width; split evenly between the two LSTM directions.
    pub embed_dim: usize,
    pub scorer_hidden: usize,
    /// Ablation: `false` replaces the dense scorer with Euclidean distance.
    pub dense: bool,
    pub lr: f64,
    pub epochs: usize,
    /// Sampled negatives per step; `None` scores the whole vocabulary.
    pub negatives: Option<usize>,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for CorrectConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            scorer_hidden: 64,
            dense: true,
            lr: 0.001,
            epochs: 10,
            negatives: Some(24),
            clip_norm: Some(5.0),
            seed: 13,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordEncoding {
    pub vector: Vec<f64>,
    /// Characters that were mapped to the reserved unknown slot.
    pub unknown: Vec<char>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub word: String,
    /// Distance of the best vocabulary match.
    pub score: f64,
    pub fallback: bool,
}

#[derive(Clone, Debug)]
pub struct CorrectionModel {
    pub config: CorrectConfig,
    pub alphabet: Alphabet,
    /// Distances above this fall back to the input word.
    pub threshold: f64,
    store: ParamStore,
    embed: Embedding,
    encoder: Bidirectional,
    hidden: Dense,
    out: Dense,
}

mod extended_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            x if x.is_finite() => Repr::Finite(x),
            x if x > 0.0 => Repr::Text("inf".into()),
            x if x < 0.0 => Repr::Text("-inf".into()),
            _ => Repr::Text("nan".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad threshold {other:?}"))),
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Hyper {
    config: CorrectConfig,
    alphabet: Alphabet,
    #[serde(with = "extended_float")]
    threshold: f64,
}

/// Componentwise `(a - b)^2`.
pub fn distance_vector(a: &WordEncoding, b: &WordEncoding) -> Result<Vec<f64>> {
    if a.vector.len() != b.vector.len() {
        return Err(CoreError::invalid(
            "distance_vector",
            "encoding widths differ",
        ));
    }
    Ok(a.vector
        .iter()
        .zip(&b.vector)
        .map(|(x, y)| (x - y) * (x - y))
        .collect())
}

fn row(v: &[f64]) -> Mat {
    Mat::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
}

impl CorrectionModel {
    pub fn new(alphabet: Alphabet, config: CorrectConfig) -> Result<Self> {
        if config.embed_dim < 2 || !config.embed_dim.is_multiple_of(2) {
            return Err(CoreError::Config(
                "embed_dim must be even and at least 2".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let e = config.embed_dim;
        let embed = Embedding::new(&mut store, "char_embed", alphabet.len() + 1, e, &mut rng);
        let encoder = Bidirectional::new(
            &mut store,
            "char_context",
            CellKind::Lstm,
            e,
            e / 2,
            &mut rng,
        );
        let hidden = Dense::new(
            &mut store,
            "scorer_hidden",
            e,
            config.scorer_hidden,
            &mut rng,
        );
        let out = Dense::new(&mut store, "scorer_out", config.scorer_hidden, 1, &mut rng);
        Ok(Self {
            config,
            alphabet,
            threshold: f64::INFINITY,
            store,
            embed,
            encoder,
            hidden,
            out,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn hidden_layer(&self) -> &Dense {
        &self.hidden
    }

    pub fn output_layer(&self) -> &Dense {
        &self.out
    }

    fn char_ids(&self, word: &str) -> (Vec<usize>, Vec<char>) {
        let unk = self.alphabet.len();
        let mut unknown = Vec::new();
        let ids = word
            .chars()
            .map(|c| {
                self.alphabet.get(c).unwrap_or_else(|| {
                    unknown.push(c);
                    unk
                })
            })
            .collect();
        (ids, unknown)
    }

    /// `1 x E` normalised encoding on `tape`.
    pub fn encode_var(&self, tape: &mut Tape<'_>, word: &str) -> Result<Var> {
        if word.is_empty() {
            return Err(CoreError::invalid("encode_word", "empty word"));
        }
        let (ids, _) = self.char_ids(word);
        let x = self.embed.forward(tape, &ids)?;
        let h = self.encoder.run(tape, x)?;
        let sum = tape.sum_axis0(h)?;
        let lo = tape.min_all(sum)?;
        let hi = tape.max_all(sum)?;
        if tape.scalar(hi) - tape.scalar(lo) <= 0.0 {
            return Ok(tape.input(Mat::zeros((1, self.dim())))?);
        }
        let shifted = tape.sub(sum, lo)?;
        let range = tape.sub(hi, lo)?;
        Ok(tape.div(shifted, range)?)
    }

    pub fn encode_word(&self, word: &str) -> Result<WordEncoding> {
        let mut tape = Tape::new(&self.store);
        let v = self.encode_var(&mut tape, word)?;
        Ok(WordEncoding {
            vector: tape.value(v).row(0).to_vec(),
            unknown: self.char_ids(word).1,
        })
    }

    /// Scores each row of an `n x E` distance matrix, giving `n x 1`.
    pub fn score_var(&self, tape: &mut Tape<'_>, d: Var) -> Result<Var> {
        if tape.shape(d).1 != self.dim() {
            return Err(CoreError::invalid("score", "distance width mismatch"));
        }
        if !self.config.dense {
            let s = tape.sum_axis1(d)?;
            let s = tape.affine(s, 1.0, 1e-12)?;
            return Ok(tape.sqrt(s)?);
        }
        let h = self.hidden.forward(tape, d)?;
        let h = tape.relu(h)?;
        Ok(self.out.forward(tape, h)?)
    }

    pub fn score(&self, d: &[f64]) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let d = tape.input(row(d))?;
        let s = self.score_var(&mut tape, d)?;
        Ok(tape.scalar(s))
    }

    /// Distance between two words.
    pub fn pair_score(&self, a: &str, b: &str) -> Result<f64> {
        self.score(&distance_vector(
            &self.encode_word(a)?,
            &self.encode_word(b)?,
        )?)
    }

    pub fn vocabulary(&self, words: &[String]) -> Result<Vocabulary> {
        Vocabulary::build(self, words)
    }

    /// Distances from `word` to every vocabulary entry, in vocabulary order.
    pub fn scores(&self, vocab: &Vocabulary, word: &str) -> Result<Vec<f64>> {
        if vocab.is_empty() {
            return Ok(Vec::new());
        }
        let h = self.encode_word(word)?;
        let mut tape = Tape::new(&self.store);
        let hw = tape.input(row(&h.vector))?;
        let vs = tape.input(vocab.encodings.clone())?;
        let diff = tape.sub(vs, hw)?;
        let d = tape.square(diff)?;
        let e = self.score_var(&mut tape, d)?;
        Ok(tape.value(e).column(0).to_vec())
    }

    pub fn correct(&self, vocab: &Vocabulary, word: &str) -> Result<Correction> {
        Ok(self
            .correct_top_k(vocab, word, 1)?
            .into_iter()
            .next()
            .expect("k = 1 yields one result"))
    }

    /// Closest `k` vocabulary words, ties in vocabulary order. When the best
    /// distance exceeds the threshold the input word leads the list.
    pub fn correct_top_k(
        &self,
        vocab: &Vocabulary,
        word: &str,
        k: usize,
    ) -> Result<Vec<Correction>> {
        if k == 0 {
            return Err(CoreError::invalid("correct", "k must be at least 1"));
        }
        let scores = self.scores(vocab, word)?;
        if scores.is_empty() {
            return Ok(vec![Correction {
                word: word.to_string(),
                score: f64::INFINITY,
                fallback: true,
            }]);
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let best = scores[order[0]];
        let mut out = Vec::with_capacity(k);
        if best > self.threshold {
            out.push(Correction {
                word: word.to_string(),
                score: best,
                fallback: true,
            });
        }
        for &i in &order {
            if out.len() == k {
                break;
            }
            if out.iter().any(|c| c.word == vocab.words[i]) {
                continue;
            }
            out.push(Correction {
                word: vocab.words[i].clone(),
                score: scores[i],
                fallback: false,
            });
        }
        Ok(out)
    }

    /// Softmax cross-entropy over negated distances for one pair with the
    /// whole vocabulary competing. Only the gold row is re-encoded on the
    /// tape; the rest come from the `vocab` snapshot.
    fn full_vocabulary_loss(
        &self,
        tape: &mut Tape<'_>,
        vocab: &Vocabulary,
        input: &str,
        gold: usize,
    ) -> Result<Var> {
        let hw = self.encode_var(tape, input)?;
        let truth = self.encode_var(tape, &vocab.words[gold])?;
        let stale_gold = tape.input(
            vocab
                .encodings
                .row(gold)
                .to_owned()
                .insert_axis(ndarray::Axis(0)),
        )?;
        let stale = tape.input(vocab.encodings.clone())?;
        let mut mask = Mat::zeros((vocab.len(), 1));
        mask[[gold, 0]] = 1.0;
        let mask = tape.input(mask)?;
        let fresh = tape.sub(truth, stale_gold)?;
        let fresh = tape.mul(mask, fresh)?;
        let vs = tape.add(stale, fresh)?;
        self.contrastive_loss(tape, hw, vs, gold)
    }

    /// Same loss over `rows` of the vocabulary, all re-encoded on the tape.
    /// `gold` indexes into `rows`.
    fn sampled_loss(
        &self,
        tape: &mut Tape<'_>,
        vocab: &Vocabulary,
        input: &str,
        rows: &[usize],
        gold: usize,
    ) -> Result<Var> {
        let hw = self.encode_var(tape, input)?;
        let encoded = rows
            .iter()
            .map(|&r| self.encode_var(tape, &vocab.words[r]))
            .collect::<Result<Vec<_>>>()?;
        let vs = tape.concat_rows(&encoded)?;
        self.contrastive_loss(tape, hw, vs, gold)
    }

    fn contrastive_loss(&self, tape: &mut Tape<'_>, hw: Var, vs: Var, gold: usize) -> Result<Var> {
        let diff = tape.sub(vs, hw)?;
        let d = tape.square(diff)?;
        let e = self.score_var(tape, d)?;
        let e = tape.transpose(e)?;
        let logits = tape.neg(e)?;
        Ok(cross_entropy(tape, logits, &[gold])?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let hyper = Hyper {
            config: self.config.clone(),
            alphabet: self.alphabet.clone(),
            threshold: self.threshold,
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
        let mut model = Self::new(hyper.alphabet, hyper.config)?;
        model.threshold = hyper.threshold;
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }
}

/// Ordered word list with a snapshot of its encodings.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    pub words: Vec<String>,
    /// `|V| x E`.
    pub encodings: Mat,
}

impl Vocabulary {
    pub fn build(model: &CorrectionModel, words: &[String]) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for w in words {
            if !seen.insert(w.as_str()) {
                return Err(CoreError::invalid(
                    "vocabulary",
                    format!("duplicate word {w:?}"),
                ));
            }
        }
        let mut encodings = Mat::zeros((words.len(), model.dim()));
        for (i, w) in words.iter().enumerate() {
            let e = model.encode_word(w)?;
            encodings
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(&e.vector));
        }
        Ok(Self {
            words: words.to_vec(),
            encodings,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    /// New snapshot with `extra` appended; existing rows are reused.
    pub fn augmented(&self, model: &CorrectionModel, extra: &[String]) -> Result<Self> {
        let fresh = Vocabulary::build(model, extra)?;
        let mut words = self.words.clone();
        words.extend(fresh.words);
        let mut seen = std::collections::HashSet::new();
        if let Some(w) = words.iter().find(|w| !seen.insert(w.as_str())) {
            return Err(CoreError::invalid(
                "vocabulary",
                format!("duplicate word {w:?}"),
            ));
        }
        let encodings = ndarray::concatenate(
            ndarray::Axis(0),
            &[self.encodings.view(), fresh.encodings.view()],
        )
        .map_err(|_| CoreError::invalid("vocabulary", "encoding width mismatch"))?;
        Ok(Self { words, encodings })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionPair {
    pub input: String,
    pub target: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectTrainingReport {
    pub epoch_losses: Vec<f64>,
}

pub fn train_correct(
    model: CorrectionModel,
    vocab_words: &[String],
    pairs: &[CorrectionPair],
) -> Result<(CorrectionModel, CorrectTrainingReport)> {
    if pairs.is_empty() {
        return Err(CoreError::invalid("train_correct", "empty dataset"));
    }
    let mut model = model;
    let mut vocab = model.vocabulary(vocab_words)?;
    let mut gold = Vec::with_capacity(pairs.len());
    for p in pairs {
        if p.input.is_empty() {
            return Err(CoreError::invalid("train_correct", "empty input word"));
        }
        gold.push(vocab.index_of(&p.target).ok_or_else(|| {
            CoreError::invalid(
                "train_correct",
                format!("{:?} is not in the vocabulary", p.target),
            )
        })?);
    }
    let cfg = AdamConfig {
        clip_norm: model.config.clip_norm,
        ..AdamConfig::with_lr(model.config.lr)
    };
    let mut adam = Adam::for_all(&model.store, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(model.config.seed, 1));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut report = CorrectTrainingReport::default();
    for epoch in 0..model.config.epochs {
        if epoch > 0 {
            vocab = model.vocabulary(vocab_words)?;
        }
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let rows = match model.config.negatives {
                None => None,
                Some(n) => Some(negative_rows(
                    &model,
                    &vocab,
                    &pairs[i].input,
                    gold[i],
                    n,
                    &mut rng,
                )?),
            };
            let grads = {
                let mut tape = Tape::new(&model.store);
                let loss = match &rows {
                    None => {
                        model.full_vocabulary_loss(&mut tape, &vocab, &pairs[i].input, gold[i])?
                    }
                    Some(rows) => model.sampled_loss(
                        &mut tape,
                        &vocab,
                        &pairs[i].input,
                        rows,
                        rows.len() - 1,
                    )?,
                };
                total += tape.scalar(loss);
                tape.backward(loss)?
            };
            adam.step(&mut model.store, &grads)?;
        }
        report.epoch_losses.push(total / pairs.len() as f64);
    }
    Ok((model, report))
}

/// Up to `n` competitors for `gold`: the closer half by the current
/// snapshot, the rest drawn at random. The gold index comes last.
fn negative_rows<R: Rng + ?Sized>(
    model: &CorrectionModel,
    vocab: &Vocabulary,
    input: &str,
    gold: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let scores = model.scores(vocab, input)?;
    let mut order: Vec<usize> = (0..vocab.len()).filter(|&r| r != gold).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let hard = (n / 2).min(order.len());
    let mut rows: Vec<usize> = order[..hard].to_vec();
    let rest: Vec<usize> = order[hard..]
        .choose_multiple(rng, n - hard)
        .copied()
        .collect();
    rows.extend(rest);
    rows.push(gold);
    Ok(rows)
}

/// Nearest-rank percentile `q` in `(0, 1]` of the best-match distance over
/// `inputs`.
pub fn calibrate_threshold(
    model: &CorrectionModel,
    vocab: &Vocabulary,
    inputs: &[String],
    q: f64,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(CoreError::invalid(
            "calibrate_threshold",
            "no calibration inputs",
        ));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(CoreError::invalid(
            "calibrate_threshold",
            "percentile must be in (0, 1]",
        ));
    }
    let mut best = Vec::with_capacity(inputs.len());
    for w in inputs {
        let s = model.scores(vocab, w)?;
        best.push(s.into_iter().fold(f64::INFINITY, f64::min));
    }
    best.sort_by(f64::total_cmp);
    let rank = ((q * best.len() as f64).ceil() as usize).clamp(1, best.len());
    Ok(best[rank - 1])
}

/// Fraction of pairs whose top-1 correction equals the target.
pub fn correction_accuracy(
    model: &CorrectionModel,
    vocab: &Vocabulary,
    pairs: &[CorrectionPair],
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for p in pairs {
        if model.correct(vocab, &p.input)?.word == p.target {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Substitute,
    Delete,
    Insert,
    Transpose,
}

impl EditOp {
    pub const ALL: [EditOp; 4] = [
        EditOp::Substitute,
        EditOp::Delete,
        EditOp::Insert,
        EditOp::Transpose,
    ];
}

pub fn substitute(word: &str, pos: usize, c: char) -> String {
    word.chars()
        .enumerate()
        .map(|(i, x)| if i == pos { c } else { x })
        .collect()
}

pub fn delete(word: &str, pos: usize) -> String {
    word.chars()
        .enumerate()
        .filter(|&(i, _)| i != pos)
        .map(|(_, x)| x)
        .collect()
}

pub fn insert(word: &str, pos: usize, c: char) -> String {
    let mut v: Vec<char> = word.chars().collect();
    v.insert(pos, c);
    v.into_iter().collect()
}

/// Swaps positions `pos` and `pos + 1`.
pub fn transpose(word: &str, pos: usize) -> String {
    let mut v: Vec<char> = word.chars().collect();
    v.swap(pos, pos + 1);
    v.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub ops: Vec<EditOp>,
    pub per_word: usize,
    pub min_edits: usize,
    pub max_edits: usize,
    /// Drop corruptions that are themselves vocabulary words.
    pub exclude_vocabulary: bool,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            ops: EditOp::ALL.to_vec(),
            per_word: 4,
            min_edits: 1,
            max_edits: 2,
            exclude_vocabulary: true,
        }
    }
}

fn apply_random_edit<R: Rng + ?Sized>(
    word: &str,
    op: EditOp,
    alphabet: &[char],
    rng: &mut R,
) -> Option<String> {
    let n = word.chars().count();
    match op {
        EditOp::Substitute if n > 0 => {
            let pos = rng.random_range(0..n);
            let cur = word.chars().nth(pos)?;
            let choices: Vec<char> = alphabet.iter().copied().filter(|&c| c != cur).collect();
            Some(substitute(word, pos, *choices.choose(rng)?))
        }
        EditOp::Delete if n > 1 => Some(delete(word, rng.random_range(0..n))),
        EditOp::Insert => Some(insert(
            word,
            rng.random_range(0..=n),
            *alphabet.choose(rng)?,
        )),
        EditOp::Transpose if n > 1 => Some(transpose(word, rng.random_range(0..n - 1))),
        _ => None,
    }
}

/// `per_word` corrupted variants of every vocabulary word, each with
/// between `min_edits` and `max_edits` random edits. Variants equal to the
/// original are never emitted.
pub fn generate_corruptions<R: Rng + ?Sized>(
    vocab: &[String],
    alphabet: &[char],
    cfg: &CorruptionConfig,
    rng: &mut R,
) -> Result<Vec<CorrectionPair>> {
    if vocab.is_empty() {
        return Err(CoreError::invalid(
            "generate_corruptions",
            "empty vocabulary",
        ));
    }
    if cfg.ops.is_empty()
        || alphabet.is_empty()
        || cfg.min_edits == 0
        || cfg.min_edits > cfg.max_edits
    {
        return Err(CoreError::invalid(
            "generate_corruptions",
            "invalid corruption config",
        ));
    }
    let words: std::collections::HashSet<&str> = vocab.iter().map(String::as_str).collect();
    let mut out = Vec::new();
    for w in vocab {
        let mut made = 0;
        let mut attempts = 0;
        while made < cfg.per_word && attempts < 50 * cfg.per_word {
            attempts += 1;
            let edits = rng.random_range(cfg.min_edits..=cfg.max_edits);
            let mut cur = w.clone();
            for _ in 0..edits {
                let op = *cfg.ops.choose(rng).expect("ops non-empty");
                if let Some(next) = apply_random_edit(&cur, op, alphabet, rng) {
                    cur = next;
                }
            }
            if cur == *w
                || cur.is_empty()
                || (cfg.exclude_vocabulary && words.contains(cur.as_str()))
            {
                continue;
            }
            out.push(CorrectionPair {
                input: cur,
                target: w.clone(),
            });
            made += 1;
        }
    }
    Ok(out)
}

/// Index of the smallest value, ties to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let neg: Vec<f64> = values.iter().map(|v| -v).collect();
    argmax(&neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use swipeforge_nn::grad_check_params;

    fn model(dense: bool) -> CorrectionModel {
        CorrectionModel::new(
            Alphabet::new(('a'..='z').collect()).unwrap(),
            CorrectConfig {
                embed_dim: 8,
                scorer_hidden: 6,
                dense,
                ..CorrectConfig::default()
            },
        )
        .unwrap()
    }

    fn words(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    /// Unrestricted Damerau-Levenshtein distance.
    fn edit_distance(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let (n, m) = (a.len(), b.len());
        let inf = n + m;
        let mut d = vec![vec![0usize; m + 2]; n + 2];
        d[0][0] = inf;
        for i in 0..=n {
            d[i + 1][0] = inf;
            d[i + 1][1] = i;
        }
        for j in 0..=m {
            d[0][j + 1] = inf;
            d[1][j + 1] = j;
        }
        let mut last_row = std::collections::HashMap::new();
        for i in 1..=n {
            let mut last_col = 0;
            for j in 1..=m {
                let i1 = *last_row.get(&b[j - 1]).unwrap_or(&0);
                let j1 = last_col;
                let cost = if a[i - 1] == b[j - 1] {
                    last_col = j;
                    0
                } else {
                    1
                };
                d[i + 1][j + 1] = (d[i][j] + cost)
                    .min(d[i + 1][j] + 1)
                    .min(d[i][j + 1] + 1)
                    .min(d[i1][j1] + (i - i1 - 1) + 1 + (j - j1 - 1));
            }
            last_row.insert(a[i - 1], i);
        }
        d[n + 1][m + 1]
    }

    #[test]
    fn edit_distance_oracle_sanity() {
        assert_eq!(edit_distance("abc", "abc"), 0);
        assert_eq!(edit_distance("abc", "acb"), 1);
        assert_eq!(edit_distance("ca", "abc"), 2);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
    }

    #[test]
    fn encodings_are_normalised_and_position_aware() {
        let m = model(true);
        let e = m.encode_word("keyboard").unwrap();
        assert!(e.vector.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert_eq!(e.vector.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(
            e.vector.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            1.0
        );
        assert_eq!(m.encode_word("keyboard").unwrap(), e);
        let (abc, cab) = (m.encode_word("abc").unwrap(), m.encode_word("cab").unwrap());
        assert!(distance_vector(&abc, &cab).unwrap().iter().sum::<f64>() > 0.0);
        assert!(m.encode_word("").is_err());
        assert_eq!(m.encode_word("aéb").unwrap().unknown, vec!['é']);
    }

    #[test]
    fn distance_vector_contract() {
        let m = model(true);
        let (a, b) = (
            m.encode_word("swipe").unwrap(),
            m.encode_word("wipes").unwrap(),
        );
        assert!(distance_vector(&a, &a).unwrap().iter().all(|&x| x == 0.0));
        let (ab, ba) = (
            distance_vector(&a, &b).unwrap(),
            distance_vector(&b, &a).unwrap(),
        );
        assert_eq!(ab, ba);
        assert!(ab.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let short = WordEncoding {
            vector: vec![0.0; 3],
            unknown: vec![],
        };
        assert!(distance_vector(&a, &short).is_err());
    }

    #[test]
    fn zero_distance_score_is_the_bias_path() {
        let m = model(true);
        let s = m.store();
        let b1 = s.get(m.hidden_layer().bias);
        let w2 = s.get(m.output_layer().weight);
        let b2 = s.get(m.output_layer().bias)[[0, 0]];
        let expected: f64 = (0..b1.ncols())
            .map(|j| b1[[0, j]].max(0.0) * w2[[j, 0]])
            .sum::<f64>()
            + b2;
        assert_eq!(m.score(&[0.0; 8]).unwrap(), expected);
        assert!(m.score(&[0.0; 3]).is_err());
    }

    #[test]
    fn scorer_gradient_through_encoder() {
        for dense in [true, false] {
            let m = model(dense);
            let ids: Vec<_> = m.store().ids().collect();
            let err = grad_check_params(m.store(), &ids, 1e-5, 8, |tape| {
                let a = m.encode_var(tape, "abca").map_err(nn_only)?;
                let b = m.encode_var(tape, "bcd").map_err(nn_only)?;
                let diff = tape.sub(a, b)?;
                let d = tape.square(diff)?;
                let s = m.score_var(tape, d).map_err(nn_only)?;
                tape.sum_all(s)
            })
            .unwrap();
            assert!(err < 1e-4, "dense={dense}: {err}");
        }
    }

    fn nn_only(e: CoreError) -> swipeforge_nn::NnError {
        match e {
            CoreError::Nn(n) => n,
            other => panic!("{other}"),
        }
    }

    #[test]
    fn correct_edge_cases() {
        let mut m = model(true);
        let empty = m.vocabulary(&[]).unwrap();
        let r = m.correct(&empty, "xyz").unwrap();
        assert!(r.fallback && r.word == "xyz");
        let one = m.vocabulary(&words(&["hello"])).unwrap();
        assert_eq!(m.correct(&one, "help").unwrap().word, "hello");
        m.threshold = f64::NEG_INFINITY;
        let r = m.correct(&one, "help").unwrap();
        assert!(r.fallback && r.word == "help");
        assert!(m.vocabulary(&words(&["a", "a"])).is_err());
    }

    #[test]
    fn vocabulary_augmentation_keeps_scores() {
        let m = model(true);
        let base = words(&["cat", "dog", "bird"]);
        let v = m.vocabulary(&base).unwrap();
        let extra: Vec<String> = (0..10)
            .map(|i| format!("w{}x", (b'a' + i) as char))
            .collect();
        let bigger = v.augmented(&m, &extra).unwrap();
        assert_eq!(bigger.len(), 13);
        let (s0, s1) = (
            m.scores(&v, "cot").unwrap(),
            m.scores(&bigger, "cot").unwrap(),
        );
        assert_eq!(&s1[..3], &s0[..]);
        assert!(s1.iter().all(|x| x.is_finite()));
        let mut rev = base.clone();
        rev.reverse();
        let sr = m.scores(&m.vocabulary(&rev).unwrap(), "cot").unwrap();
        assert_eq!(sr, s0.iter().rev().cloned().collect::<Vec<_>>());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn correct_is_exact_argmin(
            vocab in proptest::collection::btree_set("[a-e]{1,5}", 1..8),
            word in "[a-f]{1,6}",
        ) {
            let m = model(true);
            let vocab: Vec<String> = vocab.into_iter().collect();
            let v = m.vocabulary(&vocab).unwrap();
            let brute: Vec<f64> = vocab.iter().map(|w| m.pair_score(&word, w).unwrap()).collect();
            let got = m.correct(&v, &word).unwrap();
            let want = argmin(&brute);
            prop_assert_eq!(&got.word, &vocab[want]);
            prop_assert!((got.score - brute[want]).abs() < 1e-12);
        }

        #[test]
        fn raising_threshold_never_switches_words(
            vocab in proptest::collection::btree_set("[a-e]{2,4}", 2..6),
            word in "[a-e]{2,5}",
            t0 in -2.0f64..2.0,
            dt in 0.0f64..2.0,
        ) {
            let mut m = model(true);
            let vocab: Vec<String> = vocab.into_iter().collect();
            let v = m.vocabulary(&vocab).unwrap();
            m.threshold = t0;
            let lo = m.correct(&v, &word).unwrap();
            m.threshold = t0 + dt;
            let hi = m.correct(&v, &word).unwrap();
            if !lo.fallback {
                prop_assert!(!hi.fallback);
                prop_assert_eq!(lo.word, hi.word);
            }
        }

        #[test]
        fn corruptions_are_within_two_edits(seed in any::<u64>()) {
            let vocab = words(&["keyboard", "swipe", "gesture", "at", "q"]);
            let alphabet: Vec<char> = ('a'..='z').collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs = generate_corruptions(&vocab, &alphabet, &CorruptionConfig::default(), &mut rng).unwrap();
            for p in &pairs {
                prop_assert_ne!(&p.input, &p.target);
                prop_assert!(edit_distance(&p.input, &p.target) <= 2, "{:?}", p);
            }
        }
    }

    #[test]
    fn edit_primitives() {
        assert_eq!(substitute("abc", 1, 'x'), "axc");
        assert_eq!(delete("abc", 0), "bc");
        assert_eq!(insert("abc", 3, 'd'), "abcd");
        assert_eq!(transpose("abc", 1), "acb");
    }

    #[test]
    fn corruption_generation_is_seeded() {
        let vocab = words(&["hello", "world"]);
        let alphabet: Vec<char> = ('a'..='z').collect();
        let cfg = CorruptionConfig::default();
        let a = generate_corruptions(&vocab, &alphabet, &cfg, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let b = generate_corruptions(&vocab, &alphabet, &cfg, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        assert!(
            generate_corruptions(&[], &alphabet, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).is_err()
        );
    }

    #[test]
    fn training_and_checkpoint() {
        let vocab: Vec<String> = crate::data::english_vocabulary()
            .into_iter()
            .step_by(20)
            .take(50)
            .collect();
        let alphabet = Alphabet::from_words(vocab.iter().map(String::as_str));
        let cfg = CorruptionConfig {
            ops: vec![EditOp::Substitute],
            per_word: 4,
            min_edits: 1,
            max_edits: 1,
            ..CorruptionConfig::default()
        };
        let pairs = generate_corruptions(
            &vocab,
            alphabet.chars(),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let fresh = CorrectionModel::new(
            alphabet.clone(),
            CorrectConfig {
                epochs: 0,
                ..CorrectConfig::default()
            },
        )
        .unwrap();
        let (same, _) = train_correct(fresh.clone(), &vocab, &pairs).unwrap();
        assert_eq!(same.to_checkpoint(), fresh.to_checkpoint());
        assert!(train_correct(fresh.clone(), &vocab, &[]).is_err());
        let stray = [CorrectionPair {
            input: "zzz".into(),
            target: "notthere".into(),
        }];
        assert!(train_correct(fresh, &vocab, &stray).is_err());

        let m = CorrectionModel::new(alphabet, CorrectConfig::default()).unwrap();
        let (m, report) = train_correct(m, &vocab, &pairs).unwrap();
        assert!(report.epoch_losses.last() < report.epoch_losses.first());
        let v = m.vocabulary(&vocab).unwrap();
        let acc = correction_accuracy(&m, &v, &pairs).unwrap();
        assert!(acc >= 0.95, "training accuracy {acc}");

        let mut m = m;
        m.threshold = calibrate_threshold(&m, &v, &vocab, 0.99).unwrap();
        let back = CorrectionModel::from_checkpoint(
            &Checkpoint::from_json(&m.to_checkpoint().to_json().unwrap()).unwrap(),
        )
        .unwrap();
        assert_eq!(back.threshold, m.threshold);
        assert_eq!(
            back.correct(&v, "hellp").unwrap(),
            m.correct(&v, "hellp").unwrap()
        );
    }

    #[test]
    fn infinite_threshold_round_trips() {
        let m = model(true);
        let back = CorrectionModel::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back.threshold, f64::INFINITY);
    }

    #[test]
    fn percentile_is_nearest_rank() {
        let m = model(false);
        let v = m.vocabulary(&words(&["ab"])).unwrap();
        let inputs = words(&["ab", "abc", "abcd", "b"]);
        let mut best: Vec<f64> = inputs.iter().map(|w| m.scores(&v, w).unwrap()[0]).collect();
        best.sort_by(f64::total_cmp);
        assert_eq!(calibrate_threshold(&m, &v, &inputs, 0.5).unwrap(), best[1]);
        assert_eq!(calibrate_threshold(&m, &v, &inputs, 0.99).unwrap(), best[3]);
        assert!(calibrate_threshold(&m, &v, &[], 0.5).is_err());
    }
}
