//! End-to-end decoding, evaluation, error analysis and experiments.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use swipeforge_nn::Checkpoint;

use crate::correct::{
    calibrate_threshold, generate_corruptions, train_correct, CorrectConfig, CorrectTrainingReport,
    CorrectionModel, CorruptionConfig, Vocabulary,
};
use crate::ctc::greedy_aggregate;
use crate::ctcdecode::{
    train_path_decoder, DecodeMode, PathDecoderConfig, PathDecoderModel, PathSample,
    PathTrainingReport,
};
use crate::data::{read_vocabulary, Alphabet, LexiconEntry};
use crate::error::{CoreError, Result};
use crate::geometry::{KeyboardLayout, LayoutRegistry, Point};
use crate::synth::{featurize, featurize_points, generate_dataset, item_seed, SynthConfig, Trace};
use crate::translit::{
    train_translit, TranslitConfig, TranslitModel, TranslitPair, TranslitTrainingReport,
};

/// Train, validation and test partitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded 70/20/10 split: ChaCha8 Fisher-Yates shuffle, then floor, floor,
/// remainder.
pub fn split_dataset<T: Clone>(records: &[T], seed: u64) -> Result<Split<T>> {
    if records.len() < 10 {
        return Err(CoreError::invalid(
            "split_dataset",
            "at least 10 records are required",
        ));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = records.len();
    let (n_train, n_val) = (n * 7 / 10, n * 2 / 10);
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<T>>();
    Ok(Split {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    EnglishToIndic,
    IndicToIndic,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::EnglishToIndic => "english_to_indic",
            TaskKind::IndicToIndic => "indic_to_indic",
        }
    }
}

impl FromStr for TaskKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "english_to_indic" => Ok(TaskKind::EnglishToIndic),
            "indic_to_indic" => Ok(TaskKind::IndicToIndic),
            other => Err(CoreError::Config(format!("unknown task kind {other:?}"))),
        }
    }
}

/// File-level description of a decoding task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Bundled layout name or layout document path.
    pub layout: String,
    pub path_checkpoint: PathBuf,
    #[serde(default)]
    pub translit_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub correct_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub vocab: Option<PathBuf>,
    #[serde(default = "default_k")]
    pub beam_k: usize,
}

fn default_k() -> usize {
    3
}

fn check_translit_presence(kind: TaskKind, present: bool) -> Result<()> {
    match (kind, present) {
        (TaskKind::EnglishToIndic, false) => Err(CoreError::Config(
            "english_to_indic requires a transliteration model".into(),
        )),
        (TaskKind::IndicToIndic, true) => Err(CoreError::Config(
            "indic_to_indic does not use a transliteration model".into(),
        )),
        _ => Ok(()),
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        check_translit_presence(self.kind, self.translit_checkpoint.is_some())?;
        if self.correct_checkpoint.is_some() != self.vocab.is_some() {
            return Err(CoreError::Config(
                "a correction checkpoint and a vocabulary must be given together".into(),
            ));
        }
        if self.beam_k == 0 {
            return Err(CoreError::Config("beam_k must be at least 1".into()));
        }
        Ok(())
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CoreError::Config(format!("cannot read checkpoint {}: {e}", path.display()))
    })?;
    Ok(Checkpoint::from_json(&text)?)
}

/// Loaded models for one task. Immutable once built.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub kind: TaskKind,
    pub layout: Arc<KeyboardLayout>,
    pub path: PathDecoderModel,
    pub translit: Option<TranslitModel>,
    pub correction: Option<(CorrectionModel, Vocabulary)>,
    pub beam_k: usize,
    pub decode_mode: DecodeMode,
    /// Ablation: final candidates are the pre-correction candidates.
    pub bypass_correction: bool,
}

impl Pipeline {
    pub fn new(
        kind: TaskKind,
        layout: Arc<KeyboardLayout>,
        path: PathDecoderModel,
        translit: Option<TranslitModel>,
        correction: Option<(CorrectionModel, Vocabulary)>,
        beam_k: usize,
    ) -> Result<Self> {
        check_translit_presence(kind, translit.is_some())?;
        if beam_k == 0 {
            return Err(CoreError::Config("beam_k must be at least 1".into()));
        }
        if path.alphabet.chars() != layout.chars().as_slice() {
            return Err(CoreError::Config(format!(
                "path decoder alphabet does not match layout {:?}",
                layout.name()
            )));
        }
        Ok(Self {
            kind,
            layout,
            path,
            translit,
            correction,
            beam_k,
            decode_mode: DecodeMode::Head,
            bypass_correction: false,
        })
    }
}

impl Pipeline {
    /// Loads every checkpoint named by `spec`, resolving relative paths
    /// against `base`.
    pub fn load(spec: &TaskSpec, base: &Path, layouts: &mut LayoutRegistry) -> Result<Self> {
        spec.validate()?;
        let at = |p: &PathBuf| base.join(p);
        let layout = layouts.resolve(&spec.layout)?;
        let path =
            PathDecoderModel::from_checkpoint(&load_checkpoint(&at(&spec.path_checkpoint))?)?;
        let translit = match &spec.translit_checkpoint {
            Some(p) => Some(TranslitModel::from_checkpoint(&load_checkpoint(&at(p))?)?),
            None => None,
        };
        let correction = match (&spec.correct_checkpoint, &spec.vocab) {
            (Some(c), Some(v)) => {
                let model = CorrectionModel::from_checkpoint(&load_checkpoint(&at(c))?)?;
                let words = read_vocabulary(at(v))?;
                let vocab = model.vocabulary(&words)?;
                Some((model, vocab))
            }
            _ => None,
        };
        Self::new(spec.kind, layout, path, translit, correction, spec.beam_k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Sum of per-frame best log-probabilities of the path decoder.
    PathLogProb,
    /// Beam log-probability of the transliteration.
    TranslitLogProb,
    /// Learned correction distance; lower is closer.
    CorrectionDistance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Path decoder output.
    pub decoded: String,
    /// Pre-correction candidate this suggestion came from.
    pub pre_correction: String,
    /// Set when the correction threshold rejected every vocabulary match.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub word: String,
    pub score: f64,
    pub score_kind: ScoreKind,
    pub stage_provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Path decode through the character head.
    pub decoded: String,
    /// Path decode read directly off the contracted vectors.
    pub decoded_passthrough: String,
    pub path_log_prob: f64,
    /// Pre-correction candidates in beam order, with their log-probabilities.
    pub pre_correction: Vec<(String, f64)>,
    pub suggestions: Vec<Suggestion>,
}

impl DecodeResult {
    pub fn words(&self) -> Vec<&str> {
        self.suggestions.iter().map(|s| s.word.as_str()).collect()
    }
}

pub fn run_pipeline(pipeline: &Pipeline, trace: &Trace) -> Result<DecodeResult> {
    if trace.layout_name != pipeline.layout.name() {
        return Err(CoreError::invalid(
            "run_pipeline",
            format!(
                "trace layout {:?} does not match task layout {:?}",
                trace.layout_name,
                pipeline.layout.name()
            ),
        ));
    }
    decode_points(pipeline, &trace.points, pipeline.beam_k)
}

/// Decodes a raw point stream in layout units, keeping at most `k`
/// candidates at each stage.
pub fn decode_points(pipeline: &Pipeline, points: &[Point], k: usize) -> Result<DecodeResult> {
    if k == 0 {
        return Err(CoreError::invalid("decode", "k must be at least 1"));
    }
    let features = featurize_points(points, &pipeline.layout)?;
    let emissions = pipeline.path.encode_path(&features)?;
    let path_log_prob: f64 = emissions
        .probs
        .rows()
        .into_iter()
        .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ln())
        .sum();
    let contracted = greedy_aggregate(&emissions);
    let passthrough = pipeline.path.passthrough(&contracted);
    let head = pipeline.path.decode_characters(&contracted)?;
    let decoded = match pipeline.decode_mode {
        DecodeMode::Head => head,
        DecodeMode::Passthrough => passthrough.clone(),
    };

    let (pre, pre_kind): (Vec<(String, f64)>, ScoreKind) = match &pipeline.translit {
        Some(t) if !decoded.is_empty() => (
            t.transliterate(&decoded, k)?
                .into_iter()
                .map(|c| (c.text, c.log_prob))
                .collect(),
            ScoreKind::TranslitLogProb,
        ),
        Some(_) => (Vec::new(), ScoreKind::TranslitLogProb),
        None if decoded.is_empty() => (Vec::new(), ScoreKind::PathLogProb),
        None => (
            vec![(decoded.clone(), path_log_prob)],
            ScoreKind::PathLogProb,
        ),
    };

    let mut suggestions: Vec<Suggestion> = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |s: Suggestion, out: &mut Vec<Suggestion>| {
        if out.len() < k && seen.insert(s.word.clone()) {
            out.push(s);
        }
    };
    match (&pipeline.correction, pipeline.bypass_correction) {
        (Some((model, vocab)), false) => {
            let per_candidate = if pre.len() == 1 { k } else { 1 };
            for (text, _) in pre.iter().filter(|(t, _)| !t.is_empty()) {
                for c in model.correct_top_k(vocab, text, per_candidate)? {
                    let s = Suggestion {
                        word: c.word,
                        score: c.score,
                        score_kind: ScoreKind::CorrectionDistance,
                        stage_provenance: Provenance {
                            decoded: decoded.clone(),
                            pre_correction: text.clone(),
                            fallback: c.fallback,
                        },
                    };
                    push(s, &mut suggestions);
                }
            }
        }
        _ => {
            for (text, score) in &pre {
                let s = Suggestion {
                    word: text.clone(),
                    score: *score,
                    score_kind: pre_kind,
                    stage_provenance: Provenance {
                        decoded: decoded.clone(),
                        pre_correction: text.clone(),
                        fallback: false,
                    },
                };
                push(s, &mut suggestions);
            }
        }
    }
    Ok(DecodeResult {
        decoded,
        decoded_passthrough: passthrough,
        path_log_prob,
        pre_correction: pre,
        suggestions,
    })
}

/// One labelled evaluation trace.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub trace: Trace,
    /// Word as typed on the layout.
    pub word: String,
    /// Expected final output.
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub length: usize,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkippedCounts {
    /// Training traces too short for their word under CTC.
    pub path_ctc: usize,
    /// Training traces left out of head training.
    pub path_head: usize,
    /// Training pairs left out of transliteration training.
    pub translit: usize,
    /// Evaluation traces whose path decode was empty.
    pub empty_decodes: usize,
}

/// Accuracies are percentages. Entry `i` of a k-indexed list is the
/// accuracy at `k = i + 1`, counting an item correct when any of the first
/// `k` candidates matches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub test_size: usize,
    pub ctc_accuracy_pre_head: f64,
    pub ctc_accuracy_post_head: f64,
    pub translit_accuracy: Option<Vec<f64>>,
    pub pre_correction_accuracy: Vec<f64>,
    pub final_accuracy: Vec<f64>,
    /// Final top-1 accuracy by word length.
    pub length_bins: Vec<LengthBin>,
    pub skipped: SkippedCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub word: String,
    pub target: String,
    pub decoded: String,
    pub decoded_passthrough: String,
    pub pre_correction: Vec<String>,
    pub suggestions: Vec<String>,
}

impl ItemOutcome {
    pub fn path_correct(&self) -> bool {
        self.decoded == self.word
    }

    pub fn final_correct_at(&self, k: usize) -> bool {
        self.suggestions.iter().take(k).any(|s| *s == self.target)
    }
}

fn percent(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

fn k_accuracy(lists: &[(&[String], &str)], k_max: usize) -> Vec<f64> {
    (1..=k_max)
        .map(|k| {
            let hits = lists
                .iter()
                .filter(|(cands, gold)| cands.iter().take(k).any(|c| c == gold))
                .count();
            percent(hits, lists.len())
        })
        .collect()
}

/// Report plus per-item outcomes.
pub fn evaluate_detailed(
    pipeline: &Pipeline,
    items: &[EvalItem],
    k: usize,
) -> Result<(EvalReport, Vec<ItemOutcome>)> {
    if items.is_empty() {
        return Err(CoreError::invalid("evaluate", "empty test set"));
    }
    if k == 0 {
        return Err(CoreError::invalid("evaluate", "k must be at least 1"));
    }
    let mut outcomes = Vec::with_capacity(items.len());
    let mut skipped = SkippedCounts::default();
    for item in items {
        if item.trace.layout_name != pipeline.layout.name() {
            return Err(CoreError::invalid(
                "evaluate",
                "trace layout does not match task layout",
            ));
        }
        let r = decode_points(pipeline, &item.trace.points, k)?;
        if r.decoded.is_empty() {
            skipped.empty_decodes += 1;
        }
        outcomes.push(ItemOutcome {
            word: item.word.clone(),
            target: item.target.clone(),
            decoded_passthrough: r.decoded_passthrough.clone(),
            decoded: r.decoded.clone(),
            pre_correction: r.pre_correction.iter().map(|(t, _)| t.clone()).collect(),
            suggestions: r.suggestions.iter().map(|s| s.word.clone()).collect(),
        });
    }
    let n = outcomes.len();
    let pre_head = outcomes
        .iter()
        .filter(|o| o.decoded_passthrough == o.word)
        .count();
    let post_head = outcomes.iter().filter(|o| o.decoded == o.word).count();
    let pre_lists: Vec<(&[String], &str)> = outcomes
        .iter()
        .map(|o| (o.pre_correction.as_slice(), o.target.as_str()))
        .collect();
    let final_lists: Vec<(&[String], &str)> = outcomes
        .iter()
        .map(|o| (o.suggestions.as_slice(), o.target.as_str()))
        .collect();
    let pre_correction_accuracy = k_accuracy(&pre_lists, k);
    let mut bins: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for o in &outcomes {
        let e = bins.entry(o.word.chars().count()).or_default();
        e.0 += 1;
        e.1 += o.final_correct_at(1) as usize;
    }
    let report = EvalReport {
        task: pipeline.kind,
        test_size: n,
        ctc_accuracy_pre_head: percent(pre_head, n),
        ctc_accuracy_post_head: percent(post_head, n),
        translit_accuracy: pipeline
            .translit
            .as_ref()
            .map(|_| pre_correction_accuracy.clone()),
        pre_correction_accuracy,
        final_accuracy: k_accuracy(&final_lists, k),
        length_bins: bins
            .into_iter()
            .map(|(length, (count, correct))| LengthBin {
                length,
                count,
                correct,
                accuracy: percent(correct, count),
            })
            .collect(),
        skipped,
    };
    Ok((report, outcomes))
}

pub fn evaluate(pipeline: &Pipeline, items: &[EvalItem], k: usize) -> Result<EvalReport> {
    Ok(evaluate_detailed(pipeline, items, k)?.0)
}

/// Interior angle at `p1` in degrees, in `[0, 180]`.
pub fn angle_subtended(p0: Point, p1: Point, p2: Point) -> Result<f64> {
    let (ax, ay) = (p0.x - p1.x, p0.y - p1.y);
    let (bx, by) = (p2.x - p1.x, p2.y - p1.y);
    let (na, nb) = (ax.hypot(ay), bx.hypot(by));
    if na == 0.0 || nb == 0.0 {
        return Err(CoreError::invalid("angle_subtended", "coincident points"));
    }
    let cos = ((ax * bx + ay * by) / (na * nb)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

/// Consecutive character triples of `word`.
pub fn trigrams(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisItem {
    pub word: String,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigramStat {
    pub trigram: String,
    pub angle: f64,
    pub occurrences: usize,
    pub errors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleBin {
    pub lo: f64,
    pub hi: f64,
    pub trigrams: usize,
    pub occurrences: usize,
    pub errors: usize,
    pub error_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorAnalysis {
    pub length_bins: Vec<LengthBin>,
    pub trigram_stats: Vec<TrigramStat>,
    /// Ten bins of 18 degrees; the last includes 180.
    pub angle_bins: Vec<AngleBin>,
    /// 3-gram occurrences with repeated keys, which have no angle.
    pub degenerate_trigrams: usize,
}

pub fn error_analysis(layout: &KeyboardLayout, items: &[AnalysisItem]) -> Result<ErrorAnalysis> {
    let mut lengths: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut stats: BTreeMap<String, TrigramStat> = BTreeMap::new();
    let mut degenerate = 0;
    for item in items {
        let e = lengths.entry(item.word.chars().count()).or_default();
        e.0 += 1;
        e.1 += item.correct as usize;
        for tri in trigrams(&item.word) {
            let c: Vec<char> = tri.chars().collect();
            let pts = (
                layout.key_center(c[0])?,
                layout.key_center(c[1])?,
                layout.key_center(c[2])?,
            );
            let angle = match angle_subtended(pts.0, pts.1, pts.2) {
                Ok(a) => a,
                Err(_) => {
                    degenerate += 1;
                    continue;
                }
            };
            let s = stats.entry(tri.clone()).or_insert(TrigramStat {
                trigram: tri,
                angle,
                occurrences: 0,
                errors: 0,
            });
            s.occurrences += 1;
            s.errors += (!item.correct) as usize;
        }
    }
    let mut angle_bins: Vec<AngleBin> = (0..10)
        .map(|i| AngleBin {
            lo: 18.0 * i as f64,
            hi: 18.0 * (i + 1) as f64,
            trigrams: 0,
            occurrences: 0,
            errors: 0,
            error_rate: 0.0,
        })
        .collect();
    for s in stats.values() {
        let b = ((s.angle / 18.0).floor() as usize).min(9);
        angle_bins[b].trigrams += 1;
        angle_bins[b].occurrences += s.occurrences;
        angle_bins[b].errors += s.errors;
    }
    for b in &mut angle_bins {
        b.error_rate = percent(b.errors, b.occurrences);
    }
    Ok(ErrorAnalysis {
        length_bins: lengths
            .into_iter()
            .map(|(length, (count, correct))| LengthBin {
                length,
                count,
                correct,
                accuracy: percent(correct, count),
            })
            .collect(),
        trigram_stats: stats.into_values().collect(),
        angle_bins,
        degenerate_trigrams: degenerate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Zero the `dx, dy` feature columns.
    Derivatives,
    /// Final encoder state instead of attention context.
    Attention,
    /// Skip correction entirely.
    Correction,
    /// Euclidean distance instead of the dense scorer.
    Dense,
}

impl FromStr for Ablation {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "derivatives" => Ok(Ablation::Derivatives),
            "attention" => Ok(Ablation::Attention),
            "correction" => Ok(Ablation::Correction),
            "dense" => Ok(Ablation::Dense),
            other => Err(CoreError::Config(format!(
                "unknown ablation {other:?}; expected derivatives, attention, correction or dense"
            ))),
        }
    }
}

pub fn parse_ablations<S: AsRef<str>>(names: &[S]) -> Result<Vec<Ablation>> {
    let mut out: Vec<Ablation> = names
        .iter()
        .map(|n| n.as_ref().parse())
        .collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

/// Where transliteration training sources come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslitSource {
    /// Path decoder outputs on the training traces.
    Decoded,
    /// The gold layout words.
    Gold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub traces_per_word: usize,
    pub seed: u64,
    pub beam_k: usize,
    pub synth: SynthConfig,
    pub path: PathDecoderConfig,
    pub translit: TranslitConfig,
    pub translit_source: TranslitSource,
    /// `false` skips correction training; the pipeline then has none.
    pub train_correction: bool,
    pub correct: CorrectConfig,
    pub corruptions: CorruptionConfig,
    pub threshold_percentile: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::EnglishToIndic,
            traces_per_word: 10,
            seed: 7,
            beam_k: 3,
            synth: SynthConfig::default(),
            path: PathDecoderConfig::default(),
            translit: TranslitConfig::default(),
            translit_source: TranslitSource::Decoded,
            train_correction: true,
            correct: CorrectConfig::default(),
            corruptions: CorruptionConfig::default(),
            threshold_percentile: 0.99,
        }
    }
}

impl ExperimentConfig {
    /// Small noiseless setup that trains in seconds and overfits a handful
    /// of words.
    pub fn fixture(task: TaskKind) -> Self {
        Self {
            task,
            traces_per_word: 10,
            synth: SynthConfig::noiseless(),
            path: PathDecoderConfig {
                model_dim: 24,
                ff_dim: 48,
                recurrent_hidden: 16,
                head_hidden: 16,
                lr: 0.002,
                epochs: 60,
                head_epochs: 10,
                ..PathDecoderConfig::default()
            },
            translit: TranslitConfig {
                embed_dim: 16,
                hidden_dim: 32,
                attention_dim: 32,
                epochs: 15,
                lr: 0.005,
                ..TranslitConfig::default()
            },
            translit_source: TranslitSource::Decoded,
            correct: CorrectConfig {
                embed_dim: 32,
                scorer_hidden: 32,
                epochs: 5,
                ..CorrectConfig::default()
            },
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub outcomes: Vec<ItemOutcome>,
    pub path_report: PathTrainingReport,
    pub translit_report: Option<TranslitTrainingReport>,
    pub correct_report: Option<CorrectTrainingReport>,
    pub pipeline: Pipeline,
    pub split_sizes: [usize; 3],
}

/// Trains every stage in order (path decoder, transliteration on decoder
/// outputs, correction) on synthetic traces of `entries`, then evaluates on
/// the held-out split. For `indic_to_indic` only `target` is used.
pub fn run_experiment(
    layout: Arc<KeyboardLayout>,
    entries: &[LexiconEntry],
    cfg: &ExperimentConfig,
    ablations: &[Ablation],
) -> Result<ExperimentOutcome> {
    if entries.is_empty() {
        return Err(CoreError::invalid("run_experiment", "no lexicon entries"));
    }
    let mut cfg = cfg.clone();
    for a in ablations {
        match a {
            Ablation::Derivatives => cfg.path.zero_derivatives = true,
            Ablation::Attention => cfg.translit.use_attention = false,
            Ablation::Dense => cfg.correct.dense = false,
            Ablation::Correction => {}
        }
    }
    let bypass = ablations.contains(&Ablation::Correction);
    let typed = |e: &LexiconEntry| match cfg.task {
        TaskKind::EnglishToIndic => e.source.clone(),
        TaskKind::IndicToIndic => e.target.clone(),
    };
    let words: Vec<String> = entries.iter().map(typed).collect();
    let mut synth = cfg.synth;
    synth.rng_seed = item_seed(cfg.seed, 0);
    let traces = generate_dataset(&layout, &words, cfg.traces_per_word, &synth)?;
    let items: Vec<EvalItem> = traces
        .into_iter()
        .enumerate()
        .map(|(i, trace)| {
            let e = &entries[i / cfg.traces_per_word];
            EvalItem {
                trace,
                word: typed(e),
                target: e.target.clone(),
            }
        })
        .collect();
    let split = split_dataset(&items, item_seed(cfg.seed, 1))?;

    let alphabet = Alphabet::new(layout.chars())?;
    let samples = items_to_samples(&split.train, &layout)?;
    let (path, path_report) = train_path_decoder(&alphabet, &samples, &cfg.path)?;

    let mut skipped = SkippedCounts {
        path_ctc: path_report.ctc_skipped,
        path_head: path_report.head_skipped,
        ..SkippedCounts::default()
    };
    let (translit, translit_report) = match cfg.task {
        TaskKind::EnglishToIndic => {
            let mut pairs = Vec::with_capacity(split.train.len());
            for (item, sample) in split.train.iter().zip(&samples) {
                let source = match cfg.translit_source {
                    TranslitSource::Gold => item.word.clone(),
                    TranslitSource::Decoded => {
                        path.decode_word(&sample.features, DecodeMode::Head)?
                    }
                };
                pairs.push(TranslitPair {
                    source,
                    target: item.target.clone(),
                });
            }
            let target_alphabet = Alphabet::from_words(entries.iter().map(|e| e.target.as_str()));
            let (model, report) =
                train_translit(&alphabet, &target_alphabet, &pairs, &cfg.translit)?;
            skipped.translit = report.skipped;
            (Some(model), Some(report))
        }
        TaskKind::IndicToIndic => (None, None),
    };

    let mut pipeline = Pipeline::new(cfg.task, layout.clone(), path, translit, None, cfg.beam_k)?;
    let correct_report = if cfg.train_correction {
        let mut vocab_words: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        for e in entries {
            if seen.insert(e.target.clone()) {
                vocab_words.push(e.target.clone());
            }
        }
        let corr_alphabet = Alphabet::from_words(vocab_words.iter().map(String::as_str));
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(cfg.seed, 2));
        let pairs = generate_corruptions(
            &vocab_words,
            corr_alphabet.chars(),
            &cfg.corruptions,
            &mut rng,
        )?;
        let model = CorrectionModel::new(corr_alphabet, cfg.correct.clone())?;
        let (mut model, report) = train_correct(model, &vocab_words, &pairs)?;
        let vocab = model.vocabulary(&vocab_words)?;
        let mut calib = Vec::new();
        for item in &split.val {
            let r = decode_points(&pipeline, &item.trace.points, pipeline.beam_k)?;
            if let Some((text, _)) = r.pre_correction.first() {
                if !text.is_empty() {
                    calib.push(text.clone());
                }
            }
        }
        if !calib.is_empty() {
            model.threshold =
                calibrate_threshold(&model, &vocab, &calib, cfg.threshold_percentile)?;
        }
        pipeline.correction = Some((model, vocab));
        Some(report)
    } else {
        None
    };
    pipeline.bypass_correction = bypass;

    let (mut report, outcomes) = evaluate_detailed(&pipeline, &split.test, cfg.beam_k)?;
    report.skipped.path_ctc = skipped.path_ctc;
    report.skipped.path_head = skipped.path_head;
    report.skipped.translit = skipped.translit;
    Ok(ExperimentOutcome {
        report,
        outcomes,
        path_report,
        translit_report,
        correct_report,
        pipeline,
        split_sizes: [split.train.len(), split.val.len(), split.test.len()],
    })
}

/// Path-decoder training samples for `items`.
pub fn items_to_samples(items: &[EvalItem], layout: &KeyboardLayout) -> Result<Vec<PathSample>> {
    items
        .iter()
        .map(|i| {
            Ok(PathSample {
                features: featurize(&i.trace, layout)?,
                word: i.word.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::bundled_layout;
    use proptest::prelude::*;

    #[test]
    fn split_sizes_and_determinism() {
        let records: Vec<u32> = (0..100).collect();
        let s = split_dataset(&records, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 20, 10));
        assert_eq!(s, split_dataset(&records, 3).unwrap());
        assert_ne!(s, split_dataset(&records, 4).unwrap());
        assert!(split_dataset(&records[..9], 3).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 10usize..300, seed in any::<u64>()) {
            let records: Vec<usize> = (0..n).collect();
            let s = split_dataset(&records, seed).unwrap();
            prop_assert_eq!(s.train.len(), n * 7 / 10);
            prop_assert_eq!(s.val.len(), n * 2 / 10);
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort();
            prop_assert_eq!(all, records);
        }
    }

    #[test]
    fn angles() {
        let p = |x, y| Point::new(x, y);
        assert!(
            (angle_subtended(p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0)).unwrap() - 90.0).abs() < 1e-12
        );
        assert_eq!(
            angle_subtended(p(0.0, 0.0), p(1.0, 0.0), p(2.0, 0.0)).unwrap(),
            180.0
        );
        assert!(angle_subtended(p(0.0, 0.0), p(1.0, 0.0), p(1.0, 0.0)).is_err());
        assert!(angle_subtended(p(0.0, 0.0), p(1.0, 0.0), p(0.001, 0.0)).unwrap() < 1e-6);
    }

    #[test]
    fn trigram_extraction() {
        assert_eq!(trigrams("abcd"), vec!["abc", "bcd"]);
        assert!(trigrams("ab").is_empty());
    }

    #[test]
    fn error_analysis_bins() {
        let q = bundled_layout("qwerty_en").unwrap();
        let words = ["hello", "keyboard", "swipe", "at", "trace", "letter"];
        let all_right: Vec<AnalysisItem> = words
            .iter()
            .map(|w| AnalysisItem {
                word: w.to_string(),
                correct: true,
            })
            .collect();
        let a = error_analysis(&q, &all_right).unwrap();
        assert!(a.length_bins.iter().all(|b| b.accuracy == 100.0));
        assert_eq!(
            a.length_bins.iter().map(|b| b.count).sum::<usize>(),
            words.len()
        );
        assert!(a.angle_bins.iter().all(|b| b.errors == 0));
        let total_trigrams: usize = words.iter().map(|w| trigrams(w).len()).sum();
        assert_eq!(
            a.angle_bins.iter().map(|b| b.occurrences).sum::<usize>() + a.degenerate_trigrams,
            total_trigrams
        );

        let mixed: Vec<AnalysisItem> = words
            .iter()
            .enumerate()
            .map(|(i, w)| AnalysisItem {
                word: w.to_string(),
                correct: i % 2 == 0,
            })
            .collect();
        let a = error_analysis(&q, &mixed).unwrap();
        let errs: usize = a.angle_bins.iter().map(|b| b.errors).sum();
        let expected: usize = words
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 2 == 1)
            .map(|(_, w)| trigrams(w).len())
            .sum();
        assert_eq!(errs, expected - mixed_degenerate(&mixed));
    }

    fn mixed_degenerate(items: &[AnalysisItem]) -> usize {
        items
            .iter()
            .filter(|i| !i.correct)
            .flat_map(|i| trigrams(&i.word))
            .filter(|t| {
                let c: Vec<char> = t.chars().collect();
                c[0] == c[1] || c[1] == c[2]
            })
            .count()
    }

    #[test]
    fn ablation_names() {
        assert_eq!(
            parse_ablations(&["dense", "derivatives", "dense"]).unwrap(),
            vec![Ablation::Derivatives, Ablation::Dense]
        );
        assert!(parse_ablations(&["dropout"]).is_err());
        assert_eq!(
            "indic_to_indic".parse::<TaskKind>().unwrap(),
            TaskKind::IndicToIndic
        );
    }

    #[test]
    fn task_spec_validation() {
        let spec = TaskSpec {
            kind: TaskKind::IndicToIndic,
            layout: "devanagari".into(),
            path_checkpoint: "p.json".into(),
            translit_checkpoint: Some("t.json".into()),
            correct_checkpoint: None,
            vocab: None,
            beam_k: 3,
        };
        assert!(spec.validate().is_err());
        let ok = TaskSpec {
            translit_checkpoint: None,
            ..spec.clone()
        };
        ok.validate().unwrap();
        let english = TaskSpec {
            kind: TaskKind::EnglishToIndic,
            ..ok.clone()
        };
        assert!(english.validate().is_err());
        let half = TaskSpec {
            vocab: Some("v.txt".into()),
            ..ok
        };
        assert!(half.validate().is_err());
    }

    fn k_lists(cands: &[&str], gold: &str, k: usize) -> Vec<f64> {
        let owned: Vec<String> = cands.iter().map(|s| s.to_string()).collect();
        k_accuracy(&[(owned.as_slice(), gold)], k)
    }

    #[test]
    fn k_best_counting() {
        assert_eq!(
            k_lists(&["a", "b", "gold"], "gold", 3),
            vec![0.0, 0.0, 100.0]
        );
        assert_eq!(k_lists(&["a", "gold"], "gold", 1), vec![0.0]);
        assert_eq!(k_lists(&[], "gold", 3), vec![0.0, 0.0, 0.0]);
    }
}
