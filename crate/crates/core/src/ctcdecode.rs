//! Gesture path decoder.
//!
//! Feature rows are projected to `model_dim`, given sinusoidal positions,
//! passed through a transformer encoder block and an optional stack of
//! bidirectional LSTMs, and projected to per-frame distributions over the
//! alphabet plus blank. Greedy aggregation contracts the frames; a second
//! bidirectional LSTM stack relabels each contracted vector as one
//! character.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use swipeforge_nn::{
    argmax, cross_entropy, Adam, AdamConfig, BiStack, CellKind, Checkpoint, Dense, EncoderBlock,
    EncoderBlockConfig, Mat, ParamId, ParamStore, Tape, Var,
};

use crate::ctc::{ctc_log_loss, greedy_aggregate, ContractedSequence, EmissionSequence};
use crate::data::Alphabet;
use crate::error::{CoreError, Result};
use crate::synth::{item_seed, FeatureSequence};

pub const MODULE_KIND: &str = "path_decoder";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathDecoderConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Hidden size per direction of the emission-side LSTM stack.
    pub recurrent_hidden: usize,
    /// 0 disables the emission-side LSTM stack.
    pub recurrent_layers: usize,
    pub head_hidden: usize,
    pub head_layers: usize,
    pub lr: f64,
    pub head_lr: f64,
    pub epochs: usize,
    pub head_epochs: usize,
    pub clip_norm: Option<f64>,
    /// Multiplier applied to the `dx, dy` columns before projection.
    pub derivative_scale: f64,
    /// Ablation: zero the `dx, dy` columns at training and decode time.
    pub zero_derivatives: bool,
    pub seed: u64,
}

impl Default for PathDecoderConfig {
    fn default() -> Self {
        Self {
            model_dim: 64,
            heads: 4,
            ff_dim: 128,
            dropout: 0.05,
            recurrent_hidden: 64,
            recurrent_layers: 2,
            head_hidden: 64,
            head_layers: 2,
            lr: 0.001,
            head_lr: 0.01,
            epochs: 20,
            head_epochs: 5,
            clip_norm: Some(5.0),
            derivative_scale: 10.0,
            zero_derivatives: false,
            seed: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Contracted vectors relabelled by the character head.
    Head,
    /// Contracted vectors read off by their own argmax.
    Passthrough,
}

#[derive(Clone, Debug)]
pub struct PathDecoderModel {
    pub config: PathDecoderConfig,
    pub alphabet: Alphabet,
    store: ParamStore,
    input: Dense,
    encoder: EncoderBlock,
    recurrent: Option<BiStack>,
    emission: Dense,
    head: BiStack,
    head_out: Dense,
}

#[derive(Serialize, Deserialize)]
struct Hyper {
    config: PathDecoderConfig,
    alphabet: Alphabet,
}

/// `T x d` sinusoidal position table.
pub fn positional_encoding(frames: usize, dim: usize) -> Mat {
    Mat::from_shape_fn((frames, dim), |(t, i)| {
        let pair = (i / 2) as f64;
        let angle = t as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl PathDecoderModel {
    pub fn new(alphabet: Alphabet, config: PathDecoderConfig) -> Result<Self> {
        if alphabet.is_empty() {
            return Err(CoreError::Config("path decoder alphabet is empty".into()));
        }
        if config.head_layers == 0 {
            return Err(CoreError::Config("head_layers must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let c = alphabet.len();
        let d = config.model_dim;
        let input = Dense::new(
            &mut store,
            "input",
            FeatureSequence::GEOMETRIC_COLUMNS + c,
            d,
            &mut rng,
        );
        let encoder = EncoderBlock::new(
            &mut store,
            "encoder",
            EncoderBlockConfig {
                model_dim: d,
                heads: config.heads,
                ff_dim: config.ff_dim,
                dropout: config.dropout,
            },
            &mut rng,
        )?;
        let (recurrent, width) = if config.recurrent_layers > 0 {
            let stack = BiStack::new(
                &mut store,
                "recurrent",
                CellKind::Lstm,
                d,
                config.recurrent_hidden,
                config.recurrent_layers,
                &mut rng,
            );
            let w = stack.output_dim().expect("non-empty stack");
            (Some(stack), w)
        } else {
            (None, d)
        };
        let emission = Dense::new(&mut store, "emission", width, c + 1, &mut rng);
        let head = BiStack::new(
            &mut store,
            "head",
            CellKind::Lstm,
            c + 1,
            config.head_hidden,
            config.head_layers,
            &mut rng,
        );
        let head_out = Dense::new(&mut store, "head_out", 2 * config.head_hidden, c, &mut rng);
        Ok(Self {
            config,
            alphabet,
            store,
            input,
            encoder,
            recurrent,
            emission,
            head,
            head_out,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn feature_width(&self) -> usize {
        FeatureSequence::GEOMETRIC_COLUMNS + self.alphabet.len()
    }

    pub fn head_params(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix("head").collect()
    }

    pub fn emission_params(&self) -> Vec<ParamId> {
        let head: Vec<ParamId> = self.head_params();
        self.store.ids().filter(|id| !head.contains(id)).collect()
    }

    /// Emission projection parameters, e.g. for zero-initialisation checks.
    pub fn emission_layer(&self) -> &Dense {
        &self.emission
    }

    fn prepare(&self, features: &Mat) -> Result<Mat> {
        if features.ncols() != self.feature_width() {
            return Err(CoreError::invalid(
                "encode_path",
                format!(
                    "feature width {} but model expects {}",
                    features.ncols(),
                    self.feature_width()
                ),
            ));
        }
        let mut x = features.clone();
        let scale = if self.config.zero_derivatives {
            0.0
        } else {
            self.config.derivative_scale
        };
        x.column_mut(2).mapv_inplace(|v| v * scale);
        x.column_mut(3).mapv_inplace(|v| v * scale);
        Ok(x)
    }

    /// `T x (|C| + 1)` log-probabilities on `tape`.
    pub fn emission_log_probs(&self, tape: &mut Tape<'_>, features: &Mat) -> Result<Var> {
        let x = self.prepare(features)?;
        let frames = x.nrows();
        let x = tape.input(x)?;
        let h = self.input.forward(tape, x)?;
        let pe = tape.input(positional_encoding(frames, self.config.model_dim))?;
        let h = tape.add(h, pe)?;
        let mut h = self.encoder.forward(tape, h)?.sequence;
        if let Some(stack) = &self.recurrent {
            h = stack.run(tape, h)?;
        }
        let logits = self.emission.forward(tape, h)?;
        Ok(tape.log_softmax_rows(logits)?)
    }

    pub fn encode_path(&self, features: &FeatureSequence) -> Result<EmissionSequence> {
        if features.width() != self.feature_width() {
            return Err(CoreError::invalid(
                "encode_path",
                format!(
                    "feature width {} but model expects {}",
                    features.width(),
                    self.feature_width()
                ),
            ));
        }
        if features.is_empty() {
            return Ok(EmissionSequence {
                probs: Mat::zeros((0, self.alphabet.len() + 1)),
            });
        }
        let mut tape = Tape::new(&self.store);
        let lp = self.emission_log_probs(&mut tape, &features.rows)?;
        Ok(EmissionSequence {
            probs: tape.value(lp).mapv(f64::exp),
        })
    }

    /// `K x |C|` character logits for contracted rows.
    pub fn head_logits(&self, tape: &mut Tape<'_>, contracted: &Mat) -> Result<Var> {
        if contracted.ncols() != self.alphabet.len() + 1 {
            return Err(CoreError::invalid(
                "decode_characters",
                format!(
                    "contracted width {} but model expects {}",
                    contracted.ncols(),
                    self.alphabet.len() + 1
                ),
            ));
        }
        let x = tape.input(contracted.clone())?;
        let h = self.head.run(tape, x)?;
        Ok(self.head_out.forward(tape, h)?)
    }

    /// One character per contracted vector.
    pub fn decode_characters(&self, contracted: &ContractedSequence) -> Result<String> {
        if contracted.is_empty() {
            return Ok(String::new());
        }
        let mut tape = Tape::new(&self.store);
        let logits = self.head_logits(&mut tape, &contracted.matrix())?;
        let labels: Vec<usize> = tape
            .value(logits)
            .rows()
            .into_iter()
            .map(|r| argmax(&r.to_vec()))
            .collect();
        Ok(self.alphabet.decode(&labels))
    }

    pub fn passthrough(&self, contracted: &ContractedSequence) -> String {
        self.alphabet.decode(&contracted.labels())
    }

    pub fn decode_word(&self, features: &FeatureSequence, mode: DecodeMode) -> Result<String> {
        if features.is_empty() {
            return Ok(String::new());
        }
        let contracted = greedy_aggregate(&self.encode_path(features)?);
        match mode {
            DecodeMode::Head => self.decode_characters(&contracted),
            DecodeMode::Passthrough => Ok(self.passthrough(&contracted)),
        }
    }

    /// `(passthrough, head)` decodes sharing one encoder pass.
    pub fn decode_both(&self, features: &FeatureSequence) -> Result<(String, String)> {
        if features.is_empty() {
            return Ok((String::new(), String::new()));
        }
        let contracted = greedy_aggregate(&self.encode_path(features)?);
        Ok((
            self.passthrough(&contracted),
            self.decode_characters(&contracted)?,
        ))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let hyper = Hyper {
            config: self.config.clone(),
            alphabet: self.alphabet.clone(),
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
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }
}

#[derive(Clone, Debug)]
pub struct PathSample {
    pub features: FeatureSequence,
    pub word: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathTrainingReport {
    /// Mean CTC loss per stage-1 epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean cross-entropy per head epoch.
    pub head_epoch_losses: Vec<f64>,
    /// Samples with too few frames for their word.
    pub ctc_skipped: usize,
    /// Samples used to train the head.
    pub head_samples: usize,
    /// Samples whose contracted length differed from the word length.
    pub head_skipped: usize,
}

/// Two-stage training: the encoder and emissions on CTC loss, then the
/// character head on cross-entropy over frozen emissions, keeping only
/// samples whose contracted length equals the word length.
pub fn train_path_decoder(
    alphabet: &Alphabet,
    samples: &[PathSample],
    config: &PathDecoderConfig,
) -> Result<(PathDecoderModel, PathTrainingReport)> {
    let model = PathDecoderModel::new(alphabet.clone(), config.clone())?;
    train_path_decoder_from(model, samples)
}

/// Same as [`train_path_decoder`] starting from an existing model.
pub fn train_path_decoder_from(
    mut model: PathDecoderModel,
    samples: &[PathSample],
) -> Result<(PathDecoderModel, PathTrainingReport)> {
    if samples.is_empty() {
        return Err(CoreError::invalid("train_path_decoder", "empty dataset"));
    }
    let config = model.config.clone();
    let targets: Vec<Vec<usize>> = samples
        .iter()
        .map(|s| model.alphabet.encode(&s.word))
        .collect::<Result<_>>()?;
    for s in samples {
        if s.features.width() != model.feature_width() {
            return Err(CoreError::invalid(
                "train_path_decoder",
                "feature width mismatch",
            ));
        }
    }
    let mut report = PathTrainingReport::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(config.seed, 1));
    let adam_cfg = AdamConfig {
        clip_norm: config.clip_norm,
        ..AdamConfig::with_lr(config.lr)
    };
    let mut adam = Adam::new(&model.store, model.emission_params(), adam_cfg);
    let mut step: u64 = 0;
    let mut skipped = vec![false; samples.len()];
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for &i in &order {
            let s = &samples[i];
            if s.features.is_empty() {
                skipped[i] = true;
                continue;
            }
            step += 1;
            let grads = {
                let mut tape = Tape::training(&model.store, item_seed(config.seed, step + 2));
                let lp = model.emission_log_probs(&mut tape, &s.features.rows)?;
                let loss = match ctc_log_loss(&mut tape, lp, &targets[i]) {
                    Ok(l) => l,
                    Err(CoreError::ImpossibleTarget { .. }) => {
                        skipped[i] = true;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                total += tape.scalar(loss);
                count += 1;
                tape.backward(loss)?
            };
            adam.step(&mut model.store, &grads)?;
        }
        report.epoch_losses.push(if count > 0 {
            total / count as f64
        } else {
            f64::NAN
        });
    }
    report.ctc_skipped = skipped.iter().filter(|&&s| s).count();

    if config.head_epochs == 0 {
        return Ok((model, report));
    }
    let mut head_data: Vec<(Mat, Vec<usize>)> = Vec::new();
    for (s, t) in samples.iter().zip(&targets) {
        if s.features.is_empty() || t.is_empty() {
            report.head_skipped += 1;
            continue;
        }
        let contracted = greedy_aggregate(&model.encode_path(&s.features)?);
        if contracted.len() == t.len() {
            head_data.push((contracted.matrix(), t.clone()));
        } else {
            report.head_skipped += 1;
        }
    }
    report.head_samples = head_data.len();
    if head_data.is_empty() {
        return Err(CoreError::invalid(
            "train_path_decoder",
            "every sample was skipped for the character head",
        ));
    }
    let head_cfg = AdamConfig {
        clip_norm: config.clip_norm,
        ..AdamConfig::with_lr(config.head_lr)
    };
    let mut head_adam = Adam::new(&model.store, model.head_params(), head_cfg);
    let mut order: Vec<usize> = (0..head_data.len()).collect();
    for _ in 0..config.head_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (m, t) = &head_data[i];
            let grads = {
                let mut tape = Tape::new(&model.store);
                let logits = model.head_logits(&mut tape, m)?;
                let loss = cross_entropy(&mut tape, logits, t)?;
                total += tape.scalar(loss);
                tape.backward(loss)?
            };
            head_adam.step(&mut model.store, &grads)?;
        }
        report
            .head_epoch_losses
            .push(total / head_data.len() as f64);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::bundled_layout;
    use crate::synth::{featurize, generate_dataset, SynthConfig};

    fn small_config() -> PathDecoderConfig {
        PathDecoderConfig {
            model_dim: 16,
            heads: 2,
            ff_dim: 32,
            dropout: 0.0,
            recurrent_hidden: 8,
            recurrent_layers: 1,
            head_hidden: 8,
            head_layers: 1,
            epochs: 0,
            head_epochs: 0,
            ..PathDecoderConfig::default()
        }
    }

    fn qwerty_alphabet() -> Alphabet {
        Alphabet::new(bundled_layout("qwerty_en").unwrap().chars()).unwrap()
    }

    fn features(word: &str) -> FeatureSequence {
        let q = bundled_layout("qwerty_en").unwrap();
        let t = generate_dataset(&q, &[word.to_string()], 1, &SynthConfig::noiseless()).unwrap();
        featurize(&t[0], &q).unwrap()
    }

    #[test]
    fn emission_rows_are_distributions() {
        let m = PathDecoderModel::new(qwerty_alphabet(), small_config()).unwrap();
        let e = m.encode_path(&features("hello")).unwrap();
        assert_eq!(e.len(), features("hello").len());
        assert_eq!(e.probs.ncols(), 27);
        for row in e.probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn zero_projection_gives_uniform_rows() {
        let mut m = PathDecoderModel::new(qwerty_alphabet(), small_config()).unwrap();
        let (w, b) = (m.emission.weight, m.emission.bias);
        m.store_mut().get_mut(w).fill(0.0);
        m.store_mut().get_mut(b).fill(0.0);
        let e = m.encode_path(&features("swipe")).unwrap();
        assert!(e.probs.iter().all(|&p| (p - 1.0 / 27.0).abs() < 1e-15));
    }

    #[test]
    fn width_mismatch_and_empty_inputs() {
        let m = PathDecoderModel::new(qwerty_alphabet(), small_config()).unwrap();
        let bad = FeatureSequence {
            rows: Mat::zeros((3, 10)),
        };
        assert!(m.encode_path(&bad).is_err());
        let empty = FeatureSequence {
            rows: Mat::zeros((0, 30)),
        };
        assert_eq!(m.decode_word(&empty, DecodeMode::Head).unwrap(), "");
        assert_eq!(
            m.decode_characters(&ContractedSequence::default()).unwrap(),
            ""
        );
    }

    #[test]
    fn head_is_length_preserving() {
        let m = PathDecoderModel::new(qwerty_alphabet(), small_config()).unwrap();
        let e = m.encode_path(&features("keyboard")).unwrap();
        let c = greedy_aggregate(&e);
        assert_eq!(m.decode_characters(&c).unwrap().chars().count(), c.len());
        let f = features("keyboard");
        assert_eq!(
            m.decode_word(&f, DecodeMode::Head).unwrap(),
            m.decode_word(&f, DecodeMode::Head).unwrap()
        );
    }

    #[test]
    fn zero_epochs_and_empty_dataset() {
        let cfg = small_config();
        let sample = PathSample {
            features: features("hi"),
            word: "hi".into(),
        };
        let (m, report) = train_path_decoder(&qwerty_alphabet(), &[sample], &cfg).unwrap();
        let fresh = PathDecoderModel::new(qwerty_alphabet(), cfg.clone()).unwrap();
        assert_eq!(m.to_checkpoint(), fresh.to_checkpoint());
        assert!(report.epoch_losses.is_empty());
        assert!(train_path_decoder(&qwerty_alphabet(), &[], &cfg).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = PathDecoderModel::new(qwerty_alphabet(), small_config()).unwrap();
        let back = PathDecoderModel::from_checkpoint(
            &Checkpoint::from_json(&m.to_checkpoint().to_json().unwrap()).unwrap(),
        )
        .unwrap();
        assert_eq!(back.to_checkpoint(), m.to_checkpoint());
    }
}
