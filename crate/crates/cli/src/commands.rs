//! One function per subcommand. Each returns the JSON it prints.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use swipeforge_core::correct::{
    calibrate_threshold, correction_accuracy, generate_corruptions, train_correct, CorrectConfig,
    CorrectionModel, CorruptionConfig, EditOp,
};
use swipeforge_core::ctcdecode::{
    train_path_decoder, DecodeMode, PathDecoderConfig, PathDecoderModel,
};
use swipeforge_core::data::{
    parse_lexicon, parse_vocabulary, read_vocabulary, Alphabet, LexiconEntry,
};
use swipeforge_core::geometry::LayoutRegistry;
use swipeforge_core::pipeline::{
    error_analysis, evaluate_detailed, items_to_samples, parse_ablations, run_experiment,
    run_pipeline, split_dataset, AnalysisItem, EvalItem, ExperimentConfig, Split,
};
use swipeforge_core::synth::{
    generate_dataset, item_seed, read_traces, write_traces, SynthConfig, Trace,
};
use swipeforge_core::translit::{sequence_accuracy, train_translit, TranslitConfig, TranslitPair};
use swipeforge_nn::Checkpoint;

use crate::args::*;
use crate::error::{CliError, CliResult};

pub fn run(cmd: Command) -> CliResult<()> {
    let out = match cmd {
        Command::Synth(a) => synth(&a)?,
        Command::TrainPath(a) => train_path(&a)?,
        Command::TrainTranslit(a) => train_translit_cmd(&a)?,
        Command::TrainCorrect(a) => train_correct_cmd(&a)?,
        Command::Eval(a) => eval(&a)?,
        Command::Analyze(a) => analyze(&a)?,
        Command::Ablate(a) => ablate(&a)?,
        Command::Decode(a) => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for line in decode(&a)? {
                writeln!(lock, "{line}")?;
            }
            return Ok(());
        }
        Command::Serve(a) => return crate::serve::run(a),
    };
    println!("{out}");
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Tab-separated lexicon, or a plain word list mapped to itself.
pub fn read_entries(path: &Path) -> CliResult<Vec<LexiconEntry>> {
    let text = read_text(path)?;
    let entries = if text
        .lines()
        .any(|l| !l.starts_with('#') && l.contains('\t'))
    {
        parse_lexicon(&text)?
    } else {
        parse_vocabulary(&text)
            .into_iter()
            .map(|w| LexiconEntry {
                source: w.clone(),
                target: w,
            })
            .collect()
    };
    if entries.is_empty() {
        return Err(CliError::Usage(format!(
            "{} holds no words",
            path.display()
        )));
    }
    Ok(entries)
}

fn load_traces(path: &Path) -> CliResult<Vec<Trace>> {
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "trace file {} does not exist",
            path.display()
        )));
    }
    Ok(read_traces(path)?)
}

/// Split seed shared by every command so train and eval agree.
fn split_seed(seed: u64) -> u64 {
    item_seed(seed, 1)
}

fn pick<T: Clone>(records: &[T], part: SplitPart, seed: u64) -> CliResult<Vec<T>> {
    if part == SplitPart::All {
        return Ok(records.to_vec());
    }
    let Split { train, val, test } = split_dataset(records, split_seed(seed))?;
    Ok(match part {
        SplitPart::Train => train,
        SplitPart::Val => val,
        _ => test,
    })
}

fn save(path: &Path, ck: &Checkpoint) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(
        path,
        ck.to_json().map_err(swipeforge_core::CoreError::from)?,
    )?;
    Ok(())
}

pub fn synth(a: &SynthArgs) -> CliResult<Value> {
    let mut layouts = LayoutRegistry::with_bundled();
    let layout = layouts.resolve(&a.layout)?;
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if a.noiseless {
        cfg.endpoint_sigma = 0.0;
        cfg.via_noise = false;
    }
    cfg.rng_seed = item_seed(a.seed, 0);
    let words: Vec<String> = read_entries(&a.lexicon)?
        .into_iter()
        .map(|e| match a.side {
            Side::Source => e.source,
            Side::Target => e.target,
        })
        .collect();
    let traces = generate_dataset(&layout, &words, a.per_word, &cfg)?;
    write_traces(&a.out, &traces)?;
    Ok(json!({"traces": traces.len(), "words": words.len(), "out": a.out}))
}

pub fn train_path(a: &TrainPathArgs) -> CliResult<Value> {
    let mut layouts = LayoutRegistry::with_bundled();
    let layout = layouts.resolve(&a.layout)?;
    let mut cfg: PathDecoderConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => PathDecoderConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(e) = a.head_epochs {
        cfg.head_epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(d) = a.model_dim {
        cfg.model_dim = d;
    }
    cfg.zero_derivatives |= a.zero_derivatives;
    cfg.seed = a.seed;
    let traces = load_traces(&a.traces)?;
    let items: Vec<EvalItem> = traces
        .into_iter()
        .map(|t| EvalItem {
            word: t.word.clone(),
            target: t.word.clone(),
            trace: t,
        })
        .collect();
    let (train, val) = if a.all {
        (items, Vec::new())
    } else {
        let s = split_dataset(&items, split_seed(a.seed))?;
        (s.train, s.val)
    };
    let alphabet = Alphabet::new(layout.chars())?;
    let samples = items_to_samples(&train, &layout)?;
    let (model, report) = train_path_decoder(&alphabet, &samples, &cfg)?;
    save(&a.out, &model.to_checkpoint())?;
    let val_acc = path_accuracy(&model, &items_to_samples(&val, &layout)?)?;
    Ok(json!({
        "out": a.out,
        "train_size": train.len(),
        "val_size": val.len(),
        "report": report,
        "val_accuracy_pre_head": val_acc.0,
        "val_accuracy_post_head": val_acc.1,
    }))
}

fn path_accuracy(
    model: &PathDecoderModel,
    samples: &[swipeforge_core::ctcdecode::PathSample],
) -> CliResult<(f64, f64)> {
    if samples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let (mut pre, mut post) = (0usize, 0usize);
    for s in samples {
        let (p, h) = model.decode_both(&s.features)?;
        pre += (p == s.word) as usize;
        post += (h == s.word) as usize;
    }
    let n = samples.len() as f64;
    Ok((100.0 * pre as f64 / n, 100.0 * post as f64 / n))
}

pub fn train_translit_cmd(a: &TrainTranslitArgs) -> CliResult<Value> {
    let mut layouts = LayoutRegistry::with_bundled();
    let layout = layouts.resolve(&a.layout)?;
    let mut cfg: TranslitConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TranslitConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if a.no_attention {
        cfg.use_attention = false;
    }
    cfg.seed = a.seed;
    let entries = read_entries(&a.lexicon)?;
    let target_alphabet = Alphabet::from_words(entries.iter().map(|e| e.target.as_str()));
    let source_alphabet = Alphabet::new(layout.chars())?;

    let (train, val): (Vec<TranslitPair>, Vec<TranslitPair>) = if a.gold_sources {
        let pairs: Vec<TranslitPair> = entries
            .iter()
            .map(|e| TranslitPair {
                source: e.source.clone(),
                target: e.target.clone(),
            })
            .collect();
        if pairs.len() >= 10 {
            let s = split_dataset(&pairs, split_seed(a.seed))?;
            (s.train, s.val)
        } else {
            (pairs, Vec::new())
        }
    } else {
        let (Some(ck), Some(traces)) = (&a.path_checkpoint, &a.traces) else {
            return Err(CliError::Usage(
                "--path-checkpoint and --traces are required unless --gold-sources is set".into(),
            ));
        };
        let path = PathDecoderModel::from_checkpoint(&load_ck(ck)?)?;
        let targets: HashMap<&str, &str> = entries
            .iter()
            .rev()
            .map(|e| (e.source.as_str(), e.target.as_str()))
            .collect();
        let traces = load_traces(traces)?;
        let split = split_dataset(&traces, split_seed(a.seed))?;
        let to_pairs = |ts: &[Trace]| -> CliResult<Vec<TranslitPair>> {
            let mut out = Vec::new();
            for t in ts {
                let target = targets.get(t.word.as_str()).ok_or_else(|| {
                    CliError::Usage(format!(
                        "trace word {:?} is missing from the lexicon",
                        t.word
                    ))
                })?;
                let features = swipeforge_core::synth::featurize(t, &layout)?;
                out.push(TranslitPair {
                    source: path.decode_word(&features, DecodeMode::Head)?,
                    target: target.to_string(),
                });
            }
            Ok(out)
        };
        (to_pairs(&split.train)?, to_pairs(&split.val)?)
    };
    let (model, report) = train_translit(&source_alphabet, &target_alphabet, &train, &cfg)?;
    save(&a.out, &model.to_checkpoint())?;
    let scorable: Vec<TranslitPair> = val.into_iter().filter(|p| !p.source.is_empty()).collect();
    let acc = 100.0 * sequence_accuracy(&model, &scorable)?;
    Ok(json!({
        "out": a.out,
        "sources": if a.gold_sources { "gold" } else { "decoded" },
        "train_size": train.len(),
        "val_size": scorable.len(),
        "report": report,
        "val_sequence_accuracy": acc,
    }))
}

fn load_ck(path: &Path) -> CliResult<Checkpoint> {
    let text = read_text(path)?;
    Ok(Checkpoint::from_json(&text).map_err(swipeforge_core::CoreError::from)?)
}

pub fn train_correct_cmd(a: &TrainCorrectArgs) -> CliResult<Value> {
    let mut cfg: CorrectConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => CorrectConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if a.euclidean {
        cfg.dense = false;
    }
    cfg.seed = a.seed;
    let mut corruption = CorruptionConfig::default();
    if let Some(n) = a.per_word {
        corruption.per_word = n;
    }
    if a.substitutions_only {
        corruption.ops = vec![EditOp::Substitute];
        corruption.max_edits = 1;
    }
    if !a.vocab.is_file() {
        return Err(CliError::Usage(format!(
            "vocabulary {} does not exist",
            a.vocab.display()
        )));
    }
    let words = read_vocabulary(&a.vocab)?;
    let alphabet = Alphabet::from_words(words.iter().map(String::as_str));
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(a.seed, 2));
    let pairs = generate_corruptions(&words, alphabet.chars(), &corruption, &mut rng)?;
    let held_out = generate_corruptions(&words, alphabet.chars(), &corruption, &mut rng)?;
    let model = CorrectionModel::new(alphabet, cfg)?;
    let (mut model, report) = train_correct(model, &words, &pairs)?;
    let vocab = model.vocabulary(&words)?;
    let calibration: Vec<String> = match &a.calibration {
        Some(p) => parse_vocabulary(&read_text(p)?),
        None => held_out.iter().map(|p| p.input.clone()).collect(),
    };
    model.threshold = calibrate_threshold(&model, &vocab, &calibration, a.threshold_percentile)?;
    let acc = 100.0 * correction_accuracy(&model, &vocab, &held_out)?;
    save(&a.out, &model.to_checkpoint())?;
    Ok(json!({
        "out": a.out,
        "vocabulary": words.len(),
        "train_pairs": pairs.len(),
        "report": report,
        "threshold": model.threshold,
        "held_out_accuracy": acc,
    }))
}

fn eval_items(a: &EvalArgs) -> CliResult<Vec<EvalItem>> {
    let targets: HashMap<String, String> = match &a.lexicon {
        Some(p) => read_entries(p)?
            .into_iter()
            .rev()
            .map(|e| (e.source, e.target))
            .collect(),
        None => HashMap::new(),
    };
    let traces = pick(&load_traces(&a.traces)?, a.split, a.seed)?;
    traces
        .into_iter()
        .map(|t| {
            let target = match &a.lexicon {
                Some(_) => targets.get(&t.word).cloned().ok_or_else(|| {
                    CliError::Usage(format!(
                        "trace word {:?} is missing from the lexicon",
                        t.word
                    ))
                })?,
                None => t.word.clone(),
            };
            Ok(EvalItem {
                word: t.word.clone(),
                target,
                trace: t,
            })
        })
        .collect()
}

fn emit(out: &Option<std::path::PathBuf>, v: Value) -> CliResult<Value> {
    match out {
        Some(p) => {
            std::fs::write(p, serde_json::to_string_pretty(&v)?)?;
            Ok(json!({"out": p}))
        }
        None => Ok(v),
    }
}

pub fn eval(a: &EvalArgs) -> CliResult<Value> {
    let pipeline = crate::bundle::load_from_args(&a.model, &mut LayoutRegistry::with_bundled())?;
    let items = eval_items(a)?;
    let (report, _) = evaluate_detailed(&pipeline, &items, a.model.k)?;
    emit(&a.out, serde_json::to_value(report)?)
}

pub fn analyze(a: &EvalArgs) -> CliResult<Value> {
    let pipeline = crate::bundle::load_from_args(&a.model, &mut LayoutRegistry::with_bundled())?;
    let items = eval_items(a)?;
    let (report, outcomes) = evaluate_detailed(&pipeline, &items, a.model.k)?;
    let analysis_items: Vec<AnalysisItem> = outcomes
        .iter()
        .map(|o| AnalysisItem {
            word: o.word.clone(),
            correct: o.final_correct_at(1),
        })
        .collect();
    let analysis = error_analysis(&pipeline.layout, &analysis_items)?;
    emit(&a.out, json!({"report": report, "analysis": analysis}))
}

pub fn ablate(a: &AblateArgs) -> CliResult<Value> {
    let ablations = parse_ablations(&a.switches)?;
    if ablations.is_empty() && !a.baseline {
        return Err(CliError::Usage(
            "give at least one --switch or --baseline".into(),
        ));
    }
    let mut layouts = LayoutRegistry::with_bundled();
    let layout: Arc<_> = layouts.resolve(&a.layout)?;
    let mut cfg: ExperimentConfig = match (&a.config, a.fixture) {
        (Some(p), _) => read_json(p)?,
        (None, true) => ExperimentConfig::fixture(a.kind.into()),
        (None, false) => ExperimentConfig::default(),
    };
    cfg.task = a.kind.into();
    cfg.seed = a.seed;
    if let Some(n) = a.per_word {
        cfg.traces_per_word = n;
    }
    let entries = read_entries(&a.lexicon)?;
    let baseline = if a.baseline {
        Some(run_experiment(layout.clone(), &entries, &cfg, &[])?.report)
    } else {
        None
    };
    let ablated = if ablations.is_empty() {
        None
    } else {
        Some(run_experiment(layout, &entries, &cfg, &ablations)?.report)
    };
    emit(
        &a.out,
        json!({"ablations": ablations, "baseline": baseline, "report": ablated}),
    )
}

pub fn decode(a: &DecodeArgs) -> CliResult<Vec<String>> {
    let pipeline = crate::bundle::load_from_args(&a.model, &mut LayoutRegistry::with_bundled())?;
    let traces = load_traces(&a.trace)?;
    let mut lines = Vec::with_capacity(traces.len());
    for t in &traces {
        let r = run_pipeline(&pipeline, t)?;
        lines.push(json!({"word": t.word, "result": r}).to_string());
    }
    Ok(lines)
}
