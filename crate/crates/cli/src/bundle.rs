//! Model bundles: a directory with a `task.json` naming its checkpoints.

use std::path::{Path, PathBuf};

use swipeforge_core::geometry::LayoutRegistry;
use swipeforge_core::pipeline::{Pipeline, TaskSpec};

use crate::args::ModelArgs;
use crate::error::{CliError, CliResult};

pub const TASK_FILE: &str = "task.json";

pub fn read_spec(dir: &Path) -> CliResult<TaskSpec> {
    let path = dir.join(TASK_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let spec: TaskSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    Ok(spec)
}

pub fn write_spec(dir: &Path, spec: &TaskSpec) -> CliResult<()> {
    spec.validate()?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(TASK_FILE), serde_json::to_string_pretty(spec)?)?;
    Ok(())
}

/// Spec and base directory described by command-line model flags.
pub fn spec_from_args(args: &ModelArgs) -> CliResult<(TaskSpec, PathBuf)> {
    if let Some(dir) = &args.bundle {
        let mut spec = read_spec(dir)?;
        spec.beam_k = args.k;
        spec.validate()?;
        return Ok((spec, dir.clone()));
    }
    let path_checkpoint = args
        .path_checkpoint
        .clone()
        .ok_or_else(|| CliError::Usage("--path-checkpoint is required".into()))?;
    let spec = TaskSpec {
        kind: args.kind.into(),
        layout: args.layout.clone(),
        path_checkpoint,
        translit_checkpoint: args.translit_checkpoint.clone(),
        correct_checkpoint: args.correct_checkpoint.clone(),
        vocab: args.vocab.clone(),
        beam_k: args.k,
    };
    spec.validate()?;
    Ok((spec, PathBuf::from(".")))
}

pub fn load_from_args(args: &ModelArgs, layouts: &mut LayoutRegistry) -> CliResult<Pipeline> {
    let (spec, base) = spec_from_args(args)?;
    Ok(Pipeline::load(&spec, &base, layouts)?)
}

/// `dir` itself when it holds a task file, otherwise its immediate
/// subdirectories that do, in name order.
pub fn discover(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if dir.join(TASK_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.join(TASK_FILE).is_file() {
            found.push(p);
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(CliError::Usage(format!(
            "no {TASK_FILE} under {}",
            dir.display()
        )));
    }
    Ok(found)
}
