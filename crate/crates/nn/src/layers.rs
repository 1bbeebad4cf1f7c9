use rand::Rng;

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Fully connected layer `x W + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_fan_in(format!("{name}.weight"), input_dim, output_dim, rng);
        let bias = store.add_zeros(format!("{name}.bias"), 1, output_dim);
        Self {
            weight,
            bias,
            input_dim,
            output_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let (_, c) = tape.shape(x);
        if c != self.input_dim {
            return Err(NnError::ShapeMismatch {
                op: "dense",
                lhs: tape.shape(x),
                rhs: (self.input_dim, self.output_dim),
            });
        }
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }
}

/// Lookup table of `count` rows of width `dim`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub count: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        count: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (3.0 / dim as f64).sqrt();
        let table = store.add_uniform(format!("{name}.table"), count, dim, bound, rng);
        Self { table, count, dim }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, indices: &[usize]) -> Result<Var> {
        let t = tape.param(self.table);
        tape.gather_rows(t, indices)
    }
}

/// Row-wise layer normalisation with learned gain and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add_filled(format!("{name}.gain"), 1, dim, 1.0),
            shift: store.add_zeros(format!("{name}.shift"), 1, dim),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let n = tape.layer_norm_rows(x, self.eps)?;
        let g = tape.param(self.gain);
        let b = tape.param(self.shift);
        let scaled = tape.mul(n, g)?;
        tape.add(scaled, b)
    }
}

/// Cross-entropy of `logits` (rows) against one target class per row,
/// averaged over rows.
pub fn cross_entropy(tape: &mut Tape<'_>, logits: Var, targets: &[usize]) -> Result<Var> {
    let (rows, cols) = tape.shape(logits);
    if rows != targets.len() {
        return Err(NnError::invalid(
            "cross_entropy",
            format!("{rows} rows but {} targets", targets.len()),
        ));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
        return Err(NnError::invalid(
            "cross_entropy",
            format!("target {bad} outside {cols} classes"),
        ));
    }
    let logp = tape.log_softmax_rows(logits)?;
    let picks: Vec<Option<usize>> = targets
        .iter()
        .enumerate()
        .map(|(r, &t)| Some(r * cols + t))
        .collect();
    let picked = tape.select(logp, &picks, rows, 1, 0.0)?;
    let mean = tape.mean_all(picked)?;
    tape.neg(mean)
}
