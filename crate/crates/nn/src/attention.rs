//! Transformer encoder block: multi-head self-attention and a position-wise
//! feed-forward network, each wrapped in a residual connection followed by
//! layer normalisation. The block adds no positional signal of its own, so
//! it is equivariant to permutations of its input rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::layers::{Dense, LayerNorm};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderBlockConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub config: EncoderBlockConfig,
    query: Dense,
    key: Dense,
    value: Dense,
    output: Dense,
    norm_attention: LayerNorm,
    ff_in: Dense,
    ff_out: Dense,
    norm_ff: LayerNorm,
}

/// Output of [`EncoderBlock::forward`].
pub struct EncoderOutput {
    pub sequence: Var,
    /// One `T x T` attention matrix per head; rows are distributions.
    pub attention: Vec<Var>,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: EncoderBlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.heads == 0 || !config.model_dim.is_multiple_of(config.heads) {
            return Err(NnError::invalid(
                "encoder_block",
                format!(
                    "model_dim {} not divisible by {} heads",
                    config.model_dim, config.heads
                ),
            ));
        }
        let d = config.model_dim;
        Ok(Self {
            config,
            query: Dense::new(store, &format!("{name}.query"), d, d, rng),
            key: Dense::new(store, &format!("{name}.key"), d, d, rng),
            value: Dense::new(store, &format!("{name}.value"), d, d, rng),
            output: Dense::new(store, &format!("{name}.output"), d, d, rng),
            norm_attention: LayerNorm::new(store, &format!("{name}.norm_attention"), d),
            ff_in: Dense::new(store, &format!("{name}.ff_in"), d, config.ff_dim, rng),
            ff_out: Dense::new(store, &format!("{name}.ff_out"), config.ff_dim, d, rng),
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), d),
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, seq: Var) -> Result<EncoderOutput> {
        let d = self.config.model_dim;
        if tape.shape(seq).1 != d {
            return Err(NnError::ShapeMismatch {
                op: "encoder_block",
                lhs: tape.shape(seq),
                rhs: (tape.shape(seq).0, d),
            });
        }
        let head_dim = d / self.config.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();

        let q = self.query.forward(tape, seq)?;
        let k = self.key.forward(tape, seq)?;
        let v = self.value.forward(tape, seq)?;

        let mut heads = Vec::with_capacity(self.config.heads);
        let mut attention = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let kt = tape.transpose(kh)?;
            let raw = tape.matmul(qh, kt)?;
            let scores = tape.scale(raw, scale)?;
            let weights = tape.softmax_rows(scores)?;
            heads.push(tape.matmul(weights, vh)?);
            attention.push(weights);
        }
        let merged = tape.concat_cols(&heads)?;
        let projected = self.output.forward(tape, merged)?;
        let projected = tape.dropout(projected, self.config.dropout)?;
        let res1 = tape.add(seq, projected)?;
        let x1 = self.norm_attention.forward(tape, res1)?;

        let hidden = self.ff_in.forward(tape, x1)?;
        let hidden = tape.relu(hidden)?;
        let ff = self.ff_out.forward(tape, hidden)?;
        let ff = tape.dropout(ff, self.config.dropout)?;
        let res2 = tape.add(x1, ff)?;
        let sequence = self.norm_ff.forward(tape, res2)?;
        Ok(EncoderOutput {
            sequence,
            attention,
        })
    }
}
