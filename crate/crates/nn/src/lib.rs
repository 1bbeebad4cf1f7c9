//! Minimal differentiable-computation core.
//!
//! Everything the swipeforge models are assembled from: a reverse-mode
//! [`Tape`] over `f64` matrices, dense/embedding/normalisation layers,
//! LSTM and GRU cells with bidirectional wrappers, a transformer encoder
//! block, the Adam optimiser, JSON checkpoints and a finite-difference
//! gradient checker.
//!
//! ```
//! use swipeforge_nn::{Mat, ParamStore, Tape};
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", Mat::from_elem((1, 1), 3.0));
//! let mut tape = Tape::new(&store);
//! let x = tape.param(w);
//! let y = tape.square(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.param(w).unwrap()[[0, 0]], 6.0);
//! ```

pub mod attention;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod recurrent;
pub mod tape;

/// Dense row-major matrix; every tensor in this crate is rank 2.
pub type Mat = ndarray::Array2<f64>;

pub use attention::{EncoderBlock, EncoderBlockConfig, EncoderOutput};
pub use checkpoint::{Checkpoint, ParamRecord, CHECKPOINT_SCHEMA_VERSION};
pub use error::{NnError, Result};
pub use gradcheck::{grad_check, grad_check_params, grad_check_with, relative_error};
pub use layers::{cross_entropy, Dense, Embedding, LayerNorm};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use recurrent::{BiStack, Bidirectional, CellKind, CellState, RecurrentCell};
pub use tape::{Gradients, Tape, Var};

/// Argmax over a slice with ties resolved to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
