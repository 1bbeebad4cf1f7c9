//! Gated recurrent cells and bidirectional wrappers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// Input, forget, candidate and output gates with a separate cell state.
    Lstm,
    /// Update and reset gates; the hidden state is the only state.
    Gru,
}

impl CellKind {
    fn gate_count(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub h: Var,
    /// LSTM cell state; `None` for GRU.
    pub c: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct RecurrentCell {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    w_input: ParamId,
    w_hidden: ParamId,
    // GRU candidate path, applied to `r * h`.
    w_hidden_candidate: Option<ParamId>,
    bias: ParamId,
}

impl RecurrentCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let g = kind.gate_count();
        let w_input = store.add_fan_in(format!("{name}.w_input"), input_dim, g * hidden_dim, rng);
        let (w_hidden, w_hidden_candidate) = match kind {
            CellKind::Lstm => (
                store.add_fan_in(format!("{name}.w_hidden"), hidden_dim, 4 * hidden_dim, rng),
                None,
            ),
            CellKind::Gru => (
                store.add_fan_in(format!("{name}.w_hidden"), hidden_dim, 2 * hidden_dim, rng),
                Some(store.add_fan_in(
                    format!("{name}.w_hidden_candidate"),
                    hidden_dim,
                    hidden_dim,
                    rng,
                )),
            ),
        };
        let mut bias = Mat::zeros((1, g * hidden_dim));
        if kind == CellKind::Lstm {
            // forget gate starts open
            bias.slice_mut(ndarray::s![.., hidden_dim..2 * hidden_dim])
                .fill(1.0);
        }
        let bias = store.add(format!("{name}.bias"), bias);
        Self {
            kind,
            input_dim,
            hidden_dim,
            w_input,
            w_hidden,
            w_hidden_candidate,
            bias,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w_input, self.w_hidden, self.bias];
        ids.extend(self.w_hidden_candidate);
        ids
    }

    pub fn zero_state(&self, tape: &mut Tape<'_>) -> Result<CellState> {
        let h = tape.input(Mat::zeros((1, self.hidden_dim)))?;
        let c = match self.kind {
            CellKind::Lstm => Some(tape.input(Mat::zeros((1, self.hidden_dim)))?),
            CellKind::Gru => None,
        };
        Ok(CellState { h, c })
    }

    /// Input projection `x W + b` for a whole sequence at once.
    pub fn project_inputs(&self, tape: &mut Tape<'_>, xs: Var) -> Result<Var> {
        if tape.shape(xs).1 != self.input_dim {
            return Err(NnError::ShapeMismatch {
                op: "recurrent_input",
                lhs: tape.shape(xs),
                rhs: (self.input_dim, self.hidden_dim),
            });
        }
        let w = tape.param(self.w_input);
        let b = tape.param(self.bias);
        let xw = tape.matmul(xs, w)?;
        tape.add(xw, b)
    }

    /// One update from a raw `1 x input_dim` input.
    pub fn step(&self, tape: &mut Tape<'_>, x: Var, state: &CellState) -> Result<CellState> {
        let projected = self.project_inputs(tape, x)?;
        self.step_projected(tape, projected, state)
    }

    /// One update from an already projected `1 x gates*hidden` row.
    pub fn step_projected(
        &self,
        tape: &mut Tape<'_>,
        projected: Var,
        state: &CellState,
    ) -> Result<CellState> {
        let hd = self.hidden_dim;
        if tape.shape(state.h) != (1, hd) {
            return Err(NnError::ShapeMismatch {
                op: "recurrent_state",
                lhs: tape.shape(state.h),
                rhs: (1, hd),
            });
        }
        let wh = tape.param(self.w_hidden);
        let hw = tape.matmul(state.h, wh)?;
        match self.kind {
            CellKind::Lstm => {
                let c = state
                    .c
                    .ok_or_else(|| NnError::invalid("lstm_step", "missing cell state"))?;
                let gates = tape.add(projected, hw)?;
                let act = tape.sigmoid(gates)?;
                let i = tape.slice_cols(act, 0, hd)?;
                let f = tape.slice_cols(act, hd, 2 * hd)?;
                let o = tape.slice_cols(act, 3 * hd, 4 * hd)?;
                let g_raw = tape.slice_cols(gates, 2 * hd, 3 * hd)?;
                let g = tape.tanh(g_raw)?;
                let keep = tape.mul(f, c)?;
                let write = tape.mul(i, g)?;
                let c_new = tape.add(keep, write)?;
                let c_act = tape.tanh(c_new)?;
                let h_new = tape.mul(o, c_act)?;
                Ok(CellState {
                    h: h_new,
                    c: Some(c_new),
                })
            }
            CellKind::Gru => {
                let x_zr = tape.slice_cols(projected, 0, 2 * hd)?;
                let x_n = tape.slice_cols(projected, 2 * hd, 3 * hd)?;
                let zr_pre = tape.add(x_zr, hw)?;
                let zr = tape.sigmoid(zr_pre)?;
                let z = tape.slice_cols(zr, 0, hd)?;
                let r = tape.slice_cols(zr, hd, 2 * hd)?;
                let rh = tape.mul(r, state.h)?;
                let wn = tape.param(self.w_hidden_candidate.expect("gru candidate weights"));
                let rhw = tape.matmul(rh, wn)?;
                let n_pre = tape.add(x_n, rhw)?;
                let n = tape.tanh(n_pre)?;
                let one_minus_z = tape.one_minus(z)?;
                let a = tape.mul(one_minus_z, n)?;
                let b = tape.mul(z, state.h)?;
                let h_new = tape.add(a, b)?;
                Ok(CellState { h: h_new, c: None })
            }
        }
    }

    /// Runs the cell over the rows of `xs` (`T x input_dim`) from a zero
    /// state. Outputs are returned in input order even when `reverse` is set.
    pub fn run(&self, tape: &mut Tape<'_>, xs: Var, reverse: bool) -> Result<(Var, CellState)> {
        let t_len = tape.shape(xs).0;
        let mut state = self.zero_state(tape)?;
        if t_len == 0 {
            let empty = tape.input(Mat::zeros((0, self.hidden_dim)))?;
            return Ok((empty, state));
        }
        let projected = self.project_inputs(tape, xs)?;
        let mut outputs = vec![state.h; t_len];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..t_len).rev())
        } else {
            Box::new(0..t_len)
        };
        for t in order {
            let row = tape.row(projected, t)?;
            state = self.step_projected(tape, row, &state)?;
            outputs[t] = state.h;
        }
        let out = tape.concat_rows(&outputs)?;
        Ok((out, state))
    }
}

/// Forward and reversed cells whose outputs are concatenated per step.
#[derive(Clone, Debug)]
pub struct Bidirectional {
    pub forward: RecurrentCell,
    pub backward: RecurrentCell,
}

impl Bidirectional {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            forward: RecurrentCell::new(
                store,
                &format!("{name}.fwd"),
                kind,
                input_dim,
                hidden_dim,
                rng,
            ),
            backward: RecurrentCell::new(
                store,
                &format!("{name}.bwd"),
                kind,
                input_dim,
                hidden_dim,
                rng,
            ),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden_dim + self.backward.hidden_dim
    }

    /// `T x input_dim` to `T x 2*hidden_dim`.
    pub fn run(&self, tape: &mut Tape<'_>, xs: Var) -> Result<Var> {
        let (f, _) = self.forward.run(tape, xs, false)?;
        let (b, _) = self.backward.run(tape, xs, true)?;
        if tape.shape(f).0 == 0 {
            return tape.input(Mat::zeros((0, self.output_dim())));
        }
        tape.concat_cols(&[f, b])
    }
}

/// Stack of bidirectional layers, each feeding the next.
#[derive(Clone, Debug)]
pub struct BiStack {
    pub layers: Vec<Bidirectional>,
}

impl BiStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        depth: usize,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(depth);
        let mut width = input_dim;
        for i in 0..depth {
            let layer =
                Bidirectional::new(store, &format!("{name}.{i}"), kind, width, hidden_dim, rng);
            width = layer.output_dim();
            layers.push(layer);
        }
        Self { layers }
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.output_dim())
    }

    pub fn run(&self, tape: &mut Tape<'_>, xs: Var) -> Result<Var> {
        let mut x = xs;
        for layer in &self.layers {
            x = layer.run(tape, x)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed(store: &mut ParamStore) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.get_mut(id).fill(0.0);
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut store = ParamStore::new();
            let cell = RecurrentCell::new(&mut store, "c", kind, 3, 4, &mut rng);
            zeroed(&mut store);
            let mut tape = Tape::new(&store);
            let x = tape.input(Mat::from_elem((1, 3), 0.7)).unwrap();
            let s0 = cell.zero_state(&mut tape).unwrap();
            let s1 = cell.step(&mut tape, x, &s0).unwrap();
            assert!(tape.value(s1.h).iter().all(|&v| v == 0.0), "{kind:?}");
        }
    }

    #[test]
    fn bidirectional_width_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let bi = Bidirectional::new(&mut store, "b", CellKind::Lstm, 3, 5, &mut rng);
        let mut tape = Tape::new(&store);
        let x = tape.input(Mat::from_elem((4, 3), 0.1)).unwrap();
        let y = bi.run(&mut tape, x).unwrap();
        assert_eq!(tape.shape(y), (4, 10));
    }

    #[test]
    fn reversed_run_matches_forward_run_on_reversed_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let cell = RecurrentCell::new(&mut store, "c", CellKind::Gru, 2, 3, &mut rng);
        let xs = Mat::from_shape_fn((4, 2), |(i, j)| (i * 2 + j) as f64 * 0.1);
        let mut rev = xs.clone();
        rev.invert_axis(ndarray::Axis(0));
        let mut tape = Tape::new(&store);
        let a = tape.input(xs).unwrap();
        let b = tape.input(rev).unwrap();
        let (ya, _) = cell.run(&mut tape, a, true).unwrap();
        let (yb, _) = cell.run(&mut tape, b, false).unwrap();
        let mut yb_rev = tape.value(yb).clone();
        yb_rev.invert_axis(ndarray::Axis(0));
        assert_eq!(tape.value(ya), &yb_rev);
    }
}
