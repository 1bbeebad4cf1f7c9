use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swipeforge_nn::{
    grad_check, grad_check_params, grad_check_with, BiStack, CellKind, EncoderBlock,
    EncoderBlockConfig, Mat, ParamStore, RecurrentCell, Result, Tape, Var,
};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Weighted sum so every output coordinate contributes a distinct gradient.
fn reduce(t: &mut Tape<'_>, v: Var, seed: u64) -> Result<Var> {
    let (r, c) = t.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.input(random(&mut rng, r, c, -1.0, 1.0))?;
    let p = t.mul(v, w)?;
    t.sum_all(p)
}

fn check_unary<F>(name: &str, lo: f64, hi: f64, f: F)
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, 3, 4, lo, hi);
    let err = grad_check(&[x], STEP, |t, v| {
        let y = f(t, v[0])?;
        reduce(t, y, 99)
    })
    .unwrap();
    assert!(err < TOL, "{name}: {err}");
}

fn check_binary<F>(name: &str, a: (usize, usize), b: (usize, usize), lo: f64, hi: f64, f: F)
where
    F: Fn(&mut Tape<'_>, Var, Var) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random(&mut rng, a.0, a.1, -1.5, 1.5);
    let y = random(&mut rng, b.0, b.1, lo, hi);
    let err = grad_check(&[x, y], STEP, |t, v| {
        let z = f(t, v[0], v[1])?;
        reduce(t, z, 7)
    })
    .unwrap();
    assert!(err < TOL, "{name}: {err}");
}

#[test]
fn elementwise_unary_ops() {
    check_unary("tanh", -2.0, 2.0, |t, x| t.tanh(x));
    check_unary("sigmoid", -3.0, 3.0, |t, x| t.sigmoid(x));
    check_unary("relu", 0.1, 2.0, |t, x| t.relu(x));
    check_unary("relu_negative", -2.0, -0.1, |t, x| t.relu(x));
    check_unary("exp", -1.0, 1.0, |t, x| t.exp(x));
    check_unary("ln", 0.2, 3.0, |t, x| t.ln(x));
    check_unary("square", -2.0, 2.0, |t, x| t.square(x));
    check_unary("sqrt", 0.2, 3.0, |t, x| t.sqrt(x));
    check_unary("affine", -2.0, 2.0, |t, x| t.affine(x, -1.7, 0.3));
    check_unary("one_minus", -2.0, 2.0, |t, x| t.one_minus(x));
    check_unary("neg", -2.0, 2.0, |t, x| t.neg(x));
    check_unary("transpose", -2.0, 2.0, |t, x| t.transpose(x));
}

#[test]
fn row_normalisers() {
    check_unary("softmax_rows", -3.0, 3.0, |t, x| t.softmax_rows(x));
    check_unary("log_softmax_rows", -3.0, 3.0, |t, x| t.log_softmax_rows(x));
    check_unary("layer_norm_rows", -2.0, 2.0, |t, x| {
        t.layer_norm_rows(x, 1e-5)
    });
}

#[test]
fn reductions() {
    check_unary("sum_all", -2.0, 2.0, |t, x| t.sum_all(x));
    check_unary("mean_all", -2.0, 2.0, |t, x| t.mean_all(x));
    check_unary("sum_axis0", -2.0, 2.0, |t, x| t.sum_axis0(x));
    check_unary("sum_axis1", -2.0, 2.0, |t, x| t.sum_axis1(x));
    check_unary("max_all", -2.0, 2.0, |t, x| t.max_all(x));
    check_unary("min_all", -2.0, 2.0, |t, x| t.min_all(x));
}

#[test]
fn structural_ops() {
    check_unary("slice_rows", -2.0, 2.0, |t, x| t.slice_rows(x, 1, 3));
    check_unary("slice_cols", -2.0, 2.0, |t, x| t.slice_cols(x, 0, 2));
    check_unary("row", -2.0, 2.0, |t, x| t.row(x, 2));
    check_unary("gather_rows", -2.0, 2.0, |t, x| {
        t.gather_rows(x, &[2, 0, 2, 1])
    });
    check_unary("select", -2.0, 2.0, |t, x| {
        t.select(
            x,
            &[Some(0), None, Some(5), Some(5), Some(11), None],
            2,
            3,
            -4.0,
        )
    });
    check_unary("concat_cols", -2.0, 2.0, |t, x| {
        let a = t.tanh(x)?;
        t.concat_cols(&[x, a])
    });
    check_unary("concat_rows", -2.0, 2.0, |t, x| {
        let a = t.square(x)?;
        t.concat_rows(&[a, x])
    });
    check_unary("dropout_eval", -2.0, 2.0, |t, x| t.dropout(x, 0.3));
}

#[test]
fn binary_ops_with_broadcasting() {
    check_binary("matmul", (3, 4), (4, 2), -1.5, 1.5, |t, a, b| {
        t.matmul(a, b)
    });
    check_binary("add", (3, 4), (3, 4), -1.5, 1.5, |t, a, b| t.add(a, b));
    check_binary("add_row", (3, 4), (1, 4), -1.5, 1.5, |t, a, b| t.add(a, b));
    check_binary("sub_col", (3, 4), (3, 1), -1.5, 1.5, |t, a, b| t.sub(a, b));
    check_binary("mul_scalar", (3, 4), (1, 1), -1.5, 1.5, |t, a, b| {
        t.mul(a, b)
    });
    check_binary("div", (3, 4), (3, 4), 0.5, 2.0, |t, a, b| t.div(a, b));
    check_binary("div_row", (3, 4), (1, 4), 0.5, 2.0, |t, a, b| t.div(a, b));
    check_binary("log_add_exp", (3, 4), (3, 4), -1.5, 1.5, |t, a, b| {
        t.log_add_exp(a, b)
    });
}

#[test]
fn dropout_in_training_mode_is_a_fixed_mask() {
    // Same seed on each evaluation means the mask is a constant multiplier.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, 3, 4, -2.0, 2.0);
    let err = grad_check(&[x], STEP, |t, v| {
        t.set_training(true, 17);
        let y = t.dropout(v[0], 0.4)?;
        reduce(t, y, 3)
    })
    .unwrap();
    assert!(err < TOL, "{err}");
}

fn recurrent_case(kind: CellKind) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let cell = RecurrentCell::new(&mut store, "cell", kind, 3, 4, &mut rng);
    let xs = random(&mut rng, 5, 3, -1.0, 1.0);
    let ids = cell.params();
    let err = grad_check_params(&store, &ids, STEP, 40, |t| {
        let x = t.input(xs.clone())?;
        let (out, _) = cell.run(t, x, false)?;
        reduce(t, out, 8)
    })
    .unwrap();
    assert!(err < TOL, "{kind:?} params: {err}");

    let worst = input_check(&store, &xs, |t, x| {
        let (out, state) = cell.run(t, x, true)?;
        let last = reduce(t, state.h, 4)?;
        let all = reduce(t, out, 9)?;
        t.add(last, all)
    });
    assert!(worst < TOL, "{kind:?} inputs: {worst}");
}

fn input_check<F>(store: &ParamStore, x: &Mat, f: F) -> f64
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var>,
{
    grad_check_with(store, std::slice::from_ref(x), STEP, |t, v| f(t, v[0])).unwrap()
}

#[test]
fn lstm_unrolled_five_steps() {
    recurrent_case(CellKind::Lstm);
}

#[test]
fn gru_unrolled_five_steps() {
    recurrent_case(CellKind::Gru);
}

#[test]
fn bidirectional_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut store = ParamStore::new();
    let stack = BiStack::new(&mut store, "bi", CellKind::Lstm, 3, 3, 2, &mut rng);
    let xs = random(&mut rng, 4, 3, -1.0, 1.0);
    let ids: Vec<_> = store.ids().collect();
    let err = grad_check_params(&store, &ids, STEP, 12, |t| {
        let x = t.input(xs.clone())?;
        let out = stack.run(t, x)?;
        reduce(t, out, 2)
    })
    .unwrap();
    assert!(err < TOL, "{err}");
    let err = input_check(&store, &xs, |t, x| {
        let out = stack.run(t, x)?;
        reduce(t, out, 2)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn encoder_block_on_three_by_eight() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut store = ParamStore::new();
    let cfg = EncoderBlockConfig {
        model_dim: 8,
        heads: 2,
        ff_dim: 12,
        dropout: 0.0,
    };
    let block = EncoderBlock::new(&mut store, "enc", cfg, &mut rng).unwrap();
    let xs = random(&mut rng, 3, 8, -1.0, 1.0);
    let err = input_check(&store, &xs, |t, x| {
        let out = block.forward(t, x)?;
        reduce(t, out.sequence, 6)
    });
    assert!(err < TOL, "inputs: {err}");
    let ids: Vec<_> = store.ids().collect();
    let err = grad_check_params(&store, &ids, STEP, 16, |t| {
        let x = t.input(xs.clone())?;
        let out = block.forward(t, x)?;
        reduce(t, out.sequence, 6)
    })
    .unwrap();
    assert!(err < TOL, "params: {err}");
}
