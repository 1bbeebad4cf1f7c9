//! Connectionist temporal classification over emission rows whose last
//! column is the blank.

use swipeforge_nn::{argmax, Mat, Tape, Var};

use crate::error::{CoreError, Result};

/// Stand-in for `ln 0` that keeps every tape value finite.
pub const LOG_ZERO: f64 = -1e30;

/// Per-frame distributions: `T x (|C| + 1)`, blank in the last column.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionSequence {
    pub probs: Mat,
}

impl EmissionSequence {
    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    pub fn blank(&self) -> usize {
        self.probs.ncols() - 1
    }

    /// Frame-wise argmax labels, ties to the lowest index.
    pub fn best_path(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().expect("standard layout")))
            .collect()
    }
}

/// Merges adjacent repeats, then drops blanks.
pub fn collapse(frames: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &f in frames {
        if Some(f) != prev && f != blank {
            out.push(f);
        }
        prev = Some(f);
    }
    out
}

/// Minimum number of frames that can carry `target`.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Brute-force enumeration of every frame string of length `frames` over
/// `0..=alphabet_size` (blank = `alphabet_size`) that collapses to `target`.
/// Limited to `frames <= 8` and `alphabet_size + 1 <= 6`.
pub fn ctc_alignments(
    target: &[usize],
    frames: usize,
    alphabet_size: usize,
) -> Result<Vec<Vec<usize>>> {
    if frames > 8 || alphabet_size + 1 > 6 {
        return Err(CoreError::invalid(
            "ctc_alignments",
            format!(
                "{frames} frames over {} symbols exceeds oracle scale",
                alphabet_size + 1
            ),
        ));
    }
    if target.iter().any(|&c| c >= alphabet_size) {
        return Err(CoreError::invalid(
            "ctc_alignments",
            "target symbol outside alphabet",
        ));
    }
    let base = alphabet_size + 1;
    let total = base.pow(frames as u32);
    let mut out = Vec::new();
    let mut frame = vec![0; frames];
    for code in 0..total {
        let mut c = code;
        for slot in frame.iter_mut().rev() {
            *slot = c % base;
            c /= base;
        }
        if collapse(&frame, alphabet_size) == target {
            out.push(frame.clone());
        }
    }
    Ok(out)
}

/// `-ln p(target | emissions)` by the log-space forward recursion over the
/// blank-interleaved target. `log_probs` is `T x (|C| + 1)` with blank last.
pub fn ctc_log_loss(tape: &mut Tape<'_>, log_probs: Var, target: &[usize]) -> Result<Var> {
    let (frames, width) = tape.shape(log_probs);
    if frames == 0 {
        return Err(CoreError::invalid("ctc_log_loss", "no frames"));
    }
    let blank = width - 1;
    if let Some(&bad) = target.iter().find(|&&c| c >= blank) {
        return Err(CoreError::invalid(
            "ctc_log_loss",
            format!("label {bad} outside alphabet"),
        ));
    }
    if min_frames(target) > frames {
        return Err(CoreError::ImpossibleTarget {
            target_len: target.len(),
            frames,
        });
    }

    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &c in target {
        ext.push(c);
        ext.push(blank);
    }
    let s_len = ext.len();
    let stay: Vec<Option<usize>> = (0..s_len).map(Some).collect();
    let step: Vec<Option<usize>> = (0..s_len).map(|s| s.checked_sub(1)).collect();
    let skip: Vec<Option<usize>> = (0..s_len)
        .map(|s| (s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]).then(|| s - 2))
        .collect();
    let emit =
        |t: usize| -> Vec<Option<usize>> { ext.iter().map(|&l| Some(t * width + l)).collect() };

    let first: Vec<Option<usize>> = ext
        .iter()
        .enumerate()
        .map(|(s, &l)| (s < 2).then_some(l))
        .collect();
    let mut alpha = tape.select(log_probs, &first, 1, s_len, LOG_ZERO)?;
    for t in 1..frames {
        let a = tape.select(alpha, &stay, 1, s_len, LOG_ZERO)?;
        let b = tape.select(alpha, &step, 1, s_len, LOG_ZERO)?;
        let c = tape.select(alpha, &skip, 1, s_len, LOG_ZERO)?;
        let ab = tape.log_add_exp(a, b)?;
        let merged = tape.log_add_exp(ab, c)?;
        let e = tape.select(log_probs, &emit(t), 1, s_len, LOG_ZERO)?;
        alpha = tape.add(merged, e)?;
    }
    let last = tape.select(alpha, &[Some(s_len - 1)], 1, 1, LOG_ZERO)?;
    let log_p = if s_len >= 2 {
        let prev = tape.select(alpha, &[Some(s_len - 2)], 1, 1, LOG_ZERO)?;
        tape.log_add_exp(last, prev)?
    } else {
        last
    };
    Ok(tape.neg(log_p)?)
}

/// Convenience evaluation of [`ctc_log_loss`] on a probability matrix.
/// Zero probabilities are floored at the smallest normal `f64`.
pub fn ctc_loss_value(probs: &Mat, target: &[usize]) -> Result<f64> {
    let store = swipeforge_nn::ParamStore::new();
    let mut tape = Tape::new(&store);
    let p = tape.input(probs.mapv(|v| v.max(f64::MIN_POSITIVE)))?;
    let lp = tape.ln(p)?;
    let loss = ctc_log_loss(&mut tape, lp, target)?;
    Ok(tape.scalar(loss))
}

/// One averaged run of frames sharing an argmax character.
#[derive(Clone, Debug, PartialEq)]
pub struct ContractedVector {
    /// Mean of the run's emission rows, including the blank column.
    pub probs: Vec<f64>,
    pub label: usize,
    /// Inclusive frame range.
    pub span: (usize, usize),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContractedSequence {
    pub vectors: Vec<ContractedVector>,
}

impl ContractedSequence {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.vectors.iter().map(|v| v.label).collect()
    }

    /// Rows stacked into a `K x (|C| + 1)` matrix.
    pub fn matrix(&self) -> Mat {
        let width = self.vectors.first().map_or(0, |v| v.probs.len());
        let flat: Vec<f64> = self
            .vectors
            .iter()
            .flat_map(|v| v.probs.iter().copied())
            .collect();
        Mat::from_shape_vec((self.vectors.len(), width), flat).expect("rows share a width")
    }
}

/// Greedy aggregation: maximal runs of frames with the same non-blank
/// argmax are averaged into one vector; blank frames end a run and are
/// dropped.
pub fn greedy_aggregate(emissions: &EmissionSequence) -> ContractedSequence {
    let blank = emissions.blank();
    let labels = emissions.best_path();
    let mut vectors = Vec::new();
    let mut t = 0;
    while t < labels.len() {
        let label = labels[t];
        let mut end = t;
        while end + 1 < labels.len() && labels[end + 1] == label {
            end += 1;
        }
        if label != blank {
            let rows = emissions.probs.slice(ndarray::s![t..=end, ..]);
            let mean = rows.mean_axis(ndarray::Axis(0)).expect("run is non-empty");
            vectors.push(ContractedVector {
                probs: mean.to_vec(),
                label,
                span: (t, end),
            });
        }
        t = end + 1;
    }
    ContractedSequence { vectors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_emissions(rng: &mut ChaCha8Rng, frames: usize, width: usize) -> Mat {
        let mut m = Mat::from_shape_fn((frames, width), |_| rng.random_range(0.05..1.0));
        for mut row in m.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        m
    }

    fn alignment_sum(probs: &Mat, alignments: &[Vec<usize>]) -> f64 {
        alignments
            .iter()
            .map(|a| {
                a.iter()
                    .enumerate()
                    .map(|(t, &l)| probs[[t, l]])
                    .product::<f64>()
            })
            .sum()
    }

    /// Every label sequence over `0..n` of length up to `max_len`.
    fn all_targets(n: usize, max_len: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for p in &frontier {
                for c in 0..n {
                    let mut q: Vec<usize> = p.clone();
                    q.push(c);
                    next.push(q);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    #[test]
    fn alignment_examples() {
        // a = 0, b = 1, blank = 2
        assert_eq!(ctc_alignments(&[0, 1], 2, 2).unwrap(), vec![vec![0, 1]]);
        let mut a = ctc_alignments(&[0], 2, 2).unwrap();
        a.sort();
        assert_eq!(a, vec![vec![0, 0], vec![0, 2], vec![2, 0]]);
        assert!(ctc_alignments(&[0, 0], 2, 2).unwrap().is_empty());
        assert!(ctc_alignments(&[0], 9, 2).is_err());
    }

    #[test]
    fn loss_examples() {
        let uniform = Mat::from_elem((2, 3), 1.0 / 3.0);
        let l = ctc_loss_value(&uniform, &[0]).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
        let one = array![[0.7, 0.2, 0.1]];
        assert!((ctc_loss_value(&one, &[0]).unwrap() + 0.7f64.ln()).abs() < 1e-12);
        assert!(matches!(
            ctc_loss_value(&uniform, &[0, 0]),
            Err(CoreError::ImpossibleTarget { .. })
        ));
        let certain = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(ctc_loss_value(&certain, &[0]).unwrap(), 0.0);
    }

    #[test]
    fn forward_recursion_matches_alignment_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=3 {
            for frames in 1..=6 {
                let probs = random_emissions(&mut rng, frames, n + 1);
                for target in all_targets(n, frames) {
                    let aligns = ctc_alignments(&target, frames, n).unwrap();
                    let brute = alignment_sum(&probs, &aligns);
                    match ctc_loss_value(&probs, &target) {
                        Ok(loss) => assert!(((-loss).exp() - brute).abs() < 1e-10),
                        Err(CoreError::ImpossibleTarget { .. }) => assert!(aligns.is_empty()),
                        Err(e) => panic!("{e}"),
                    }
                }
            }
        }
    }

    #[test]
    fn probabilities_over_all_labelings_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..=2 {
            for frames in 1..=5 {
                let probs = random_emissions(&mut rng, frames, n + 1);
                let total: f64 = all_targets(n, frames)
                    .iter()
                    .filter_map(|t| ctc_loss_value(&probs, t).ok())
                    .map(|l| (-l).exp())
                    .sum();
                assert!((total - 1.0).abs() < 1e-9, "{total}");
            }
        }
    }

    #[test]
    fn greedy_aggregation_examples() {
        // labels a, a, blank, a, b over {a, b, blank}
        let probs = array![
            [0.6, 0.3, 0.1],
            [0.8, 0.1, 0.1],
            [0.1, 0.1, 0.8],
            [0.5, 0.2, 0.3],
            [0.2, 0.7, 0.1]
        ];
        let c = greedy_aggregate(&EmissionSequence {
            probs: probs.clone(),
        });
        assert_eq!(c.labels(), vec![0, 0, 1]);
        assert_eq!(c.vectors[0].span, (0, 1));
        assert!((c.vectors[0].probs[0] - 0.7).abs() < 1e-15);
        assert_eq!(c.vectors[1].probs, vec![0.5, 0.2, 0.3]);
        assert_eq!(c.vectors[2].span, (4, 4));
        let blanks = EmissionSequence {
            probs: Mat::from_shape_fn((4, 3), |(_, c)| if c == 2 { 0.9 } else { 0.05 }),
        };
        assert!(greedy_aggregate(&blanks).is_empty());
    }

    proptest! {
        #[test]
        fn aggregation_preserves_argmax_and_normalisation(seed in any::<u64>(), frames in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let probs = random_emissions(&mut rng, frames, 4);
            let c = greedy_aggregate(&EmissionSequence { probs });
            prop_assert!(c.len() <= frames);
            for v in &c.vectors {
                prop_assert_eq!(argmax(&v.probs), v.label);
                prop_assert!(v.label != 3);
                prop_assert!((v.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            for w in c.vectors.windows(2) {
                prop_assert!(w[0].span.1 < w[1].span.0);
            }
        }

        #[test]
        fn loss_is_non_negative(seed in any::<u64>(), frames in 1usize..12, len in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let probs = random_emissions(&mut rng, frames, 3);
            let target: Vec<usize> = (0..len).map(|_| rng.random_range(0..2)).collect();
            if let Ok(l) = ctc_loss_value(&probs, &target) {
                prop_assert!(l > 0.0);
            }
        }
    }
}
