//! Synthetic swipe traces.
//!
//! Each pair of adjacent characters is joined by a minimum-jerk stroke
//! between noisy key positions. With via noise enabled the stroke is forced
//! through a point drawn uniformly from the bounding box of its endpoints.
//! Doubled letters add a small loop through the key; single letters produce
//! a dwell cluster.

use std::f64::consts::TAU;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use swipeforge_nn::Mat;

use crate::error::{CoreError, Result};
use crate::geometry::{KeyboardLayout, Point};

/// Points emitted for a one-letter word.
const DWELL_POINTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Samples per unit of path length; every segment gets at least 3.
    pub points_per_unit: f64,
    /// Endpoint noise std as a fraction of the key width.
    pub endpoint_sigma: f64,
    pub via_noise: bool,
    pub rng_seed: u64,
    /// Loop radius for doubled letters, as a fraction of the key width.
    pub repeat_loop_radius: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            points_per_unit: 25.0,
            endpoint_sigma: 0.15,
            via_noise: true,
            rng_seed: 7,
            repeat_loop_radius: 0.4,
        }
    }
}

impl SynthConfig {
    /// No endpoint or via noise.
    pub fn noiseless() -> Self {
        Self {
            endpoint_sigma: 0.0,
            via_noise: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.points_per_unit.is_finite() && self.points_per_unit > 0.0) {
            return Err(CoreError::Config(format!(
                "points_per_unit must be positive, got {}",
                self.points_per_unit
            )));
        }
        if !(self.endpoint_sigma.is_finite() && self.endpoint_sigma >= 0.0) {
            return Err(CoreError::Config(format!(
                "endpoint_sigma must be non-negative, got {}",
                self.endpoint_sigma
            )));
        }
        if !(self.repeat_loop_radius.is_finite() && self.repeat_loop_radius >= 0.0) {
            return Err(CoreError::Config(format!(
                "repeat_loop_radius must be non-negative, got {}",
                self.repeat_loop_radius
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub word: String,
    pub layout_name: String,
    pub points: Vec<Point>,
}

/// On-disk form of a [`Trace`]: one JSON object per line.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub word: String,
    pub layout_name: String,
    pub points: Vec<[f64; 2]>,
}

impl From<&Trace> for TraceRecord {
    fn from(t: &Trace) -> Self {
        Self {
            word: t.word.clone(),
            layout_name: t.layout_name.clone(),
            points: t.points.iter().map(|p| [p.x, p.y]).collect(),
        }
    }
}

impl TryFrom<TraceRecord> for Trace {
    type Error = CoreError;

    fn try_from(r: TraceRecord) -> Result<Self> {
        let points: Vec<Point> = r.points.iter().map(|p| Point::new(p[0], p[1])).collect();
        if points.iter().any(|p| !p.is_finite()) {
            return Err(CoreError::invalid("trace", "non-finite coordinate"));
        }
        Ok(Trace {
            word: r.word,
            layout_name: r.layout_name,
            points,
        })
    }
}

/// Per-point features: `x, y, dx, dy` followed by a one-hot key indicator.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub rows: Mat,
}

impl FeatureSequence {
    pub const GEOMETRIC_COLUMNS: usize = 4;

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.rows.ncols()
    }

    /// Copy with the `dx, dy` columns set to zero; width is unchanged.
    pub fn without_derivatives(&self) -> Self {
        let mut rows = self.rows.clone();
        rows.column_mut(2).fill(0.0);
        rows.column_mut(3).fill(0.0);
        Self { rows }
    }
}

fn smoothstep5(t: f64) -> f64 {
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

fn smoothstep5_d1(t: f64) -> f64 {
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

fn lerp(p0: Point, p1: Point, s: f64) -> Point {
    Point::new(p0.x + (p1.x - p0.x) * s, p0.y + (p1.y - p0.y) * s)
}

/// Position on the quintic minimum-jerk path at normalized time `tau`.
pub fn min_jerk_position(p0: Point, p1: Point, tau: f64) -> Point {
    lerp(p0, p1, smoothstep5(tau))
}

/// Velocity `dp/dtau` on the quintic minimum-jerk path.
pub fn min_jerk_velocity(p0: Point, p1: Point, tau: f64) -> Point {
    let s = smoothstep5_d1(tau);
    Point::new((p1.x - p0.x) * s, (p1.y - p0.y) * s)
}

fn grid(n: usize, i: usize) -> f64 {
    if i + 1 == n {
        1.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// `n` samples uniform in normalized time along the minimum-jerk path.
pub fn min_jerk_segment(p0: Point, p1: Point, n: usize) -> Result<Vec<Point>> {
    if n < 2 {
        return Err(CoreError::invalid(
            "min_jerk_segment",
            format!("n = {n} < 2"),
        ));
    }
    let mut out: Vec<Point> = (0..n)
        .map(|i| min_jerk_position(p0, p1, grid(n, i)))
        .collect();
    out[n - 1] = p1;
    Ok(out)
}

/// Rest-to-rest path through a via point at a fixed time `tv`.
///
/// Per axis `x(t) = x0 + a3 t^3 + a4 t^4 + a5 t^5 + c (t - tv)^5` where the
/// last term only applies for `t > tv`. Position, velocity, acceleration and
/// the third and fourth derivatives are continuous at `tv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViaPath {
    pub p0: Point,
    pub tv: f64,
    coeffs: [[f64; 4]; 2],
}

/// Derivatives up to second order at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kinematics {
    pub position: Point,
    pub velocity: Point,
    pub acceleration: Point,
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut s = b[row];
        for k in row + 1..4 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

impl ViaPath {
    /// Fails when `tv` is not strictly inside `(0, 1)`.
    pub fn new(p0: Point, pv: Point, p1: Point, tv: f64) -> Result<Self> {
        if !(tv > 0.0 && tv < 1.0) {
            return Err(CoreError::invalid(
                "via_point",
                format!("via time {tv} outside (0, 1)"),
            ));
        }
        let u = 1.0 - tv;
        let m = [
            [1.0, 1.0, 1.0, u.powi(5)],
            [3.0, 4.0, 5.0, 5.0 * u.powi(4)],
            [6.0, 12.0, 20.0, 20.0 * u.powi(3)],
            [tv.powi(3), tv.powi(4), tv.powi(5), 0.0],
        ];
        let solve = |x0: f64, xv: f64, x1: f64| {
            solve4(m, [x1 - x0, 0.0, 0.0, xv - x0])
                .ok_or_else(|| CoreError::invalid("via_point", "singular system"))
        };
        let cx = solve(p0.x, pv.x, p1.x)?;
        let cy = solve(p0.y, pv.y, p1.y)?;
        Ok(Self {
            p0,
            tv,
            coeffs: [cx, cy],
        })
    }

    fn axis(&self, axis: usize, t: f64, right: bool) -> [f64; 3] {
        let [a3, a4, a5, c] = self.coeffs[axis];
        let origin = if axis == 0 { self.p0.x } else { self.p0.y };
        let mut p = origin + t.powi(3) * (a3 + t * (a4 + t * a5));
        let mut v = t * t * (3.0 * a3 + t * (4.0 * a4 + t * 5.0 * a5));
        let mut acc = t * (6.0 * a3 + t * (12.0 * a4 + t * 20.0 * a5));
        if right {
            let d = t - self.tv;
            p += c * d.powi(5);
            v += 5.0 * c * d.powi(4);
            acc += 20.0 * c * d.powi(3);
        }
        [p, v, acc]
    }

    fn eval(&self, t: f64, right: bool) -> Kinematics {
        let x = self.axis(0, t, right);
        let y = self.axis(1, t, right);
        Kinematics {
            position: Point::new(x[0], y[0]),
            velocity: Point::new(x[1], y[1]),
            acceleration: Point::new(x[2], y[2]),
        }
    }

    /// Kinematics of the piece before the via time, extended to any `t`.
    pub fn left_piece(&self, t: f64) -> Kinematics {
        self.eval(t, false)
    }

    /// Kinematics of the piece after the via time, extended to any `t`.
    pub fn right_piece(&self, t: f64) -> Kinematics {
        self.eval(t, true)
    }

    pub fn at(&self, t: f64) -> Kinematics {
        self.eval(t, t > self.tv)
    }

    pub fn position(&self, t: f64) -> Point {
        self.at(t).position
    }
}

/// Via time used by [`via_point_segment`]: the arc-length split
/// `|p0 - pv| / (|p0 - pv| + |pv - p1|)`, snapped to the nearest interior
/// sample of an `n`-point grid. `None` when the split degenerates to an
/// endpoint.
pub fn via_time(p0: Point, pv: Point, p1: Point, n: usize) -> Option<f64> {
    let d0 = p0.distance(pv);
    let d1 = pv.distance(p1);
    if n < 3 || d0 + d1 <= 0.0 {
        return None;
    }
    let split = d0 / (d0 + d1);
    if split <= 0.0 || split >= 1.0 {
        return None;
    }
    let k = ((split * (n - 1) as f64).round() as usize).clamp(1, n - 2);
    Some(k as f64 / (n - 1) as f64)
}

/// `n` samples of the minimum-jerk path through `pv`. One sample lands on
/// `pv` exactly. When `pv` coincides with an endpoint the plain
/// minimum-jerk segment is returned.
pub fn via_point_segment(p0: Point, pv: Point, p1: Point, n: usize) -> Result<Vec<Point>> {
    if n < 3 {
        return Err(CoreError::invalid(
            "via_point_segment",
            format!("n = {n} < 3"),
        ));
    }
    let Some(tv) = via_time(p0, pv, p1, n) else {
        return min_jerk_segment(p0, p1, n);
    };
    let path = ViaPath::new(p0, pv, p1, tv)?;
    let k = (tv * (n - 1) as f64).round() as usize;
    Ok((0..n)
        .map(|i| match i {
            _ if i == k => pv,
            _ if i + 1 == n => p1,
            _ => path.position(grid(n, i)),
        })
        .collect())
}

/// Key center plus isotropic Gaussian noise with std `sigma * key width`.
pub fn perturb_endpoint<R: Rng + ?Sized>(
    layout: &KeyboardLayout,
    c: char,
    sigma: f64,
    rng: &mut R,
) -> Result<Point> {
    let key = layout.key(c)?;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(CoreError::invalid(
            "perturb_endpoint",
            format!("sigma {sigma}"),
        ));
    }
    if sigma == 0.0 {
        return Ok(key.center);
    }
    let normal = Normal::new(0.0, sigma * key.width).expect("std is positive and finite");
    let dx = normal.sample(rng);
    let dy = normal.sample(rng);
    Ok(Point::new(key.center.x + dx, key.center.y + dy))
}

/// Uniform sample from the axis-aligned box spanned by `p0` and `p1`.
pub fn sample_via<R: Rng + ?Sized>(p0: Point, p1: Point, rng: &mut R) -> Point {
    let mut axis = |a: f64, b: f64| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let u: f64 = rng.random();
        if lo == hi {
            lo
        } else {
            lo + (hi - lo) * u
        }
    };
    let x = axis(p0.x, p1.x);
    let y = axis(p0.y, p1.y);
    Point::new(x, y)
}

fn sample_count(cfg: &SynthConfig, length: f64) -> usize {
    ((cfg.points_per_unit * length).ceil() as usize).max(3)
}

/// Closed loop leaving and re-entering `at`, on a circle of the given
/// radius whose center sits above `at`. Angular progress follows the
/// minimum-jerk profile.
fn repeat_loop(at: Point, radius: f64, cfg: &SynthConfig) -> Vec<Point> {
    let n = sample_count(cfg, TAU * radius);
    let center = Point::new(at.x, at.y - radius);
    (0..n)
        .map(|i| {
            let theta = TAU * smoothstep5(grid(n, i));
            if i == 0 || i + 1 == n {
                at
            } else {
                Point::new(
                    center.x + radius * theta.sin(),
                    center.y + radius * theta.cos(),
                )
            }
        })
        .collect()
}

/// Synthesizes a trace and also returns, per character of `word`, the index
/// of the trace point at which the stroke passes that character's knot.
pub fn synthesize_trace_with_knots<R: Rng + ?Sized>(
    layout: &KeyboardLayout,
    word: &str,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<(Trace, Vec<usize>)> {
    cfg.validate()?;
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return Err(CoreError::invalid("synthesize_trace", "empty word"));
    }
    for &c in &chars {
        layout.index_of(c)?;
    }
    let trace = |points| Trace {
        word: word.to_string(),
        layout_name: layout.name().to_string(),
        points,
    };

    if chars.len() == 1 {
        let mut points = Vec::with_capacity(DWELL_POINTS);
        for _ in 0..DWELL_POINTS {
            points.push(perturb_endpoint(layout, chars[0], cfg.endpoint_sigma, rng)?);
        }
        return Ok((trace(points), vec![0]));
    }

    let mut knots = Vec::with_capacity(chars.len());
    for &c in &chars {
        knots.push(perturb_endpoint(layout, c, cfg.endpoint_sigma, rng)?);
    }
    let mut points = vec![knots[0]];
    let mut knot_index = vec![0];
    for i in 0..chars.len() - 1 {
        let (a, b) = (knots[i], knots[i + 1]);
        let segment = if chars[i] == chars[i + 1] {
            let radius = cfg.repeat_loop_radius * layout.key(chars[i])?.width;
            let mut seg = repeat_loop(a, radius, cfg);
            // The repeated knot is drawn independently; glide to it.
            if a != b {
                let tail = min_jerk_segment(a, b, sample_count(cfg, a.distance(b)))?;
                seg.extend_from_slice(&tail[1..]);
            }
            seg
        } else if cfg.via_noise {
            let via = sample_via(a, b, rng);
            let n = sample_count(cfg, a.distance(via) + via.distance(b));
            via_point_segment(a, via, b, n)?
        } else {
            min_jerk_segment(a, b, sample_count(cfg, a.distance(b)))?
        };
        points.extend_from_slice(&segment[1..]);
        knot_index.push(points.len() - 1);
    }
    Ok((trace(points), knot_index))
}

pub fn synthesize_trace<R: Rng + ?Sized>(
    layout: &KeyboardLayout,
    word: &str,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<Trace> {
    Ok(synthesize_trace_with_knots(layout, word, cfg, rng)?.0)
}

/// SplitMix64 finaliser over `master ^ golden * (index + 1)`; gives each
/// dataset item an independent generator seed.
pub fn item_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `per_word` traces for each word, seeded per item from `cfg.rng_seed`.
pub fn generate_dataset(
    layout: &KeyboardLayout,
    words: &[String],
    per_word: usize,
    cfg: &SynthConfig,
) -> Result<Vec<Trace>> {
    let mut out = Vec::with_capacity(words.len() * per_word);
    for (w, word) in words.iter().enumerate() {
        for r in 0..per_word {
            let seed = item_seed(cfg.rng_seed, (w * per_word + r) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            out.push(synthesize_trace(layout, word, cfg, &mut rng)?);
        }
    }
    Ok(out)
}

/// Features for a raw point stream; shared by offline and online decoding.
pub fn featurize_points(points: &[Point], layout: &KeyboardLayout) -> Result<FeatureSequence> {
    let t_len = points.len();
    if t_len == 0 {
        return Err(CoreError::invalid("featurize", "empty trace"));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(CoreError::invalid("featurize", "non-finite coordinate"));
    }
    let width = FeatureSequence::GEOMETRIC_COLUMNS + layout.len();
    let mut rows = Mat::zeros((t_len, width));
    for t in 0..t_len {
        let p = points[t];
        let (dx, dy) = if t_len == 1 {
            (0.0, 0.0)
        } else if t == 0 {
            (points[1].x - p.x, points[1].y - p.y)
        } else if t + 1 == t_len {
            (p.x - points[t - 1].x, p.y - points[t - 1].y)
        } else {
            (
                (points[t + 1].x - points[t - 1].x) / 2.0,
                (points[t + 1].y - points[t - 1].y) / 2.0,
            )
        };
        rows[[t, 0]] = p.x;
        rows[[t, 1]] = p.y;
        rows[[t, 2]] = dx;
        rows[[t, 3]] = dy;
        rows[[
            t,
            FeatureSequence::GEOMETRIC_COLUMNS + layout.nearest_key(p),
        ]] = 1.0;
    }
    Ok(FeatureSequence { rows })
}

pub fn featurize(trace: &Trace, layout: &KeyboardLayout) -> Result<FeatureSequence> {
    featurize_points(&trace.points, layout)
}

pub fn write_traces(path: impl AsRef<Path>, traces: &[Trace]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in traces {
        serde_json::to_writer(&mut out, &TraceRecord::from(t))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_traces(path: impl AsRef<Path>) -> Result<Vec<Trace>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut traces = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line)
            .map_err(|e| CoreError::invalid("read_traces", format!("line {}: {e}", n + 1)))?;
        traces.push(Trace::try_from(rec)?);
    }
    Ok(traces)
}
