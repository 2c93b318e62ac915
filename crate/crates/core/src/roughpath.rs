//! Driving signals: piecewise-linear paths, their Stratonovich level-2 lift
//! and the α-Hölder rough-path distance.
//!
//! A [`SmoothPath`] is the piecewise-linear interpolant of its nodes, so its
//! derivative is constant on every segment.
//!
//! Time reversal: [`reverse`] returns `s -> z(t0 - s)` on `[0, t0]`. Driving
//! the forward characteristic system with this path reproduces the backward
//! characteristics ending at `t0`; an index of the form `z(s - t0)` would
//! refer to negative times and is not used.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::Real;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("path needs at least one node and matching value rows")]
    Empty,
    #[error("times must start at 0 and increase strictly (index {index})")]
    BadTimes { index: usize },
    #[error("value row {row} has {got} entries, expected {expected}")]
    BadRow {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("paths differ in dimension ({a} vs {b})")]
    DimensionMismatch { a: usize, b: usize },
    #[error("paths differ in horizon ({a} vs {b})")]
    HorizonMismatch { a: f64, b: f64 },
    #[error("coarse mesh {mesh} is finer than the native mesh {native}")]
    MeshTooFine { mesh: f64, native: f64 },
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("steps must be at least 1")]
    NoSteps,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Piecewise-linear `n`-dimensional path on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothPath<T> {
    times: Vec<T>,
    /// Row-major, `times.len() * dim` entries.
    values: Vec<T>,
    dim: usize,
}

impl<T: Real> SmoothPath<T> {
    /// A single node makes a constant path on the degenerate horizon `[0, 0]`.
    pub fn new(times: Vec<T>, rows: Vec<Vec<T>>) -> Result<Self, PathError> {
        if times.is_empty() || rows.len() != times.len() {
            return Err(PathError::Empty);
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(PathError::Empty);
        }
        if times[0] != T::zero() {
            return Err(PathError::BadTimes { index: 0 });
        }
        for i in 1..times.len() {
            if !(times[i] > times[i - 1]) || !times[i].is_finite() {
                return Err(PathError::BadTimes { index: i });
            }
        }
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(PathError::BadRow {
                    row,
                    got: r.len(),
                    expected: dim,
                });
            }
            values.extend_from_slice(r);
        }
        Ok(Self { times, values, dim })
    }

    /// Constant path through `value` on `[0, horizon]` (the zero-path signature when `value = 0`).
    pub fn constant(value: Vec<T>, horizon: T) -> Self {
        let dim = value.len();
        let mut values = value.clone();
        let times = if horizon > T::zero() {
            values.extend_from_slice(&value);
            vec![T::zero(), horizon]
        } else {
            vec![T::zero()]
        };
        Self { times, values, dim }
    }

    /// Straight line `z_t = t * v` on `[0, horizon]`.
    pub fn linear(direction: Vec<T>, horizon: T) -> Self {
        let end: Vec<T> = direction.iter().map(|&v| v * horizon).collect();
        Self::new(
            vec![T::zero(), horizon],
            vec![vec![T::zero(); direction.len()], end],
        )
        .expect("linear path is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn horizon(&self) -> T {
        *self.times.last().expect("non-empty")
    }

    pub fn node_count(&self) -> usize {
        self.times.len()
    }

    pub fn segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn node(&self, j: usize) -> &[T] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// Largest segment length.
    pub fn native_mesh(&self) -> T {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(T::zero(), |a, b| a.max(b))
    }

    fn is_uniform(&self) -> bool {
        if self.segments() == 0 {
            return true;
        }
        let h = self.horizon() / T::of_usize(self.segments());
        self.times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= T::lit(1e-9) * h)
    }

    /// Segment index `j` with `t` in `[t_j, t_{j+1})`, clamped to the last segment.
    pub fn segment_at(&self, t: T) -> usize {
        let segs = self.segments();
        if segs == 0 {
            return 0;
        }
        let k = self.times.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(segs - 1)
    }

    /// Derivative on segment `j`.
    pub fn velocity_into(&self, j: usize, out: &mut [T]) {
        if self.segments() == 0 {
            out.iter_mut().for_each(|v| *v = T::zero());
            return;
        }
        let dt = self.times[j + 1] - self.times[j];
        let a = self.node(j);
        let b = self.node(j + 1);
        for k in 0..self.dim {
            out[k] = (b[k] - a[k]) / dt;
        }
    }

    pub fn velocity(&self, j: usize) -> Vec<T> {
        let mut v = vec![T::zero(); self.dim];
        self.velocity_into(j, &mut v);
        v
    }

    /// Value at `t`, clamped to the horizon.
    pub fn eval_into(&self, t: T, out: &mut [T]) {
        if self.segments() == 0 {
            out.copy_from_slice(self.node(0));
            return;
        }
        let j = self.segment_at(t);
        let t0 = self.times[j];
        let t1 = self.times[j + 1];
        let a = self.node(j);
        let b = self.node(j + 1);
        if t <= t0 {
            out.copy_from_slice(a);
            return;
        }
        if t >= t1 {
            out.copy_from_slice(b);
            return;
        }
        let w = (t - t0) / (t1 - t0);
        for k in 0..self.dim {
            out[k] = a[k] + (b[k] - a[k]) * w;
        }
    }

    pub fn eval(&self, t: T) -> Vec<T> {
        let mut v = vec![T::zero(); self.dim];
        self.eval_into(t, &mut v);
        v
    }

    pub fn increment(&self, s: T, t: T) -> Vec<T> {
        let a = self.eval(s);
        let mut b = self.eval(t);
        for k in 0..self.dim {
            b[k] -= a[k];
        }
        b
    }

    /// The shifted path `tau -> z(tau + s)` on `[0, T - s]`.
    pub fn shift(&self, s: T) -> Result<Self, PathError> {
        let horizon = self.horizon();
        if s < T::zero() || s > horizon {
            return Err(PathError::TimeOutOfRange {
                t: s.as_f64(),
                horizon: horizon.as_f64(),
            });
        }
        let mut times = vec![T::zero()];
        let mut rows = vec![self.eval(s)];
        for (j, &t) in self.times.iter().enumerate() {
            if t > s {
                times.push(t - s);
                rows.push(self.node(j).to_vec());
            }
        }
        Self::new(times, rows)
    }

    /// Path restricted to the node times `times` (values interpolated).
    fn resample(&self, times: Vec<T>) -> Result<Self, PathError> {
        let rows = times.iter().map(|&t| self.eval(t)).collect();
        Self::new(times, rows)
    }
}

/// Piecewise-linear Brownian sample with `steps` Gaussian increments of
/// variance `horizon / steps` per coordinate.
pub fn sample_brownian<T: Real>(
    seed: u64,
    dim: usize,
    steps: usize,
    horizon: T,
) -> Result<SmoothPath<T>, PathError> {
    if steps == 0 {
        return Err(PathError::NoSteps);
    }
    if dim == 0 {
        return Err(PathError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = horizon.as_f64() / steps as f64;
    let sd = h.sqrt();
    let mut times = Vec::with_capacity(steps + 1);
    let mut rows = Vec::with_capacity(steps + 1);
    let mut z = vec![0.0f64; dim];
    times.push(T::zero());
    rows.push(vec![T::zero(); dim]);
    for k in 1..=steps {
        for zk in z.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *zk += sd * g;
        }
        let t = if k == steps {
            horizon
        } else {
            T::lit(horizon.as_f64() * k as f64 / steps as f64)
        };
        times.push(t);
        rows.push(z.iter().map(|&v| T::lit(v)).collect());
    }
    SmoothPath::new(times, rows)
}

/// Piecewise-linear interpolation on a coarser mesh `mesh`.
pub fn coarsen<T: Real>(p: &SmoothPath<T>, mesh: T) -> Result<SmoothPath<T>, PathError> {
    let native = p.native_mesh();
    if mesh < native * (T::one() - T::lit(1e-9)) || !(mesh > T::zero()) {
        return Err(PathError::MeshTooFine {
            mesh: mesh.as_f64(),
            native: native.as_f64(),
        });
    }
    let horizon = p.horizon();
    if p.is_uniform() && p.segments() > 0 {
        let ratio = (mesh / native).as_f64();
        let r = ratio.round();
        if (ratio - r).abs() < 1e-9 && p.segments().is_multiple_of(r as usize) {
            let r = r as usize;
            let times: Vec<T> = (0..p.node_count()).step_by(r).map(|j| p.times[j]).collect();
            let rows = (0..p.node_count())
                .step_by(r)
                .map(|j| p.node(j).to_vec())
                .collect();
            return SmoothPath::new(times, rows);
        }
    }
    let mut times = Vec::new();
    let mut k = 0usize;
    loop {
        let t = mesh * T::of_usize(k);
        if t >= horizon - mesh * T::lit(1e-9) {
            break;
        }
        times.push(t);
        k += 1;
    }
    times.push(horizon);
    p.resample(times)
}

/// Time reversal `s -> z(t0 - s)` on `[0, t0]`.
pub fn reverse<T: Real>(p: &SmoothPath<T>, t0: T) -> Result<SmoothPath<T>, PathError> {
    let horizon = p.horizon();
    if t0 < T::zero() || t0 > horizon {
        return Err(PathError::TimeOutOfRange {
            t: t0.as_f64(),
            horizon: horizon.as_f64(),
        });
    }
    if t0 == T::zero() {
        return Ok(SmoothPath::constant(p.eval(T::zero()), T::zero()));
    }
    let mut taus = vec![t0];
    for &t in p.times.iter().rev() {
        if t < t0 && t > T::zero() {
            taus.push(t);
        }
    }
    taus.push(T::zero());
    let times: Vec<T> = taus.iter().map(|&tau| t0 - tau).collect();
    let rows = taus.iter().map(|&tau| p.eval(tau)).collect();
    SmoothPath::new(times, rows)
}

/// Level-2 Stratonovich lift of a piecewise-linear path.
///
/// Iterated integrals are computed segment by segment in closed form: on a
/// linear piece with increment `d` starting from offset `a = z_r - z_s`,
/// `int (z - z_s) ⊗ dz = a ⊗ d + d ⊗ d / 2`.
#[derive(Debug, Clone)]
pub struct Level2Path<T> {
    base: SmoothPath<T>,
}

pub fn stratonovich_lift<T: Real>(p: &SmoothPath<T>) -> Level2Path<T> {
    Level2Path { base: p.clone() }
}

impl<T: Real> Level2Path<T> {
    pub fn base(&self) -> &SmoothPath<T> {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim
    }

    pub fn increment(&self, s: T, t: T) -> Vec<T> {
        self.base.increment(s, t)
    }

    /// Row-major `n x n` matrix `int_s^t (z_r - z_s) ⊗ dz_r`.
    pub fn area(&self, s: T, t: T) -> Vec<T> {
        let n = self.base.dim;
        let mut out = vec![T::zero(); n * n];
        if !(t > s) {
            return out;
        }
        let zs = self.base.eval(s);
        let mut offset = vec![T::zero(); n];
        let mut d = vec![T::zero(); n];
        let mut prev = zs.clone();
        let mut cur = vec![T::zero(); n];
        let mut r = s;
        let p = &self.base;
        let mut j = p.segment_at(s);
        while r < t {
            let seg_end = if p.segments() == 0 {
                t
            } else {
                p.times[j + 1].min(t)
            };
            let next = if seg_end <= r { t } else { seg_end };
            p.eval_into(next, &mut cur);
            for k in 0..n {
                d[k] = cur[k] - prev[k];
            }
            for a in 0..n {
                for b in 0..n {
                    out[a * n + b] += offset[a] * d[b] + T::lit(0.5) * d[a] * d[b];
                }
            }
            for k in 0..n {
                offset[k] += d[k];
            }
            std::mem::swap(&mut prev, &mut cur);
            r = next;
            j += 1;
            if p.segments() > 0 && j >= p.segments() {
                j = p.segments() - 1;
            }
        }
        out
    }
}

/// Exponent and time pairs on which the Hölder supremum is sampled.
#[derive(Debug, Clone)]
pub struct HolderMetricParams<T> {
    pub alpha: T,
    pub pairs: Vec<(T, T)>,
}

impl<T: Real> HolderMetricParams<T> {
    /// Dyadic pairs `(j T / 2^k, (j + 1) T / 2^k)` for `k = 0..=levels`.
    pub fn dyadic(alpha: T, horizon: T, levels: u32) -> Self {
        let mut pairs = Vec::new();
        for k in 0..=levels {
            let count = 1usize << k;
            let step = horizon / T::of_usize(count);
            for j in 0..count {
                let s = step * T::of_usize(j);
                let t = if j + 1 == count {
                    horizon
                } else {
                    step * T::of_usize(j + 1)
                };
                pairs.push((s, t));
            }
        }
        Self { alpha, pairs }
    }

    /// Dyadic pairs down to the native mesh of `p`.
    pub fn dyadic_for(alpha: T, p: &SmoothPath<T>) -> Self {
        let n = p.segments().max(1) as f64;
        let levels = n.log2().ceil().max(0.0) as u32;
        Self::dyadic(alpha, p.horizon(), levels)
    }
}

/// Level-1 and level-2 parts of the sampled Hölder distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderDistance<T> {
    pub level1: T,
    pub level2: T,
}

impl<T: Real> HolderDistance<T> {
    pub fn total(&self) -> T {
        self.level1.max(self.level2)
    }
}

fn check_compatible<T: Real>(a: &SmoothPath<T>, b: &SmoothPath<T>) -> Result<(), PathError> {
    if a.dim != b.dim {
        return Err(PathError::DimensionMismatch { a: a.dim, b: b.dim });
    }
    let (ha, hb) = (a.horizon(), b.horizon());
    if (ha - hb).abs() > T::lit(1e-12) * ha.abs().max(T::one()) {
        return Err(PathError::HorizonMismatch {
            a: ha.as_f64(),
            b: hb.as_f64(),
        });
    }
    Ok(())
}

pub fn holder_distance_parts<T: Real>(
    a: &Level2Path<T>,
    b: &Level2Path<T>,
    params: &HolderMetricParams<T>,
) -> Result<HolderDistance<T>, PathError> {
    check_compatible(&a.base, &b.base)?;
    let mut level1 = T::zero();
    let mut level2 = T::zero();
    for &(s, t) in &params.pairs {
        let dt = (t - s).abs();
        if dt == T::zero() {
            continue;
        }
        let scale = dt.powf(params.alpha);
        let ia = a.increment(s, t);
        let ib = b.increment(s, t);
        let inc: T = ia
            .iter()
            .zip(&ib)
            .map(|(x, y)| (*x - *y) * (*x - *y))
            .sum::<T>()
            .sqrt();
        let aa = a.area(s, t);
        let ab = b.area(s, t);
        let ar: T = aa
            .iter()
            .zip(&ab)
            .map(|(x, y)| (*x - *y) * (*x - *y))
            .sum::<T>()
            .sqrt();
        level1 = level1.max(inc / scale);
        level2 = level2.max(ar.sqrt() / scale);
    }
    Ok(HolderDistance { level1, level2 })
}

/// Sampled α-Hölder rough-path distance `d_α`.
pub fn holder_distance<T: Real>(
    a: &Level2Path<T>,
    b: &Level2Path<T>,
    params: &HolderMetricParams<T>,
) -> Result<T, PathError> {
    holder_distance_parts(a, b, params).map(|d| d.total())
}

/// Writes the path as CSV with header `t,z1,...,zn`.
pub fn write_csv<T: Real, W: Write>(p: &SmoothPath<T>, w: W) -> Result<(), PathError> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=p.dim).map(|k| format!("z{k}")));
    wr.write_record(&header)?;
    for (j, t) in p.times.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(p.node(j).iter().map(|v| v.to_string()));
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<T: Real, R: Read>(r: R) -> Result<SmoothPath<T>, PathError> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let mut vals = Vec::with_capacity(rec.len());
        for field in rec.iter() {
            let v: T = field.parse().map_err(|_| PathError::Parse {
                line: line + 2,
                msg: format!("not a number: {field:?}"),
            })?;
            vals.push(v);
        }
        if vals.len() < 2 {
            return Err(PathError::Parse {
                line: line + 2,
                msg: "need a time column and at least one value column".into(),
            });
        }
        times.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    SmoothPath::new(times, rows)
}
