//! Targets, noise models, and dataset generation.
//!
//! Datasets pair sample points with observed values `y_i = f(x_i) + ε_i`.
//! Generation is fully deterministic: every random choice is driven by an
//! explicit seed through ChaCha8, a counter-based stream cipher generator,
//! so a `(sampling, noise, seed)` triple regenerates bit-identical data on
//! any machine.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::manifold::{eigenfunction_eval, geodesic_distance, MultiIndex, TorusPoint, TWO_PI};
use crate::numerics::{derive_seed, format_f64, parse_f64, FloatFormat};
use crate::quadrature::grid_nodes;

/// Identifier of the seeded generator behind all data generation, recorded
/// in experiment output so runs can be replayed elsewhere.
pub const RNG_ALGORITHM_ID: &str = "chacha8";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("shard shifts must lie in [0, 2π)²: shift {index} = ({x}, {y})")]
    ShiftOutOfRange { index: usize, x: f64, y: f64 },
    #[error("shifts {0} and {1} map to the same interleaved grid; shards must be disjoint")]
    OverlappingShards(usize, usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// The ideal function a dataset samples.
#[derive(Clone)]
pub enum TargetFunction {
    /// Radial Wendland-Wu bump centered at a point; support is the
    /// geodesic ball of radius 1. C⁶ on the torus.
    WendlandWu { center: TorusPoint },
    /// Real part of a single eigenfunction, `cos(k·x)/(2π)`.
    ModeReal { k: MultiIndex },
    /// Arbitrary function with a declared smoothness.
    Custom {
        f: Arc<dyn Fn(TorusPoint) -> f64 + Send + Sync>,
        smoothness: f64,
    },
}

impl fmt::Debug for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WendlandWu { center } => {
                write!(f, "WendlandWu(center=({},{}))", center.x1(), center.x2())
            }
            Self::ModeReal { k } => write!(f, "ModeReal({}, {})", k.k1, k.k2),
            Self::Custom { smoothness, .. } => write!(f, "Custom(r={smoothness})"),
        }
    }
}

impl TargetFunction {
    pub fn wendland_wu(center: TorusPoint) -> Self {
        Self::WendlandWu { center }
    }

    pub fn mode(k1: i64, k2: i64) -> Self {
        Self::ModeReal {
            k: MultiIndex::new(k1, k2),
        }
    }

    pub fn value(&self, x: TorusPoint) -> f64 {
        match self {
            Self::WendlandWu { center } => wendland_wu_eval(*center, x),
            Self::ModeReal { k } => eigenfunction_eval(*k, x).re,
            Self::Custom { f, .. } => f(x),
        }
    }

    /// Declared Sobolev-type smoothness `r`: ∞ for pure modes, 6 for the
    /// Wendland-Wu bump.
    pub fn smoothness(&self) -> f64 {
        match self {
            Self::WendlandWu { .. } => 6.0,
            Self::ModeReal { .. } => f64::INFINITY,
            Self::Custom { smoothness, .. } => *smoothness,
        }
    }
}

/// `φ(u) = (1-u)₊⁸ (32u³ + 25u² + 8u + 1)` evaluated at the geodesic
/// distance `u = ρ(x, center)`. Values lie in `[0,1]`, equal 1 at the
/// center, and vanish outside the unit ball.
pub fn wendland_wu_eval(center: TorusPoint, x: TorusPoint) -> f64 {
    let u = geodesic_distance(center, x);
    let base = (1.0 - u).max(0.0);
    let base2 = base * base;
    let base4 = base2 * base2;
    base4 * base4 * (32.0 * u * u * u + 25.0 * u * u + 8.0 * u + 1.0)
}

/// Kind of observation noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    None,
    /// Uniform on `[-bound, bound]`: mean zero with `|ε| ≤ bound` always.
    BoundedUniform { bound: f64 },
    /// Gaussian with standard deviation `sigma` (unbounded; provided for
    /// the experiments, outside the bounded-noise model).
    Gaussian { sigma: f64 },
}

/// Noise model plus the seed of its draw stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            seed: 0,
        }
    }

    pub fn bounded_uniform(bound: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::BoundedUniform { bound },
            seed,
        }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Gaussian { sigma },
            seed,
        }
    }

    /// The noise level knob: the bound for uniform noise, σ for Gaussian.
    pub fn level(&self) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::BoundedUniform { bound } => bound,
            NoiseKind::Gaussian { sigma } => sigma,
        }
    }

    /// Same kind of noise, different stream.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            kind: self.kind,
            seed,
        }
    }

    fn draws(&self, count: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        match self.kind {
            NoiseKind::None => vec![0.0; count],
            NoiseKind::BoundedUniform { bound } => (0..count)
                .map(|_| bound * (2.0 * rng.random::<f64>() - 1.0))
                .collect(),
            NoiseKind::Gaussian { sigma } => {
                let normal = Normal::new(0.0, sigma).expect("sigma must be finite nonnegative");
                (0..count).map(|_| normal.sample(&mut rng)).collect()
            }
        }
    }

    fn descriptor(&self) -> String {
        match self.kind {
            NoiseKind::None => "none".to_string(),
            NoiseKind::BoundedUniform { bound } => {
                format!("bounded_uniform(M={})", format_f64(bound, FloatFormat::Decimal17))
            }
            NoiseKind::Gaussian { sigma } => {
                format!("gaussian(sigma={})", format_f64(sigma, FloatFormat::Decimal17))
            }
        }
    }

    fn from_descriptor(s: &str, seed: u64) -> Option<Self> {
        if s == "none" {
            return Some(Self {
                kind: NoiseKind::None,
                seed,
            });
        }
        if let Some(v) = s
            .strip_prefix("bounded_uniform(M=")
            .and_then(|r| r.strip_suffix(')'))
        {
            return Some(Self::bounded_uniform(parse_f64(v)?, seed));
        }
        if let Some(v) = s
            .strip_prefix("gaussian(sigma=")
            .and_then(|r| r.strip_suffix(')'))
        {
            return Some(Self::gaussian(parse_f64(v)?, seed));
        }
        None
    }
}

/// How the sample points were produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SamplingKind {
    /// The `3n₀ × 3n₀` equispaced grid, optionally translated.
    DeterministicGrid { n0: u32, shift: (f64, f64) },
    /// `n_points` i.i.d. uniform points from the given stream.
    Random { n_points: usize, seed: u64 },
    /// Points read back from a serialized dataset.
    Loaded,
}

impl SamplingKind {
    pub fn grid(n0: u32) -> Self {
        Self::DeterministicGrid { n0, shift: (0.0, 0.0) }
    }

    pub fn random(n_points: usize, seed: u64) -> Self {
        Self::Random { n_points, seed }
    }
}

/// Sample points with observed values and their generation record.
#[derive(Clone, Debug)]
pub struct Dataset {
    points: Vec<TorusPoint>,
    values: Vec<f64>,
    noise: NoiseModel,
    target: Option<TargetFunction>,
    sampling: SamplingKind,
}

impl Dataset {
    pub fn points(&self) -> &[TorusPoint] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn target(&self) -> Option<&TargetFunction> {
        self.target.as_ref()
    }

    pub fn sampling(&self) -> &SamplingKind {
        &self.sampling
    }

    /// Contiguous sub-dataset `[start, start+len)`, used to hand each
    /// server its block of a jointly sampled point set.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            points: self.points[start..start + len].to_vec(),
            values: self.values[start..start + len].to_vec(),
            noise: self.noise,
            target: self.target.clone(),
            sampling: SamplingKind::Loaded,
        }
    }

    /// Same points, values replaced (used by linearity checks and tests).
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.points.len());
        Self {
            points: self.points.clone(),
            values,
            noise: self.noise,
            target: self.target.clone(),
            sampling: self.sampling,
        }
    }

    /// Serialize as `# torus-dataset v1, N=…, noise=…, seed=…` plus
    /// `x1,x2,y` rows.
    pub fn to_text(&self, fmt: FloatFormat) -> String {
        let mut out = format!(
            "# torus-dataset v1, N={}, noise={}, seed={}\n",
            self.len(),
            self.noise.descriptor(),
            self.noise.seed
        );
        for (x, y) in self.points.iter().zip(&self.values) {
            out.push_str(&format!(
                "{},{},{}\n",
                format_f64(x.x1(), fmt),
                format_f64(x.x2(), fmt),
                format_f64(*y, fmt)
            ));
        }
        out
    }

    /// Parse the format written by [`Dataset::to_text`]. The loaded set
    /// carries no target handle.
    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(DataError::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
        let header = header
            .strip_prefix("# torus-dataset v1,")
            .ok_or(DataError::Parse {
                line: 1,
                msg: "missing `# torus-dataset v1` header".into(),
            })?;
        let mut n = None;
        let mut seed = 0u64;
        let mut noise_str = String::from("none");
        for part in header.split(", ") {
            let part = part.trim();
            if let Some(v) = part.strip_prefix("N=") {
                n = v.parse::<usize>().ok();
            } else if let Some(v) = part.strip_prefix("noise=") {
                noise_str = v.to_string();
            } else if let Some(v) = part.strip_prefix("seed=") {
                seed = v.parse().map_err(|e| DataError::Parse {
                    line: 1,
                    msg: format!("bad seed: {e}"),
                })?;
            }
        }
        let n = n.ok_or(DataError::Parse {
            line: 1,
            msg: "missing N".into(),
        })?;
        let noise = NoiseModel::from_descriptor(&noise_str, seed).ok_or(DataError::Parse {
            line: 1,
            msg: format!("bad noise descriptor {noise_str:?}"),
        })?;
        let mut points = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',');
            let mut next = |name: &str| {
                parts
                    .next()
                    .and_then(parse_f64)
                    .ok_or_else(|| DataError::Parse {
                        line: idx + 1,
                        msg: format!("bad {name}"),
                    })
            };
            let x1 = next("x1")?;
            let x2 = next("x2")?;
            let y = next("y")?;
            points.push(TorusPoint::new(x1, x2));
            values.push(y);
        }
        if points.len() != n {
            return Err(DataError::Parse {
                line: 1,
                msg: format!("header says N={n} but found {} rows", points.len()),
            });
        }
        Ok(Self {
            points,
            values,
            noise,
            target: None,
            sampling: SamplingKind::Loaded,
        })
    }
}

/// Generate `y_i = f(x_i) + ε_i` for the given sampling plan and noise
/// stream. Deterministic for a fixed `(sampling, noise)` pair.
pub fn make_dataset(target: &TargetFunction, sampling: &SamplingKind, noise: &NoiseModel) -> Dataset {
    let points: Vec<TorusPoint> = match *sampling {
        SamplingKind::DeterministicGrid { n0, shift } => grid_nodes(n0, shift),
        SamplingKind::Random { n_points, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pi = std::f64::consts::PI;
            (0..n_points)
                .map(|_| {
                    let x1 = -pi + TWO_PI * rng.random::<f64>();
                    let x2 = -pi + TWO_PI * rng.random::<f64>();
                    TorusPoint::new(x1, x2)
                })
                .collect()
        }
        SamplingKind::Loaded => panic!("cannot regenerate a loaded dataset"),
    };
    let eps = noise.draws(points.len());
    let values = points
        .iter()
        .zip(&eps)
        .map(|(x, e)| target.value(*x) + e)
        .collect();
    Dataset {
        points,
        values,
        noise: *noise,
        target: Some(target.clone()),
        sampling: *sampling,
    }
}

/// Split the sampling plan of a distributed run into `m` interleaved grid
/// shards: shard `j` is the base `3n₀ × 3n₀` grid translated by
/// `shifts[j]`. Shards must be pairwise disjoint, which for translated
/// copies of one lattice means no two shifts may differ by a lattice
/// vector. Each shard's noise stream is derived from `noise.seed` and the
/// shard index, so no draw is shared between servers.
pub fn shard_interleaved(
    target: &TargetFunction,
    n0: u32,
    shifts: &[(f64, f64)],
    noise: &NoiseModel,
) -> Result<Vec<Dataset>, DataError> {
    for (i, s) in shifts.iter().enumerate() {
        let ok = |v: f64| (0.0..TWO_PI).contains(&v);
        if !(ok(s.0) && ok(s.1)) {
            return Err(DataError::ShiftOutOfRange {
                index: i,
                x: s.0,
                y: s.1,
            });
        }
    }
    let spacing = TWO_PI / (3 * n0) as f64;
    for i in 0..shifts.len() {
        for j in (i + 1)..shifts.len() {
            let same_coset = |a: f64, b: f64| {
                let d = (a - b).rem_euclid(spacing);
                d.abs() < 1e-12 || (spacing - d).abs() < 1e-12
            };
            if same_coset(shifts[i].0, shifts[j].0) && same_coset(shifts[i].1, shifts[j].1) {
                return Err(DataError::OverlappingShards(i, j));
            }
        }
    }
    Ok(shifts
        .iter()
        .enumerate()
        .map(|(j, &shift)| {
            make_dataset(
                target,
                &SamplingKind::DeterministicGrid { n0, shift },
                &noise.with_seed(derive_seed(noise.seed, j as u64)),
            )
        })
        .collect())
}

/// The canonical `q × q` sublattice shifts used to interleave `m = q²`
/// grid shards: offsets `(a, b)·spacing/q` for `a, b ∈ 0..q`. Their union
/// is the finer `3n₀q × 3n₀q` lattice.
pub fn canonical_interleave_shifts(n0: u32, q: u32) -> Vec<(f64, f64)> {
    let spacing = TWO_PI / (3 * n0) as f64;
    let step = spacing / q as f64;
    let mut out = Vec::with_capacity((q * q) as usize);
    for a in 0..q {
        for b in 0..q {
            out.push((a as f64 * step, b as f64 * step));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::grid_rule;
    use std::collections::HashSet;

    const PI: f64 = std::f64::consts::PI;

    #[test]
    fn wendland_wu_examples() {
        let c = TorusPoint::new(0.0, 0.0);
        assert_eq!(wendland_wu_eval(c, c), 1.0);
        // ρ = 1.5 is outside the support
        assert_eq!(wendland_wu_eval(c, TorusPoint::new(1.5, 0.0)), 0.0);
        // ρ = 0.5: (0.5)⁸·(32·0.125 + 25·0.25 + 8·0.5 + 1) = 15.25/256
        let v = wendland_wu_eval(c, TorusPoint::new(0.5, 0.0));
        assert!((v - 0.0595703125).abs() < 1e-15);
        assert!((v - 15.25 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn wendland_wu_range_and_center() {
        let c = TorusPoint::new(1.0, -2.0);
        for i in 0..50 {
            for j in 0..50 {
                let x = TorusPoint::new(-PI + i as f64 * 0.13, -PI + j as f64 * 0.13);
                let v = wendland_wu_eval(c, x);
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn wendland_wu_is_lipschitz() {
        // empirical Lipschitz constant below 3 on [0, 1.2] at 1e-4 spacing
        // (the symbolic max of |φ'| on [0,1] is ≈ 2.82)
        let c = TorusPoint::new(0.0, 0.0);
        let phi = |u: f64| wendland_wu_eval(c, TorusPoint::new(u, 0.0));
        let mut max_slope = 0.0f64;
        let h = 1e-4;
        let mut prev = phi(0.0);
        let mut u = h;
        while u <= 1.2 {
            let cur = phi(u);
            max_slope = max_slope.max((cur - prev).abs() / h);
            prev = cur;
            u += h;
        }
        assert!(max_slope < 3.0, "Lipschitz estimate {max_slope}");
    }

    #[test]
    fn clean_dataset_equals_target() {
        let t = TargetFunction::wendland_wu(TorusPoint::new(0.0, 0.0));
        let d = make_dataset(&t, &SamplingKind::grid(2), &NoiseModel::none());
        assert_eq!(d.len(), 36);
        for (x, y) in d.points().iter().zip(d.values()) {
            assert_eq!(*y, t.value(*x));
        }
    }

    #[test]
    fn grid_dataset_points_match_grid_rule_nodes() {
        let t = TargetFunction::mode(1, 0);
        let d = make_dataset(&t, &SamplingKind::grid(2), &NoiseModel::none());
        let q = grid_rule(2);
        assert_eq!(d.points(), q.nodes());
    }

    #[test]
    fn bounded_noise_statistics() {
        // 10⁴ draws: strict bound plus a 3-sigma law-of-large-numbers check
        // on the mean: std of the mean is (M/√3)/100
        let m = 0.1;
        let t = TargetFunction::Custom {
            f: Arc::new(|_| 0.0),
            smoothness: f64::INFINITY,
        };
        let d = make_dataset(
            &t,
            &SamplingKind::random(10_000, 3),
            &NoiseModel::bounded_uniform(m, 99),
        );
        let mut sum = 0.0;
        for &e in d.values() {
            assert!(e.abs() <= m, "draw {e} outside bound");
            sum += e;
        }
        let mean = sum / d.len() as f64;
        assert!(mean.abs() <= 3.0 * (m / 3f64.sqrt()) / 100.0, "mean {mean}");
    }

    #[test]
    fn identical_seeds_reproduce_bitwise() {
        let t = TargetFunction::wendland_wu(TorusPoint::new(0.3, 0.4));
        let mk = || {
            make_dataset(
                &t,
                &SamplingKind::random(200, 17),
                &NoiseModel::gaussian(0.05, 23),
            )
        };
        let a = mk();
        let b = mk();
        for (x, y) in a.points().iter().zip(b.points()) {
            assert_eq!(x.x1().to_bits(), y.x1().to_bits());
            assert_eq!(x.x2().to_bits(), y.x2().to_bits());
        }
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn single_shard_is_base_grid() {
        let t = TargetFunction::mode(0, 1);
        let shards = shard_interleaved(&t, 2, &[(0.0, 0.0)], &NoiseModel::none()).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].points(), grid_rule(2).nodes());
    }

    #[test]
    fn four_interleaved_shards_tile_finer_lattice() {
        let n0 = 2u32;
        let t = TargetFunction::mode(1, 1);
        let shifts = canonical_interleave_shifts(n0, 2);
        let shards = shard_interleaved(&t, n0, &shifts, &NoiseModel::none()).unwrap();
        assert_eq!(shards.len(), 4);
        // disjoint, and the union is the 12×12 lattice of 36·4 points
        let key = |p: &TorusPoint| ((p.x1() * 1e12).round() as i64, (p.x2() * 1e12).round() as i64);
        let mut union = HashSet::new();
        for s in &shards {
            assert_eq!(s.len(), 36);
            for p in s.points() {
                assert!(union.insert(key(p)), "shards overlap at {p:?}");
            }
        }
        assert_eq!(union.len(), 4 * 36);
        let fine: HashSet<_> = grid_nodes(2 * n0, (0.0, 0.0)).iter().map(key).collect();
        assert_eq!(union, fine);
    }

    #[test]
    fn equal_shifts_rejected() {
        let t = TargetFunction::mode(1, 0);
        let err = shard_interleaved(&t, 2, &[(0.5, 0.5), (0.5, 0.5)], &NoiseModel::none());
        assert!(matches!(err, Err(DataError::OverlappingShards(0, 1))));
    }

    #[test]
    fn lattice_equivalent_shifts_rejected() {
        // differing by exactly one grid spacing maps the lattice onto itself
        let t = TargetFunction::mode(1, 0);
        let spacing = TWO_PI / 6.0;
        let err = shard_interleaved(&t, 2, &[(0.0, 0.0), (spacing, 0.0)], &NoiseModel::none());
        assert!(matches!(err, Err(DataError::OverlappingShards(0, 1))));
    }

    #[test]
    fn shift_domain_validated() {
        let t = TargetFunction::mode(1, 0);
        let err = shard_interleaved(&t, 1, &[(-0.1, 0.0)], &NoiseModel::none());
        assert!(matches!(err, Err(DataError::ShiftOutOfRange { .. })));
    }

    #[test]
    fn serialization_round_trips() {
        let t = TargetFunction::wendland_wu(TorusPoint::new(0.0, 0.0));
        let d = make_dataset(
            &t,
            &SamplingKind::random(50, 5),
            &NoiseModel::bounded_uniform(0.25, 7),
        );
        for fmt in [FloatFormat::Decimal17, FloatFormat::Hex] {
            let text = d.to_text(fmt);
            let back = Dataset::from_text(&text).unwrap();
            assert_eq!(back.len(), d.len());
            assert_eq!(back.noise(), d.noise());
            for (a, b) in d.points().iter().zip(back.points()) {
                assert_eq!(a.x1().to_bits(), b.x1().to_bits());
                assert_eq!(a.x2().to_bits(), b.x2().to_bits());
            }
            for (a, b) in d.values().iter().zip(back.values()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn malformed_dataset_reports_line() {
        let text = "# torus-dataset v1, N=1, noise=none, seed=0\nbroken\n";
        match Dataset::from_text(text) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
