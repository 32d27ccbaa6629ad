//! Fitted estimators: the single-server filtered hyperinterpolant and the
//! distributed divide-and-conquer synthesis.
//!
//! A fit stores per-mode coefficients
//!
//! ```text
//! c_k = H(|k|/n) Σ_i w_i y_i conj(φ_k(x_i)),   |k| < 2n,
//! ```
//!
//! rather than the dense design matrix; the coefficient expansion
//! `Σ_k c_k φ_k(x)` and the kernel-sum form `Σ_i w_i y_i K_n(x, x_i)` are
//! algebraically identical and are cross-checked in the tests. Distributed
//! fits keep one coefficient table per shard and evaluate as the convex
//! combination `Σ_j (|D_j|/|D|) V_j(x)`, never collapsing the shards, so
//! the synthesis stays a pointwise convex combination.
//!
//! Everything here is deterministic for any worker count: per-mode sums
//! run over data points in pairwise-tree order, shards reduce in shard
//! order, and parallelism only distributes independent outputs.

use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::data::Dataset;
use crate::filter::Filter;
use crate::kernel::{kernel_modes, FilteredKernel, GridField, SpectralPolynomial};
use crate::manifold::{eigenfunction_eval, MeasureConvention, TorusPoint, TWO_PI};
use crate::numerics::{
    format_f64, pairwise_sum_by, pairwise_sum_complex_by, par_map_indexed, parse_f64, FloatFormat,
};
use crate::quadrature::QuadratureRule;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("degree n must be >= 1")]
    ZeroDegree,
    #[error("rule nodes and dataset points differ at index {0} (same order required)")]
    NodeMismatch(usize),
    #[error("rule has {rule} nodes but dataset has {data} points")]
    LengthMismatch { rule: usize, data: usize },
    #[error("need one rule per shard: {shards} shards, {rules} rules")]
    ShardRuleMismatch { shards: usize, rules: usize },
    #[error("no shards given")]
    NoShards,
    #[error("shard {0}: solved rule violates the Σw² ≤ 2/m gate for m={1}")]
    GateNotApplied(usize, u32),
    #[error("smoothness must satisfy r > d/2 (got r={r}, d={d})")]
    SmoothnessTooLow { r: f64, d: u32 },
    #[error("random-sampling exponent needs 0 < τ < 2r (got τ={tau}, r={r})")]
    TauOutOfRange { tau: f64, r: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Anything evaluable on the torus: fitted estimators, their serialized
/// form, and the continuous filtered approximation.
pub trait Estimator: Sync {
    /// Real-valued estimate at one point.
    fn value(&self, x: TorusPoint) -> f64;

    /// Real value plus the magnitude of the discarded imaginary part.
    fn value_with_residual(&self, x: TorusPoint) -> (f64, f64);

    /// Batch evaluation; elements are independent, so the output is the
    /// same for any worker count.
    fn evaluate(&self, points: &[TorusPoint]) -> Vec<f64> {
        par_map_indexed(points.len(), |i| self.value(points[i]))
    }

    /// Evaluation on the `G×G` reference grid.
    fn eval_grid(&self, g: u32) -> GridField;
}

impl Estimator for SpectralPolynomial {
    fn value(&self, x: TorusPoint) -> f64 {
        SpectralPolynomial::value(self, x)
    }

    fn value_with_residual(&self, x: TorusPoint) -> (f64, f64) {
        SpectralPolynomial::value_with_residual(self, x)
    }

    fn eval_grid(&self, g: u32) -> GridField {
        SpectralPolynomial::eval_grid(self, g)
    }
}

/// A single-server filtered hyperinterpolant.
#[derive(Clone, Debug)]
pub struct NdfhEstimator {
    poly: SpectralPolynomial,
    filter: Arc<Filter>,
    rule: QuadratureRule,
    values: Vec<f64>,
    degenerate: bool,
}

impl NdfhEstimator {
    pub fn degree(&self) -> u32 {
        self.poly.degree()
    }

    /// The fitted coefficient table.
    pub fn polynomial(&self) -> &SpectralPolynomial {
        &self.poly
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn data_values(&self) -> &[f64] {
        &self.values
    }

    /// True when the rule was gated to zero; the estimator is then ≡ 0.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Number of data points this estimator was fitted on.
    pub fn data_len(&self) -> usize {
        self.values.len()
    }

    /// The kernel-sum evaluation path `Σ_i w_i y_i K_n(x, x_i)`. Slower
    /// than the coefficient expansion; kept as the independent algebraic
    /// route for cross-checking.
    pub fn value_kernel_sum(&self, x: TorusPoint) -> f64 {
        let kernel = FilteredKernel::new(self.poly.degree(), self.filter.clone());
        let scale = weight_scale(self.rule.measure());
        pairwise_sum_by(0, self.rule.len(), &|i| {
            self.rule.weights()[i] * scale * self.values[i] * kernel.eval(x, self.rule.nodes()[i])
        })
    }

    /// Serialize into the single-table estimator file format.
    pub fn to_file(&self) -> EstimatorFile {
        EstimatorFile {
            n: self.poly.degree(),
            shards: vec![(self.data_len(), self.poly.clone())],
        }
    }
}

impl Estimator for NdfhEstimator {
    fn value(&self, x: TorusPoint) -> f64 {
        self.poly.value(x)
    }

    fn value_with_residual(&self, x: TorusPoint) -> (f64, f64) {
        self.poly.value_with_residual(x)
    }

    fn eval_grid(&self, g: u32) -> GridField {
        self.poly.eval_grid(g)
    }
}

/// Lebesgue-convention weights enter the kernel sums as-is; probability
/// weights are rescaled by the torus mass `(2π)²` so both conventions feed
/// the same Lebesgue-normalized kernel.
fn weight_scale(measure: MeasureConvention) -> f64 {
    match measure {
        MeasureConvention::Lebesgue2Pi => 1.0,
        MeasureConvention::Normalized => TWO_PI * TWO_PI,
    }
}

/// Fit a filtered hyperinterpolant of degree `n` on `data` with the given
/// rule. The rule's nodes must be the dataset's points in the same order.
pub fn fit_ndfh(
    data: &Dataset,
    n: u32,
    rule: &QuadratureRule,
    filter: &Filter,
) -> Result<NdfhEstimator, EstimatorError> {
    if n == 0 {
        return Err(EstimatorError::ZeroDegree);
    }
    if rule.len() != data.len() {
        return Err(EstimatorError::LengthMismatch {
            rule: rule.len(),
            data: data.len(),
        });
    }
    for (i, (a, b)) in rule.nodes().iter().zip(data.points()).enumerate() {
        if a != b {
            return Err(EstimatorError::NodeMismatch(i));
        }
    }
    let scale = weight_scale(rule.measure());
    let points = data.points();
    let values = data.values();
    let weights = rule.weights();
    let modes = kernel_modes(n);
    let coeffs: Vec<Complex64> = par_map_indexed(modes.len(), |mi| {
        let k = modes[mi];
        let h = filter.eval(k.eigenvalue() / n as f64);
        if h == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let s = pairwise_sum_complex_by(0, points.len(), &|i| {
            eigenfunction_eval(k, points[i]).conj() * (weights[i] * scale * values[i])
        });
        s * h
    });
    Ok(NdfhEstimator {
        poly: SpectralPolynomial::new(n, modes, coeffs),
        filter: Arc::new(filter.clone()),
        rule: rule.clone(),
        values: values.to_vec(),
        degenerate: rule.is_degenerate(),
    })
}

/// The distributed estimator: per-shard fits plus their synthesis weights
/// `|D_j|/|D|` (kept as exact integer ratios).
#[derive(Clone, Debug)]
pub struct DfhEstimator {
    shards: Vec<NdfhEstimator>,
    total: usize,
}

impl DfhEstimator {
    pub fn server_count(&self) -> usize {
        self.shards.len()
    }

    pub fn shards(&self) -> &[NdfhEstimator] {
        &self.shards
    }

    pub fn total_data(&self) -> usize {
        self.total
    }

    pub fn degree(&self) -> u32 {
        self.shards[0].degree()
    }

    /// Synthesis weights as exact `(|D_j|, |D|)` ratios; the numerators
    /// sum to the denominator by construction.
    pub fn synthesis_weights(&self) -> Vec<(usize, usize)> {
        self.shards
            .iter()
            .map(|s| (s.data_len(), self.total))
            .collect()
    }

    /// Indices of shards whose rules were gated to zero.
    pub fn degenerate_shards(&self) -> Vec<usize> {
        self.shards
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_degenerate())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_file(&self) -> EstimatorFile {
        EstimatorFile {
            n: self.degree(),
            shards: self
                .shards
                .iter()
                .map(|s| (s.data_len(), s.polynomial().clone()))
                .collect(),
        }
    }
}

/// `Σ_j (size_j/total) v_j(x)`, accumulated in shard order. This is the
/// one evaluation path shared by in-memory and deserialized estimators,
/// which keeps file round-trips bit-identical.
fn convex_combine<T, F: Fn(&T) -> f64>(shards: &[(usize, T)], total: usize, eval: F) -> f64 {
    let mut acc = 0.0;
    for (size, shard) in shards {
        acc += (*size as f64 / total as f64) * eval(shard);
    }
    acc
}

impl Estimator for DfhEstimator {
    fn value(&self, x: TorusPoint) -> f64 {
        let sized: Vec<(usize, &NdfhEstimator)> =
            self.shards.iter().map(|s| (s.data_len(), s)).collect();
        convex_combine(&sized, self.total, |s| s.value(x))
    }

    fn value_with_residual(&self, x: TorusPoint) -> (f64, f64) {
        let mut acc = 0.0;
        let mut resid = 0.0f64;
        for s in &self.shards {
            let (v, r) = s.value_with_residual(x);
            acc += (s.data_len() as f64 / self.total as f64) * v;
            resid = resid.max(r);
        }
        (acc, resid)
    }

    fn eval_grid(&self, g: u32) -> GridField {
        let fields: Vec<(usize, GridField)> = self
            .shards
            .iter()
            .map(|s| (s.data_len(), s.eval_grid(g)))
            .collect();
        let len = fields[0].1.values.len();
        let mut values = vec![0.0f64; len];
        let mut max_imag = 0.0f64;
        for (size, f) in &fields {
            let alpha = *size as f64 / self.total as f64;
            for (acc, v) in values.iter_mut().zip(&f.values) {
                *acc += alpha * v;
            }
            max_imag = max_imag.max(f.max_imag);
        }
        GridField { g, values, max_imag }
    }
}

/// Fit each shard independently and synthesize with weights `|D_j|/|D|`.
/// Shard fits are order-independent; the synthesis reduces in shard order.
/// A degenerate (gated-out) shard rule contributes a zero estimator and is
/// flagged via [`DfhEstimator::degenerate_shards`].
pub fn fit_dfh(
    shards: &[Dataset],
    n: u32,
    rules: &[QuadratureRule],
    gate_m: u32,
    filter: &Filter,
) -> Result<DfhEstimator, EstimatorError> {
    if shards.is_empty() {
        return Err(EstimatorError::NoShards);
    }
    if shards.len() != rules.len() {
        return Err(EstimatorError::ShardRuleMismatch {
            shards: shards.len(),
            rules: rules.len(),
        });
    }
    for (j, rule) in rules.iter().enumerate() {
        if matches!(
            rule.provenance(),
            crate::quadrature::Provenance::SolvedRandom { .. }
        ) && !rule.is_degenerate()
            && rule.sum_sq_weights() > 2.0 / gate_m as f64 + 1e-12
        {
            return Err(EstimatorError::GateNotApplied(j, gate_m));
        }
    }
    let fits: Vec<Result<NdfhEstimator, EstimatorError>> =
        par_map_indexed(shards.len(), |j| fit_ndfh(&shards[j], n, &rules[j], filter));
    let mut out = Vec::with_capacity(fits.len());
    for fit in fits {
        out.push(fit?);
    }
    let total = out.iter().map(|s| s.data_len()).sum();
    Ok(DfhEstimator { shards: out, total })
}

/// Regime for the server-count bound.
#[derive(Clone, Copy, Debug)]
pub enum BoundRegime {
    /// Noisy data on deterministic (polynomial-exact) samples:
    /// `m ≤ N^{r/(r + d/2)}`.
    NoisyDeterministic,
    /// Noisy data on random samples: `m ≤ N^{(r - τ/2)/(r + d/2)}`.
    NoisyRandom { tau: f64 },
}

/// Largest admissible server count for equal-size shards, `⌊N^e⌋` with the
/// regime's exponent.
pub fn server_count_bound(
    total_points: usize,
    r: f64,
    d: u32,
    regime: BoundRegime,
) -> Result<u64, EstimatorError> {
    if !(r > d as f64 / 2.0) {
        return Err(EstimatorError::SmoothnessTooLow { r, d });
    }
    let numerator = match regime {
        BoundRegime::NoisyDeterministic => r,
        BoundRegime::NoisyRandom { tau } => {
            if !(tau > 0.0 && tau < 2.0 * r) {
                return Err(EstimatorError::TauOutOfRange { tau, r });
            }
            r - tau / 2.0
        }
    };
    // r → ∞ limit: the exponent tends to 1 and the bound to N itself
    let exponent = if r.is_infinite() {
        1.0
    } else {
        numerator / (r + d as f64 / 2.0)
    };
    Ok((total_points as f64).powf(exponent).floor() as u64)
}

/// Suggested degree window for noisy fits on `N` polynomial-exact points:
/// `[c₃/6 · N^{1/(2r+d)}, c₃/2 · N^{1/(2r+d)}]`. A suggestion only; the
/// grid rules here have `c₃ ≈ 1` (a `3n₀×3n₀` grid of `N = 9n₀²` points is
/// exact to degree `3n₀ - 1 ≈ √N`).
pub fn suggest_degree_window(total_points: usize, r: f64, d: u32, c3: f64) -> (f64, f64) {
    let base = (total_points as f64).powf(1.0 / (2.0 * r + d as f64));
    (c3 / 6.0 * base, c3 / 2.0 * base)
}

/// Deserialized estimator: shard sizes plus coefficient tables. Evaluates
/// through the same convex-combination path as [`DfhEstimator`], so a
/// write/read cycle reproduces evaluations bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorFile {
    n: u32,
    shards: Vec<(usize, SpectralPolynomial)>,
}

impl EstimatorFile {
    pub fn degree(&self) -> u32 {
        self.n
    }

    pub fn server_count(&self) -> usize {
        self.shards.len()
    }

    pub fn total_data(&self) -> usize {
        self.shards.iter().map(|(s, _)| s).sum()
    }

    /// Serialize as `# torus-estimator v1, n=…, m=…` with one
    /// `# shard j, size=…` block of `k1,k2,re,im` rows per shard.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# torus-estimator v1, n={}, m={}\n",
            self.n,
            self.shards.len()
        );
        for (j, (size, poly)) in self.shards.iter().enumerate() {
            out.push_str(&format!("# shard {j}, size={size}\n"));
            for (k, c) in poly.modes().iter().zip(poly.coefficients()) {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    k.k1,
                    k.k2,
                    format_f64(c.re, FloatFormat::Decimal17),
                    format_f64(c.im, FloatFormat::Decimal17)
                ));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EstimatorError> {
        let parse_err = |line: usize, msg: String| EstimatorError::Parse { line, msg };
        let mut lines = text.lines().enumerate().peekable();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".into()))?;
        let header = header
            .strip_prefix("# torus-estimator v1,")
            .ok_or_else(|| parse_err(1, "missing `# torus-estimator v1` header".into()))?;
        let mut n = None;
        let mut m = None;
        for part in header.split(',') {
            let part = part.trim();
            if let Some(v) = part.strip_prefix("n=") {
                n = v.parse::<u32>().ok();
            } else if let Some(v) = part.strip_prefix("m=") {
                m = v.parse::<usize>().ok();
            }
        }
        let n = n.ok_or_else(|| parse_err(1, "missing n".into()))?;
        let m = m.ok_or_else(|| parse_err(1, "missing m".into()))?;

        let mut shards: Vec<(usize, SpectralPolynomial)> = Vec::with_capacity(m);
        let mut current: Option<(usize, Vec<crate::manifold::MultiIndex>, Vec<Complex64>)> = None;
        for (idx, raw) in lines {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# shard ") {
                if let Some((size, modes, coeffs)) = current.take() {
                    shards.push((size, SpectralPolynomial::new(n, modes, coeffs)));
                }
                let size = rest
                    .split_once("size=")
                    .and_then(|(_, v)| v.trim().parse::<usize>().ok())
                    .ok_or_else(|| parse_err(idx + 1, "bad shard header".into()))?;
                current = Some((size, Vec::new(), Vec::new()));
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let (size_ref, modes, coeffs) = current
                .as_mut()
                .ok_or_else(|| parse_err(idx + 1, "row before any shard header".into()))?;
            let _ = size_ref;
            let mut parts = line.split(',');
            let k1 = parts
                .next()
                .and_then(|v| v.trim().parse::<i64>().ok())
                .ok_or_else(|| parse_err(idx + 1, "bad k1".into()))?;
            let k2 = parts
                .next()
                .and_then(|v| v.trim().parse::<i64>().ok())
                .ok_or_else(|| parse_err(idx + 1, "bad k2".into()))?;
            let re = parts
                .next()
                .and_then(parse_f64)
                .ok_or_else(|| parse_err(idx + 1, "bad re".into()))?;
            let im = parts
                .next()
                .and_then(parse_f64)
                .ok_or_else(|| parse_err(idx + 1, "bad im".into()))?;
            modes.push(crate::manifold::MultiIndex::new(k1, k2));
            coeffs.push(Complex64::new(re, im));
        }
        if let Some((size, modes, coeffs)) = current.take() {
            shards.push((size, SpectralPolynomial::new(n, modes, coeffs)));
        }
        if shards.len() != m {
            return Err(parse_err(
                1,
                format!("header says m={m} but found {} shard blocks", shards.len()),
            ));
        }
        Ok(Self { n, shards })
    }
}

impl Estimator for EstimatorFile {
    fn value(&self, x: TorusPoint) -> f64 {
        convex_combine(&self.shards, self.total_data(), |p| p.value(x))
    }

    fn value_with_residual(&self, x: TorusPoint) -> (f64, f64) {
        let total = self.total_data();
        let mut acc = 0.0;
        let mut resid = 0.0f64;
        for (size, poly) in &self.shards {
            let (v, r) = poly.value_with_residual(x);
            acc += (*size as f64 / total as f64) * v;
            resid = resid.max(r);
        }
        (acc, resid)
    }

    fn eval_grid(&self, g: u32) -> GridField {
        let total = self.total_data();
        let mut values: Vec<f64> = Vec::new();
        let mut max_imag = 0.0f64;
        for (size, poly) in &self.shards {
            let alpha = *size as f64 / total as f64;
            let f = poly.eval_grid(g);
            if values.is_empty() {
                values = vec![0.0; f.values.len()];
            }
            for (acc, v) in values.iter_mut().zip(&f.values) {
                *acc += alpha * v;
            }
            max_imag = max_imag.max(f.max_imag);
        }
        GridField { g, values, max_imag }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        canonical_interleave_shifts, make_dataset, shard_interleaved, NoiseModel, SamplingKind,
        TargetFunction,
    };
    use crate::manifold::{reference_grid, MultiIndex};
    use crate::quadrature::{grid_rule, shifted_grid_rule, solve_random_weights, SolveOptions};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c5() -> Filter {
        Filter::c5_default()
    }

    fn random_points(n: usize, seed: u64) -> Vec<TorusPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pi = std::f64::consts::PI;
        (0..n)
            .map(|_| {
                TorusPoint::new(
                    -pi + TWO_PI * rng.random::<f64>(),
                    -pi + TWO_PI * rng.random::<f64>(),
                )
            })
            .collect()
    }

    fn sup_gap(est: &dyn Estimator, target: &TargetFunction, g: u32) -> f64 {
        let mut sup = 0.0f64;
        for (x, _) in reference_grid(g) {
            sup = sup.max((est.value(x) - target.value(x)).abs());
        }
        sup
    }

    #[test]
    fn reproduces_low_mode_on_exact_grid() {
        let target = TargetFunction::mode(1, 0);
        let data = make_dataset(&target, &SamplingKind::grid(2), &NoiseModel::none());
        let est = fit_ndfh(&data, 2, &grid_rule(2), &c5()).unwrap();
        assert!(sup_gap(&est, &target, 16) < 1e-10);
    }

    #[test]
    fn zero_data_gives_zero_estimator() {
        let target = TargetFunction::mode(1, 0);
        let data = make_dataset(&target, &SamplingKind::grid(2), &NoiseModel::none());
        let zeros = data.with_values(vec![0.0; data.len()]);
        let est = fit_ndfh(&zeros, 2, &grid_rule(2), &c5()).unwrap();
        for (x, _) in reference_grid(8) {
            assert_eq!(est.value(x), 0.0);
        }
    }

    #[test]
    fn annihilates_modes_outside_kernel_support() {
        // target φ_(5,0) with degree n=1: |k| = 5 > 2n-1 = 1
        let target = TargetFunction::mode(5, 0);
        let data = make_dataset(&target, &SamplingKind::grid(4), &NoiseModel::none());
        let est = fit_ndfh(&data, 1, &grid_rule(4), &c5()).unwrap();
        let field = est.eval_grid(16);
        let w = (TWO_PI * TWO_PI) / 256.0;
        let l2sq: f64 = field.values.iter().map(|v| v * v * w).sum();
        assert!(l2sq.sqrt() < 1e-10, "L2 norm {}", l2sq.sqrt());
    }

    #[test]
    fn node_mismatch_rejected() {
        let target = TargetFunction::mode(1, 0);
        let data = make_dataset(&target, &SamplingKind::grid(2), &NoiseModel::none());
        assert!(matches!(
            fit_ndfh(&data, 2, &grid_rule(3), &c5()),
            Err(EstimatorError::LengthMismatch { .. })
        ));
        let shifted = shifted_grid_rule(2, (0.1, 0.0));
        assert!(matches!(
            fit_ndfh(&data, 2, &shifted, &c5()),
            Err(EstimatorError::NodeMismatch(0))
        ));
    }

    #[test]
    fn fit_is_linear_in_values() {
        let target = TargetFunction::wendland_wu(TorusPoint::new(0.0, 0.0));
        let base = make_dataset(&target, &SamplingKind::grid(2), &NoiseModel::none());
        let other = TargetFunction::mode(2, 1);
        let d1 = base.clone();
        let d2 = base.with_values(base.points().iter().map(|x| other.value(*x)).collect());
        let (alpha, beta) = (0.7, -1.3);
        let combo = base.with_values(
            d1.values()
                .iter()
                .zip(d2.values())
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        );
        let rule = grid_rule(2);
        let f = c5();
        let e1 = fit_ndfh(&d1, 2, &rule, &f).unwrap();
        let e2 = fit_ndfh(&d2, 2, &rule, &f).unwrap();
        let ec = fit_ndfh(&combo, 2, &rule, &f).unwrap();
        for x in random_points(25, 5) {
            let expect = alpha * e1.value(x) + beta * e2.value(x);
            assert!((ec.value(x) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficient_and_kernel_sum_paths_agree() {
        let target = TargetFunction::wendland_wu(TorusPoint::new(0.5, -0.25));
        let data = make_dataset(
            &target,
            &SamplingKind::grid(2),
            &NoiseModel::bounded_uniform(0.05, 13),
        );
        let est = fit_ndfh(&data, 2, &grid_rule(2), &c5()).unwrap();
        for x in random_points(100, 2) {
            let a = est.value(x);
            let b = est.value_kernel_sum(x);
            assert!((a - b).abs() < 1e-10, "coeff {a} vs kernel-sum {b}");
        }
    }

    #[test]
    fn probability_rule_is_rescaled_consistently() {
        // same grid nodes, Lebesgue weights vs solved probability weights:
        // identical estimators up to solver precision
        let target = TargetFunction::mode(1, 1);
        let data = make_dataset(&target, &SamplingKind::grid(2), &NoiseModel::none());
        let lebesgue = fit_ndfh(&data, 2, &grid_rule(2), &c5()).unwrap();
        let (prob_rule, _) =
            solve_random_weights(data.points(), 2, 1, SolveOptions::default()).unwrap();
        let prob = fit_ndfh(&data, 2, &prob_rule, &c5()).unwrap();
        for x in random_points(30, 3) {
            assert!((lebesgue.value(x) - prob.value(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn imaginary_residual_is_tiny_for_real_data() {
        let target = TargetFunction::wendland_wu(TorusPoint::new(0.0, 0.0));
        let data = make_dataset(&target, &SamplingKind::grid(3), &NoiseModel::gaussian(0.01, 3));
        let est = fit_ndfh(&data, 3, &grid_rule(3), &c5()).unwrap();
        for x in random_points(20, 9) {
            let (_, resid) = est.value_with_residual(x);
            assert!(resid < 1e-12, "imaginary residual {resid}");
        }
    }

    #[test]
    fn dfh_single_shard_equals_ndfh_bitwise() {
        let target = TargetFunction::wendland_wu(TorusPoint::new(0.0, 0.0));
        let data = make_dataset(&target, &SamplingKind::grid(2), &NoiseModel::none());
        let rule = grid_rule(2);
        let f = c5();
        let ndfh = fit_ndfh(&data, 2, &rule, &f).unwrap();
        let dfh = fit_dfh(std::slice::from_ref(&data), 2, &[rule], 1, &f).unwrap();
        for x in random_points(100, 4) {
            assert_eq!(dfh.value(x).to_bits(), ndfh.value(x).to_bits());
        }
    }

    #[test]
    fn dfh_of_identical_shards_is_that_estimator() {
        // two equal shards with identical estimators: dyadic weights make
        // the convex combination exact
        let target = TargetFunction::mode(1, 0);
        let data = make_dataset(&target, &SamplingKind::grid(2), &NoiseModel::none());
        let rule = grid_rule(2);
        let f = c5();
        let dfh = fit_dfh(&[data.clone(), data], 2, &[rule.clone(), rule], 1, &f).unwrap();
        let single = dfh.shards()[0].clone();
        for x in random_points(50, 6) {
            assert_eq!(dfh.value(x).to_bits(), single.value(x).to_bits());
        }
    }

    #[test]
    fn synthesis_weights_are_exact_ratios() {
        let target = TargetFunction::mode(1, 0);
        let d10 = make_dataset(&target, &SamplingKind::random(10, 1), &NoiseModel::none());
        let d30 = make_dataset(&target, &SamplingKind::random(30, 2), &NoiseModel::none());
        let (r10, _) = solve_random_weights(d10.points(), 0, 1, SolveOptions::default()).unwrap();
        let (r30, _) = solve_random_weights(d30.points(), 0, 1, SolveOptions::default()).unwrap();
        let dfh = fit_dfh(&[d10, d30], 1, &[r10, r30], 1, &c5()).unwrap();
        let w = dfh.synthesis_weights();
        assert_eq!(w, vec![(10, 40), (30, 40)]);
        assert_eq!(w.iter().map(|(a, _)| a).sum::<usize>(), 40);
        assert!((w[0].0 as f64 / w[0].1 as f64 - 0.25).abs() == 0.0);
        assert!((w[1].0 as f64 / w[1].1 as f64 - 0.75).abs() == 0.0);
    }

    #[test]
    fn synthesis_is_pointwise_convex() {
        let target = TargetFunction::wendland_wu(TorusPoint::new(0.0, 0.0));
        let shifts = canonical_interleave_shifts(2, 2);
        let shards = shard_interleaved(&target, 2, &shifts, &NoiseModel::gaussian(0.05, 11)).unwrap();
        let rules: Vec<_> = shifts.iter().map(|&s| shifted_grid_rule(2, s)).collect();
        let dfh = fit_dfh(&shards, 2, &rules, 4, &c5()).unwrap();
        for x in random_points(50, 8) {
            let vals: Vec<f64> = dfh.shards().iter().map(|s| s.value(x)).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = dfh.value(x);
            // equal shard sizes: dyadic weights, the combination is exact
            assert!(v >= lo && v <= hi, "value {v} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn degenerate_shard_contributes_zero_and_is_flagged() {
        let target = TargetFunction::mode(1, 0);
        // 40 points cannot meet Σw² ≤ 2/2000, so the gate zeroes the rule
        let d = make_dataset(&target, &SamplingKind::random(40, 5), &NoiseModel::none());
        let (rule, rep) = solve_random_weights(d.points(), 1, 2000, SolveOptions::default()).unwrap();
        assert!(rep.gated_out);
        let dfh = fit_dfh(std::slice::from_ref(&d), 1, &[rule], 2000, &c5()).unwrap();
        assert_eq!(dfh.degenerate_shards(), vec![0]);
        for x in random_points(10, 10) {
            assert_eq!(dfh.value(x), 0.0);
        }
    }

    #[test]
    fn ungated_solved_rule_rejected_by_fit_dfh() {
        let target = TargetFunction::mode(1, 0);
        let d = make_dataset(&target, &SamplingKind::random(40, 5), &NoiseModel::none());
        // gate for m=1 passes (Σw² ≈ 1/40 ≤ 2), but fitting with m=2000
        // requires Σw² ≤ 1e-3, which this rule violates
        let (rule, _) = solve_random_weights(d.points(), 1, 1, SolveOptions::default()).unwrap();
        assert!(matches!(
            fit_dfh(std::slice::from_ref(&d), 1, &[rule], 2000, &c5()),
            Err(EstimatorError::GateNotApplied(0, 2000))
        ));
    }

    #[test]
    fn server_count_bound_examples() {
        // direct power evaluation oracle: 10000^{6/7} = 2682.69…
        let m = server_count_bound(10_000, 6.0, 2, BoundRegime::NoisyDeterministic).unwrap();
        assert_eq!(m, 2682);
        // r → ∞: exponent → 1, bound → N
        let big =
            server_count_bound(10_000, f64::INFINITY, 2, BoundRegime::NoisyDeterministic).unwrap();
        assert_eq!(big, 10_000);
        // random regime with τ = 1: 10000^{5.5/7}
        let mr = server_count_bound(10_000, 6.0, 2, BoundRegime::NoisyRandom { tau: 1.0 }).unwrap();
        assert_eq!(mr, (10_000f64).powf(5.5 / 7.0).floor() as u64);
        assert!(server_count_bound(100, 0.5, 2, BoundRegime::NoisyDeterministic).is_err());
        assert!(
            server_count_bound(100, 6.0, 2, BoundRegime::NoisyRandom { tau: 13.0 }).is_err()
        );
    }

    #[test]
    fn estimator_file_round_trips_bitwise() {
        let target = TargetFunction::wendland_wu(TorusPoint::new(0.25, 0.75));
        let shifts = canonical_interleave_shifts(2, 2);
        let shards =
            shard_interleaved(&target, 2, &shifts, &NoiseModel::gaussian(0.02, 21)).unwrap();
        let rules: Vec<_> = shifts.iter().map(|&s| shifted_grid_rule(2, s)).collect();
        let dfh = fit_dfh(&shards, 2, &rules, 4, &c5()).unwrap();
        let file = dfh.to_file();
        let back = EstimatorFile::from_text(&file.to_text()).unwrap();
        assert_eq!(back, file);
        for x in random_points(40, 12) {
            assert_eq!(file.value(x).to_bits(), back.value(x).to_bits());
            assert_eq!(dfh.value(x).to_bits(), back.value(x).to_bits());
        }
        // single-shard path matches the plain estimator bitwise too
        let single = fit_ndfh(&shards[0], 2, &rules[0], &c5()).unwrap();
        let sf = EstimatorFile::from_text(&single.to_file().to_text()).unwrap();
        for x in random_points(40, 13) {
            assert_eq!(sf.value(x).to_bits(), single.value(x).to_bits());
        }
    }

    #[test]
    fn coefficient_table_covers_kernel_support() {
        let target = TargetFunction::mode(1, 0);
        let data = make_dataset(&target, &SamplingKind::grid(4), &NoiseModel::none());
        let est = fit_ndfh(&data, 4, &grid_rule(4), &c5()).unwrap();
        let modes = est.polynomial().modes();
        assert!(modes.iter().all(|k| k.norm_sq() <= 4 * 16 - 1));
        assert_eq!(modes.len(), kernel_modes(4).len());
    }
}
