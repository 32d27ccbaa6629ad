//! Quadrature rules on the torus: deterministic equispaced grids (exact
//! for polynomials up to degree `3n₀-1`) and minimal-norm weights solved
//! from scattered points so that the rule matches the moments of the
//! uniform probability measure.
//!
//! Grid rules use the Lebesgue convention (weights sum to `(2π)²`); solved
//! rules target probability moments (`Σw ≈ 1`, `∫φ_0 dν = 1/(2π)`). The
//! estimator layer rescales between the two explicitly.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::manifold::{
    eigenfunction_eval, enumerate_modes, MeasureConvention, MultiIndex, TorusPoint, TWO_PI,
};
use crate::numerics::{format_f64, parse_f64, FloatFormat};

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("duplicate sample points at indices {0} and {1}")]
    DuplicatePoints(usize, usize),
    #[error("need at least {needed} points for degree {degree} (got {got})")]
    TooFewPoints { needed: usize, degree: u32, got: usize },
    #[error("moment system is rank deficient: {truncated} direction(s) truncated, residual {residual:.3e}; dominant modes {modes:?}")]
    DeficientMoments {
        truncated: usize,
        residual: f64,
        modes: Vec<MultiIndex>,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// How a rule was constructed.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    /// Equispaced `3n₀ × 3n₀` grid, possibly translated.
    Grid { n0: u32, shift: (f64, f64) },
    /// Minimal-norm weights solved from scattered points; `seed` labels
    /// the point stream that produced the nodes.
    SolvedRandom { seed: u64, n: u32 },
}

/// Nodes and weights with a declared exactness degree.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    nodes: Vec<TorusPoint>,
    weights: Vec<f64>,
    exactness_degree: u32,
    provenance: Provenance,
    measure: MeasureConvention,
    degenerate: bool,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[TorusPoint] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn exactness_degree(&self) -> u32 {
        self.exactness_degree
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn measure(&self) -> MeasureConvention {
        self.measure
    }

    /// True when the weight gate zeroed this rule.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn sum_weights(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn sum_sq_weights(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

/// The `3n₀ × 3n₀` lattice nodes `(2jπ/(3n₀) + s₁, 2lπ/(3n₀) + s₂)`,
/// row-major in `j`, reduced into `[-π, π)`.
pub fn grid_nodes(n0: u32, shift: (f64, f64)) -> Vec<TorusPoint> {
    assert!(n0 >= 1, "grid parameter n0 must be positive");
    let g = 3 * n0 as usize;
    let mut nodes = Vec::with_capacity(g * g);
    for j in 0..g {
        for l in 0..g {
            nodes.push(TorusPoint::new(
                TWO_PI * j as f64 / g as f64 + shift.0,
                TWO_PI * l as f64 / g as f64 + shift.1,
            ));
        }
    }
    nodes
}

/// Equispaced rule with `N = 9n₀²` equal weights `(2π)²/N`, exact for all
/// polynomials of degree `3n₀ - 1`.
pub fn grid_rule(n0: u32) -> QuadratureRule {
    shifted_grid_rule(n0, (0.0, 0.0))
}

/// [`grid_rule`] translated by `shift`; translation preserves exactness.
pub fn shifted_grid_rule(n0: u32, shift: (f64, f64)) -> QuadratureRule {
    let nodes = grid_nodes(n0, shift);
    let n_pts = nodes.len();
    let w = TWO_PI * TWO_PI / n_pts as f64;
    QuadratureRule {
        nodes,
        weights: vec![w; n_pts],
        exactness_degree: 3 * n0 - 1,
        provenance: Provenance::Grid { n0, shift },
        measure: MeasureConvention::Lebesgue2Pi,
        degenerate: false,
    }
}

/// Exactness audit: worst moment error over all modes `|k| ≤ degree`.
#[derive(Clone, Debug)]
pub struct ExactnessReport {
    pub max_residual: f64,
    /// Modes whose residual exceeds 1e-10, with their residuals.
    pub offenders: Vec<(MultiIndex, f64)>,
}

/// Compare `Σ w_i φ_k(x_i)` against the exact moments of the rule's
/// measure for every `|k| ≤ degree`.
pub fn verify_exactness(rule: &QuadratureRule, degree: u32) -> ExactnessReport {
    let mut max_residual = 0.0f64;
    let mut offenders = Vec::new();
    for k in enumerate_modes(degree as f64) {
        let mut s = num_complex::Complex64::new(0.0, 0.0);
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            s += eigenfunction_eval(k, *x) * *w;
        }
        let target = if k.norm_sq() == 0 {
            match rule.measure {
                MeasureConvention::Lebesgue2Pi => TWO_PI,
                MeasureConvention::Normalized => 1.0 / TWO_PI,
            }
        } else {
            0.0
        };
        let resid = (s - target).norm();
        if resid > 1e-10 {
            offenders.push((k, resid));
        }
        max_residual = max_residual.max(resid);
    }
    offenders.sort_by(|a, b| b.1.total_cmp(&a.1));
    ExactnessReport {
        max_residual,
        offenders,
    }
}

/// Options for [`solve_random_weights`].
#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    /// Label recorded in the rule's provenance for the point stream.
    pub seed_label: u64,
    /// Run the iterative nonnegativity refinement after the minimal-norm
    /// solve (study tool; off by default).
    pub nonneg_refine: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            seed_label: 0,
            nonneg_refine: false,
        }
    }
}

/// Diagnostics from the minimal-norm solve.
#[derive(Clone, Debug)]
pub struct SolveReport {
    /// Worst moment-equation residual of the returned weights.
    pub moment_residual: f64,
    /// `Σ w'²` before the gate was applied.
    pub sum_sq_weights: f64,
    /// Whether `Σ w'² ≤ 2/N` (the high-probability certificate for
    /// uniform random points).
    pub within_lemma_bound: bool,
    /// Number of negative weights (reported, not repaired unless the
    /// refinement pass is requested).
    pub negative_weights: usize,
    /// Singular directions dropped by the rank tolerance.
    pub truncated_directions: usize,
    /// Whether the gate `Σ w'² ≤ 2/m` zeroed the rule.
    pub gated_out: bool,
}

/// Zero all weights when `Σ w² > 2/m`. Returns true when the gate fired.
/// Applying the gate twice is the same as applying it once.
pub fn apply_weight_gate(weights: &mut [f64], m: u32) -> bool {
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum_sq > 2.0 / m as f64 {
        weights.iter_mut().for_each(|w| *w = 0.0);
        true
    } else {
        false
    }
}

/// Solve for the minimal-Euclidean-norm weights that match the moments of
/// the uniform probability measure for all `|k| ≤ n`, then apply the
/// `Σw² ≤ 2/m` gate. Negative weights are reported, not rejected.
pub fn solve_random_weights(
    points: &[TorusPoint],
    n: u32,
    m: u32,
    opts: SolveOptions,
) -> Result<(QuadratureRule, SolveReport), QuadratureError> {
    assert!(m >= 1, "server count m must be positive");
    let modes = enumerate_modes(n as f64);
    let n_pts = points.len();
    if n_pts < modes.len() {
        return Err(QuadratureError::TooFewPoints {
            needed: modes.len(),
            degree: n,
            got: n_pts,
        });
    }
    check_distinct(points)?;

    // Real moment system: one row for k = 0, a (cos, sin) pair per ±k
    // class. Row order follows the mode enumeration.
    let half: Vec<MultiIndex> = modes
        .iter()
        .copied()
        .filter(|k| k.k1 > 0 || (k.k1 == 0 && k.k2 > 0))
        .collect();
    let n_rows = 1 + 2 * half.len();
    let mut a = DMatrix::<f64>::zeros(n_rows, n_pts);
    let mut b = DVector::<f64>::zeros(n_rows);
    for i in 0..n_pts {
        a[(0, i)] = 1.0 / TWO_PI;
    }
    b[0] = 1.0 / TWO_PI;
    for (r, k) in half.iter().enumerate() {
        for (i, x) in points.iter().enumerate() {
            let ph = k.dot(*x);
            a[(1 + 2 * r, i)] = ph.cos() / TWO_PI;
            a[(2 + 2 * r, i)] = ph.sin() / TWO_PI;
        }
    }

    let (mut weights, truncated) = min_norm_solve(&a, &b);
    let mut residual = moment_residual(&a, &b, &weights);
    if residual > 1e-8 {
        return Err(QuadratureError::DeficientMoments {
            truncated,
            residual,
            modes: deficient_modes(&a, &b, &weights, &half),
        });
    }

    if opts.nonneg_refine {
        if let Some(w) = nonneg_refinement(&a, &b, &weights) {
            weights = w;
            residual = moment_residual(&a, &b, &weights);
        }
    }

    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    let negative_weights = weights.iter().filter(|w| **w < 0.0).count();
    let gated_out = apply_weight_gate(&mut weights, m);
    let report = SolveReport {
        moment_residual: residual,
        sum_sq_weights: sum_sq,
        within_lemma_bound: sum_sq <= 2.0 / n_pts as f64,
        negative_weights,
        truncated_directions: truncated,
        gated_out,
    };
    let rule = QuadratureRule {
        nodes: points.to_vec(),
        weights,
        exactness_degree: if gated_out { 0 } else { n },
        provenance: Provenance::SolvedRandom {
            seed: opts.seed_label,
            n,
        },
        measure: MeasureConvention::Normalized,
        degenerate: gated_out,
    };
    Ok((rule, report))
}

/// Restriction of a rule to a contiguous block of its nodes, used to hand
/// each server its slice of a globally solved rule.
pub fn restrict_rule(rule: &QuadratureRule, start: usize, len: usize) -> QuadratureRule {
    QuadratureRule {
        nodes: rule.nodes[start..start + len].to_vec(),
        weights: rule.weights[start..start + len].to_vec(),
        exactness_degree: rule.exactness_degree,
        provenance: rule.provenance.clone(),
        measure: rule.measure,
        degenerate: rule.degenerate,
    }
}

fn check_distinct(points: &[TorusPoint]) -> Result<(), QuadratureError> {
    let mut indexed: Vec<(usize, &TorusPoint)> = points.iter().enumerate().collect();
    indexed.sort_by(|a, b| {
        a.1.x1()
            .total_cmp(&b.1.x1())
            .then(a.1.x2().total_cmp(&b.1.x2()))
    });
    for w in indexed.windows(2) {
        if w[0].1 == w[1].1 {
            let (i, j) = (w[0].0.min(w[1].0), w[0].0.max(w[1].0));
            return Err(QuadratureError::DuplicatePoints(i, j));
        }
    }
    Ok(())
}

/// Minimal-norm least-squares solution of `A w = b` via SVD with rank
/// tolerance `1e-12 · σ_max`. Returns the weights and the number of
/// truncated directions.
fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> (Vec<f64>, usize) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sigma = &svd.singular_values;
    let smax = sigma.iter().cloned().fold(0.0f64, f64::max);
    let tol = 1e-12 * smax;
    let mut w = vec![0.0f64; a.ncols()];
    let mut truncated = 0usize;
    for i in 0..sigma.len() {
        if sigma[i] <= tol {
            truncated += 1;
            continue;
        }
        let mut ub = 0.0;
        for r in 0..a.nrows() {
            ub += u[(r, i)] * b[r];
        }
        let scale = ub / sigma[i];
        for j in 0..a.ncols() {
            w[j] += v_t[(i, j)] * scale;
        }
    }
    (w, truncated)
}

fn moment_residual(a: &DMatrix<f64>, b: &DVector<f64>, w: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..a.nrows() {
        let mut s = 0.0;
        for j in 0..a.ncols() {
            s += a[(r, j)] * w[j];
        }
        worst = worst.max((s - b[r]).abs());
    }
    worst
}

/// Modes whose moment equations are worst satisfied, for the rank-deficiency
/// error report.
fn deficient_modes(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    w: &[f64],
    half: &[MultiIndex],
) -> Vec<MultiIndex> {
    let mut rows: Vec<(usize, f64)> = (0..a.nrows())
        .map(|r| {
            let mut s = 0.0;
            for j in 0..a.ncols() {
                s += a[(r, j)] * w[j];
            }
            (r, (s - b[r]).abs())
        })
        .collect();
    rows.sort_by(|x, y| y.1.total_cmp(&x.1));
    rows.iter()
        .take(3)
        .filter(|(_, res)| *res > 1e-10)
        .map(|(r, _)| {
            if *r == 0 {
                MultiIndex::new(0, 0)
            } else {
                half[(r - 1) / 2]
            }
        })
        .collect()
}

/// Iterative nonnegativity pass: clamp negative weights to zero and
/// re-solve the moment system on the remaining support. Gives up (returning
/// None) if the restricted system loses consistency.
fn nonneg_refinement(a: &DMatrix<f64>, b: &DVector<f64>, w0: &[f64]) -> Option<Vec<f64>> {
    let mut active: Vec<usize> = (0..w0.len()).collect();
    let mut w = w0.to_vec();
    for _ in 0..50 {
        let negatives: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&j| w[j] < 0.0)
            .collect();
        if negatives.is_empty() {
            return Some(w);
        }
        active.retain(|j| !negatives.contains(j));
        if active.len() < a.nrows() {
            return None;
        }
        let sub = DMatrix::from_fn(a.nrows(), active.len(), |r, c| a[(r, active[c])]);
        let (ws, _) = min_norm_solve(&sub, b);
        w.iter_mut().for_each(|x| *x = 0.0);
        for (c, &j) in active.iter().enumerate() {
            w[j] = ws[c];
        }
        if moment_residual(a, b, &w) > 1e-8 {
            return None;
        }
    }
    None
}

impl QuadratureRule {
    /// Serialize as `# torus-quadrature v1, N=…, degree=…, provenance=…`
    /// followed by `x1,x2,w` rows in the chosen float format.
    pub fn to_text(&self, fmt: FloatFormat) -> String {
        let prov = match &self.provenance {
            Provenance::Grid { n0, shift } => {
                if *shift == (0.0, 0.0) {
                    format!("grid(n0={n0})")
                } else {
                    format!(
                        "grid(n0={n0},shift={},{})",
                        format_f64(shift.0, FloatFormat::Decimal17),
                        format_f64(shift.1, FloatFormat::Decimal17)
                    )
                }
            }
            Provenance::SolvedRandom { seed, n } => {
                let tail = if self.degenerate { ",degenerate" } else { "" };
                format!("solved_random(seed={seed},n={n}{tail})")
            }
        };
        let mut out = format!(
            "# torus-quadrature v1, N={}, degree={}, provenance={}\n",
            self.len(),
            self.exactness_degree,
            prov
        );
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            out.push_str(&format!(
                "{},{},{}\n",
                format_f64(x.x1(), fmt),
                format_f64(x.x2(), fmt),
                format_f64(*w, fmt)
            ));
        }
        out
    }

    /// Parse the format written by [`QuadratureRule::to_text`].
    pub fn from_text(text: &str) -> Result<Self, QuadratureError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| QuadratureError::Parse {
                line: 1,
                msg: "empty file".into(),
            })?;
        let header = header
            .strip_prefix("# torus-quadrature v1,")
            .ok_or_else(|| QuadratureError::Parse {
                line: 1,
                msg: "missing `# torus-quadrature v1` header".into(),
            })?;
        let n_pts = field(header, "N=", 1)?.parse::<usize>().map_err(|e| {
            QuadratureError::Parse {
                line: 1,
                msg: format!("bad N: {e}"),
            }
        })?;
        let degree = field(header, "degree=", 1)?.parse::<u32>().map_err(|e| {
            QuadratureError::Parse {
                line: 1,
                msg: format!("bad degree: {e}"),
            }
        })?;
        let prov_str = header
            .split_once("provenance=")
            .ok_or_else(|| QuadratureError::Parse {
                line: 1,
                msg: "missing provenance".into(),
            })?
            .1
            .trim();
        let (provenance, degenerate, measure) = parse_provenance(prov_str)?;

        let mut nodes = Vec::with_capacity(n_pts);
        let mut weights = Vec::with_capacity(n_pts);
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',');
            let mut next = |name: &str| -> Result<f64, QuadratureError> {
                parts
                    .next()
                    .and_then(parse_f64)
                    .ok_or_else(|| QuadratureError::Parse {
                        line: idx + 1,
                        msg: format!("bad {name}"),
                    })
            };
            let x1 = next("x1")?;
            let x2 = next("x2")?;
            let w = next("w")?;
            nodes.push(TorusPoint::new(x1, x2));
            weights.push(w);
        }
        if nodes.len() != n_pts {
            return Err(QuadratureError::Parse {
                line: 1,
                msg: format!("header says N={n_pts} but found {} rows", nodes.len()),
            });
        }
        Ok(Self {
            nodes,
            weights,
            exactness_degree: degree,
            provenance,
            measure,
            degenerate,
        })
    }
}

fn field<'a>(header: &'a str, key: &str, line: usize) -> Result<&'a str, QuadratureError> {
    header
        .split(',')
        .map(str::trim)
        .find_map(|part| part.strip_prefix(key))
        .ok_or_else(|| QuadratureError::Parse {
            line,
            msg: format!("missing header field {key}"),
        })
}

fn parse_provenance(
    s: &str,
) -> Result<(Provenance, bool, MeasureConvention), QuadratureError> {
    let bad = |msg: &str| QuadratureError::Parse {
        line: 1,
        msg: msg.to_string(),
    };
    if let Some(body) = s.strip_prefix("grid(").and_then(|r| r.strip_suffix(')')) {
        let mut n0 = None;
        let mut shift = (0.0, 0.0);
        // shift value itself contains a comma: n0=…,shift=a,b
        if let Some((head, tail)) = body.split_once(",shift=") {
            n0 = head.strip_prefix("n0=").and_then(|v| v.parse::<u32>().ok());
            let (a, b) = tail.split_once(',').ok_or_else(|| bad("bad shift"))?;
            shift = (
                parse_f64(a).ok_or_else(|| bad("bad shift"))?,
                parse_f64(b).ok_or_else(|| bad("bad shift"))?,
            );
        } else if let Some(v) = body.strip_prefix("n0=") {
            n0 = v.parse::<u32>().ok();
        }
        let n0 = n0.ok_or_else(|| bad("bad grid provenance"))?;
        return Ok((
            Provenance::Grid { n0, shift },
            false,
            MeasureConvention::Lebesgue2Pi,
        ));
    }
    if let Some(body) = s
        .strip_prefix("solved_random(")
        .and_then(|r| r.strip_suffix(')'))
    {
        let mut seed = None;
        let mut n = None;
        let mut degenerate = false;
        for part in body.split(',') {
            if let Some(v) = part.strip_prefix("seed=") {
                seed = v.parse::<u64>().ok();
            } else if let Some(v) = part.strip_prefix("n=") {
                n = v.parse::<u32>().ok();
            } else if part == "degenerate" {
                degenerate = true;
            }
        }
        let (seed, n) = seed
            .zip(n)
            .ok_or_else(|| bad("bad solved_random provenance"))?;
        return Ok((
            Provenance::SolvedRandom { seed, n },
            degenerate,
            MeasureConvention::Normalized,
        ));
    }
    Err(bad("unknown provenance"))
}
