//! The flat 2-torus: points, Laplace-Beltrami eigenbasis, geodesic
//! distance, and equispaced reference grids.
//!
//! The torus is `[-π, π)²` with the flat metric. The Laplace-Beltrami
//! eigenfunctions are `φ_k(x) = e^{i k·x} / (2π)` indexed by lattice
//! vectors `k ∈ Z²`; the eigenvalue attached to `φ_k` is `λ = |k|`, so a
//! filter of degree `n` is evaluated at `|k|/n`. Two measure conventions
//! are supported: the default Lebesgue measure with total mass `(2π)²`
//! (under which the `φ_k` above are orthonormal) and the normalized
//! probability measure.

use num_complex::Complex64;

/// 2π, the circumference of each torus factor.
pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Measure convention on the torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasureConvention {
    /// Lebesgue measure `dx` with total mass `(2π)²`; eigenfunctions carry
    /// the `1/(2π)` normalization. This is the default everywhere.
    Lebesgue2Pi,
    /// Probability measure `dx/(2π)²` with total mass 1.
    Normalized,
}

impl MeasureConvention {
    /// Total mass of the torus under this convention.
    pub fn total_mass(self) -> f64 {
        match self {
            MeasureConvention::Lebesgue2Pi => TWO_PI * TWO_PI,
            MeasureConvention::Normalized => 1.0,
        }
    }
}

/// A point on the torus, coordinates always reduced into `[-π, π)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusPoint {
    x1: f64,
    x2: f64,
}

/// Reduce an angle into `[-π, π)`.
fn reduce_rad(v: f64) -> f64 {
    let mut r = v - TWO_PI * ((v + std::f64::consts::PI) / TWO_PI).floor();
    // guard the half-open interval against rounding at the seam
    while r < -std::f64::consts::PI {
        r += TWO_PI;
    }
    while r >= std::f64::consts::PI {
        r -= TWO_PI;
    }
    r
}

impl TorusPoint {
    /// Build a point, reducing both coordinates modulo 2π into `[-π, π)`.
    pub fn new(x1: f64, x2: f64) -> Self {
        Self {
            x1: reduce_rad(x1),
            x2: reduce_rad(x2),
        }
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    /// Translate by `(t1, t2)` and re-reduce.
    pub fn translated(&self, t1: f64, t2: f64) -> Self {
        Self::new(self.x1 + t1, self.x2 + t2)
    }
}

/// A lattice mode `k = (k1, k2) ∈ Z²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    pub k1: i64,
    pub k2: i64,
}

impl MultiIndex {
    pub fn new(k1: i64, k2: i64) -> Self {
        Self { k1, k2 }
    }

    /// `|k|²` in exact integer arithmetic.
    pub fn norm_sq(&self) -> i64 {
        self.k1 * self.k1 + self.k2 * self.k2
    }

    /// The eigenvalue `λ = |k| = sqrt(k1² + k2²)`.
    pub fn eigenvalue(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    /// `k·x` for a torus point `x`.
    pub fn dot(&self, x: TorusPoint) -> f64 {
        self.k1 as f64 * x.x1 + self.k2 as f64 * x.x2
    }

    pub fn negated(&self) -> Self {
        Self::new(-self.k1, -self.k2)
    }
}

/// Eigenfunction `φ_k(x) = e^{i k·x} / (2π)` (Lebesgue convention).
pub fn eigenfunction_eval(k: MultiIndex, x: TorusPoint) -> Complex64 {
    let phase = k.dot(x);
    Complex64::new(phase.cos(), phase.sin()) / TWO_PI
}

/// Geodesic distance on the flat torus: per-coordinate wraparound
/// differences combined Euclidean-style. Symmetric, translation invariant,
/// and satisfies the triangle inequality.
pub fn geodesic_distance(x: TorusPoint, y: TorusPoint) -> f64 {
    let d1 = coordinate_gap(x.x1, y.x1);
    let d2 = coordinate_gap(x.x2, y.x2);
    (d1 * d1 + d2 * d2).sqrt()
}

fn coordinate_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(TWO_PI - d)
}

/// All modes with `|k|² ≤ r2`, ordered by `(|k|², k1, k2)`. Exact integer
/// arithmetic; this is the primitive behind [`enumerate_modes`].
pub fn modes_with_norm_sq_up_to(r2: i64) -> Vec<MultiIndex> {
    if r2 < 0 {
        return Vec::new();
    }
    let rmax = (r2 as f64).sqrt().floor() as i64 + 1;
    let mut out = Vec::new();
    for k1 in -rmax..=rmax {
        for k2 in -rmax..=rmax {
            if k1 * k1 + k2 * k2 <= r2 {
                out.push(MultiIndex::new(k1, k2));
            }
        }
    }
    out.sort_by_key(|k| (k.norm_sq(), k.k1, k.k2));
    out
}

/// All modes with `|k| ≤ max_eigenvalue`, in the deterministic
/// `(|k|², k1, k2)` order. A relative tolerance of 1e-12 absorbs the
/// rounding of `max_eigenvalue²` so that integer and `sqrt(m)`-valued
/// bounds include their boundary shell.
pub fn enumerate_modes(max_eigenvalue: f64) -> Vec<MultiIndex> {
    assert!(
        max_eigenvalue >= 0.0 && max_eigenvalue.is_finite(),
        "max_eigenvalue must be a nonnegative finite real"
    );
    let r2 = (max_eigenvalue * max_eigenvalue * (1.0 + 1e-12)).floor() as i64;
    modes_with_norm_sq_up_to(r2)
}

/// The reduced 1-D coordinates of the equispaced grid `2πj/G`, `j = 0..G`.
pub(crate) fn grid_coords(g: u32) -> Vec<f64> {
    (0..g).map(|j| reduce_rad(TWO_PI * j as f64 / g as f64)).collect()
}

/// `G×G` equispaced grid with equal weights (row-major in the first
/// coordinate). Under the Lebesgue convention each weight is `(2π)²/G²`;
/// the rule integrates every mode with per-coordinate frequency below `G`
/// exactly.
pub fn reference_grid(g: u32) -> Vec<(TorusPoint, f64)> {
    reference_grid_with(g, MeasureConvention::Lebesgue2Pi)
}

/// [`reference_grid`] under an explicit measure convention.
pub fn reference_grid_with(g: u32, convention: MeasureConvention) -> Vec<(TorusPoint, f64)> {
    assert!(g >= 1, "grid resolution must be positive");
    let coords = grid_coords(g);
    let w = convention.total_mass() / (g as f64 * g as f64);
    let mut out = Vec::with_capacity((g as usize) * (g as usize));
    for &a in &coords {
        for &b in &coords {
            out.push((TorusPoint { x1: a, x2: b }, w));
        }
    }
    out
}

/// The torus eigenbasis under a chosen measure convention: dimension,
/// ordered eigenpairs, and convention-scaled eigenfunction evaluation.
#[derive(Clone, Copy, Debug)]
pub struct TorusSpectrum {
    convention: MeasureConvention,
}

impl TorusSpectrum {
    pub fn new(convention: MeasureConvention) -> Self {
        Self { convention }
    }

    pub fn dimension(&self) -> u32 {
        2
    }

    pub fn convention(&self) -> MeasureConvention {
        self.convention
    }

    /// Ordered eigenpairs `(λ, k)` with `λ ≤ max_eigenvalue`; eigenvalues
    /// are nondecreasing and the first is `λ_0 = 0` (constant mode).
    pub fn eigenpairs(&self, max_eigenvalue: f64) -> Vec<(f64, MultiIndex)> {
        enumerate_modes(max_eigenvalue)
            .into_iter()
            .map(|k| (k.eigenvalue(), k))
            .collect()
    }

    /// Eigenfunction evaluation, orthonormal under this convention.
    pub fn eigenfunction(&self, k: MultiIndex, x: TorusPoint) -> Complex64 {
        match self.convention {
            MeasureConvention::Lebesgue2Pi => eigenfunction_eval(k, x),
            MeasureConvention::Normalized => eigenfunction_eval(k, x) * TWO_PI,
        }
    }

    /// Reference quadrature under this convention.
    pub fn reference_grid(&self, g: u32) -> Vec<(TorusPoint, f64)> {
        reference_grid_with(g, self.convention)
    }
}
