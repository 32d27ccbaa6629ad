//! Filtered kernels `K_n` and the continuous filtered approximation `V_n`.
//!
//! The degree-`n` filtered kernel on the torus is
//!
//! ```text
//! K_n(x, y) = (1/(2π)²) Σ_k H(|k|/n) e^{i k·(x-y)},
//! ```
//!
//! summed over the modes inside the filter support `|k| < 2n` (in integer
//! shells, everything up to degree `2n-1`). Pairing `k` with `-k` collapses
//! the sum to cosines, so kernel values are exactly real and exactly
//! symmetric in `(x, y)`.

use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::filter::Filter;
use crate::manifold::{
    eigenfunction_eval, grid_coords, modes_with_norm_sq_up_to, reference_grid, MultiIndex,
    TorusPoint, TWO_PI,
};
use crate::numerics::{pairwise_sum_by, pairwise_sum_complex_by, par_map_indexed};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("grid resolution {g} too small for mode {k:?}: need G > 2|k| = {min}")]
    GridTooSmall { g: u32, k: MultiIndex, min: f64 },
    #[error("filtered approximation of degree {n} needs G >= 4n (got {g})")]
    ApproximationGridTooSmall { n: u32, g: u32 },
}

/// The mode set of a degree-`n` filtered object: all `k` with `|k| < 2n`,
/// i.e. `|k|² ≤ 4n² - 1`, in the deterministic enumeration order.
pub fn kernel_modes(n: u32) -> Vec<MultiIndex> {
    let n = n as i64;
    modes_with_norm_sq_up_to(4 * n * n - 1)
}

/// A filtered kernel of fixed degree with its precomputed mode table.
#[derive(Clone, Debug)]
pub struct FilteredKernel {
    n: u32,
    filter: Arc<Filter>,
    modes: Vec<MultiIndex>,
    weights: Vec<f64>,
    /// indices into `modes` of the zero mode and one representative of
    /// each ±k pair, for the cosine-paired evaluation path
    half: Vec<usize>,
}

impl FilteredKernel {
    pub fn new(n: u32, filter: Arc<Filter>) -> Self {
        assert!(n >= 1, "kernel degree must be positive");
        let modes = kernel_modes(n);
        let weights: Vec<f64> = modes
            .iter()
            .map(|k| filter.eval(k.eigenvalue() / n as f64))
            .collect();
        let half = modes
            .iter()
            .enumerate()
            .filter(|(_, k)| k.k1 > 0 || (k.k1 == 0 && k.k2 >= 0))
            .map(|(i, _)| i)
            .collect();
        Self {
            n,
            filter,
            modes,
            weights,
            half,
        }
    }

    pub fn degree(&self) -> u32 {
        self.n
    }

    pub fn filter(&self) -> &Arc<Filter> {
        &self.filter
    }

    /// Mode table `(k, H(|k|/n))` over `|k| < 2n`.
    pub fn mode_table(&self) -> impl Iterator<Item = (MultiIndex, f64)> + '_ {
        self.modes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn modes(&self) -> &[MultiIndex] {
        &self.modes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `K_n(x, y)`, real and symmetric by the ±k cosine pairing.
    pub fn eval(&self, x: TorusPoint, y: TorusPoint) -> f64 {
        let d1 = x.x1() - y.x1();
        let d2 = x.x2() - y.x2();
        let sum = pairwise_sum_by(0, self.half.len(), &|idx| {
            let i = self.half[idx];
            let k = self.modes[i];
            if k.k1 == 0 && k.k2 == 0 {
                self.weights[i]
            } else {
                let phase = k.k1 as f64 * d1 + k.k2 as f64 * d2;
                2.0 * self.weights[i] * phase.cos()
            }
        });
        sum / (TWO_PI * TWO_PI)
    }
}

/// Fourier coefficient `⟨f, φ_k⟩` approximated on the `G×G` reference
/// grid. Exact whenever `f` is a trigonometric polynomial whose
/// per-coordinate frequencies stay below `G - |k|`.
pub fn fourier_coefficient<F: Fn(TorusPoint) -> f64>(
    f: &F,
    k: MultiIndex,
    g: u32,
) -> Result<Complex64, KernelError> {
    let min = 2.0 * k.eigenvalue();
    if (g as f64) <= min {
        return Err(KernelError::GridTooSmall { g, k, min });
    }
    let grid = reference_grid(g);
    Ok(pairwise_sum_complex_by(0, grid.len(), &|i| {
        let (x, w) = grid[i];
        eigenfunction_eval(k, x).conj() * (f(x) * w)
    }))
}

/// A polynomial `Σ_k c_k φ_k` stored as a mode/coefficient table. This is
/// the common representation behind fitted estimators and the continuous
/// filtered approximation.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralPolynomial {
    degree: u32,
    modes: Vec<MultiIndex>,
    coeffs: Vec<Complex64>,
}

/// Real field sampled on a `G×G` reference grid (row-major in the first
/// coordinate), with the largest imaginary residual seen while evaluating.
#[derive(Clone, Debug)]
pub struct GridField {
    pub g: u32,
    pub values: Vec<f64>,
    pub max_imag: f64,
}

impl SpectralPolynomial {
    pub fn new(degree: u32, modes: Vec<MultiIndex>, coeffs: Vec<Complex64>) -> Self {
        assert_eq!(modes.len(), coeffs.len());
        Self {
            degree,
            modes,
            coeffs,
        }
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn modes(&self) -> &[MultiIndex] {
        &self.modes
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Complex evaluation `Σ_k c_k φ_k(x)` in the fixed mode order.
    pub fn eval_complex(&self, x: TorusPoint) -> Complex64 {
        pairwise_sum_complex_by(0, self.modes.len(), &|i| {
            self.coeffs[i] * eigenfunction_eval(self.modes[i], x)
        })
    }

    /// Real part of the expansion at `x`.
    pub fn value(&self, x: TorusPoint) -> f64 {
        self.eval_complex(x).re
    }

    /// Real part plus the magnitude of the discarded imaginary part.
    pub fn value_with_residual(&self, x: TorusPoint) -> (f64, f64) {
        let v = self.eval_complex(x);
        (v.re, v.im.abs())
    }

    /// Evaluate on the `G×G` reference grid through per-axis factoring:
    /// phases separate as `e^{i k·x} = e^{i k1 x1} e^{i k2 x2}`, so the
    /// inner sums over `k2` are shared by a whole grid row. Rows are
    /// processed independently (and in parallel when enabled).
    pub fn eval_grid(&self, g: u32) -> GridField {
        let coords = grid_coords(g);
        // group coefficient indices by k1, ascending
        let mut k1s: Vec<i64> = self.modes.iter().map(|k| k.k1).collect();
        k1s.sort_unstable();
        k1s.dedup();
        let groups: Vec<(i64, Vec<usize>)> = k1s
            .iter()
            .map(|&k1| {
                let idx: Vec<usize> = (0..self.modes.len())
                    .filter(|&i| self.modes[i].k1 == k1)
                    .collect();
                (k1, idx)
            })
            .collect();
        // inner[gi][l] = Σ_{k2} c_(k1,k2) e^{i k2 y_l}
        let inner: Vec<Vec<Complex64>> = groups
            .iter()
            .map(|(_, idx)| {
                coords
                    .iter()
                    .map(|&y| {
                        pairwise_sum_complex_by(0, idx.len(), &|j| {
                            let i = idx[j];
                            let ph = self.modes[i].k2 as f64 * y;
                            self.coeffs[i] * Complex64::new(ph.cos(), ph.sin())
                        })
                    })
                    .collect()
            })
            .collect();
        let rows: Vec<(Vec<f64>, f64)> = par_map_indexed(g as usize, |j| {
            let x = coords[j];
            let phases: Vec<Complex64> = groups
                .iter()
                .map(|(k1, _)| {
                    let ph = *k1 as f64 * x;
                    Complex64::new(ph.cos(), ph.sin())
                })
                .collect();
            let mut row = Vec::with_capacity(g as usize);
            let mut max_imag = 0.0f64;
            for l in 0..g as usize {
                let v = pairwise_sum_complex_by(0, groups.len(), &|gi| phases[gi] * inner[gi][l])
                    / TWO_PI;
                max_imag = max_imag.max(v.im.abs());
                row.push(v.re);
            }
            (row, max_imag)
        });
        let mut values = Vec::with_capacity((g as usize) * (g as usize));
        let mut max_imag = 0.0f64;
        for (row, mi) in rows {
            values.extend_from_slice(&row);
            max_imag = max_imag.max(mi);
        }
        GridField { g, values, max_imag }
    }
}

/// The continuous filtered approximation `V_n(f) = Σ_k H(|k|/n) ⟨f,φ_k⟩ φ_k`,
/// realized by `G×G` reference-grid quadrature (`G ≥ 4n`). Reproduces every
/// polynomial of degree `≤ n` and annihilates modes outside `|k| < 2n`.
pub fn filtered_approximation<F: Fn(TorusPoint) -> f64 + Sync>(
    f: &F,
    n: u32,
    g: u32,
    filter: &Filter,
) -> Result<SpectralPolynomial, KernelError> {
    if g < 4 * n {
        return Err(KernelError::ApproximationGridTooSmall { n, g });
    }
    let modes = kernel_modes(n);
    let grid = reference_grid(g);
    let samples: Vec<f64> = grid.iter().map(|(x, _)| f(*x)).collect();
    let coeffs: Vec<Complex64> = par_map_indexed(modes.len(), |mi| {
        let k = modes[mi];
        let h = filter.eval(k.eigenvalue() / n as f64);
        let fhat = pairwise_sum_complex_by(0, grid.len(), &|i| {
            let (x, w) = grid[i];
            eigenfunction_eval(k, x).conj() * (samples[i] * w)
        });
        fhat * h
    });
    Ok(SpectralPolynomial::new(n, modes, coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::wendland_wu_eval;
    use crate::manifold::{enumerate_modes, geodesic_distance};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c5() -> Arc<Filter> {
        Arc::new(Filter::c5_default())
    }

    fn random_point(rng: &mut ChaCha8Rng) -> TorusPoint {
        let pi = std::f64::consts::PI;
        TorusPoint::new(
            -pi + TWO_PI * rng.random::<f64>(),
            -pi + TWO_PI * rng.random::<f64>(),
        )
    }

    #[test]
    fn diagonal_value_degree_one() {
        // brute-force lattice oracle: K_1(x,x) = (5 + 4 H(√2)) / (2π)²
        let k = FilteredKernel::new(1, c5());
        assert_eq!(k.modes().len(), 9);
        let hsqrt2 = Filter::c5_default().eval(2f64.sqrt());
        let expect = (5.0 + 4.0 * hsqrt2) / (TWO_PI * TWO_PI);
        let x = TorusPoint::new(0.3, -0.7);
        assert!((k.eval(x, x) - expect).abs() < 1e-13);
        assert!((expect - 0.19972706848667907).abs() < 1e-15);

        // independent summation over enumerate_modes(2-ε)
        let brute: f64 = enumerate_modes(2.0 - 1e-9)
            .iter()
            .map(|m| Filter::c5_default().eval(m.eigenvalue()))
            .sum::<f64>()
            / (TWO_PI * TWO_PI);
        assert!((k.eval(x, x) - brute).abs() < 1e-14);
    }

    #[test]
    fn antipodal_value_degree_two() {
        // direct alternating lattice sum oracle, frozen:
        // Σ H(|k|/2)(-1)^{k1+k2} / (2π)² over |k|² ≤ 15
        let k = FilteredKernel::new(2, c5());
        let x = TorusPoint::new(0.4, 1.1);
        let y = TorusPoint::new(0.4 - std::f64::consts::PI, 1.1 - std::f64::consts::PI);
        let brute: f64 = kernel_modes(2)
            .iter()
            .map(|m| {
                let sign = if (m.k1 + m.k2).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                sign * Filter::c5_default().eval(m.eigenvalue() / 2.0)
            })
            .sum::<f64>()
            / (TWO_PI * TWO_PI);
        assert!((k.eval(x, y) - brute).abs() < 1e-13);
        assert!((brute - 0.003075347591298861).abs() < 1e-12);
    }

    #[test]
    fn unit_mass_for_any_degree() {
        // ∫ K_n(x, y) dy = 1: only the constant mode survives integration
        for n in [1, 3, 8] {
            let k = FilteredKernel::new(n, c5());
            let x = TorusPoint::new(0.123, -2.5);
            let grid = reference_grid(4 * n);
            let total: f64 = grid.iter().map(|(y, w)| k.eval(x, *y) * w).sum();
            assert!((total - 1.0).abs() < 1e-11, "n={n}: mass {total}");
        }
    }

    #[test]
    fn mode_weights_follow_filter() {
        let k = FilteredKernel::new(4, c5());
        for (m, w) in k.mode_table() {
            if m.norm_sq() <= 16 {
                assert_eq!(w, 1.0, "H must be exactly 1 inside |k| <= n");
            }
            assert!(m.norm_sq() <= 4 * 16 - 1, "mode outside filter support");
        }
    }

    #[test]
    fn localization_constant_is_stable() {
        // |K_n(x,y)| (1 + n ρ)⁵ / n² stays within a small band across n
        let mut consts = Vec::new();
        for n in [8u32, 16] {
            let k = FilteredKernel::new(n, c5());
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut cmax = 0.0f64;
            for _ in 0..300 {
                let x = random_point(&mut rng);
                let y = random_point(&mut rng);
                let rho = geodesic_distance(x, y);
                let bound = k.eval(x, y).abs() * (1.0 + n as f64 * rho).powi(5) / (n * n) as f64;
                cmax = cmax.max(bound);
            }
            consts.push(cmax);
        }
        let ratio = consts[1].max(consts[0]) / consts[1].min(consts[0]);
        assert!(ratio < 4.0, "constants {consts:?}");
    }

    #[test]
    fn l1_norm_bounded_uniformly() {
        // Lemma-style p=1 bound: the grid L₁ norm of K_n(·,x) is bounded
        // independently of n (observed ≈ 2.93)
        let x = TorusPoint::new(0.0, 0.0);
        let mut norms = Vec::new();
        for n in [4u32, 8, 16, 32] {
            let k = FilteredKernel::new(n, c5());
            let coeffs: Vec<Complex64> = k
                .mode_table()
                .map(|(m, w)| eigenfunction_eval(m, x).conj() * w)
                .collect();
            let poly = SpectralPolynomial::new(n, k.modes().to_vec(), coeffs);
            let field = poly.eval_grid(8 * n);
            let w = (TWO_PI * TWO_PI) / ((8 * n) as f64 * (8 * n) as f64);
            let l1: f64 = field.values.iter().map(|v| v.abs() * w).sum();
            norms.push(l1);
        }
        for &l1 in &norms {
            assert!((2.5..3.5).contains(&l1), "L1 norms {norms:?}");
        }
        let spread = norms.iter().cloned().fold(f64::MIN, f64::max)
            / norms.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1.1, "L1 norms grow with n: {norms:?}");
    }

    #[test]
    fn fourier_coefficient_orthonormality() {
        let f11 = |x: TorusPoint| eigenfunction_eval(MultiIndex::new(1, 1), x).re * 2.0;
        // Re φ_(1,1) = (φ_(1,1)+φ_(-1,-1))/2, so <2 Re φ, φ_(1,1)> = 1
        let c = fourier_coefficient(&f11, MultiIndex::new(1, 1), 16).unwrap();
        assert!((c.re - 1.0).abs() < 1e-12 && c.im.abs() < 1e-12);
        let z = fourier_coefficient(&f11, MultiIndex::new(2, 0), 16).unwrap();
        assert!(z.norm() < 1e-12);
    }

    #[test]
    fn fourier_coefficient_needs_margin() {
        let f = |_: TorusPoint| 1.0;
        assert!(fourier_coefficient(&f, MultiIndex::new(8, 0), 16).is_err());
        assert!(fourier_coefficient(&f, MultiIndex::new(7, 0), 16).is_ok());
    }

    #[test]
    fn wendland_mean_coefficient_frozen() {
        // grid-refinement oracle: G=1024 run frozen at 0.044871794871794886,
        // exact value ∫₀¹ φ(r) r dr = 7/156
        let center = TorusPoint::new(0.0, 0.0);
        let f = |x: TorusPoint| wendland_wu_eval(center, x);
        let c = fourier_coefficient(&f, MultiIndex::new(0, 0), 256).unwrap();
        assert!((c.re - 0.044871794871794886).abs() < 1e-9);
        assert!((c.re - 7.0 / 156.0).abs() < 1e-9);
        assert!(c.im.abs() < 1e-15);
    }

    #[test]
    fn filtered_approximation_reproduces_low_modes() {
        let f = |x: TorusPoint| eigenfunction_eval(MultiIndex::new(1, 0), x).re;
        let v = filtered_approximation(&f, 2, 16, &Filter::c5_default()).unwrap();
        let mut sup = 0.0f64;
        for (x, _) in reference_grid(16) {
            sup = sup.max((v.value(x) - f(x)).abs());
        }
        assert!(sup < 1e-12, "sup gap {sup}");
    }

    #[test]
    fn filtered_approximation_annihilates_high_modes() {
        let f = |x: TorusPoint| eigenfunction_eval(MultiIndex::new(5, 0), x).re;
        let v = filtered_approximation(&f, 1, 24, &Filter::c5_default()).unwrap();
        for (x, _) in reference_grid(12) {
            assert!(v.value(x).abs() < 1e-12);
        }
    }

    #[test]
    fn filtered_approximation_rate_on_wendland() {
        // V_8 vs V_16 on the Wendland-Wu target: L₂ error ratio consistent
        // with n^{-s} decay at s ≥ 6
        let center = TorusPoint::new(0.0, 0.0);
        let f = |x: TorusPoint| wendland_wu_eval(center, x);
        let filt = Filter::c5_default();
        let errs: Vec<f64> = [8u32, 16]
            .iter()
            .map(|&n| {
                let v = filtered_approximation(&f, n, 8 * n, &filt).unwrap();
                let field = v.eval_grid(128);
                let grid = reference_grid(128);
                let w = (TWO_PI * TWO_PI) / (128.0 * 128.0);
                let l2sq: f64 = grid
                    .iter()
                    .enumerate()
                    .map(|(i, (x, _))| {
                        let d = field.values[i] - f(*x);
                        d * d * w
                    })
                    .sum();
                l2sq.sqrt()
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!(ratio >= 64.0, "L2 error ratio {ratio} (errors {errs:?})");
    }

    #[test]
    fn grid_eval_matches_point_eval() {
        let center = TorusPoint::new(0.5, -0.5);
        let f = |x: TorusPoint| wendland_wu_eval(center, x);
        let v = filtered_approximation(&f, 3, 12, &Filter::c5_default()).unwrap();
        let field = v.eval_grid(7);
        for (i, (x, _)) in reference_grid(7).iter().enumerate() {
            assert!((field.values[i] - v.value(*x)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn kernel_symmetry_is_exact(
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            cc in -3.0f64..3.0, d in -3.0f64..3.0,
        ) {
            let k = FilteredKernel::new(3, c5());
            let x = TorusPoint::new(a, b);
            let y = TorusPoint::new(cc, d);
            prop_assert!((k.eval(x, y) - k.eval(y, x)).abs() < 1e-14);
        }
    }
}
