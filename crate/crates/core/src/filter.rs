//! The spectral filter `H`: 1 on `[0,1]`, a smooth piecewise polynomial on
//! `(1,2)`, 0 beyond 2, together with boundary-smoothness diagnostics.
//!
//! The shipped filter joins the plateaus with the degree-11 polynomial
//!
//! ```text
//! H(t) = 1 + (t-1)^6 [-462 + 1980(t-1) - 3465(t-1)^2 + 3080(t-1)^3
//!                     - 1386(t-1)^4 + 252(t-1)^5],   1 < t < 2,
//! ```
//!
//! which is C⁵ at both joins (and not C⁶: the sixth derivative jumps by
//! 6!·462 = 332640 at t=1). It also satisfies `H(1+s) + H(2-s) = 1`, so in
//! particular `H(3/2) = 1/2`.

use thiserror::Error;

use crate::numerics::fd_weights;

/// Middle-piece coefficients of the shipped filter, in powers of `t-1`.
const C5_MIDDLE: [f64; 12] = [
    1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -462.0, 1980.0, -3465.0, 3080.0, -1386.0, 252.0,
];

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("middle polynomial must have degree <= 12 (got {0} coefficients)")]
    DegreeTooHigh(usize),
    #[error("filter is discontinuous at t={at}: middle piece evaluates to {got}, expected {expected}")]
    Discontinuous { at: f64, got: f64, expected: f64 },
    #[error("filter leaves [0,1] on (1,2): H({at}) = {got}")]
    OutOfRange { at: f64, got: f64 },
    #[error("smoothness report supports orders 1..=6 (got {0})")]
    OrderTooLarge(u32),
    #[error("finite-difference step must be positive and < 1/12 (got {0})")]
    BadStep(f64),
}

/// A compactly supported filter on `[0, ∞)`: 1 on `[0,1]`, a polynomial in
/// `s = t-1` on `(1,2)`, 0 on `[2, ∞)`.
#[derive(Clone, Debug)]
pub struct Filter {
    /// Declared smoothness class C^κ.
    kappa: u32,
    /// Coefficients of the middle piece in powers of `s = t-1`
    /// (constant term first).
    middle: Vec<f64>,
    /// The same piece re-expanded in powers of `u = 2-t`, used to evaluate
    /// near t=2 without cancellation.
    reflected: Vec<f64>,
}

impl Filter {
    /// The C⁵ filter shipped as the default.
    pub fn c5_default() -> Self {
        Self::with_middle_coefficients(5, C5_MIDDLE.to_vec())
            .expect("the default filter satisfies the construction checks")
    }

    /// Build a filter from custom middle-piece coefficients (powers of
    /// `s = t-1`). Construction verifies continuity at both joins and that
    /// the middle piece stays inside `[0,1]`, sampled at 1e-3 spacing.
    pub fn with_middle_coefficients(kappa: u32, middle: Vec<f64>) -> Result<Self, FilterError> {
        if middle.len() > 13 {
            return Err(FilterError::DegreeTooHigh(middle.len()));
        }
        let at_one = horner(&middle, 0.0);
        if (at_one - 1.0).abs() > 1e-12 {
            return Err(FilterError::Discontinuous {
                at: 1.0,
                got: at_one,
                expected: 1.0,
            });
        }
        let at_two = horner(&middle, 1.0);
        if at_two.abs() > 1e-12 {
            return Err(FilterError::Discontinuous {
                at: 2.0,
                got: at_two,
                expected: 0.0,
            });
        }
        for i in 1..1000 {
            let s = i as f64 * 1e-3;
            let v = horner(&middle, s);
            if !(-1e-12..=1.0 + 1e-12).contains(&v) {
                return Err(FilterError::OutOfRange { at: 1.0 + s, got: v });
            }
        }
        let reflected = reflect_coefficients(&middle);
        Ok(Self {
            kappa,
            middle,
            reflected,
        })
    }

    /// Declared smoothness order κ.
    pub fn smoothness_order(&self) -> u32 {
        self.kappa
    }

    /// Upper end of the support.
    pub fn support_upper(&self) -> f64 {
        2.0
    }

    /// Middle-piece coefficients in powers of `t-1`.
    pub fn middle_coefficients(&self) -> &[f64] {
        &self.middle
    }

    /// Evaluate `H(t)`. Negative arguments violate the contract and panic.
    pub fn eval(&self, t: f64) -> f64 {
        assert!(t >= 0.0, "filter argument must be nonnegative (got {t})");
        if t <= 1.0 {
            1.0
        } else if t >= 2.0 {
            0.0
        } else {
            horner(&self.middle, t - 1.0)
        }
    }

    /// One-sided derivative estimates at the joins t=1 and t=2 for orders
    /// `1..=max_order`, by centered finite differences with the given step.
    ///
    /// Each estimate applies a 13-node centered stencil (exact for the
    /// degree-≤12 pieces) to the active piece on that side, with the
    /// piece's boundary value subtracted first; near t=2 the middle piece
    /// is evaluated through its reflected expansion. Both steps remove the
    /// cancellation that otherwise swamps high-order differences.
    pub fn boundary_smoothness_report(
        &self,
        max_order: u32,
        step: f64,
    ) -> Result<Vec<SmoothnessRow>, FilterError> {
        if max_order == 0 || max_order > 6 {
            return Err(FilterError::OrderTooLarge(max_order));
        }
        if !(step > 0.0 && step < 1.0 / 12.0) {
            return Err(FilterError::BadStep(step));
        }
        let nodes: Vec<f64> = (-6..=6).map(|j| j as f64 * step).collect();
        // middle piece minus its left-limit value at t=1 (the plateau 1)
        let mut mid_minus_one = self.middle.clone();
        mid_minus_one[0] -= 1.0;

        let mut rows = Vec::with_capacity(max_order as usize);
        for order in 1..=max_order {
            let w = fd_weights(order as usize, 0.0, &nodes);
            // t=1: left piece is the constant 1, all derivatives vanish
            let left_at_one = 0.0;
            let right_at_one: f64 = nodes
                .iter()
                .zip(&w)
                .map(|(s, c)| c * horner(&mid_minus_one, *s))
                .sum();
            // t=2: right piece is the constant 0; left piece evaluated in
            // u = 2-t, so d^p/dt^p = (-1)^p d^p/du^p
            let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
            let left_at_two: f64 = sign
                * nodes
                    .iter()
                    .zip(&w)
                    .map(|(u, c)| c * horner(&self.reflected, *u))
                    .sum::<f64>();
            let right_at_two = 0.0;
            rows.push(SmoothnessRow {
                order,
                left_at_one,
                right_at_one,
                gap_at_one: (left_at_one - right_at_one).abs(),
                left_at_two,
                right_at_two,
                gap_at_two: (left_at_two - right_at_two).abs(),
            });
        }
        Ok(rows)
    }
}

/// One row of the smoothness report: derivative estimates from each side
/// of the two joins, and their gaps.
#[derive(Clone, Copy, Debug)]
pub struct SmoothnessRow {
    pub order: u32,
    pub left_at_one: f64,
    pub right_at_one: f64,
    pub gap_at_one: f64,
    pub left_at_two: f64,
    pub right_at_two: f64,
    pub gap_at_two: f64,
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

/// Re-expand `p(s)` as a polynomial in `u` where `s = 1 - u` (that is,
/// around the t=2 end of the middle piece). Binomial coefficients stay
/// well inside exact f64 integer range for degree ≤ 12.
fn reflect_coefficients(coeffs: &[f64]) -> Vec<f64> {
    let deg = coeffs.len();
    let mut out = vec![0.0; deg];
    for (j, &cj) in coeffs.iter().enumerate() {
        // (1-u)^j = sum_i C(j,i) (-1)^i u^i
        let mut binom = 1.0f64;
        for i in 0..=j {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            out[i] += cj * sign * binom;
            binom = binom * (j - i) as f64 / (i + 1) as f64;
        }
    }
    // the constant term is H(2) = 0 by the construction check; clamp the
    // residual so the reflected piece is exactly anchored at zero
    if out[0].abs() <= 1e-12 {
        out[0] = 0.0;
    }
    out
}
