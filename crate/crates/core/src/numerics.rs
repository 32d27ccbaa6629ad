//! Shared numeric helpers: reproducible summation, finite-difference
//! stencils, bit-stable float text formats, and seed derivation.

use num_complex::Complex64;

/// Sum `f(start), ..., f(start+len-1)` with a pairwise tree whose shape
/// depends only on `len`. The result is therefore independent of any
/// outer parallelism and more accurate than a running sum.
pub fn pairwise_sum_by<F: Fn(usize) -> f64>(start: usize, len: usize, f: &F) -> f64 {
    const LEAF: usize = 32;
    if len <= LEAF {
        let mut s = 0.0;
        for i in 0..len {
            s += f(start + i);
        }
        s
    } else {
        let half = len / 2;
        pairwise_sum_by(start, half, f) + pairwise_sum_by(start + half, len - half, f)
    }
}

/// Pairwise sum of a slice.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    pairwise_sum_by(0, xs.len(), &|i| xs[i])
}

/// Complex pairwise sum with the same tree shape as [`pairwise_sum_by`].
pub fn pairwise_sum_complex_by<F: Fn(usize) -> Complex64>(
    start: usize,
    len: usize,
    f: &F,
) -> Complex64 {
    const LEAF: usize = 32;
    if len <= LEAF {
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..len {
            s += f(start + i);
        }
        s
    } else {
        let half = len / 2;
        pairwise_sum_complex_by(start, half, f) + pairwise_sum_complex_by(start + half, len - half, f)
    }
}

/// Finite-difference weights for the `order`-th derivative at `x0` on the
/// given nodes (Fornberg's recursion). The weights are exact for
/// polynomials of degree `< nodes.len()`.
pub fn fd_weights(order: usize, x0: f64, nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    assert!(order < n, "need more nodes than the derivative order");
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// SplitMix64 step, used to derive independent sub-seeds from a master seed.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for a named sub-stream of `master` (trial seeds, shard
/// noise streams). Fixed scheme so experiment rows can be replayed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Text format for floats in serialized rules and estimators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FloatFormat {
    /// 17 significant decimal digits; round-trips every finite f64.
    Decimal17,
    /// C-style hexadecimal floats (`0x1.921fb54442d18p+1`); bit-exact.
    Hex,
}

/// Format a finite f64 in the requested text format.
pub fn format_f64(v: f64, fmt: FloatFormat) -> String {
    match fmt {
        FloatFormat::Decimal17 => format!("{:.16e}", v),
        FloatFormat::Hex => format_hex_f64(v),
    }
}

/// Parse either text format produced by [`format_f64`].
pub fn parse_f64(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.contains("0x") || t.contains("0X") {
        parse_hex_f64(t)
    } else {
        t.parse::<f64>().ok()
    }
}

fn format_hex_f64(v: f64) -> String {
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7FF) as i64;
    let mant = bits & 0x000F_FFFF_FFFF_FFFF;
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    if exp == 0 {
        // subnormal: 0.mant * 2^-1022
        return format!("{sign}0x0.{mant:013x}p-1022");
    }
    format!("{sign}0x1.{mant:013x}p{:+}", exp - 1023)
}

fn parse_hex_f64(s: &str) -> Option<f64> {
    let (neg, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let rest = rest.strip_prefix("0x").or_else(|| rest.strip_prefix("0X"))?;
    let p = rest.find(['p', 'P'])?;
    let (mant_str, exp_str) = (&rest[..p], &rest[p + 1..]);
    let exp: i64 = exp_str.parse().ok()?;
    let (int_str, frac_str) = match mant_str.find('.') {
        Some(d) => (&mant_str[..d], &mant_str[d + 1..]),
        None => (mant_str, ""),
    };
    let int_part = u64::from_str_radix(int_str, 16).ok()?;
    let mut frac: u64 = 0;
    let mut frac_bits = 0u32;
    for ch in frac_str.chars() {
        let d = ch.to_digit(16)? as u64;
        frac = frac.checked_shl(4)?.checked_add(d)?;
        frac_bits += 4;
    }
    // value = (int_part + frac / 2^frac_bits) * 2^exp
    let mut v = int_part as f64;
    if frac_bits > 0 {
        v += frac as f64 / (2f64).powi(frac_bits as i32);
    }
    let v = v * (2f64).powi(exp as i32);
    Some(if neg { -v } else { v })
}

/// Map `f` over `0..len`, in parallel when the `parallel` feature is on.
/// Each element is computed independently so the output does not depend on
/// the worker count.
#[cfg(feature = "parallel")]
pub fn par_map_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(len: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..len).into_par_iter().map(f).collect()
}

/// Serial fallback of [`par_map_indexed`].
#[cfg(not(feature = "parallel"))]
pub fn par_map_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(len: usize, f: F) -> Vec<T> {
    (0..len).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pairwise_matches_plain_sum() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let plain: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - plain).abs() < 1e-10);
    }

    #[test]
    fn fd_weights_second_derivative_of_square() {
        let h = 1e-3;
        let nodes: Vec<f64> = (-6..=6).map(|j| j as f64 * h).collect();
        let w = fd_weights(2, 0.0, &nodes);
        let d2: f64 = nodes.iter().zip(&w).map(|(x, c)| c * x * x).sum();
        assert!((d2 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn fd_weights_first_derivative_of_sin() {
        let h = 1e-3;
        let nodes: Vec<f64> = (-6..=6).map(|j| j as f64 * h).collect();
        let w = fd_weights(1, 0.0, &nodes);
        let d1: f64 = nodes.iter().zip(&w).map(|(x, c)| c * x.sin()).sum();
        assert!((d1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hex_format_known_value() {
        assert_eq!(format_hex_f64(std::f64::consts::PI), "0x1.921fb54442d18p+1");
        assert_eq!(parse_hex_f64("0x1.921fb54442d18p+1"), Some(std::f64::consts::PI));
        assert_eq!(format_hex_f64(0.0), "0x0p+0");
        assert_eq!(parse_hex_f64("0x0p+0"), Some(0.0));
    }

    #[test]
    fn derive_seed_is_stable() {
        assert_eq!(derive_seed(42, 0), derive_seed(42, 0));
        assert_ne!(derive_seed(42, 0), derive_seed(42, 1));
        assert_ne!(derive_seed(42, 0), derive_seed(43, 0));
    }

    proptest! {
        #[test]
        fn float_formats_round_trip(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let dec = parse_f64(&format_f64(v, FloatFormat::Decimal17)).unwrap();
            prop_assert_eq!(dec.to_bits(), v.to_bits());
            let hex = parse_f64(&format_f64(v, FloatFormat::Hex)).unwrap();
            prop_assert_eq!(hex.to_bits(), v.to_bits());
        }
    }
}
