//! Special-function kernels for the envelope statistics of a Rician
//! residual: modified Bessel functions `I0`/`I1` (plain and exponentially
//! scaled), the Laguerre function of order 1/2 at negative arguments, and
//! the limit function `Q` that controls the variance objective's value at
//! the true channel.

use crate::{Error, Result};

/// Argument below which the power series is used; above it, the scaled
/// asymptotic expansion.  Both branches agree to ~1e-13 here.
const SERIES_CUTOFF: f64 = 15.0;

/// `e^{-x} I0(x)` and `e^{-x} I1(x)` evaluated together at one argument.
///
/// Scaled values stay bounded for any finite argument: `i0_scaled` lies in
/// (0, 1] and `i1_scaled` in [0, i0_scaled).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledBesselPair {
    pub i0_scaled: f64,
    pub i1_scaled: f64,
    pub argument: f64,
}

/// Modified Bessel function of the first kind, orders 0 and 1 only.
///
/// With `scaled = true` returns `e^{-x} I_order(x)`, which never overflows;
/// the unscaled value overflows past x ~ 709.
pub fn bessel_i(order: u32, x: f64, scaled: bool) -> Result<f64> {
    if order > 1 {
        return Err(Error::UnsupportedOrder(order));
    }
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!(
            "bessel_i requires a non-negative argument, got {x}"
        )));
    }
    if x <= SERIES_CUTOFF {
        let value = if order == 0 { i0_series(x) } else { i1_series(x) };
        Ok(if scaled { value * (-x).exp() } else { value })
    } else {
        let value = asymptotic_scaled(order, x);
        Ok(if scaled { value } else { value * x.exp() })
    }
}

/// Both scaled Bessel values at once; the pair shares domain checks and is
/// the building block for [`laguerre_half_neg`].
pub fn scaled_bessel_pair(x: f64) -> Result<ScaledBesselPair> {
    Ok(ScaledBesselPair {
        i0_scaled: bessel_i(0, x, true)?,
        i1_scaled: bessel_i(1, x, true)?,
        argument: x,
    })
}

fn i0_series(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0u32;
    loop {
        k += 1;
        term *= q / ((k as f64) * (k as f64));
        sum += term;
        if term < sum * f64::EPSILON {
            return sum;
        }
    }
}

fn i1_series(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = x / 2.0;
    let mut sum = term;
    let mut k = 0u32;
    loop {
        k += 1;
        term *= q / ((k as f64) * ((k + 1) as f64));
        sum += term;
        if term < sum * f64::EPSILON || sum == 0.0 {
            return sum;
        }
    }
}

/// Large-argument expansion of `e^{-x} I_order(x)` in powers of 1/(8x),
/// truncated as soon as the terms stop shrinking (the series is
/// asymptotic, not convergent).
fn asymptotic_scaled(order: u32, x: f64) -> f64 {
    let mu = (4 * order * order) as f64;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    for m in 1..=30u32 {
        let odd = (2 * m - 1) as f64;
        let next = -term * (mu - odd * odd) / (m as f64 * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < sum.abs() * f64::EPSILON {
            break;
        }
    }
    sum / (2.0 * std::f64::consts::PI * x).sqrt()
}

/// Laguerre function of order 1/2 at `-x` (x >= 0):
/// `e^{-x/2} [(1 + x) I0(x/2) + x I1(x/2)]`, computed entirely in scaled
/// Bessel space so it is overflow-free.  This is the mean envelope of a
/// Rician variable, up to the `sqrt(pi s / 4)` scale factor.
pub fn laguerre_half_neg(x: f64) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!(
            "laguerre_half_neg requires a non-negative argument, got {x}"
        )));
    }
    let pair = scaled_bessel_pair(x / 2.0)?;
    Ok((1.0 + x) * pair.i0_scaled + x * pair.i1_scaled)
}

/// `Q(x) = (pi/4) L^2(x) - x` where `L = laguerre_half_neg`.
///
/// Strictly decreasing from `pi/4` at 0 toward its limit 1/2 as
/// `x -> infinity` (approaching like `1/(8x)`), and strictly positive
/// everywhere.  Its positivity is what keeps the true channel from being a
/// stationary point of the ML limit function.
pub fn q_function(x: f64) -> Result<f64> {
    let l = laguerre_half_neg(x)?;
    Ok(std::f64::consts::FRAC_PI_4 * l * l - x)
}

#[cfg(test)]
// Reference constants are frozen at full 17-digit precision on purpose.
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bessel_matches_reference_values() {
        // Reference values from a 30-digit arbitrary-precision evaluation.
        let cases = [
            (0u32, 1.0, 1.2660658777520083),
            (1, 1.0, 0.56515910399248503),
            (0, 20.0, 0.089780311884826022 * 20f64.exp()),
            (1, 20.0, 0.087506222183288665 * 20f64.exp()),
        ];
        for (order, x, want) in cases {
            let got = bessel_i(order, x, false).unwrap();
            assert!(
                ((got - want) / want).abs() < 1e-13,
                "I{order}({x}) = {got}, want {want}"
            );
        }
        assert_eq!(bessel_i(0, 0.0, false).unwrap(), 1.0);
        assert_eq!(bessel_i(1, 0.0, false).unwrap(), 0.0);
    }

    #[test]
    fn scaled_and_unscaled_agree_below_overflow() {
        let mut x = 1e-3;
        while x < 700.0 {
            for order in [0u32, 1] {
                let scaled = bessel_i(order, x, true).unwrap();
                let unscaled = bessel_i(order, x, false).unwrap();
                let recon = scaled * x.exp();
                assert!(
                    ((recon - unscaled) / unscaled).abs() < 1e-12,
                    "order {order}, x = {x}: {recon} vs {unscaled}"
                );
            }
            x *= 1.7;
        }
    }

    #[test]
    fn scaled_form_survives_huge_arguments() {
        for x in [1e3, 1e5, 1e8] {
            let pair = scaled_bessel_pair(x).unwrap();
            // e^{-x} I(x) ~ 1/sqrt(2 pi x)
            let level = 1.0 / (2.0 * std::f64::consts::PI * x).sqrt();
            assert!((pair.i0_scaled / level - 1.0).abs() < 1e-3);
            assert!(pair.i0_scaled.is_finite() && pair.i1_scaled.is_finite());
        }
    }

    #[test]
    fn series_and_asymptotic_branches_agree_at_crossover() {
        for order in [0u32, 1] {
            let below = bessel_i(order, SERIES_CUTOFF, true).unwrap();
            let above = bessel_i(order, SERIES_CUTOFF + 1e-9, true).unwrap();
            assert!(
                ((below - above) / below).abs() < 1e-10,
                "order {order}: {below} vs {above}"
            );
        }
    }

    #[test]
    fn bessel_rejects_bad_inputs() {
        assert!(matches!(
            bessel_i(2, 1.0, false),
            Err(Error::UnsupportedOrder(2))
        ));
        assert!(matches!(bessel_i(0, -0.5, false), Err(Error::Domain(_))));
        assert!(matches!(bessel_i(0, f64::NAN, true), Err(Error::Domain(_))));
        assert!(matches!(laguerre_half_neg(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn laguerre_matches_reference_values() {
        assert_eq!(laguerre_half_neg(0.0).unwrap(), 1.0);
        let cases = [(1.0, 1.4464913440831718), (5.0, 2.6532018973295492)];
        for (x, want) in cases {
            let got = laguerre_half_neg(x).unwrap();
            assert!(
                ((got - want) / want).abs() < 1e-13,
                "L({x}) = {got}, want {want}"
            );
        }
        // Large-x growth: L(x) ~ sqrt(4 (x + 1/2) / pi) wait-free of overflow.
        let x = 1e4;
        let want = (4.0 * x / std::f64::consts::PI).sqrt();
        let got = laguerre_half_neg(x).unwrap();
        assert!((got / want - 1.0).abs() < 1e-3);
    }

    #[test]
    fn q_endpoints_and_monotonicity() {
        assert_eq!(q_function(0.0).unwrap(), std::f64::consts::FRAC_PI_4);
        let q1 = q_function(1.0).unwrap();
        assert!((q1 - 0.64331780076996657).abs() < 1e-13);
        let q100 = q_function(100.0).unwrap();
        assert!((q100 - 0.5).abs() < 0.01);
        // Tail behaves like 1/2 + 1/(8x).
        let x = 1e4;
        let tail = q_function(x).unwrap() - 0.5;
        assert!((tail * 8.0 * x - 1.0).abs() < 0.01, "tail {tail}");

        let mut prev = f64::INFINITY;
        let mut x = 1e-6;
        while x <= 1e6 {
            let q = q_function(x).unwrap();
            assert!(q > 0.5, "Q({x}) = {q} not above its limit");
            assert!(q < prev, "Q not strictly decreasing at {x}");
            prev = q;
            x *= 1.3;
        }
    }

    #[test]
    fn squared_laguerre_split_matches_quarter_expansions() {
        // At large x the three pieces of (pi/4) L^2(x) approach
        // x/4 + 5/8, x/2 + 1/4 and x/4 - 3/8; their sum minus x gives the
        // 1/2 limit of Q.
        let x = 1000.0;
        let pair = scaled_bessel_pair(x / 2.0).unwrap();
        let c = std::f64::consts::FRAC_PI_4;
        let t00 = c * (1.0 + x).powi(2) * pair.i0_scaled * pair.i0_scaled;
        let t01 = c * 2.0 * x * (1.0 + x) * pair.i0_scaled * pair.i1_scaled;
        let t11 = c * x * x * pair.i1_scaled * pair.i1_scaled;
        assert!((t00 / (x / 4.0 + 0.625) - 1.0).abs() < 0.01, "{t00}");
        assert!((t01 / (x / 2.0 + 0.25) - 1.0).abs() < 0.01, "{t01}");
        assert!((t11 / (x / 4.0 - 0.375) - 1.0).abs() < 0.01, "{t11}");
    }

    proptest! {
        #[test]
        fn scaled_pair_invariants(x in 0.0..1e6f64) {
            let pair = scaled_bessel_pair(x).unwrap();
            prop_assert!(pair.i0_scaled > 0.0 && pair.i0_scaled <= 1.0);
            prop_assert!(pair.i1_scaled >= 0.0);
            prop_assert!(pair.i1_scaled < pair.i0_scaled);
            if x == 0.0 {
                prop_assert_eq!(pair.i0_scaled, 1.0);
            }
        }

        #[test]
        fn laguerre_dominates_one(x in 0.0..1e6f64) {
            // The mean envelope never drops below the pure-noise level.
            prop_assert!(laguerre_half_neg(x).unwrap() >= 1.0);
        }

        #[test]
        fn q_stays_in_band(x in 1e-12..1e6f64) {
            let q = q_function(x).unwrap();
            prop_assert!(q > 0.5);
            prop_assert!(q < std::f64::consts::FRAC_PI_4);
        }
    }
}
