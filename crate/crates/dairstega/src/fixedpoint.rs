//! Deterministic integer math for the embed/extract path.
//!
//! The codec never touches floating point: probabilities are 10^-9 grid units
//! and the transcendental allocation shapes are evaluated here in fixed point,
//! so the embedder and extractor agree bit-for-bit on every platform.

use crate::provider::GRID;

/// Internal scale for series evaluation: 10^-18.
const SCALE: u128 = 1_000_000_000_000_000_000;
/// ln 2 in 10^-9 units.
const LN2_UNITS: u128 = 693_147_181;

/// Floor of the square root.
pub fn isqrt(x: u128) -> u64 {
    if x == 0 {
        return 0;
    }
    let mut guess = (x as f64).sqrt() as u128;
    // float seed, integer Newton polish; converges in a couple of steps
    for _ in 0..8 {
        let next = (guess + x / guess) / 2;
        if next >= guess {
            break;
        }
        guess = next;
    }
    while guess * guess > x {
        guess -= 1;
    }
    while (guess + 1) * (guess + 1) <= x {
        guess += 1;
    }
    guess as u64
}

/// e^(-x) in 10^-9 units, x given in 10^-9 units (x >= 0).
///
/// Range-reduces by halving until x <= 1/2, evaluates the alternating Taylor
/// series at 10^-18 scale, then squares back up.
pub fn exp_neg_units(x_units: u64) -> u64 {
    let mut x = x_units as u128;
    let mut halvings = 0u32;
    while x > GRID as u128 / 2 {
        x = x / 2 + (x & 1);
        halvings += 1;
    }
    let x_s = x * (SCALE / GRID as u128);
    let mut sum = SCALE as i128;
    let mut term = SCALE as i128;
    for n in 1..=24u128 {
        term = -(term * x_s as i128) / (SCALE as i128 * n as i128);
        sum += term;
        if term == 0 {
            break;
        }
    }
    let mut y = sum.max(0) as u128;
    for _ in 0..halvings {
        y = y * y / SCALE;
    }
    (y / (SCALE / GRID as u128)) as u64
}

/// log2(p) in 10^-9 units for p in (0, 1] given in 10^-9 units. Result <= 0.
///
/// Classic shift-and-square binary logarithm, 40 fractional bits.
pub fn log2_units(p_units: u64) -> i64 {
    assert!(p_units > 0 && p_units <= GRID);
    let mut m = p_units as u128 * (SCALE / GRID as u128);
    let mut exp = 0i64;
    while m < SCALE {
        m *= 2;
        exp += 1;
    }
    // m in [SCALE, 2*SCALE); extract fractional bits of log2(m/SCALE)
    let mut frac_units = 0i64;
    let mut weight = GRID as i64 / 2;
    for _ in 0..40 {
        if weight == 0 {
            break;
        }
        m = m * m / SCALE;
        if m >= 2 * SCALE {
            m /= 2;
            frac_units += weight;
        }
        weight /= 2;
    }
    -exp * GRID as i64 + frac_units
}

/// p^beta in 10^-9 units, for p in (0, 1] units and beta in milli-units (0, 1000].
pub fn pow_frac_units(p_units: u64, beta_milli: u32) -> u64 {
    if p_units == 0 {
        return 0;
    }
    if p_units == GRID {
        return GRID;
    }
    if beta_milli == 1000 {
        return p_units;
    }
    let neg_log2 = (-log2_units(p_units)) as u128;
    let neg_ln = neg_log2 * LN2_UNITS / GRID as u128;
    let x = neg_ln * beta_milli as u128 / 1000;
    exp_neg_units(x.min(u64::MAX as u128) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isqrt_exact_squares() {
        for v in [0u128, 1, 4, 9, 144, 1 << 40] {
            assert_eq!(isqrt(v) as u128 * isqrt(v) as u128, v);
        }
        assert_eq!(isqrt(2), 1);
        assert_eq!(isqrt(999), 31);
    }

    #[test]
    fn exp_neg_matches_f64() {
        for x in [0u64, 1, 500_000_000, 1_000_000_000, 2_000_000_000, 10_000_000_000, 20_000_000_000] {
            let got = exp_neg_units(x) as f64 / GRID as f64;
            let want = (-(x as f64) / GRID as f64).exp();
            assert!((got - want).abs() < 1e-6, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn log2_matches_f64() {
        for p in [1u64, 1000, 500_000_000, 250_000_000, 999_999_999, GRID] {
            let got = log2_units(p) as f64 / GRID as f64;
            let want = (p as f64 / GRID as f64).log2();
            assert!((got - want).abs() < 1e-6, "p={p}: {got} vs {want}");
        }
    }

    #[test]
    fn pow_matches_f64() {
        for (p, b) in [(500_000_000u64, 500u32), (250_000_000, 300), (900_000_000, 700), (1_000, 500)] {
            let got = pow_frac_units(p, b) as f64 / GRID as f64;
            let want = (p as f64 / GRID as f64).powf(b as f64 / 1000.0);
            assert!((got - want).abs() < 1e-5, "p={p} b={b}: {got} vs {want}");
        }
    }

    #[test]
    fn pow_beta_one_is_identity() {
        assert_eq!(pow_frac_units(123_456_789, 1000), 123_456_789);
    }
}
