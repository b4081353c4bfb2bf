// SPDX-License-Identifier: MIT OR Apache-2.0

//! Special functions used by the conjugate families.
//!
//! Digamma and trigamma use upward recurrence until the argument is at
//! least 10, followed by the Bernoulli-number asymptotic series. Both are
//! only defined here for positive arguments, which is all the Beta and
//! Gamma families need.

pub use statrs::function::gamma::ln_gamma;

const RECURRENCE_THRESHOLD: f64 = 10.0;

/// `B_{2k}` for k = 1..=8.
const BERNOULLI_EVEN: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

/// ψ(x) = d/dx ln Γ(x) for x > 0. Returns NaN otherwise.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return if x == f64::INFINITY { f64::INFINITY } else { f64::NAN };
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < RECURRENCE_THRESHOLD {
        acc -= 1.0 / z;
        z += 1.0;
    }
    // ln z - 1/(2z) - sum_k B_{2k} / (2k z^{2k})
    let inv2 = 1.0 / (z * z);
    let mut pow = inv2;
    let mut series = 0.0;
    for (k, b) in BERNOULLI_EVEN.iter().enumerate() {
        series += b / (2.0 * (k + 1) as f64) * pow;
        pow *= inv2;
    }
    acc + z.ln() - 0.5 / z - series
}

/// ψ'(x) for x > 0. Returns NaN otherwise.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return if x == f64::INFINITY { 0.0 } else { f64::NAN };
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < RECURRENCE_THRESHOLD {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    // 1/z + 1/(2z^2) + sum_k B_{2k} / z^{2k+1}
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut pow = inv2 * inv;
    let mut series = 0.0;
    for b in BERNOULLI_EVEN.iter() {
        series += b * pow;
        pow *= inv2;
    }
    acc + inv + 0.5 * inv2 + series
}

/// ln B(a, b).
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// 1 / (1 + e^{-x}).
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln Σ e^{x_i}. Returns -inf for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn digamma_known_values() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-14);
        assert!((digamma(0.5) + EULER_GAMMA + 2.0 * 2f64.ln()).abs() < 1e-14);
        // ψ(n+1) = H_n - γ
        let h10: f64 = (1..=10).map(|k| 1.0 / k as f64).sum();
        assert!((digamma(11.0) - (h10 - EULER_GAMMA)).abs() < 1e-14);
        assert!(digamma(0.0).is_nan());
        assert!(digamma(-1.5).is_nan());
    }

    #[test]
    fn trigamma_known_values() {
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-13);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-13);
        // recurrence ψ'(x) = ψ'(x+1) + 1/x²
        for &x in &[0.1, 0.7, 3.3, 5.99, 6.0, 17.5] {
            let lhs = trigamma(x);
            let rhs = trigamma(x + 1.0) + 1.0 / (x * x);
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0), "x={x}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences_of_ln_gamma() {
        for &x in &[0.05f64, 0.3, 1.0, 2.5, 5.9, 6.1, 12.0, 150.0, 4000.0] {
            let h = 1e-5 * x.max(1.0);
            let fd1 = (ln_gamma(x + h) - ln_gamma(x - h)) / (2.0 * h);
            assert!((digamma(x) - fd1).abs() < 1e-6 * fd1.abs().max(1.0), "digamma x={x}");
            let fd2 = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((trigamma(x) - fd2).abs() < 1e-6 * fd2.abs().max(1.0), "trigamma x={x}");
        }
    }

    #[test]
    fn stable_log_helpers() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((logistic(0.0) - 0.5).abs() < 1e-15);
        assert!(logistic(-800.0) > 0.0 || logistic(-800.0) == 0.0);
        let xs = [1000.0, 1000.0];
        assert!((logsumexp(&xs) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }
}
