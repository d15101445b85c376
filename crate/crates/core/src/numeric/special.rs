//! Special functions: normal CDF/quantile and the regularized incomplete
//! gamma and beta functions.
//!
//! The heavy lifting is delegated to `statrs` (Boost-derived rational
//! approximations for `erfc`, continued fractions for the incomplete
//! functions). The wrappers here fix the argument order used throughout the
//! crate and enforce the domain.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use statrs::function::{beta, erf, gamma};

use crate::error::{domain, Result};

/// Standard normal CDF Φ(x).
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal upper tail 1 − Φ(x), without cancellation for large x.
#[inline]
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erf::erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile Φ⁻¹(p) for p in the open unit interval.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(format!("normal quantile needs 0 < p < 1, got {p}")));
    }
    let mut x = -SQRT_2 * erf::erfc_inv(2.0 * p);
    // One Newton polish against our own CDF keeps quantile∘cdf tight.
    let dens = normal_pdf(x);
    if dens > 1e-300 {
        let err = if p < 0.5 {
            normal_cdf(x) - p
        } else {
            (1.0 - p) - normal_sf(x)
        };
        x -= err / dens;
    }
    Ok(x)
}

/// Natural log of the gamma function.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

/// Natural log of the beta function B(a, b).
#[inline]
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta I_x(a, b).
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(domain(format!("incomplete beta needs 0 <= x <= 1, got {x}")));
    }
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(domain(format!("incomplete beta needs a, b > 0, got ({a}, {b})")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    Ok(beta::beta_reg(a, b, x).clamp(0.0, 1.0))
}

/// Regularized lower incomplete gamma P(a, x).
pub fn reg_inc_gamma(x: f64, a: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(domain(format!("incomplete gamma needs x >= 0, got {x}")));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(domain(format!("incomplete gamma needs a > 0, got {a}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(gamma::gamma_lr(a, x).clamp(0.0, 1.0))
}

/// Upper tail P(X ≥ k) of a Binomial(n, p) count.
pub fn binomial_upper_tail(n: u64, p: f64, k: i64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("binomial p must be in [0, 1], got {p}")));
    }
    if k <= 0 {
        return Ok(1.0);
    }
    let k = k as u64;
    if k > n {
        return Ok(0.0);
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    // P(X >= k) = I_p(k, n - k + 1)
    reg_inc_beta(p, k as f64, (n - k + 1) as f64)
}

/// Binomial probability mass, computed in log space.
pub fn binomial_pmf(n: u64, p: f64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let (n_f, k_f) = (n as f64, k as f64);
    let ln_choose = ln_gamma(n_f + 1.0) - ln_gamma(k_f + 1.0) - ln_gamma(n_f - k_f + 1.0);
    (ln_choose + k_f * p.ln() + (n_f - k_f) * (-p).ln_1p()).exp()
}
