//! Conjugate machinery for the two reliability models.
//!
//! Normal model: σ² ~ Inverse-Gamma(a, b), μ | σ² ~ Normal(m, σ²/ν), data
//! i.i.d. Normal(μ, σ²). Binomial model: p ~ Beta(α, β), data Bernoulli(p).
//! The quantity of interest for the Normal model is
//! φ = Φ((s_u − μ)/σ) − Φ((s_l − μ)/σ).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::numeric::{
    gamma_variate, ln_beta, ln_gamma, normal_cdf, normal_sf, reg_inc_beta, standard_normal,
    StudentT,
};

/// Normal–Inverse-Gamma hyperparameters (prior or posterior).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NigHyper {
    /// Prior mean of μ.
    pub m: f64,
    /// Pseudo-observations behind `m`.
    pub nu: f64,
    /// Shape: half the pseudo-observations behind σ².
    pub a: f64,
    /// Rate: half the prior sum of squares.
    pub b: f64,
}

impl NigHyper {
    pub fn new(m: f64, nu: f64, a: f64, b: f64) -> Result<Self> {
        Self { m, nu, a, b }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let finite = self.m.is_finite() && self.nu.is_finite() && self.a.is_finite() && self.b.is_finite();
        if finite && self.nu > 0.0 && self.a > 0.0 && self.b > 0.0 {
            Ok(self)
        } else {
            Err(invalid(format!(
                "NIG hyperparameters need nu, a, b > 0 (improper priors are not supported), got {self:?}"
            )))
        }
    }

    /// Posterior after observing data summarized by `stats`.
    pub fn update(&self, stats: &NormalSuffStats) -> Self {
        if stats.n == 0 {
            return *self;
        }
        let n = stats.n as f64;
        let nu_post = self.nu + n;
        let shrink = n * self.nu / nu_post;
        let dev = stats.mean - self.m;
        Self {
            m: (self.nu * self.m + n * stats.mean) / nu_post,
            nu: nu_post,
            a: self.a + 0.5 * n,
            b: self.b + 0.5 * stats.sum_sq_dev + 0.5 * shrink * dev * dev,
        }
    }

    /// One joint draw: σ² ~ IG(a, b), then μ | σ² ~ N(m, σ²/ν).
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamDraw {
        let sigma_sq = self.b / gamma_variate(rng, self.a);
        let mu = self.m + (sigma_sq / self.nu).sqrt() * standard_normal(rng);
        ParamDraw { mu, sigma_sq }
    }
}

pub fn nig_update(prior: &NigHyper, stats: &NormalSuffStats) -> NigHyper {
    prior.update(stats)
}

pub fn nig_sample_params<R: Rng + ?Sized>(hyper: &NigHyper, rng: &mut R, k: usize) -> Vec<ParamDraw> {
    (0..k).map(|_| hyper.draw(rng)).collect()
}

/// Closed-form single-observation posterior predictive:
/// t with 2a′ degrees of freedom, location m′ and scale² = b′(ν′+1)/(ν′a′).
pub fn nig_predictive_params(hyper: &NigHyper) -> StudentT {
    StudentT {
        df: 2.0 * hyper.a,
        location: hyper.m,
        scale: (hyper.b * (hyper.nu + 1.0) / (hyper.nu * hyper.a)).sqrt(),
    }
}

/// Running count, mean and sum of squared deviations (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalSuffStats {
    pub n: usize,
    pub mean: f64,
    pub sum_sq_dev: f64,
}

impl NormalSuffStats {
    pub fn from_slice(data: &[f64]) -> Self {
        let mut s = Self::default();
        for &x in data {
            s.push(x);
        }
        s
    }

    /// Build directly from a batch summary.
    pub fn from_parts(n: usize, mean: f64, sum_sq_dev: f64) -> Self {
        if n == 0 {
            return Self::default();
        }
        Self { n, mean, sum_sq_dev: sum_sq_dev.max(0.0) }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.sum_sq_dev += delta * (x - self.mean);
    }

    /// Pooled statistics of two disjoint batches.
    pub fn merge(&self, other: &Self) -> Self {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let (n1, n2) = (self.n as f64, other.n as f64);
        let n = n1 + n2;
        let delta = other.mean - self.mean;
        Self {
            n: self.n + other.n,
            mean: self.mean + delta * n2 / n,
            sum_sq_dev: self.sum_sq_dev + other.sum_sq_dev + delta * delta * n1 * n2 / n,
        }
    }

    /// Maximum-likelihood (n-denominator) variance.
    pub fn mle_variance(&self) -> f64 {
        self.sum_sq_dev / self.n as f64
    }
}

/// Specification window (s_l, s_u).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecLimits {
    pub lower: f64,
    pub upper: f64,
}

impl SpecLimits {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        Self { lower, upper }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.lower < self.upper && !self.lower.is_nan() && !self.upper.is_nan() {
            Ok(self)
        } else {
            Err(invalid(format!("spec limits need lower < upper, got ({}, {})", self.lower, self.upper)))
        }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDraw {
    pub mu: f64,
    pub sigma_sq: f64,
}

/// φ without argument checks; picks the tail that avoids cancellation.
#[inline]
pub fn phi_normal_unchecked(mu: f64, sigma: f64, limits: &SpecLimits) -> f64 {
    let zl = (limits.lower - mu) / sigma;
    let zu = (limits.upper - mu) / sigma;
    if zl > 0.0 {
        normal_sf(zl) - normal_sf(zu)
    } else {
        normal_cdf(zu) - normal_cdf(zl)
    }
}

/// Probability that a Normal(μ, σ²) response lands inside the limits.
pub fn phi_normal(mu: f64, sigma: f64, limits: &SpecLimits) -> Result<f64> {
    if !(sigma > 0.0) || !mu.is_finite() {
        return Err(domain(format!("phi needs sigma > 0 and finite mu, got mu={mu}, sigma={sigma}")));
    }
    Ok(phi_normal_unchecked(mu, sigma, limits))
}

/// A Monte Carlo estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// P(φ > φ₀ | data) by drawing `k` parameter pairs from the NIG posterior.
pub fn posterior_phi_tail_mc<R: Rng + ?Sized>(
    hyper: &NigHyper,
    limits: &SpecLimits,
    phi0: f64,
    rng: &mut R,
    k: usize,
) -> Result<TailEstimate> {
    if k == 0 {
        return Err(invalid("posterior draw count must be at least 1"));
    }
    let hits = count_phi_exceedances(hyper, limits, phi0, rng, k);
    let p = hits as f64 / k as f64;
    Ok(TailEstimate {
        value: p,
        std_error: (p * (1.0 - p) / k as f64).sqrt(),
    })
}

#[inline]
pub(crate) fn count_phi_exceedances<R: Rng + ?Sized>(
    hyper: &NigHyper,
    limits: &SpecLimits,
    phi0: f64,
    rng: &mut R,
    k: usize,
) -> usize {
    (0..k)
        .filter(|_| {
            let d = hyper.draw(rng);
            phi_normal_unchecked(d.mu, d.sigma_sq.sqrt(), limits) > phi0
        })
        .count()
}

/// Beta hyperparameters. Beta(0, 0) is accepted as a prior; tail and
/// predictive computations require a proper (both positive) posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaHyper {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaHyper {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        Self { alpha, beta }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite() {
            Ok(self)
        } else {
            Err(invalid(format!("Beta hyperparameters must be >= 0, got {self:?}")))
        }
    }

    pub fn is_proper(&self) -> bool {
        self.alpha > 0.0 && self.beta > 0.0
    }

    pub fn require_proper(&self) -> Result<()> {
        if self.is_proper() {
            Ok(())
        } else {
            Err(Error::ImproperPosterior {
                alpha: self.alpha,
                beta: self.beta,
            })
        }
    }

    pub fn update(&self, successes: u64, failures: u64) -> Self {
        Self {
            alpha: self.alpha + successes as f64,
            beta: self.beta + failures as f64,
        }
    }
}

pub fn beta_update(prior: &BetaHyper, successes: u64, failures: u64) -> BetaHyper {
    prior.update(successes, failures)
}

/// P(p > φ₀) under Beta(α, β).
pub fn beta_tail(hyper: &BetaHyper, phi0: f64) -> Result<f64> {
    hyper.require_proper()?;
    if !(0.0..=1.0).contains(&phi0) {
        return Err(domain(format!("threshold must be in [0, 1], got {phi0}")));
    }
    // 1 - I_x(a, b) = I_{1-x}(b, a)
    reg_inc_beta(1.0 - phi0, hyper.beta, hyper.alpha)
}

/// Predictive probability of `y` successes in `n_u` further trials.
pub fn beta_binomial_pmf(hyper: &BetaHyper, n_u: u64, y: u64) -> Result<f64> {
    hyper.require_proper()?;
    if y > n_u {
        return Err(domain(format!("y = {y} exceeds n_u = {n_u}")));
    }
    if n_u == 0 {
        return Ok(1.0);
    }
    let (n, k) = (n_u as f64, y as f64);
    let ln_choose = ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0);
    Ok((ln_choose + ln_beta(hyper.alpha + k, hyper.beta + n - k) - ln_beta(hyper.alpha, hyper.beta)).exp())
}

/// Maximum-likelihood estimates for i.i.d. Normal data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalMle {
    pub mean: f64,
    /// n-denominator variance.
    pub variance: f64,
}

impl NormalMle {
    pub fn from_stats(stats: &NormalSuffStats) -> Result<Self> {
        if stats.n < 2 {
            return Err(Error::MleUndefined(format!("need at least 2 observations, got {}", stats.n)));
        }
        let variance = stats.mle_variance();
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::MleUndefined("sample variance is zero".into()));
        }
        Ok(Self { mean: stats.mean, variance })
    }

    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }
}

pub fn mle_normal(data: &[f64]) -> Result<NormalMle> {
    NormalMle::from_stats(&NormalSuffStats::from_slice(data))
}
