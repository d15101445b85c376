//! Predictive probability: the chance that finishing the experiment ends
//! with P(φ > φ₀ | all data) > θ_T.
//!
//! Normal model: nested Monte Carlo. Each outer realization draws (μ, σ²)
//! from the current posterior and then the n_u future observations from
//! Normal(μ, σ²), which keeps the batch exchangeable. Only the batch's
//! sufficient statistics matter, so they are drawn directly:
//! Ȳ ~ N(μ, σ²/n_u) and Σ(Y − Ȳ)² ~ σ²·χ²(n_u − 1).
//! The inner tail is estimated by posterior draws or by deterministic
//! quadrature (see [`crate::tail`]).
//!
//! Binomial model: exact enumeration over the Beta-Binomial predictive.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::{
    beta_binomial_pmf, beta_tail, count_phi_exceedances, BetaHyper, NigHyper, NormalSuffStats, SpecLimits,
};
use crate::error::{invalid, Result};
use crate::numeric::{beta_variate, chi_square_variate, normal_cdf, standard_normal, RandomStream};
use crate::tail::QuadratureTail;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMethod {
    /// Fraction of `n_posterior_draws` parameter draws with φ > φ₀.
    #[default]
    MonteCarlo,
    /// One-dimensional Gauss–Legendre integral; no inner sampling noise.
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpConfig {
    pub n_predictive_draws: usize,
    pub n_posterior_draws: usize,
    pub theta_t: f64,
    pub tail_method: TailMethod,
}

impl Default for PpConfig {
    fn default() -> Self {
        Self {
            n_predictive_draws: 1000,
            n_posterior_draws: 2000,
            theta_t: 0.95,
            tail_method: TailMethod::MonteCarlo,
        }
    }
}

impl PpConfig {
    pub fn validated(self) -> Result<Self> {
        if self.n_predictive_draws == 0 || self.n_posterior_draws == 0 {
            return Err(invalid("predictive and posterior draw counts must be at least 1"));
        }
        if !(self.theta_t > 0.0 && self.theta_t < 1.0) {
            return Err(invalid(format!("theta_T must lie in (0, 1), got {}", self.theta_t)));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpResult {
    pub value: f64,
    pub mc_std_error: f64,
    pub n_o: usize,
    pub n_u: usize,
}

impl PpResult {
    fn from_hits(hits: usize, draws: usize, n_o: usize, n_u: usize) -> Self {
        let p = hits as f64 / draws as f64;
        Self {
            value: p,
            mc_std_error: (p * (1.0 - p) / draws as f64).sqrt(),
            n_o,
            n_u,
        }
    }

    fn exact(value: f64, n_o: usize, n_u: usize) -> Self {
        Self {
            value,
            mc_std_error: 0.0,
            n_o,
            n_u,
        }
    }
}

/// PP evaluator for one (spec limits, φ₀, config) triple.
#[derive(Debug, Clone)]
pub struct NormalPpEngine {
    limits: SpecLimits,
    phi0: f64,
    config: PpConfig,
    quadrature: Option<QuadratureTail>,
}

impl NormalPpEngine {
    pub fn new(limits: SpecLimits, phi0: f64, config: PpConfig) -> Result<Self> {
        let limits = limits.validated()?;
        let config = config.validated()?;
        if !(0.0..=1.0).contains(&phi0) {
            return Err(invalid(format!("phi0 must lie in [0, 1], got {phi0}")));
        }
        let quadrature = match config.tail_method {
            TailMethod::Quadrature => Some(QuadratureTail::new(&limits, phi0)?),
            TailMethod::MonteCarlo => None,
        };
        Ok(Self {
            limits,
            phi0,
            config,
            quadrature,
        })
    }

    pub fn config(&self) -> &PpConfig {
        &self.config
    }

    pub fn limits(&self) -> &SpecLimits {
        &self.limits
    }

    pub fn phi0(&self) -> f64 {
        self.phi0
    }

    /// P(φ > φ₀ | posterior) by the configured method.
    pub fn posterior_tail<R: Rng + ?Sized>(&self, h: &NigHyper, rng: &mut R) -> f64 {
        match &self.quadrature {
            Some(q) => q.tail(h),
            None => {
                let k = self.config.n_posterior_draws;
                count_phi_exceedances(h, &self.limits, self.phi0, rng, k) as f64 / k as f64
            }
        }
    }

    pub fn evaluate(&self, posterior: &NigHyper, n_o: usize, n_u: usize, stream: &RandomStream) -> Result<PpResult> {
        let posterior = posterior.validated()?;
        Ok(self.evaluate_with_rng(&posterior, n_o, n_u, &mut stream.rng()))
    }

    pub fn evaluate_with_rng<R: Rng + ?Sized>(
        &self,
        posterior: &NigHyper,
        n_o: usize,
        n_u: usize,
        rng: &mut R,
    ) -> PpResult {
        let theta_t = self.config.theta_t;
        if n_u == 0 {
            let met = self.posterior_tail(posterior, rng) > theta_t;
            return PpResult::exact(if met { 1.0 } else { 0.0 }, n_o, 0);
        }
        let draws = self.config.n_predictive_draws;
        let nu = n_u as f64;
        let mut hits = 0;
        for _ in 0..draws {
            let theta = posterior.draw(rng);
            let ybar = theta.mu + (theta.sigma_sq / nu).sqrt() * standard_normal(rng);
            let ssd = if n_u > 1 {
                theta.sigma_sq * chi_square_variate(rng, nu - 1.0)
            } else {
                0.0
            };
            let completed = posterior.update(&NormalSuffStats::from_parts(n_u, ybar, ssd));
            if self.posterior_tail(&completed, rng) > theta_t {
                hits += 1;
            }
        }
        PpResult::from_hits(hits, draws, n_o, n_u)
    }
}

pub fn pp_normal(
    posterior: &NigHyper,
    limits: &SpecLimits,
    phi0: f64,
    n_o: usize,
    n_u: usize,
    config: PpConfig,
    stream: &RandomStream,
) -> Result<PpResult> {
    NormalPpEngine::new(*limits, phi0, config)?.evaluate(posterior, n_o, n_u, stream)
}

fn check_theta(theta_t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&theta_t) {
        Ok(())
    } else {
        Err(invalid(format!("theta_T must lie in [0, 1], got {theta_t}")))
    }
}

/// Exact PP for the Beta-Binomial model.
pub fn pp_binomial_exact(posterior: &BetaHyper, phi0: f64, theta_t: f64, n_o: usize, n_u: usize) -> Result<PpResult> {
    posterior.require_proper()?;
    check_theta(theta_t)?;
    let mut value = 0.0;
    for y in 0..=n_u as u64 {
        let completed = posterior.update(y, n_u as u64 - y);
        if beta_tail(&completed, phi0)? > theta_t {
            value += beta_binomial_pmf(posterior, n_u as u64, y)?;
        }
    }
    Ok(PpResult::exact(value.clamp(0.0, 1.0), n_o, n_u))
}

/// Simulation counterpart of [`pp_binomial_exact`]: draw p from the
/// posterior, then the future successes, and apply the same criterion.
pub fn pp_binomial_mc(
    posterior: &BetaHyper,
    phi0: f64,
    theta_t: f64,
    n_o: usize,
    n_u: usize,
    draws: usize,
    stream: &RandomStream,
) -> Result<PpResult> {
    posterior.require_proper()?;
    check_theta(theta_t)?;
    if draws == 0 {
        return Err(invalid("draw count must be at least 1"));
    }
    let mut rng = stream.rng();
    let mut hits = 0;
    for _ in 0..draws {
        let p = beta_variate(&mut rng, posterior.alpha, posterior.beta);
        let y = (0..n_u).filter(|_| rng.random::<f64>() < p).count() as u64;
        if beta_tail(&posterior.update(y, n_u as u64 - y), phi0)? > theta_t {
            hits += 1;
        }
    }
    Ok(PpResult::from_hits(hits, draws, n_o, n_u))
}

/// Realizations used by [`pp_mean_threshold_demo`].
pub const DEMO_REALIZATIONS: usize = 100_000;

/// Mean-above-zero illustration. Observed: n_o values with mean `mean` and
/// (n-denominator) standard deviation `sd`. The remaining n_total − n_o values
/// are simulated from Normal(mean, sd²); the completed data meet the goal
/// when Φ(z̄·√n / s) > θ_T, with z̄ and s recomputed from all n values.
pub fn pp_mean_threshold_demo(
    n_o: usize,
    mean: f64,
    sd: f64,
    n_total: usize,
    theta_t: f64,
    stream: &RandomStream,
) -> Result<PpResult> {
    if n_o == 0 || n_o >= n_total {
        return Err(invalid(format!("need 0 < n_o < n_total, got n_o={n_o}, n_total={n_total}")));
    }
    if !(sd > 0.0) || !mean.is_finite() {
        return Err(invalid(format!("need finite mean and sd > 0, got mean={mean}, sd={sd}")));
    }
    check_theta(theta_t)?;
    let n_u = n_total - n_o;
    let observed = NormalSuffStats::from_parts(n_o, mean, n_o as f64 * sd * sd);
    let n = n_total as f64;
    let mut rng = stream.rng();
    let mut hits = 0;
    for _ in 0..DEMO_REALIZATIONS {
        let ybar = mean + sd / (n_u as f64).sqrt() * standard_normal(&mut rng);
        let ssd = if n_u > 1 {
            sd * sd * chi_square_variate(&mut rng, n_u as f64 - 1.0)
        } else {
            0.0
        };
        let all = observed.merge(&NormalSuffStats::from_parts(n_u, ybar, ssd));
        let s = (all.sum_sq_dev / n).sqrt();
        if normal_cdf(all.mean * n.sqrt() / s) > theta_t {
            hits += 1;
        }
    }
    Ok(PpResult::from_hits(hits, DEMO_REALIZATIONS, n_o, n_u))
}
