//! Conditional power and group-sequential boundaries.
//!
//! The test statistic is φ̂ = φ(μ̂, σ̂) for the Normal model (MLE plug-in) and
//! the success count for the Binomial model. Boundaries follow a
//! Lan–DeMets O'Brien–Fleming-type spending function. For φ̂ they are
//! calibrated by simulating null trajectories; for counts the surviving-mass
//! recursion is exact.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::{phi_normal_unchecked, NormalMle, NormalSuffStats, SpecLimits};
use crate::dgm::solve_normal_sigma;
use crate::error::{domain, invalid, Error, Result};
use crate::numeric::{binomial_pmf, binomial_upper_tail, chi_square_variate, normal_quantile, normal_sf, standard_normal, RandomStream};

pub const DEFAULT_CALIBRATION_SIMS: usize = 100_000;
pub const DEFAULT_CP_SIMS: usize = 1000;

/// Cumulative type I error spent by information fraction `t`.
pub fn obf_spending(t: f64, alpha: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(domain(format!("information fraction must be in (0, 1], got {t}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if t == 1.0 {
        return Ok(alpha);
    }
    let z = normal_quantile(1.0 - 0.5 * alpha)?;
    Ok(2.0 * normal_sf(z / t.sqrt()))
}

/// The null hypothesis used to generate the statistic's distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum NullModel {
    /// Normal data centred on the spec midpoint with σ solved so that φ = φ₀.
    Normal { limits: SpecLimits, phi0: f64 },
    /// Bernoulli(p0) data.
    Binomial { p0: f64 },
}

impl NullModel {
    pub fn validated(self) -> Result<Self> {
        match self {
            NullModel::Normal { limits, phi0 } => {
                limits.validated()?;
                if !(phi0 > 0.0 && phi0 < 1.0) {
                    return Err(invalid(format!("null phi0 must be in (0, 1), got {phi0}")));
                }
            }
            NullModel::Binomial { p0 } => {
                if !(p0 > 0.0 && p0 < 1.0) {
                    return Err(invalid(format!("null p0 must be in (0, 1), got {p0}")));
                }
            }
        }
        Ok(self)
    }

    pub fn scale(&self) -> StatScale {
        match self {
            NullModel::Normal { .. } => StatScale::Phi,
            NullModel::Binomial { .. } => StatScale::Count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatScale {
    /// Reject when φ̂ > critical value.
    Phi,
    /// Reject when the success count ≥ critical value.
    Count,
}

/// Per-look boundaries of a group-sequential test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpendingPlan {
    pub n: usize,
    pub alpha: f64,
    pub scale: StatScale,
    /// Sample size at each look; the last entry is n.
    pub looks: Vec<usize>,
    /// Information fractions looks / n.
    pub schedule: Vec<f64>,
    pub cumulative_alpha: Vec<f64>,
    pub per_look_critical: Vec<f64>,
    /// Null probability of first crossing at each look achieved by the
    /// boundaries (simulated for φ̂, exact for counts).
    pub achieved_increment: Vec<f64>,
}

impl SpendingPlan {
    pub fn final_critical(&self) -> f64 {
        *self.per_look_critical.last().expect("plans have at least one look")
    }

    pub fn critical_at(&self, n_o: usize) -> Option<f64> {
        self.looks.iter().position(|&k| k == n_o).map(|i| self.per_look_critical[i])
    }

    pub fn rejects(&self, statistic: f64, critical: f64) -> bool {
        match self.scale {
            StatScale::Phi => statistic > critical,
            StatScale::Count => statistic >= critical,
        }
    }

    pub fn increments(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumulative_alpha
            .iter()
            .map(|&c| {
                let d = c - prev;
                prev = c;
                d
            })
            .collect()
    }
}

/// Fewest simulations accepted for boundary calibration at level `alpha`.
pub fn required_calibration_sims(alpha: f64) -> usize {
    (100.0 / alpha).ceil().max(1e4) as usize
}

fn check_looks(interim: &[usize], n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidPlan("total sample size must be positive".into()));
    }
    let mut looks = interim.to_vec();
    if looks.last() != Some(&n) {
        looks.push(n);
    }
    if looks[0] == 0 || looks.windows(2).any(|w| w[0] >= w[1]) || *looks.last().unwrap() != n {
        return Err(Error::InvalidPlan(format!(
            "looks must be strictly increasing, positive and end at n = {n}, got {interim:?}"
        )));
    }
    Ok(looks)
}

/// Calibrate per-look critical values. `interim` lists the interim sample
/// sizes (n may be included or omitted; it is always the final look).
pub fn calibrate_boundaries(
    interim: &[usize],
    alpha: f64,
    null_model: &NullModel,
    n: usize,
    stream: &RandomStream,
    n_sims: usize,
) -> Result<SpendingPlan> {
    let null_model = null_model.validated()?;
    let looks = check_looks(interim, n)?;
    let schedule: Vec<f64> = looks.iter().map(|&k| k as f64 / n as f64).collect();
    let cumulative_alpha = schedule.iter().map(|&t| obf_spending(t, alpha)).collect::<Result<Vec<_>>>()?;
    let mut plan = SpendingPlan {
        n,
        alpha,
        scale: null_model.scale(),
        looks,
        schedule,
        cumulative_alpha,
        per_look_critical: Vec::new(),
        achieved_increment: Vec::new(),
    };
    match null_model {
        NullModel::Normal { limits, phi0 } => {
            let required = required_calibration_sims(alpha);
            if n_sims < required {
                return Err(Error::InsufficientSimulations { required, got: n_sims });
            }
            calibrate_phi(&mut plan, &limits, phi0, stream, n_sims)?
        }
        NullModel::Binomial { p0 } => calibrate_count(&mut plan, p0)?,
    }
    Ok(plan)
}

/// φ̂ at every look for `n_sims` null trajectories, look-major.
fn simulate_null_phi(
    looks: &[usize],
    limits: &SpecLimits,
    phi0: f64,
    stream: &RandomStream,
    n_sims: usize,
) -> Result<Vec<Vec<f64>>> {
    let sigma = solve_normal_sigma(phi0, limits)?;
    let center = limits.midpoint();
    let mut out = vec![Vec::with_capacity(n_sims); looks.len()];
    let mut rng = stream.rng();
    for _ in 0..n_sims {
        let mut stats = NormalSuffStats::default();
        let mut prev = 0;
        for (k, &size) in looks.iter().enumerate() {
            let batch = draw_normal_batch(&mut rng, center, sigma, size - prev);
            stats = stats.merge(&batch);
            prev = size;
            out[k].push(phi_hat(&stats, limits));
        }
    }
    Ok(out)
}

/// Sufficient statistics of `m` i.i.d. Normal(mean, sd²) values.
#[inline]
pub(crate) fn draw_normal_batch<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, m: usize) -> NormalSuffStats {
    let mf = m as f64;
    let bar = mean + sd / mf.sqrt() * standard_normal(rng);
    let ssd = if m > 1 {
        sd * sd * chi_square_variate(rng, mf - 1.0)
    } else {
        0.0
    };
    NormalSuffStats::from_parts(m, bar, ssd)
}

/// MLE plug-in φ̂; NaN when the MLE is undefined.
#[inline]
pub fn phi_hat(stats: &NormalSuffStats, limits: &SpecLimits) -> f64 {
    if stats.n < 2 || !(stats.sum_sq_dev > 0.0) {
        return f64::NAN;
    }
    phi_normal_unchecked(stats.mean, stats.mle_variance().sqrt(), limits)
}

fn calibrate_phi(plan: &mut SpendingPlan, limits: &SpecLimits, phi0: f64, stream: &RandomStream, n_sims: usize) -> Result<()> {
    let values = simulate_null_phi(&plan.looks, limits, phi0, stream, n_sims)?;
    let increments = plan.increments();
    let mut alive = vec![true; n_sims];
    for (k, per_look) in values.iter().enumerate() {
        let rejections = (increments[k] * n_sims as f64 + 1e-9).floor() as usize;
        let mut survivors: Vec<f64> = per_look
            .iter()
            .zip(&alive)
            .filter(|(v, &a)| a && !v.is_nan())
            .map(|(&v, _)| v)
            .collect();
        let critical = if rejections == 0 || survivors.is_empty() {
            1.0
        } else if rejections >= survivors.len() {
            return Err(Error::InsufficientSimulations {
                required: required_calibration_sims(plan.alpha) * 10,
                got: n_sims,
            });
        } else {
            // (rejections + 1)-th largest survivor: exactly `rejections` lie above it
            let idx = survivors.len() - 1 - rejections;
            let (_, c, _) = survivors.select_nth_unstable_by(idx, f64::total_cmp);
            *c
        };
        let mut crossed = 0;
        for (v, a) in per_look.iter().zip(alive.iter_mut()) {
            if *a && *v > critical {
                *a = false;
                crossed += 1;
            }
        }
        plan.per_look_critical.push(critical);
        plan.achieved_increment.push(crossed as f64 / n_sims as f64);
    }
    Ok(())
}

fn calibrate_count(plan: &mut SpendingPlan, p0: f64) -> Result<()> {
    let increments = plan.increments();
    // surviving null mass by current success count
    let mut mass = vec![1.0];
    let mut prev = 0;
    for (k, &size) in plan.looks.clone().iter().enumerate() {
        let step = size - prev;
        let step_pmf: Vec<f64> = (0..=step as u64).map(|j| binomial_pmf(step as u64, p0, j)).collect();
        let mut next = vec![0.0; mass.len() + step];
        for (s, &m) in mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (j, &q) in step_pmf.iter().enumerate() {
                next[s + j] += m * q;
            }
        }
        mass = next;
        prev = size;
        // smallest c with P(alive, S ≥ c) ≤ increment
        let mut c = size + 1;
        let mut upper = 0.0;
        while c > 0 && upper + mass[c - 1] <= increments[k] * (1.0 + 1e-12) {
            upper += mass[c - 1];
            c -= 1;
        }
        for m in mass.iter_mut().skip(c) {
            *m = 0.0;
        }
        plan.per_look_critical.push(c as f64);
        plan.achieved_increment.push(upper);
    }
    Ok(())
}

/// Empirical null distribution of φ̂ at a fixed sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullStatDistribution {
    pub n: usize,
    pub statistic_samples: Vec<f64>,
    pub null_config: NullModel,
}

impl NullStatDistribution {
    /// Empirical quantile (order statistic ⌈p·N⌉).
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.statistic_samples.len();
        let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.statistic_samples[idx]
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }
}

pub fn null_stat_distribution_normal(
    n: usize,
    limits: &SpecLimits,
    phi0: f64,
    stream: &RandomStream,
    n_sims: usize,
) -> Result<NullStatDistribution> {
    if n < 2 {
        return Err(invalid(format!("null distribution needs n >= 2, got {n}")));
    }
    if n_sims == 0 {
        return Err(invalid("simulation count must be at least 1"));
    }
    let null_config = NullModel::Normal { limits: *limits, phi0 }.validated()?;
    let mut samples = simulate_null_phi(&[n], limits, phi0, stream, n_sims)?.remove(0);
    samples.sort_by(f64::total_cmp);
    Ok(NullStatDistribution {
        n,
        statistic_samples: samples,
        null_config,
    })
}

/// CP for Normal data: completions drawn from Normal(μ̂, σ̂²) with the MLEs
/// of the observed data; the fraction whose completed φ̂ exceeds the plan's
/// final critical value.
pub fn cp_normal(
    observed: &[f64],
    limits: &SpecLimits,
    n: usize,
    plan: &SpendingPlan,
    stream: &RandomStream,
    n_sims: usize,
) -> Result<f64> {
    cp_normal_stats(&NormalSuffStats::from_slice(observed), limits, n, plan, stream, n_sims)
}

pub fn cp_normal_stats(
    observed: &NormalSuffStats,
    limits: &SpecLimits,
    n: usize,
    plan: &SpendingPlan,
    stream: &RandomStream,
    n_sims: usize,
) -> Result<f64> {
    if observed.n >= n {
        return Err(invalid(format!("CP needs n_o < n, got n_o={} n={n}", observed.n)));
    }
    if n_sims == 0 {
        return Err(invalid("simulation count must be at least 1"));
    }
    let mle = NormalMle::from_stats(observed)?;
    let critical = plan.final_critical();
    let n_u = n - observed.n;
    let mut rng = stream.rng();
    let sd = mle.sigma();
    let hits = (0..n_sims)
        .filter(|_| {
            let completed = observed.merge(&draw_normal_batch(&mut rng, mle.mean, sd, n_u));
            phi_hat(&completed, limits) > critical
        })
        .count();
    Ok(hits as f64 / n_sims as f64)
}

/// Exact CP for Bernoulli data with p̂ = s_o / n_o.
pub fn cp_binomial(successes: usize, n_o: usize, n: usize, plan: &SpendingPlan) -> Result<f64> {
    if n_o == 0 {
        return Err(Error::MleUndefined("no observations".into()));
    }
    if successes > n_o || n_o >= n {
        return Err(invalid(format!("need successes <= n_o < n, got {successes}, {n_o}, {n}")));
    }
    let k_star = plan.final_critical() as i64;
    let need = k_star - successes as i64;
    let n_u = (n - n_o) as u64;
    if need <= 0 {
        return Ok(1.0);
    }
    if need as u64 > n_u {
        return Ok(0.0);
    }
    binomial_upper_tail(n_u, successes as f64 / n_o as f64, need)
}
