//! Sequential trial runtime: plans, interim looks, stopping decisions and
//! full-trajectory evaluation.

use serde::{Deserialize, Serialize};

use crate::conjugate::{BetaHyper, NigHyper, NormalSuffStats, SpecLimits};
use crate::cp::{calibrate_boundaries, cp_binomial, cp_normal_stats, phi_hat, NullModel, SpendingPlan};
use crate::error::{Error, Result};
use crate::numeric::{fingerprint, RandomStream};
use crate::pp::{pp_binomial_exact, NormalPpEngine, PpConfig, PpResult, TailMethod};

/// Likelihood, prior and (for Normal data) the specification limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "likelihood", rename_all = "snake_case")]
pub enum ModelSpec {
    Normal { prior: NigHyper, limits: SpecLimits },
    Binomial { prior: BetaHyper },
}

impl ModelSpec {
    pub fn validated(self) -> Result<Self> {
        match self {
            ModelSpec::Normal { prior, limits } => {
                prior.validated()?;
                limits.validated()?;
            }
            ModelSpec::Binomial { prior } => {
                prior.validated()?;
            }
        }
        Ok(self)
    }

    pub fn is_binomial(&self) -> bool {
        matches!(self, ModelSpec::Binomial { .. })
    }

    /// Check one observation; Binomial data must be 0 or 1.
    pub fn check_observation(&self, index: usize, x: f64) -> Result<()> {
        let reason = match self {
            _ if !x.is_finite() => Some("value is not a finite number"),
            ModelSpec::Binomial { .. } if x != 0.0 && x != 1.0 => Some("binomial observations must be 0 or 1"),
            _ => None,
        };
        match reason {
            Some(r) => Err(Error::InvalidObservation {
                index,
                reason: r.into(),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    FutilityOnly,
    EfficacyOnly,
    #[default]
    Either,
}

impl StopMode {
    pub const ALL: [StopMode; 3] = [StopMode::FutilityOnly, StopMode::EfficacyOnly, StopMode::Either];

    pub fn name(&self) -> &'static str {
        match self {
            StopMode::FutilityOnly => "futility_only",
            StopMode::EfficacyOnly => "efficacy_only",
            StopMode::Either => "either",
        }
    }

    /// Conventional (θ_L, θ_U) for the mode.
    pub fn default_thresholds(&self) -> (f64, f64) {
        match self {
            StopMode::FutilityOnly => (0.05, 1.0),
            StopMode::EfficacyOnly => (0.0, 0.95),
            StopMode::Either => (0.05, 0.95),
        }
    }

    fn allows_efficacy(&self) -> bool {
        !matches!(self, StopMode::FutilityOnly)
    }

    fn allows_futility(&self) -> bool {
        !matches!(self, StopMode::EfficacyOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineChoice {
    #[default]
    Pp,
    Cp,
    /// Both are computed; PP drives the decisions.
    Both,
}

impl EngineChoice {
    pub fn name(&self) -> &'static str {
        match self {
            EngineChoice::Pp => "pp",
            EngineChoice::Cp => "cp",
            EngineChoice::Both => "both",
        }
    }

    pub fn needs_pp(&self) -> bool {
        !matches!(self, EngineChoice::Cp)
    }

    pub fn needs_cp(&self) -> bool {
        !matches!(self, EngineChoice::Pp)
    }
}

/// Monte Carlo sizes and the CP significance level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComputeSettings {
    pub n_predictive_draws: usize,
    pub n_posterior_draws: usize,
    pub tail_method: TailMethod,
    pub alpha: f64,
    pub cp_sims: usize,
    pub calibration_sims: usize,
}

impl Default for ComputeSettings {
    fn default() -> Self {
        Self {
            n_predictive_draws: 1000,
            n_posterior_draws: 2000,
            tail_method: TailMethod::MonteCarlo,
            alpha: 0.05,
            cp_sims: 1000,
            calibration_sims: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub n: usize,
    /// Interim sample sizes, strictly increasing and below n.
    pub schedule: Vec<usize>,
    pub model: ModelSpec,
    pub phi0: f64,
    pub theta_t: f64,
    pub theta_l: f64,
    pub theta_u: f64,
    pub mode: StopMode,
    pub engine: EngineChoice,
    #[serde(default)]
    pub compute: ComputeSettings,
}

impl TrialPlan {
    pub fn validated(self) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidPlan(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.schedule.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("schedule must be strictly increasing, got {:?}", self.schedule));
        }
        if self.schedule.iter().any(|&k| k == 0 || k >= self.n) {
            return bad(format!("interim looks must lie in [1, n) with n = {}, got {:?}", self.n, self.schedule));
        }
        self.model.validated()?;
        if !(self.phi0 > 0.0 && self.phi0 < 1.0) {
            return bad(format!("phi0 must lie in (0, 1), got {}", self.phi0));
        }
        if !(self.theta_t > 0.0 && self.theta_t < 1.0) {
            return bad(format!("theta_T must lie in (0, 1), got {}", self.theta_t));
        }
        if !(0.0 <= self.theta_l && self.theta_l < self.theta_u && self.theta_u <= 1.0) {
            return bad(format!("need 0 <= theta_L < theta_U <= 1, got ({}, {})", self.theta_l, self.theta_u));
        }
        match self.mode {
            StopMode::FutilityOnly if self.theta_u != 1.0 => return bad("futility-only plans need theta_U = 1".into()),
            StopMode::EfficacyOnly if self.theta_l != 0.0 => return bad("efficacy-only plans need theta_L = 0".into()),
            _ => {}
        }
        let c = &self.compute;
        if c.n_predictive_draws == 0 || c.n_posterior_draws == 0 || c.cp_sims == 0 {
            return bad("Monte Carlo sizes must be at least 1".into());
        }
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", c.alpha));
        }
        if self.engine.needs_cp() && !self.model.is_binomial() {
            let required = crate::cp::required_calibration_sims(c.alpha);
            if c.calibration_sims < required {
                return Err(Error::InsufficientSimulations {
                    required,
                    got: c.calibration_sims,
                });
            }
        }
        Ok(self)
    }

    /// Interim looks followed by the final sample size.
    pub fn all_looks(&self) -> Vec<usize> {
        let mut v = self.schedule.clone();
        v.push(self.n);
        v
    }

    pub fn pp_config(&self) -> PpConfig {
        PpConfig {
            n_predictive_draws: self.compute.n_predictive_draws,
            n_posterior_draws: self.compute.n_posterior_draws,
            theta_t: self.theta_t,
            tail_method: self.compute.tail_method,
        }
    }

    pub fn null_model(&self) -> NullModel {
        match self.model {
            ModelSpec::Normal { limits, .. } => NullModel::Normal { limits, phi0: self.phi0 },
            ModelSpec::Binomial { .. } => NullModel::Binomial { p0: self.phi0 },
        }
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(self)
    }

    /// Same plan with a different stopping mode and that mode's thresholds.
    pub fn with_mode(&self, mode: StopMode) -> Self {
        let (theta_l, theta_u) = mode.default_thresholds();
        Self {
            mode,
            theta_l,
            theta_u,
            ..self.clone()
        }
    }
}

/// How the interim looks are specified in user-facing configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    /// Explicit interim sample sizes.
    Looks(Vec<usize>),
    /// One of the standard layouts with this many interim looks.
    Preset { interim_count: usize },
    /// start, start + every, ... while below n.
    Every { start: usize, every: usize },
}

impl ScheduleSpec {
    pub fn resolve(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            ScheduleSpec::Looks(v) => Ok(v.clone()),
            ScheduleSpec::Preset { interim_count } => schedule_preset(*interim_count, n),
            ScheduleSpec::Every { start, every } => {
                if *start == 0 || *every == 0 {
                    return Err(Error::InvalidPlan("start and every must be positive".into()));
                }
                Ok((*start..n).step_by(*every).collect())
            }
        }
    }
}

fn default_theta_t() -> f64 {
    0.95
}

/// User-facing plan: thresholds default from the mode, schedule may be a
/// preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub n: usize,
    pub schedule: ScheduleSpec,
    pub model: ModelSpec,
    pub phi0: f64,
    #[serde(default = "default_theta_t")]
    pub theta_t: f64,
    #[serde(default)]
    pub theta_l: Option<f64>,
    #[serde(default)]
    pub theta_u: Option<f64>,
    #[serde(default)]
    pub mode: StopMode,
    #[serde(default)]
    pub engine: EngineChoice,
    #[serde(default)]
    pub compute: ComputeSettings,
}

impl PlanSpec {
    pub fn resolve(&self) -> Result<TrialPlan> {
        let (dl, du) = self.mode.default_thresholds();
        TrialPlan {
            n: self.n,
            schedule: self.schedule.resolve(self.n)?,
            model: self.model,
            phi0: self.phi0,
            theta_t: self.theta_t,
            theta_l: self.theta_l.unwrap_or(dl),
            theta_u: self.theta_u.unwrap_or(du),
            mode: self.mode,
            engine: self.engine,
            compute: self.compute,
        }
        .validated()
    }
}

/// Standard interim layouts for a 100-run design, scaled to n.
pub fn schedule_preset(k: usize, n: usize) -> Result<Vec<usize>> {
    if k >= n {
        return Err(Error::InvalidPlan(format!("cannot place {k} interim looks in n = {n}")));
    }
    let fractions: Vec<f64> = match k {
        0 => vec![],
        1 => vec![0.5],
        2 => vec![0.35, 0.7],
        4 => vec![0.2, 0.4, 0.6, 0.8],
        9 => (1..=9).map(|i| i as f64 / 10.0).collect(),
        _ => (1..=k).map(|i| i as f64 / (k + 1) as f64).collect(),
    };
    let looks: Vec<usize> = fractions.iter().map(|f| (f * n as f64).round() as usize).collect();
    if looks.windows(2).any(|w| w[0] >= w[1]) || looks.iter().any(|&x| x == 0 || x >= n) {
        return Err(Error::InvalidPlan(format!("preset with {k} looks does not fit n = {n}")));
    }
    Ok(looks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Continue,
    StopEfficacy,
    StopFutility,
    CompleteMet,
    CompleteNotMet,
}

impl Decision {
    pub fn is_stop(&self) -> bool {
        matches!(self, Decision::StopEfficacy | Decision::StopFutility)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Decision::Continue => "continue",
            Decision::StopEfficacy => "stop_efficacy",
            Decision::StopFutility => "stop_futility",
            Decision::CompleteMet => "complete_met",
            Decision::CompleteNotMet => "complete_not_met",
        }
    }
}

/// Interim decision from a single value under the plan's thresholds.
pub fn interim_decision(value: f64, theta_l: f64, theta_u: f64, mode: StopMode) -> Decision {
    if mode.allows_efficacy() && value > theta_u {
        Decision::StopEfficacy
    } else if mode.allows_futility() && value < theta_l {
        Decision::StopFutility
    } else {
        Decision::Continue
    }
}

/// Engine outputs at one look, before any decision is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LookValues {
    pub n_o: usize,
    pub pp: Option<f64>,
    pub pp_std_error: Option<f64>,
    pub cp: Option<f64>,
    /// φ̂ (Normal) or success count (Binomial) of the observed data.
    pub statistic: Option<f64>,
    /// Boundary for the statistic at this look, when CP is computed.
    pub critical: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LookRecord {
    pub n_o: usize,
    pub pp: Option<f64>,
    pub pp_std_error: Option<f64>,
    pub cp: Option<f64>,
    pub statistic: Option<f64>,
    pub critical: Option<f64>,
    /// The value the decision was based on (PP, or CP for CP-only plans).
    pub value: Option<f64>,
    pub decision: Decision,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirstStop {
    pub look_index: usize,
    pub n_o: usize,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub looks: Vec<LookRecord>,
    pub first_stop: Option<FirstStop>,
    /// Final conclusion; None while the final look has not been reached.
    pub terminal: Option<Decision>,
    pub reversal: bool,
    pub theta_l: f64,
    pub theta_u: f64,
    /// Looks whose driving value could not be computed (e.g. improper posterior).
    pub undefined_looks: usize,
}

impl TrajectoryRecord {
    /// Whether the experiment is concluded met: stopped for efficacy, or ran
    /// to the end without stopping and met the goal.
    pub fn concluded_met(&self) -> bool {
        match self.first_stop {
            Some(s) => s.decision == Decision::StopEfficacy,
            None => self.terminal == Some(Decision::CompleteMet),
        }
    }

    /// n_o at the first stop, or the last evaluated look (n once complete).
    pub fn stop_time(&self) -> usize {
        match self.first_stop {
            Some(s) => s.n_o,
            None => self.looks.last().map_or(0, |l| l.n_o),
        }
    }
}

/// True when a later look crosses the threshold opposite to the first stop.
pub fn reversal_flag(record: &TrajectoryRecord) -> bool {
    let Some(stop) = record.first_stop else {
        return false;
    };
    record.looks[stop.look_index + 1..].iter().any(|l| match (stop.decision, l.value) {
        (Decision::StopEfficacy, Some(v)) => v < record.theta_l,
        (Decision::StopFutility, Some(v)) => v > record.theta_u,
        _ => false,
    })
}

fn driving_value(engine: EngineChoice, v: &LookValues) -> Option<f64> {
    match engine {
        EngineChoice::Cp => v.cp,
        EngineChoice::Pp | EngineChoice::Both => v.pp,
    }
}

/// Apply decisions to precomputed look values (interim looks then the
/// terminal look, in order).
pub fn assemble_trajectory(
    values: &[LookValues],
    n: usize,
    theta_l: f64,
    theta_u: f64,
    mode: StopMode,
    engine: EngineChoice,
) -> TrajectoryRecord {
    let mut looks = Vec::with_capacity(values.len());
    let mut first_stop = None;
    let mut undefined_looks = 0;
    let mut terminal = None;
    for (i, v) in values.iter().enumerate() {
        let value = driving_value(engine, v);
        if value.is_none() {
            undefined_looks += 1;
        }
        let is_terminal = v.n_o == n;
        let decision = if is_terminal {
            let d = if value == Some(1.0) {
                Decision::CompleteMet
            } else {
                Decision::CompleteNotMet
            };
            terminal = Some(d);
            d
        } else {
            value.map_or(Decision::Continue, |x| interim_decision(x, theta_l, theta_u, mode))
        };
        if first_stop.is_none() && decision.is_stop() {
            first_stop = Some(FirstStop {
                look_index: i,
                n_o: v.n_o,
                decision,
            });
        }
        looks.push(LookRecord {
            n_o: v.n_o,
            pp: v.pp,
            pp_std_error: v.pp_std_error,
            cp: v.cp,
            statistic: v.statistic,
            critical: v.critical,
            value,
            decision,
            terminal: is_terminal,
        });
    }
    let mut record = TrajectoryRecord {
        looks,
        first_stop,
        terminal,
        reversal: false,
        theta_l,
        theta_u,
        undefined_looks,
    };
    record.reversal = reversal_flag(&record);
    record
}

/// Observed-data summary for either likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observed {
    Normal(NormalSuffStats),
    Binomial { successes: usize, n: usize },
}

impl Observed {
    pub fn empty(model: &ModelSpec) -> Self {
        match model {
            ModelSpec::Normal { .. } => Observed::Normal(NormalSuffStats::default()),
            ModelSpec::Binomial { .. } => Observed::Binomial { successes: 0, n: 0 },
        }
    }

    pub fn push(&mut self, x: f64) {
        match self {
            Observed::Normal(s) => s.push(x),
            Observed::Binomial { successes, n } => {
                *n += 1;
                if x == 1.0 {
                    *successes += 1;
                }
            }
        }
    }

    pub fn count(&self) -> usize {
        match self {
            Observed::Normal(s) => s.n,
            Observed::Binomial { n, .. } => *n,
        }
    }
}

/// Stream used for one engine at one look.
pub fn look_stream(stream: &RandomStream, n_o: usize, engine: &str) -> RandomStream {
    stream.child("look", n_o as u64).child(engine, 0)
}

/// Evaluates looks for one plan. Holds the PP engine and, when CP is
/// requested, the calibrated boundaries.
#[derive(Debug, Clone)]
pub struct TrialRunner {
    plan: TrialPlan,
    pp_engine: Option<NormalPpEngine>,
    spending: Option<SpendingPlan>,
}

impl TrialRunner {
    /// Boundaries, when needed, are calibrated on `stream.child("boundaries", 0)`.
    pub fn new(plan: TrialPlan, stream: &RandomStream) -> Result<Self> {
        let plan = plan.validated()?;
        let spending = if plan.engine.needs_cp() {
            Some(calibrate_boundaries(
                &plan.schedule,
                plan.compute.alpha,
                &plan.null_model(),
                plan.n,
                &stream.child("boundaries", 0),
                plan.compute.calibration_sims,
            )?)
        } else {
            None
        };
        Self::with_spending(plan, spending)
    }

    pub fn with_spending(plan: TrialPlan, spending: Option<SpendingPlan>) -> Result<Self> {
        let plan = plan.validated()?;
        if plan.engine.needs_cp() {
            match &spending {
                Some(s) if s.looks == plan.all_looks() => {}
                _ => return Err(Error::InvalidPlan("CP needs boundaries calibrated for this schedule".into())),
            }
        }
        let pp_engine = match (plan.engine.needs_pp(), plan.model) {
            (true, ModelSpec::Normal { limits, .. }) => Some(NormalPpEngine::new(limits, plan.phi0, plan.pp_config())?),
            _ => None,
        };
        Ok(Self {
            plan,
            pp_engine,
            spending,
        })
    }

    pub fn plan(&self) -> &TrialPlan {
        &self.plan
    }

    pub fn spending(&self) -> Option<&SpendingPlan> {
        self.spending.as_ref()
    }

    /// PP at one look, or None when the posterior is improper.
    pub fn pp_at(&self, observed: &Observed, stream: &RandomStream) -> Result<Option<PpResult>> {
        let n_o = observed.count();
        let n_u = self.plan.n - n_o;
        match (self.plan.model, observed) {
            (ModelSpec::Normal { prior, .. }, Observed::Normal(stats)) => {
                let engine = self.pp_engine.as_ref().expect("PP engine built for Normal PP plans");
                let posterior = prior.update(stats);
                let mut rng = look_stream(stream, n_o, "pp").rng();
                Ok(Some(engine.evaluate_with_rng(&posterior, n_o, n_u, &mut rng)))
            }
            (ModelSpec::Binomial { prior }, Observed::Binomial { successes, n }) => {
                let posterior = prior.update(*successes as u64, (*n - *successes) as u64);
                if !posterior.is_proper() {
                    return Ok(None);
                }
                pp_binomial_exact(&posterior, self.plan.phi0, self.plan.theta_t, n_o, n_u).map(Some)
            }
            _ => Err(Error::InvalidPlan("observation summary does not match the model".into())),
        }
    }

    /// (CP, statistic, critical) at one look.
    pub fn cp_at(&self, observed: &Observed, stream: &RandomStream) -> Result<(Option<f64>, Option<f64>, Option<f64>)> {
        let spending = self.spending.as_ref().expect("boundaries present for CP plans");
        let n = self.plan.n;
        let n_o = observed.count();
        let critical = spending.critical_at(n_o);
        match (self.plan.model, observed) {
            (ModelSpec::Normal { limits, .. }, Observed::Normal(stats)) => {
                let stat = phi_hat(stats, &limits);
                let stat = (!stat.is_nan()).then_some(stat);
                let cp = if n_o == n {
                    Some(if stat.is_some_and(|s| s > spending.final_critical()) { 1.0 } else { 0.0 })
                } else {
                    match cp_normal_stats(stats, &limits, n, spending, &look_stream(stream, n_o, "cp"), self.plan.compute.cp_sims) {
                        Ok(v) => Some(v),
                        Err(Error::MleUndefined(_)) => None,
                        Err(e) => return Err(e),
                    }
                };
                Ok((cp, stat, critical))
            }
            (ModelSpec::Binomial { .. }, Observed::Binomial { successes, .. }) => {
                let stat = Some(*successes as f64);
                let cp = if n_o == n {
                    Some(if *successes as f64 >= spending.final_critical() { 1.0 } else { 0.0 })
                } else {
                    match cp_binomial(*successes, n_o, n, spending) {
                        Ok(v) => Some(v),
                        Err(Error::MleUndefined(_)) => None,
                        Err(e) => return Err(e),
                    }
                };
                Ok((cp, stat, critical))
            }
            _ => Err(Error::InvalidPlan("observation summary does not match the model".into())),
        }
    }

    pub fn look_values(&self, observed: &Observed, stream: &RandomStream) -> Result<LookValues> {
        let pp = if self.plan.engine.needs_pp() {
            self.pp_at(observed, stream)?
        } else {
            None
        };
        let (cp, statistic, critical) = if self.plan.engine.needs_cp() {
            self.cp_at(observed, stream)?
        } else {
            (None, None, None)
        };
        Ok(LookValues {
            n_o: observed.count(),
            pp: pp.map(|r| r.value),
            pp_std_error: pp.map(|r| r.mc_std_error),
            cp,
            statistic,
            critical,
        })
    }

    fn check_data(&self, data: &[f64]) -> Result<()> {
        for (i, &x) in data.iter().enumerate() {
            self.plan.model.check_observation(i, x)?;
        }
        Ok(())
    }

    /// Values and decision at a scheduled look (or the final look), given
    /// exactly the first n_o observations.
    pub fn evaluate_interim(&self, data: &[f64], n_o: usize, stream: &RandomStream) -> Result<LookRecord> {
        if data.len() != n_o {
            return Err(Error::DataLength {
                expected: n_o,
                got: data.len(),
            });
        }
        if n_o != self.plan.n && !self.plan.schedule.contains(&n_o) {
            return Err(Error::InvalidPlan(format!("n_o = {n_o} is not a scheduled look")));
        }
        self.check_data(data)?;
        let mut observed = Observed::empty(&self.plan.model);
        data.iter().for_each(|&x| observed.push(x));
        let values = self.look_values(&observed, stream)?;
        let p = &self.plan;
        let record = assemble_trajectory(&[values], p.n, p.theta_l, p.theta_u, p.mode, p.engine);
        Ok(record.looks[0])
    }

    /// Evaluate every look, in order, for a complete dataset.
    pub fn run(&self, data: &[f64], stream: &RandomStream) -> Result<TrajectoryRecord> {
        if data.len() != self.plan.n {
            return Err(Error::DataLength {
                expected: self.plan.n,
                got: data.len(),
            });
        }
        self.check_data(data)?;
        let values = self.values_for_prefixes(data, &self.plan.all_looks(), stream)?;
        let p = &self.plan;
        Ok(assemble_trajectory(&values, p.n, p.theta_l, p.theta_u, p.mode, p.engine))
    }

    /// Evaluate the looks reached by a possibly incomplete dataset.
    pub fn run_partial(&self, data: &[f64], stream: &RandomStream) -> Result<TrajectoryRecord> {
        if data.len() > self.plan.n {
            return Err(Error::DataLength {
                expected: self.plan.n,
                got: data.len(),
            });
        }
        self.check_data(data)?;
        let looks: Vec<usize> = self.plan.all_looks().into_iter().filter(|&k| k <= data.len()).collect();
        let values = self.values_for_prefixes(data, &looks, stream)?;
        let p = &self.plan;
        Ok(assemble_trajectory(&values, p.n, p.theta_l, p.theta_u, p.mode, p.engine))
    }

    /// Look values at each prefix length in `looks` (increasing).
    pub fn values_for_prefixes(&self, data: &[f64], looks: &[usize], stream: &RandomStream) -> Result<Vec<LookValues>> {
        let mut observed = Observed::empty(&self.plan.model);
        let mut pos = 0;
        let mut out = Vec::with_capacity(looks.len());
        for &k in looks {
            while pos < k {
                observed.push(data[pos]);
                pos += 1;
            }
            out.push(self.look_values(&observed, stream)?);
        }
        Ok(out)
    }
}

pub fn run_trial(plan: &TrialPlan, data: &[f64], stream: &RandomStream) -> Result<TrajectoryRecord> {
    TrialRunner::new(plan.clone(), stream)?.run(data, stream)
}

pub fn evaluate_interim(plan: &TrialPlan, data: &[f64], n_o: usize, stream: &RandomStream) -> Result<LookRecord> {
    TrialRunner::new(plan.clone(), stream)?.evaluate_interim(data, n_o, stream)
}
