//! Replicated simulation studies, permutation studies and prior
//! sensitivity grids.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conjugate::{beta_tail, BetaHyper, NigHyper, SpecLimits};
use crate::dgm::{build_dgm, DgmFamily, STUDY_PHIS};
use crate::error::{Error, Result};
use crate::numeric::{fingerprint, ContinuousDistribution, RandomStream};
use crate::pp::TailMethod;
use crate::tail::QuadratureTail;
use crate::trial::{
    assemble_trajectory, ComputeSettings, EngineChoice, LookValues, ModelSpec, ScheduleSpec,
    StopMode, TrajectoryRecord, TrialPlan, TrialRunner,
};

/// Where simulated data come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// A DGM family solved so that P(s_l < Z < s_u) = phi.
    Dgm { family: DgmFamily, phi: f64 },
    Bernoulli { p: f64 },
}

impl DataSource {
    pub fn label(&self) -> String {
        match self {
            DataSource::Dgm { family, .. } => family.name().to_string(),
            DataSource::Bernoulli { .. } => "bernoulli".to_string(),
        }
    }

    pub fn true_phi(&self) -> f64 {
        match self {
            DataSource::Dgm { phi, .. } => *phi,
            DataSource::Bernoulli { p } => *p,
        }
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(self)
    }

    fn sampler(&self, limits: Option<&SpecLimits>) -> Result<Sampler> {
        match self {
            DataSource::Dgm { family, phi } => {
                let limits = limits.ok_or_else(|| Error::InvalidPlan("DGM sources need a Normal model with limits".into()))?;
                Ok(Sampler::Continuous(build_dgm(*family, *phi, limits)?.distribution))
            }
            DataSource::Bernoulli { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::InvalidParameter(format!("Bernoulli p must lie in [0, 1], got {p}")));
                }
                Ok(Sampler::Bernoulli(*p))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Sampler {
    Continuous(ContinuousDistribution),
    Bernoulli(f64),
}

impl Sampler {
    fn draw_n(&self, stream: &RandomStream, n: usize) -> Vec<f64> {
        let mut rng = stream.rng();
        match self {
            Sampler::Continuous(d) => d.draw_n(&mut rng, n),
            Sampler::Bernoulli(p) => (0..n).map(|_| if rng.random::<f64>() < *p { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// The ten standard sources: five families at φ = 0.8 and 0.9.
pub fn standard_sources() -> Vec<DataSource> {
    DgmFamily::ALL
        .iter()
        .flat_map(|&family| STUDY_PHIS.iter().map(move |&phi| DataSource::Dgm { family, phi }))
        .collect()
}

/// Fully resolved study: every cell is (source, plan).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sources: Vec<DataSource>,
    pub plans: Vec<TrialPlan>,
    pub replicates: usize,
    pub master_seed: u64,
}

impl StudyConfig {
    pub fn validated(self) -> Result<Self> {
        if self.replicates == 0 {
            return Err(Error::InvalidPlan("replicates must be at least 1".into()));
        }
        if self.plans.is_empty() || self.sources.is_empty() {
            return Err(Error::InvalidPlan("a study needs at least one plan and one source".into()));
        }
        let plans = self.plans.into_iter().map(TrialPlan::validated).collect::<Result<Vec<_>>>()?;
        let limits: Vec<SpecLimits> = plans.iter().filter_map(plan_limits).collect();
        if limits.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::InvalidPlan("all Normal plans in a study must share the same limits".into()));
        }
        Ok(Self { plans, ..self })
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(self)
    }

    fn limits(&self) -> Option<SpecLimits> {
        self.plans.iter().find_map(plan_limits)
    }
}

fn plan_limits(p: &TrialPlan) -> Option<SpecLimits> {
    match p.model {
        ModelSpec::Normal { limits, .. } => Some(limits),
        ModelSpec::Binomial { .. } => None,
    }
}

fn default_seed() -> u64 {
    1
}
fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}
fn default_n() -> usize {
    100
}
fn default_theta_t() -> f64 {
    0.95
}
fn default_schedules() -> Vec<ScheduleSpec> {
    [0, 1, 2, 4, 9].iter().map(|&k| ScheduleSpec::Preset { interim_count: k }).collect()
}
fn default_modes() -> Vec<StopMode> {
    StopMode::ALL.to_vec()
}
fn default_engines() -> Vec<EngineChoice> {
    vec![EngineChoice::Pp]
}
fn study_compute() -> ComputeSettings {
    ComputeSettings {
        tail_method: TailMethod::Quadrature,
        ..ComputeSettings::default()
    }
}

pub const DEFAULT_REPLICATES: usize = 1000;
pub const REDUCED_REPLICATES: usize = 200;
pub const BINOMIAL_REPLICATES: usize = 100;

/// Grid-style study description as read from JSON or TOML. Cells are the
/// product sources × schedules × modes × engines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    pub model: ModelSpec,
    pub phi0: f64,
    #[serde(default = "default_theta_t")]
    pub theta_t: f64,
    /// Used by modes that allow futility stops.
    #[serde(default)]
    pub theta_l: Option<f64>,
    /// Used by modes that allow efficacy stops.
    #[serde(default)]
    pub theta_u: Option<f64>,
    /// Defaults to the ten standard DGMs for Normal models.
    #[serde(default)]
    pub sources: Option<Vec<DataSource>>,
    #[serde(default = "default_schedules")]
    pub schedules: Vec<ScheduleSpec>,
    #[serde(default = "default_modes")]
    pub modes: Vec<StopMode>,
    #[serde(default = "default_engines")]
    pub engines: Vec<EngineChoice>,
    #[serde(default = "study_compute")]
    pub compute: ComputeSettings,
}

impl StudySpec {
    /// The Normal robustness study with the benign prior.
    pub fn normal_default() -> Self {
        Self {
            master_seed: default_seed(),
            replicates: DEFAULT_REPLICATES,
            n: default_n(),
            model: ModelSpec::Normal {
                prior: NigHyper {
                    m: 3.5,
                    nu: 1.0,
                    a: 1.0,
                    b: 1.0,
                },
                limits: SpecLimits { lower: 2.0, upper: 5.0 },
            },
            phi0: 0.8,
            theta_t: default_theta_t(),
            theta_l: None,
            theta_u: None,
            sources: None,
            schedules: default_schedules(),
            modes: default_modes(),
            engines: default_engines(),
            compute: study_compute(),
        }
    }

    /// Binomial study at n = 100 with a Beta(1,1) prior, the boundary case
    /// p = 0.6 and the alternative p = 0.75, PP and CP.
    pub fn binomial_default() -> Self {
        Self {
            replicates: BINOMIAL_REPLICATES,
            model: ModelSpec::Binomial { prior: BetaHyper { alpha: 1.0, beta: 1.0 } },
            phi0: 0.6,
            sources: Some(vec![DataSource::Bernoulli { p: 0.6 }, DataSource::Bernoulli { p: 0.75 }]),
            engines: vec![EngineChoice::Pp, EngineChoice::Cp],
            ..Self::normal_default()
        }
    }

    pub fn resolve(&self) -> Result<StudyConfig> {
        let sources = match (&self.sources, self.model) {
            (Some(s), _) => s.clone(),
            (None, ModelSpec::Normal { .. }) => standard_sources(),
            (None, ModelSpec::Binomial { .. }) => {
                return Err(Error::InvalidPlan("Binomial studies must list their Bernoulli sources".into()))
            }
        };
        let mut plans = Vec::new();
        for schedule in &self.schedules {
            let schedule = schedule.resolve(self.n)?;
            for &mode in &self.modes {
                let (dl, du) = mode.default_thresholds();
                let theta_l = if mode == StopMode::EfficacyOnly { dl } else { self.theta_l.unwrap_or(dl) };
                let theta_u = if mode == StopMode::FutilityOnly { du } else { self.theta_u.unwrap_or(du) };
                for &engine in &self.engines {
                    plans.push(TrialPlan {
                        n: self.n,
                        schedule: schedule.clone(),
                        model: self.model,
                        phi0: self.phi0,
                        theta_t: self.theta_t,
                        theta_l,
                        theta_u,
                        mode,
                        engine,
                        compute: self.compute,
                    });
                }
            }
        }
        StudyConfig {
            sources,
            plans,
            replicates: self.replicates,
            master_seed: self.master_seed,
        }
        .validated()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    /// Fraction of replicates concluding the measure is met.
    pub met_rate: f64,
    pub met_se: Option<f64>,
    pub mean_stop_time: f64,
    pub stop_time_se: Option<f64>,
    pub reversal_rate: f64,
    pub reversal_se: Option<f64>,
    /// Looks across all replicates whose driving value was undefined.
    pub undefined_looks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub source: DataSource,
    pub label: String,
    pub true_phi: f64,
    pub phi0: f64,
    pub engine: EngineChoice,
    pub mode: StopMode,
    pub k: usize,
    pub schedule: Vec<usize>,
    pub theta_l: f64,
    pub theta_u: f64,
    pub plan_fingerprint: String,
    pub replicates: usize,
    pub summary: Option<CellSummary>,
    pub failed: Option<String>,
}

impl CellMetrics {
    /// Whether this cell measures type I error (true φ at or below φ₀).
    pub fn is_null(&self) -> bool {
        self.true_phi <= self.phi0
    }

    pub fn type1_rate(&self) -> Option<f64> {
        self.summary.filter(|_| self.is_null()).map(|s| s.met_rate)
    }

    pub fn power(&self) -> Option<f64> {
        self.summary.filter(|_| !self.is_null()).map(|s| s.met_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetrics {
    pub config_fingerprint: String,
    pub master_seed: u64,
    pub cells: Vec<CellMetrics>,
}

#[derive(Debug, Clone, Copy)]
struct RepOutcome {
    met: bool,
    stop_time: usize,
    reversal: bool,
    undefined: usize,
}

fn hex(x: u64) -> String {
    format!("{x:016x}")
}

/// Inputs that determine PP values at a look.
fn pp_key(p: &TrialPlan) -> u64 {
    fingerprint(&(
        "pp",
        p.n,
        p.model,
        p.phi0,
        p.theta_t,
        p.compute.n_predictive_draws,
        p.compute.n_posterior_draws,
        p.compute.tail_method,
    ))
}

/// Inputs that determine CP values; the prior does not enter.
fn cp_key(p: &TrialPlan) -> u64 {
    fingerprint(&(
        "cp",
        p.n,
        p.null_model(),
        &p.schedule,
        p.compute.alpha,
        p.compute.cp_sims,
        p.compute.calibration_sims,
    ))
}

struct PpGroup {
    key: u64,
    runner: TrialRunner,
    looks: Vec<usize>,
}

struct CpGroup {
    key: u64,
    runner: TrialRunner,
}

/// Stream for the analysis of one replicate; `key` identifies the engine
/// inputs so unrelated cells never share draws.
pub fn analysis_stream(master_seed: u64, source: &DataSource, replicate: usize, key: u64) -> RandomStream {
    replicate_stream(master_seed, source, replicate).child("analysis", key)
}

fn replicate_stream(master_seed: u64, source: &DataSource, replicate: usize) -> RandomStream {
    RandomStream::new(master_seed)
        .child("source", source.fingerprint())
        .child("replicate", replicate as u64)
}

/// Simulated dataset for one replicate of a source.
pub fn replicate_data(master_seed: u64, source: &DataSource, replicate: usize, n: usize, limits: Option<&SpecLimits>) -> Result<Vec<f64>> {
    let sampler = source.sampler(limits)?;
    Ok(sampler.draw_n(&replicate_stream(master_seed, source, replicate).child("data", 0), n))
}

/// Run `f` on a pool with the given number of threads (rayon's default
/// when None).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn run_study(config: &StudyConfig) -> Result<StudyMetrics> {
    let config = config.clone().validated()?;
    let master = RandomStream::new(config.master_seed);

    let mut pp_looks: BTreeMap<u64, (TrialPlan, Vec<usize>)> = BTreeMap::new();
    let mut cp_plans: BTreeMap<u64, TrialPlan> = BTreeMap::new();
    for p in &config.plans {
        if p.engine.needs_pp() {
            let entry = pp_looks.entry(pp_key(p)).or_insert_with(|| (p.clone(), Vec::new()));
            entry.1.extend(p.all_looks());
        }
        if p.engine.needs_cp() {
            cp_plans.entry(cp_key(p)).or_insert_with(|| p.clone());
        }
    }
    let pp_groups: Vec<PpGroup> = pp_looks
        .into_iter()
        .map(|(key, (p, mut looks))| {
            looks.sort_unstable();
            looks.dedup();
            let plan = TrialPlan {
                engine: EngineChoice::Pp,
                schedule: vec![],
                ..p
            };
            Ok(PpGroup {
                key,
                runner: TrialRunner::with_spending(plan, None)?,
                looks,
            })
        })
        .collect::<Result<_>>()?;
    let cp_groups: Vec<CpGroup> = cp_plans
        .into_par_iter()
        .map(|(key, p)| {
            let plan = TrialPlan {
                engine: EngineChoice::Cp,
                ..p
            };
            Ok(CpGroup {
                key,
                runner: TrialRunner::new(plan, &master.child("boundaries", key))?,
            })
        })
        .collect::<Result<_>>()?;
    let links: Vec<(Option<usize>, Option<usize>)> = config
        .plans
        .iter()
        .map(|p| {
            let pp = p.engine.needs_pp().then(|| pp_groups.iter().position(|g| g.key == pp_key(p)).unwrap());
            let cp = p.engine.needs_cp().then(|| cp_groups.iter().position(|g| g.key == cp_key(p)).unwrap());
            (pp, cp)
        })
        .collect();

    let limits = config.limits();
    let n = config.plans[0].n;
    let samplers: Vec<Result<Sampler>> = config.sources.iter().map(|s| s.sampler(limits.as_ref())).collect();
    if config.plans.iter().any(|p| p.n != n) {
        return Err(Error::InvalidPlan("all plans in a study must share n".into()));
    }

    let units: Vec<(usize, usize)> = (0..config.sources.len())
        .filter(|&s| samplers[s].is_ok())
        .flat_map(|s| (0..config.replicates).map(move |r| (s, r)))
        .collect();
    let outcomes: Vec<Result<Vec<RepOutcome>>> = units
        .par_iter()
        .map(|&(s, r)| {
            let source = &config.sources[s];
            let Ok(sampler) = &samplers[s] else { unreachable!() };
            let rep = replicate_stream(config.master_seed, source, r);
            let data = sampler.draw_n(&rep.child("data", 0), n);
            let pp_values = pp_groups
                .iter()
                .map(|g| g.runner.values_for_prefixes(&data, &g.looks, &rep.child("analysis", g.key)))
                .collect::<Result<Vec<_>>>()?;
            let cp_values = cp_groups
                .iter()
                .map(|g| g.runner.values_for_prefixes(&data, &g.runner.plan().all_looks(), &rep.child("analysis", g.key)))
                .collect::<Result<Vec<_>>>()?;
            Ok(config
                .plans
                .iter()
                .zip(&links)
                .map(|(p, &(pi, ci))| {
                    let values: Vec<LookValues> = p
                        .all_looks()
                        .iter()
                        .enumerate()
                        .map(|(j, &n_o)| {
                            let mut v = LookValues {
                                n_o,
                                pp: None,
                                pp_std_error: None,
                                cp: None,
                                statistic: None,
                                critical: None,
                            };
                            if let Some(pi) = pi {
                                let idx = pp_groups[pi].looks.binary_search(&n_o).unwrap();
                                let src = &pp_values[pi][idx];
                                v.pp = src.pp;
                                v.pp_std_error = src.pp_std_error;
                            }
                            if let Some(ci) = ci {
                                let src = &cp_values[ci][j];
                                v.cp = src.cp;
                                v.statistic = src.statistic;
                                v.critical = src.critical;
                            }
                            v
                        })
                        .collect();
                    let t = assemble_trajectory(&values, p.n, p.theta_l, p.theta_u, p.mode, p.engine);
                    RepOutcome {
                        met: t.concluded_met(),
                        stop_time: t.stop_time(),
                        reversal: t.reversal,
                        undefined: t.undefined_looks,
                    }
                })
                .collect())
        })
        .collect();

    let mut per_source: Vec<std::result::Result<Vec<Vec<RepOutcome>>, String>> = samplers
        .iter()
        .map(|s| match s {
            Ok(_) => Ok(Vec::with_capacity(config.replicates)),
            Err(e) => Err(e.to_string()),
        })
        .collect();
    for (&(s, _), out) in units.iter().zip(outcomes) {
        match (out, &mut per_source[s]) {
            (Ok(v), Ok(list)) => list.push(v),
            (Err(e), slot @ Ok(_)) => *slot = Err(e.to_string()),
            _ => {}
        }
    }

    let mut cells = Vec::with_capacity(config.sources.len() * config.plans.len());
    for (s, source) in config.sources.iter().enumerate() {
        for (pi, p) in config.plans.iter().enumerate() {
            let (summary, failed) = match &per_source[s] {
                Ok(reps) => (Some(summarize(reps.iter().map(|r| r[pi]))), None),
                Err(e) => (None, Some(e.clone())),
            };
            cells.push(CellMetrics {
                source: *source,
                label: source.label(),
                true_phi: source.true_phi(),
                phi0: p.phi0,
                engine: p.engine,
                mode: p.mode,
                k: p.schedule.len(),
                schedule: p.schedule.clone(),
                theta_l: p.theta_l,
                theta_u: p.theta_u,
                plan_fingerprint: hex(p.fingerprint()),
                replicates: config.replicates,
                summary,
                failed,
            });
        }
    }
    Ok(StudyMetrics {
        config_fingerprint: hex(config.fingerprint()),
        master_seed: config.master_seed,
        cells,
    })
}

fn summarize(reps: impl Iterator<Item = RepOutcome>) -> CellSummary {
    let reps: Vec<RepOutcome> = reps.collect();
    let r = reps.len() as f64;
    let rate = |f: fn(&RepOutcome) -> bool| reps.iter().filter(|x| f(x)).count() as f64 / r;
    let rate_se = |p: f64| (reps.len() > 1).then(|| (p * (1.0 - p) / r).sqrt());
    let met_rate = rate(|x| x.met);
    let reversal_rate = rate(|x| x.reversal);
    let mean_stop_time = reps.iter().map(|x| x.stop_time as f64).sum::<f64>() / r;
    let stop_time_se = (reps.len() > 1).then(|| {
        let ss: f64 = reps.iter().map(|x| (x.stop_time as f64 - mean_stop_time).powi(2)).sum();
        (ss / (r - 1.0) / r).sqrt()
    });
    CellSummary {
        met_rate,
        met_se: rate_se(met_rate),
        mean_stop_time,
        stop_time_se,
        reversal_rate,
        reversal_se: rate_se(reversal_rate),
        undefined_looks: reps.iter().map(|x| x.undefined).sum(),
    }
}

/// Trajectories of one dataset under random reorderings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSummary {
    pub n_perms: usize,
    /// Fraction of orderings with some interim value below θ_L.
    pub below_theta_l: f64,
    pub below_se: f64,
    /// Fraction of orderings with some interim value above θ_U.
    pub above_theta_u: f64,
    pub above_se: f64,
    pub theta_l: f64,
    pub theta_u: f64,
    pub trajectories: Vec<TrajectoryRecord>,
}

/// Ordering `i` of `0..n`; ordering 0 is the identity.
pub fn permutation(n: usize, root: &RandomStream, i: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if i > 0 {
        idx.shuffle(&mut root.child("permutation", i as u64).rng());
    }
    idx
}

/// Every ordering is analysed on `RandomStream::new(master_seed)`, so
/// ordering 0 reproduces `run_trial` on the original data. Data shorter
/// than n are analysed up to the last look reached.
pub fn permutation_study(data: &[f64], plan: &TrialPlan, n_perms: usize, master_seed: u64) -> Result<PermutationSummary> {
    let stream = RandomStream::new(master_seed);
    let runner = TrialRunner::new(plan.clone(), &stream)?;
    permutation_study_with(&runner, data, n_perms, &stream)
}

pub fn permutation_study_with(runner: &TrialRunner, data: &[f64], n_perms: usize, stream: &RandomStream) -> Result<PermutationSummary> {
    if n_perms == 0 {
        return Err(Error::InvalidParameter("n_perms must be at least 1".into()));
    }
    let plan = runner.plan();
    let trajectories = (0..n_perms)
        .into_par_iter()
        .map(|i| {
            let order = permutation(data.len(), stream, i);
            let permuted: Vec<f64> = order.iter().map(|&j| data[j]).collect();
            runner.run_partial(&permuted, stream)
        })
        .collect::<Result<Vec<_>>>()?;
    let frac = |f: &dyn Fn(f64) -> bool| {
        trajectories
            .iter()
            .filter(|t| t.looks.iter().filter(|l| !l.terminal).any(|l| l.value.is_some_and(f)))
            .count() as f64
            / n_perms as f64
    };
    let se = |p: f64| (p * (1.0 - p) / n_perms as f64).sqrt();
    let below = frac(&|v| v < plan.theta_l);
    let above = frac(&|v| v > plan.theta_u);
    Ok(PermutationSummary {
        n_perms,
        below_theta_l: below,
        below_se: se(below),
        above_theta_u: above,
        above_se: se(above),
        theta_l: plan.theta_l,
        theta_u: plan.theta_u,
        trajectories,
    })
}

/// A prior to substitute into every plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PriorChoice {
    Nig(NigHyper),
    Beta(BetaHyper),
}

/// Beta(0,0), Beta(1,1), Beta(6,4).
pub fn default_beta_grid() -> Vec<PriorChoice> {
    [(0.0, 0.0), (1.0, 1.0), (6.0, 4.0)]
        .iter()
        .map(|&(alpha, beta)| PriorChoice::Beta(BetaHyper { alpha, beta }))
        .collect()
}

impl PriorChoice {
    fn apply(&self, model: &ModelSpec) -> Result<ModelSpec> {
        match (self, model) {
            (PriorChoice::Nig(h), ModelSpec::Normal { limits, .. }) => Ok(ModelSpec::Normal {
                prior: h.validated()?,
                limits: *limits,
            }),
            (PriorChoice::Beta(h), ModelSpec::Binomial { .. }) => Ok(ModelSpec::Binomial { prior: h.validated()? }),
            _ => Err(Error::InvalidPlan("prior family does not match the model".into())),
        }
    }

    /// Prior P(φ > threshold); None for improper priors.
    pub fn tail(&self, threshold: f64, limits: Option<&SpecLimits>) -> Result<Option<f64>> {
        match self {
            PriorChoice::Nig(h) => {
                let limits = limits.ok_or_else(|| Error::InvalidPlan("NIG priors need limits".into()))?;
                Ok(Some(QuadratureTail::new(limits, threshold)?.tail(&h.validated()?)))
            }
            PriorChoice::Beta(h) if h.is_proper() => Ok(Some(beta_tail(h, threshold)?)),
            PriorChoice::Beta(_) => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorCell {
    pub prior: PriorChoice,
    pub tail_threshold: f64,
    pub prior_tail: Option<f64>,
    /// Set for improper priors; their undefined looks are counted per cell.
    pub flag: Option<String>,
    pub metrics: StudyMetrics,
}

/// Repeat the study once per prior. The tail is reported at
/// `tail_threshold`, or at each plan's φ₀ when None.
pub fn prior_sensitivity_grid(config: &StudyConfig, grid: &[PriorChoice], tail_threshold: Option<f64>) -> Result<Vec<PriorCell>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("prior grid is empty".into()));
    }
    let config = config.clone().validated()?;
    let threshold = tail_threshold.unwrap_or(config.plans[0].phi0);
    grid.iter()
        .map(|prior| {
            let plans = config
                .plans
                .iter()
                .map(|p| {
                    Ok(TrialPlan {
                        model: prior.apply(&p.model)?,
                        ..p.clone()
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let metrics = run_study(&StudyConfig {
                plans,
                ..config.clone()
            })?;
            let prior_tail = prior.tail(threshold, config.limits().as_ref())?;
            let flag = prior_tail.is_none().then(|| "improper prior: PP undefined until data make it proper".to_string());
            Ok(PriorCell {
                prior: *prior,
                tail_threshold: threshold,
                prior_tail,
                flag,
                metrics,
            })
        })
        .collect()
}

/// One dataset analysed under each prior.
pub fn prior_sensitivity_data(plan: &TrialPlan, data: &[f64], grid: &[PriorChoice], master_seed: u64) -> Result<Vec<(PriorChoice, TrajectoryRecord)>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("prior grid is empty".into()));
    }
    let stream = RandomStream::new(master_seed);
    grid.iter()
        .map(|prior| {
            let p = TrialPlan {
                model: prior.apply(&plan.model)?,
                ..plan.clone()
            };
            Ok((*prior, TrialRunner::new(p, &stream)?.run(data, &stream)?))
        })
        .collect()
}

/// One row of the long-format results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub source: String,
    pub true_phi: f64,
    pub engine: String,
    pub mode: String,
    pub k: usize,
    pub schedule: String,
    pub theta_l: f64,
    pub theta_u: f64,
    pub metric: String,
    pub value: Option<f64>,
    pub std_error: Option<f64>,
    pub replicates: usize,
    pub status: String,
}

const CSV_HEADER: [&str; 13] = [
    "source", "true_phi", "engine", "mode", "k", "schedule", "theta_l", "theta_u", "metric", "value", "std_error", "replicates", "status",
];

pub fn metric_rows(metrics: &StudyMetrics) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for c in &metrics.cells {
        let row = |metric: &str, value: Option<f64>, std_error: Option<f64>| MetricRow {
            source: c.label.clone(),
            true_phi: c.true_phi,
            engine: c.engine.name().into(),
            mode: c.mode.name().into(),
            k: c.k,
            schedule: c.schedule.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"),
            theta_l: c.theta_l,
            theta_u: c.theta_u,
            metric: metric.into(),
            value,
            std_error,
            replicates: c.replicates,
            status: c.failed.as_ref().map_or("ok".into(), |e| format!("failed: {e}")),
        };
        match &c.summary {
            Some(s) => {
                let rate_name = if c.is_null() { "type1_rate" } else { "power" };
                rows.push(row(rate_name, Some(s.met_rate), s.met_se));
                rows.push(row("mean_stop_time", Some(s.mean_stop_time), s.stop_time_se));
                rows.push(row("reversal_rate", Some(s.reversal_rate), s.reversal_se));
            }
            None => rows.push(row("failed", None, None)),
        }
    }
    rows
}

pub fn write_csv<W: Write>(rows: &[MetricRow], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let csv_err = |e: csv::Error| Error::Serialization(e.to_string());
    wtr.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        wtr.serialize(r).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(rows: &[MetricRow], mut w: W) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Serialization(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_fingerprint: String,
    pub master_seed: u64,
    pub replicates: usize,
    pub cells: usize,
    pub version: String,
    pub config: StudyConfig,
}

#[derive(Debug, Clone)]
pub struct EmittedFiles {
    pub csv: PathBuf,
    pub jsonl: PathBuf,
    pub manifest: PathBuf,
}

/// Write results.csv, results.jsonl and manifest.json into `dir`.
pub fn emit_results(config: &StudyConfig, metrics: &StudyMetrics, dir: &Path) -> Result<EmittedFiles> {
    std::fs::create_dir_all(dir)?;
    let rows = metric_rows(metrics);
    let files = EmittedFiles {
        csv: dir.join("results.csv"),
        jsonl: dir.join("results.jsonl"),
        manifest: dir.join("manifest.json"),
    };
    write_csv(&rows, std::io::BufWriter::new(std::fs::File::create(&files.csv)?))?;
    write_jsonl(&rows, std::io::BufWriter::new(std::fs::File::create(&files.jsonl)?))?;
    let manifest = RunManifest {
        config_fingerprint: metrics.config_fingerprint.clone(),
        master_seed: metrics.master_seed,
        replicates: config.replicates,
        cells: metrics.cells.len(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
    };
    let body = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(&files.manifest, body)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial::run_trial;

    fn small_spec(replicates: usize) -> StudySpec {
        StudySpec {
            replicates,
            sources: Some(vec![
                DataSource::Dgm { family: DgmFamily::Normal, phi: 0.9 },
                DataSource::Dgm { family: DgmFamily::Laplace, phi: 0.8 },
            ]),
            schedules: vec![ScheduleSpec::Preset { interim_count: 0 }, ScheduleSpec::Preset { interim_count: 2 }],
            compute: ComputeSettings {
                n_predictive_draws: 200,
                ..study_compute()
            },
            ..StudySpec::normal_default()
        }
    }

    #[test]
    fn spec_resolution_builds_the_grid() {
        let cfg = StudySpec::normal_default().resolve().unwrap();
        assert_eq!(cfg.sources.len(), 10);
        assert_eq!(cfg.plans.len(), 15);
        assert_eq!(cfg.replicates, 1000);
        for p in &cfg.plans {
            match p.mode {
                StopMode::FutilityOnly => assert_eq!(p.theta_u, 1.0),
                StopMode::EfficacyOnly => assert_eq!(p.theta_l, 0.0),
                StopMode::Either => assert_eq!((p.theta_l, p.theta_u), (0.05, 0.95)),
            }
        }
        let mut bin = StudySpec::normal_default();
        bin.model = ModelSpec::Binomial { prior: BetaHyper { alpha: 1.0, beta: 1.0 } };
        bin.phi0 = 0.6;
        assert!(bin.resolve().is_err());
        bin.sources = Some(vec![DataSource::Bernoulli { p: 0.6 }]);
        assert_eq!(bin.resolve().unwrap().plans.len(), 15);
    }

    #[test]
    fn fixed_design_never_stops_early() {
        let cfg = small_spec(20).resolve().unwrap();
        let m = run_study(&cfg).unwrap();
        for c in m.cells.iter().filter(|c| c.k == 0) {
            let s = c.summary.unwrap();
            assert_eq!(s.mean_stop_time, 100.0);
            assert_eq!(s.reversal_rate, 0.0);
        }
        // the three modes agree when there are no interim looks
        let fixed: Vec<f64> = m.cells.iter().filter(|c| c.k == 0 && c.true_phi == 0.9).map(|c| c.summary.unwrap().met_rate).collect();
        assert_eq!(fixed.len(), 3);
        assert!(fixed.iter().all(|&x| x == fixed[0]));
    }

    #[test]
    fn single_replicate_has_no_standard_errors() {
        let m = run_study(&small_spec(1).resolve().unwrap()).unwrap();
        for c in &m.cells {
            let s = c.summary.unwrap();
            assert!(s.met_rate == 0.0 || s.met_rate == 1.0);
            assert!(s.met_se.is_none() && s.stop_time_se.is_none() && s.reversal_se.is_none());
        }
    }

    #[test]
    fn cells_are_independent_of_order() {
        let cfg = small_spec(8).resolve().unwrap();
        let a = run_study(&cfg).unwrap();
        let mut shuffled = cfg.clone();
        shuffled.sources.reverse();
        shuffled.plans.reverse();
        shuffled.plans.truncate(4);
        let b = run_study(&shuffled).unwrap();
        for cb in &b.cells {
            let ca = a
                .cells
                .iter()
                .find(|c| c.source == cb.source && c.plan_fingerprint == cb.plan_fingerprint)
                .unwrap();
            assert_eq!(ca.summary, cb.summary);
        }
    }

    #[test]
    fn study_trajectories_match_run_trial() {
        let cfg = small_spec(3).resolve().unwrap();
        let plan = cfg.plans.iter().find(|p| p.schedule == vec![35, 70] && p.mode == StopMode::Either).unwrap();
        let source = cfg.sources[0];
        let limits = plan_limits(plan);
        let met: Vec<bool> = (0..3)
            .map(|r| {
                let data = replicate_data(cfg.master_seed, &source, r, 100, limits.as_ref()).unwrap();
                let s = analysis_stream(cfg.master_seed, &source, r, pp_key(plan));
                run_trial(plan, &data, &s).unwrap().concluded_met()
            })
            .collect();
        let m = run_study(&cfg).unwrap();
        let cell = m.cells.iter().find(|c| c.source == source && c.plan_fingerprint == hex(plan.fingerprint())).unwrap();
        let rate = met.iter().filter(|&&x| x).count() as f64 / 3.0;
        assert_eq!(cell.summary.unwrap().met_rate, rate);
    }

    #[test]
    fn infeasible_source_fails_its_cells_only() {
        let mut spec = small_spec(4);
        spec.sources.as_mut().unwrap().push(DataSource::Dgm { family: DgmFamily::Normal, phi: 1.5 });
        let m = run_study(&spec.resolve().unwrap()).unwrap();
        let failed: Vec<_> = m.cells.iter().filter(|c| c.failed.is_some()).collect();
        assert_eq!(failed.len(), 6);
        assert!(failed.iter().all(|c| c.true_phi == 1.5 && c.summary.is_none()));
        assert!(m.cells.iter().filter(|c| c.true_phi != 1.5).all(|c| c.summary.is_some()));
        assert!(metric_rows(&m).iter().any(|r| r.metric == "failed" && r.status.starts_with("failed")));
    }

    #[test]
    fn runs_are_reproducible_and_worker_count_free() {
        let cfg = small_spec(6).resolve().unwrap();
        let a = with_workers(Some(1), || run_study(&cfg)).unwrap().unwrap();
        let b = with_workers(Some(3), || run_study(&cfg)).unwrap().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn binomial_preset() {
        let spec = StudySpec::binomial_default();
        assert_eq!(spec.replicates, BINOMIAL_REPLICATES);
        let config = StudySpec { replicates: 4, ..spec }.resolve().unwrap();
        assert_eq!(config.sources.len(), 2);
        let m = run_study(&config).unwrap();
        assert!(m.cells.iter().all(|c| c.failed.is_none()));
    }

    #[test]
    fn binomial_study_with_cp() {
        let spec = StudySpec {
            replicates: 30,
            n: 40,
            model: ModelSpec::Binomial { prior: BetaHyper { alpha: 1.0, beta: 1.0 } },
            phi0: 0.6,
            sources: Some(vec![DataSource::Bernoulli { p: 0.6 }, DataSource::Bernoulli { p: 0.9 }]),
            schedules: vec![ScheduleSpec::Looks(vec![20])],
            modes: vec![StopMode::Either],
            engines: vec![EngineChoice::Pp, EngineChoice::Cp, EngineChoice::Both],
            ..StudySpec::normal_default()
        };
        let m = run_study(&spec.resolve().unwrap()).unwrap();
        assert_eq!(m.cells.len(), 6);
        for c in &m.cells {
            let s = c.summary.unwrap();
            assert!((0.0..=1.0).contains(&s.met_rate));
            assert!((20.0..=40.0).contains(&s.mean_stop_time));
        }
        let p = |phi: f64, e: EngineChoice| m.cells.iter().find(|c| c.true_phi == phi && c.engine == e).unwrap().summary.unwrap().met_rate;
        assert!(p(0.9, EngineChoice::Pp) > p(0.6, EngineChoice::Pp));
        assert!(p(0.9, EngineChoice::Cp) > p(0.6, EngineChoice::Cp));
        assert_eq!(p(0.9, EngineChoice::Pp), p(0.9, EngineChoice::Both));
    }

    #[test]
    fn permutation_identity_and_summary() {
        let plan = small_spec(1).resolve().unwrap().plans.into_iter().find(|p| p.schedule.len() == 2).unwrap();
        let data = replicate_data(5, &DataSource::Dgm { family: DgmFamily::Normal, phi: 0.9 }, 0, 100, plan_limits(&plan).as_ref()).unwrap();
        let s = permutation_study(&data, &plan, 12, 77).unwrap();
        assert_eq!(s.trajectories.len(), 12);
        assert_eq!(s.trajectories[0], run_trial(&plan, &data, &RandomStream::new(77)).unwrap());
        assert!((0.0..=1.0).contains(&s.below_theta_l) && (0.0..=1.0).contains(&s.above_theta_u));
        let one = permutation_study(&data, &plan, 1, 77).unwrap();
        assert_eq!(one.trajectories.len(), 1);
        assert!(permutation_study(&data, &plan, 0, 77).is_err());
        let p = permutation(50, &RandomStream::new(3), 4);
        let mut sorted = p.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(p, sorted);
    }

    #[test]
    fn prior_grid() {
        let cfg = small_spec(5).resolve().unwrap();
        let benign = PriorChoice::Nig(NigHyper { m: 3.5, nu: 1.0, a: 1.0, b: 1.0 });
        let cells = prior_sensitivity_grid(&cfg, &[benign], None).unwrap();
        assert_eq!(cells[0].metrics, run_study(&cfg).unwrap());
        let tail = cells[0].prior_tail.unwrap();
        assert!((tail - 0.29).abs() < 0.02, "{tail}");

        let grid = default_beta_grid();
        let flat = grid[1].tail(0.8, None).unwrap().unwrap();
        assert!((flat - 0.2).abs() < 1e-12);
        assert_eq!(grid[0].tail(0.8, None).unwrap(), None);

        let spec = StudySpec {
            replicates: 10,
            n: 20,
            model: ModelSpec::Binomial { prior: BetaHyper { alpha: 1.0, beta: 1.0 } },
            phi0: 0.6,
            sources: Some(vec![DataSource::Bernoulli { p: 1.0 }]),
            schedules: vec![ScheduleSpec::Looks(vec![5, 10])],
            modes: vec![StopMode::Either],
            ..StudySpec::normal_default()
        };
        let cells = prior_sensitivity_grid(&spec.resolve().unwrap(), &grid, Some(0.8)).unwrap();
        assert_eq!(cells.len(), 3);
        assert!(cells[0].flag.is_some());
        assert!(cells[0].metrics.cells[0].summary.unwrap().undefined_looks > 0);
        assert!(cells[1].flag.is_none());
        assert!(prior_sensitivity_grid(&spec.resolve().unwrap(), &[], None).is_err());
    }

    #[test]
    fn emitted_tables_round_trip() {
        let cfg = small_spec(4).resolve().unwrap();
        let m = run_study(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_results(&cfg, &m, dir.path()).unwrap();
        let mut rdr = csv::Reader::from_path(&files.csv).unwrap();
        assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER.to_vec());
        let rows: Vec<MetricRow> = rdr.deserialize().collect::<std::result::Result<_, _>>().unwrap();
        assert_eq!(rows, metric_rows(&m));
        assert_eq!(rows.len(), m.cells.len() * 3);
        let jl: Vec<MetricRow> = std::fs::read_to_string(&files.jsonl)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(jl, rows);
        let first = std::fs::read(&files.csv).unwrap();
        emit_results(&cfg, &run_study(&cfg).unwrap(), dir.path()).unwrap();
        assert_eq!(std::fs::read(&files.csv).unwrap(), first);

        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
        assert!(emit_results(&cfg, &m, Path::new("/proc/nonexistent/dir")).is_err());
    }
}
