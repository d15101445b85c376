//! Subcommands of the `predstop` binary.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use predstop_core::dgm::{build_dgm, DgmFamily, STUDY_PHIS};
use predstop_core::pp::pp_mean_threshold_demo;
use predstop_core::study::{emit_results, run_study, with_workers, REDUCED_REPLICATES};
use predstop_core::{
    permutation_study, DgmSpec, PlanSpec, RandomStream, SpecLimits, StudySpec, TrajectoryRecord, TrialPlan, TrialRunner,
};

use crate::api::{router, AppState};
use crate::input::{load_config, load_data, InputError};
use crate::store::Store;

pub const DEFAULT_SEED: u64 = 1;

/// Observed summaries of the mean-threshold illustration: (n_o, mean, sd).
pub const DEMO_LOOKS: [(usize, f64, f64); 3] = [(25, 0.15, 0.99), (50, 0.16, 1.24), (75, 0.06, 1.00)];
pub const DEMO_N: usize = 100;
pub const DEMO_THETA_T: f64 = 0.9;

#[derive(Debug, Parser)]
#[command(name = "predstop", version, about = "Predictive-probability stopping for reliability experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation study and write results.csv, results.jsonl and manifest.json.
    Simulate(SimulateArgs),
    /// Analyse a data file at each scheduled look.
    Analyze(AnalyzeArgs),
    /// Data-generating mechanism utilities.
    Dgm {
        #[command(subcommand)]
        command: DgmCommand,
    },
    /// Crossing fractions over random orderings of a data file.
    Permute(PermuteArgs),
    /// Calibrated group-sequential boundaries for a plan.
    Boundaries(BoundariesArgs),
    /// Serve the session API over HTTP.
    Serve(ServeArgs),
    /// Mean-threshold illustration at n_o = 25, 50, 75.
    Demo {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Study description (JSON, or TOML by extension). Omit to run a preset.
    #[arg(conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in study: `normal` (1000 replicates) or `binomial` (100).
    #[arg(long, value_parser = ["normal", "binomial"])]
    pub preset: Option<String>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// 200 replicates instead of the configured count.
    #[arg(long, conflicts_with = "replicates")]
    pub reduced: bool,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub data: PathBuf,
    pub plan: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Print the trajectory as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum DgmCommand {
    /// Solve DGM parameters for a target φ.
    Solve(DgmSolveArgs),
}

#[derive(Debug, Args)]
pub struct DgmSolveArgs {
    /// One family; all five when omitted.
    #[arg(long)]
    pub family: Option<DgmFamily>,
    /// Target φ; 0.8 and 0.9 when omitted.
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub lower: f64,
    #[arg(long, default_value_t = 5.0)]
    pub upper: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PermuteArgs {
    pub data: PathBuf,
    pub plan: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n_perms: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BoundariesArgs {
    pub plan: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Directory for session logs; sessions are kept in memory only when unset.
    #[arg(long, env = "PREDSTOP_STORE")]
    pub store: Option<PathBuf>,
    /// Mixed into the seeds of sessions created without one.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Static files served under / (the browser console build).
    #[arg(long)]
    pub console: Option<PathBuf>,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a, out),
        Command::Analyze(a) => analyze(&a, out),
        Command::Dgm {
            command: DgmCommand::Solve(a),
        } => dgm_solve(&a, out),
        Command::Permute(a) => permute(&a, out),
        Command::Boundaries(a) => boundaries(&a, out),
        Command::Serve(a) => serve(a),
        Command::Demo { seed } => demo(seed, out),
    }
}

fn load_plan(path: &Path) -> Result<TrialPlan> {
    let spec: PlanSpec = load_config(path)?;
    spec.resolve()
        .map_err(|e| InputError::new(format!("{}: {e}", path.display())).into())
}

pub fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec: StudySpec = match &a.config {
        Some(p) => load_config(p)?,
        None if a.preset.as_deref() == Some("binomial") => StudySpec::binomial_default(),
        None => StudySpec::normal_default(),
    };
    if a.reduced {
        spec.replicates = REDUCED_REPLICATES;
    }
    if let Some(r) = a.replicates {
        spec.replicates = r;
    }
    if let Some(s) = a.seed {
        spec.master_seed = s;
    }
    let config = spec.resolve().map_err(|e| InputError::new(e.to_string()))?;
    let t0 = Instant::now();
    let metrics = with_workers(a.workers, || run_study(&config))??;
    let files = emit_results(&config, &metrics, &a.out)?;
    let failed = metrics.cells.iter().filter(|c| c.failed.is_some()).count();
    writeln!(
        out,
        "{} cells x {} replicates in {:.1} s; config {}",
        metrics.cells.len(),
        config.replicates,
        t0.elapsed().as_secs_f64(),
        metrics.config_fingerprint
    )?;
    if failed > 0 {
        writeln!(out, "{failed} cells failed; see results.jsonl")?;
    }
    writeln!(out, "wrote {}, {}, {}", files.csv.display(), files.jsonl.display(), files.manifest.display())?;
    Ok(())
}

/// Trajectory of `data` under `plan`, identical to what the service records
/// for a session with the same seed.
pub fn analyze_data(plan: TrialPlan, data: &[f64], seed: u64) -> Result<TrajectoryRecord> {
    let stream = RandomStream::new(seed);
    let runner = TrialRunner::new(plan, &stream)?;
    Ok(runner.run_partial(data, &stream)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

pub fn analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let plan = load_plan(&a.plan)?;
    let data = load_data(&a.data, &plan.model)?;
    if data.len() > plan.n {
        bail!(InputError::new(format!(
            "{}: {} observations exceed the planned n = {}",
            a.data.display(),
            data.len(),
            plan.n
        )));
    }
    let fp = plan.fingerprint();
    let t = analyze_data(plan, &data, a.seed)?;
    if a.json {
        let v = serde_json::json!({ "fingerprint": format!("{fp:016x}"), "trajectory": t });
        writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        return Ok(());
    }
    writeln!(out, "plan {fp:016x}, {} observations, θ_L = {}, θ_U = {}", data.len(), t.theta_l, t.theta_u)?;
    writeln!(out, "{:>5} {:>8} {:>8} {:>8} {:>10}  decision", "n_o", "pp", "pp_se", "cp", "statistic")?;
    for l in &t.looks {
        writeln!(
            out,
            "{:>5} {:>8} {:>8} {:>8} {:>10}  {}",
            l.n_o,
            fmt_opt(l.pp),
            fmt_opt(l.pp_std_error),
            fmt_opt(l.cp),
            fmt_opt(l.statistic),
            l.decision.name()
        )?;
    }
    match (t.first_stop, t.terminal) {
        (Some(s), _) => writeln!(out, "stopped at n_o = {}: {}", s.n_o, s.decision.name())?,
        (None, Some(d)) => writeln!(out, "completed: {}", d.name())?,
        (None, None) => writeln!(out, "no stop yet")?,
    }
    Ok(())
}

/// Four decimals without trailing zeros.
fn short(x: f64) -> String {
    let s = format!("{x:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn params(d: &DgmSpec) -> String {
    use predstop_core::numeric::ContinuousDistribution as D;
    match d.distribution {
        D::Normal { mean, variance } => format!("mu = {mean:.5}, sigma = {:.5}", variance.sqrt()),
        D::Laplace { location, scale } => format!("mu = {location:.5}, delta = {scale:.5}"),
        D::Uniform { lower, upper } => format!("({}, {})", short(lower), short(upper)),
        D::ShiftedGamma { shape, scale, shift } => {
            format!("shape = {shape:.6}, rate = {}, shift = {shift}", 1.0 / scale)
        }
    }
}

pub fn dgm_solve(a: &DgmSolveArgs, out: &mut dyn Write) -> Result<()> {
    let limits = SpecLimits::new(a.lower, a.upper).map_err(|e| InputError::new(e.to_string()))?;
    let families: Vec<DgmFamily> = a.family.map_or(DgmFamily::ALL.to_vec(), |f| vec![f]);
    let phis: Vec<f64> = a.phi.map_or(STUDY_PHIS.to_vec(), |p| vec![p]);
    let mut specs = Vec::new();
    for &f in &families {
        for &phi in &phis {
            specs.push(build_dgm(f, phi, &limits).map_err(|e| InputError::new(format!("{f} at phi = {phi}: {e}")))?);
        }
    }
    if a.json {
        let rows: Vec<_> = specs
            .iter()
            .map(|d| serde_json::json!({ "dgm": d, "realized_phi": d.realized_phi() }))
            .collect();
        writeln!(out, "{}", serde_json::to_string_pretty(&rows)?)?;
        return Ok(());
    }
    writeln!(out, "{:<16} {:>5} {:>12}  parameters", "family", "phi", "realized")?;
    for d in &specs {
        writeln!(out, "{:<16} {:>5} {:>12.9}  {}", d.family.name(), d.target_phi, d.realized_phi(), params(d))?;
    }
    Ok(())
}

pub fn permute(a: &PermuteArgs, out: &mut dyn Write) -> Result<()> {
    let plan = load_plan(&a.plan)?;
    let data = load_data(&a.data, &plan.model)?;
    let s = permutation_study(&data, &plan, a.n_perms, a.seed)?;
    if a.json {
        let v = serde_json::json!({
            "n_perms": s.n_perms,
            "below_theta_l": s.below_theta_l, "below_se": s.below_se,
            "above_theta_u": s.above_theta_u, "above_se": s.above_se,
        });
        writeln!(out, "{v}")?;
        return Ok(());
    }
    writeln!(out, "{} orderings of {} observations", s.n_perms, data.len())?;
    writeln!(out, "crossed below θ_L = {}: {:.4} (se {:.4})", s.theta_l, s.below_theta_l, s.below_se)?;
    writeln!(out, "crossed above θ_U = {}: {:.4} (se {:.4})", s.theta_u, s.above_theta_u, s.above_se)?;
    Ok(())
}

pub fn boundaries(a: &BoundariesArgs, out: &mut dyn Write) -> Result<()> {
    let mut plan = load_plan(&a.plan)?;
    plan.engine = predstop_core::EngineChoice::Cp;
    let plan = plan.validated().map_err(|e| InputError::new(e.to_string()))?;
    let runner = TrialRunner::new(plan, &RandomStream::new(a.seed))?;
    let sp = runner.spending().context("plan has no conditional-power boundaries")?;
    writeln!(out, "alpha = {}, n = {}", sp.alpha, sp.n)?;
    writeln!(out, "{:>5} {:>8} {:>12} {:>12} {:>12}", "look", "t", "cum_alpha", "critical", "achieved")?;
    for i in 0..sp.looks.len() {
        writeln!(
            out,
            "{:>5} {:>8.4} {:>12.6} {:>12.6} {:>12.6}",
            sp.looks[i], sp.schedule[i], sp.cumulative_alpha[i], sp.per_look_critical[i], sp.achieved_increment[i]
        )?;
    }
    Ok(())
}

pub fn demo_values(seed: u64) -> Result<Vec<f64>> {
    let s = RandomStream::new(seed);
    DEMO_LOOKS
        .iter()
        .map(|&(n_o, mean, sd)| {
            Ok(pp_mean_threshold_demo(n_o, mean, sd, DEMO_N, DEMO_THETA_T, &s.child("n_o", n_o as u64))?.value)
        })
        .collect()
}

pub fn demo(seed: u64, out: &mut dyn Write) -> Result<()> {
    let vals = demo_values(seed)?;
    writeln!(out, "{:>5} {:>8} {:>8} {:>8}", "n_o", "mean", "sd", "pp")?;
    for (&(n_o, mean, sd), pp) in DEMO_LOOKS.iter().zip(vals) {
        writeln!(out, "{n_o:>5} {mean:>8.2} {sd:>8.2} {pp:>8.3}")?;
    }
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    rt.enable_all();
    if let Some(w) = a.workers {
        rt.worker_threads(w.max(1)).max_blocking_threads(w.max(1));
    }
    let rt = rt.build()?;
    let (store, sessions) = match &a.store {
        Some(dir) => {
            let (store, rec) = Store::open(dir).with_context(|| format!("opening store {}", dir.display()))?;
            for (p, why) in &rec.skipped {
                log::error!("skipped {}: {why}", p.display());
            }
            (store, rec.sessions.into_iter().map(|(s, _)| s).collect())
        }
        None => (Store::memory(), Vec::new()),
    };
    let state = Arc::new(AppState::new(store, sessions, a.seed)?);
    let app = router(state, a.console.clone());
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr).await?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
