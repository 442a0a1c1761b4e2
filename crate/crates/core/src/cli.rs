//! Command-line front end: simulate panels, estimate, run placebo splits,
//! detrend, and run Monte Carlo studies. All outputs are deterministic.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bridges::{BasisKind, InstrumentBasis};
use crate::dgp::{self, DgpConfig, Scenario};
use crate::error::{Error, Result};
use crate::gmm::{self, Bandwidth, FitDiagnostics, GmmFit, GmmOptions, HacOptions};
use crate::mc::{self, McDesign, McMethod, McScenario};
use crate::moments::{ImportanceWeights, Method, MomentSpec};
use crate::panel::{self, DetrendInfo, DetrendScope, Layout, PanelData, Split};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;
pub const EXIT_NOT_CONVERGED: i32 = 5;
pub const EXIT_NUMERICAL: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "proxsc", version, about = "Proximal synthetic control estimation")]
pub struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a panel and write it with its layout file.
    Simulate(SimulateArgs),
    /// Estimate the treatment effect on a panel file.
    Estimate(EstimateArgs),
    /// Estimate on the pre-treatment periods with an earlier fictitious split.
    Placebo(PlaceboArgs),
    /// Remove a pooled polynomial time trend from every series.
    Detrend(DetrendArgs),
    /// Monte Carlo bias and coverage study.
    Mc(McArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioArg {
    Just,
    Over,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "just")]
    pub scenario: ScenarioArg,
    /// Number of latent confounders (just-identified design).
    #[arg(long = "K", default_value_t = 2)]
    pub k: usize,
    #[arg(long = "T", default_value_t = 1000)]
    pub t: usize,
    /// Number of pre-treatment periods; defaults to T/2.
    #[arg(long = "T0")]
    pub t0: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Apply the copula to the raw latent process instead of its standardized version.
    #[arg(long)]
    pub raw_copula: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct LayoutArgs {
    /// Panel file (comma or tab delimited, with header).
    #[arg(long)]
    pub input: PathBuf,
    /// Layout file with key=value lines; defaults to `<input stem>.layout` when present.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long)]
    pub time_col: Option<String>,
    #[arg(long)]
    pub treated_col: Option<String>,
    /// Comma-separated donor columns.
    #[arg(long, value_delimiter = ',')]
    pub donors: Option<Vec<String>>,
    /// Comma-separated supplemental proxy columns.
    #[arg(long, value_delimiter = ',')]
    pub supplemental: Option<Vec<String>>,
    /// Number of pre-treatment periods.
    #[arg(long = "T0")]
    pub t0: Option<usize>,
    /// Time value of the last pre-treatment period.
    #[arg(long)]
    pub last_pre_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    H,
    Q,
    Dr,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::H => Method::OutcomeOnly,
            MethodArg::Q => Method::WeightingOnly,
            MethodArg::Dr => Method::DoublyRobust,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisArg {
    Affine,
    Poly2,
}

impl From<BasisArg> for BasisKind {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::Affine => BasisKind::Affine,
            BasisArg::Poly2 => BasisKind::Poly2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScopeArg {
    All,
    Pre,
}

impl From<ScopeArg> for DetrendScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::All => DetrendScope::AllPeriods,
            ScopeArg::Pre => DetrendScope::PrePeriod,
        }
    }
}

#[derive(Debug, Args, Clone)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: LayoutArgs,
    #[arg(long, value_enum, default_value = "dr")]
    pub method: MethodArg,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub stationary: bool,
    /// `uniform`, or a file with one weight per post-treatment period.
    #[arg(long, default_value = "uniform")]
    pub ell: String,
    /// Instrument basis for the outcome bridge.
    #[arg(long, value_enum, default_value = "affine")]
    pub basis_h: BasisArg,
    /// Instrument basis for the treatment bridge.
    #[arg(long, value_enum, default_value = "affine")]
    pub basis_q: BasisArg,
    /// Donor columns entering the outcome bridge (names or 1-based positions).
    #[arg(long, value_delimiter = ',')]
    pub w_cols: Option<Vec<String>>,
    /// Supplemental columns entering the treatment bridge (names or 1-based positions).
    #[arg(long, value_delimiter = ',')]
    pub z_cols: Option<Vec<String>>,
    /// Remove a pooled polynomial trend of this degree first.
    #[arg(long)]
    pub detrend: Option<usize>,
    #[arg(long, value_enum, default_value = "all")]
    pub detrend_scope: ScopeArg,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    /// HAC truncation lag: `auto` or an integer.
    #[arg(long, default_value = "auto")]
    pub hac_lag: String,
    /// Center the autocovariances in the HAC estimator.
    #[arg(long)]
    pub hac_centered: bool,
    /// Number of optimizer starting points.
    #[arg(long, default_value_t = 1)]
    pub multi_start: usize,
    /// Seed for multi-start perturbations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlaceboArgs {
    #[command(flatten)]
    pub estimate: EstimateArgs,
    /// Fictitious number of pre-treatment periods, below the true one.
    #[arg(long = "placebo-T0")]
    pub placebo_t0: usize,
}

#[derive(Debug, Args)]
pub struct DetrendArgs {
    #[command(flatten)]
    pub data: LayoutArgs,
    #[arg(long, default_value_t = 2)]
    pub degree: usize,
    #[arg(long, value_enum, default_value = "all")]
    pub scope: ScopeArg,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long, value_enum, default_value = "just")]
    pub scenario: ScenarioArg,
    #[arg(long = "T", value_delimiter = ',', default_values_t = vec![500, 1000, 2000, 4000])]
    pub t: Vec<usize>,
    #[arg(long = "K", value_delimiter = ',', default_values_t = vec![2, 3, 4, 5])]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    /// Comma-separated method labels; defaults to all eight.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Base seed; replication r uses seed + r.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    #[arg(long, default_value = "auto")]
    pub hac_lag: String,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub raw_copula: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Outcome of a subcommand that produced output but should still signal failure.
struct Outcome {
    converged: bool,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => EXIT_IO,
        Error::Numerical(_) | Error::RankDeficient { .. } => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(Outcome { converged: true }) => EXIT_OK,
        Ok(Outcome { converged: false }) => {
            eprintln!("error: optimizer did not converge (report written)");
            EXIT_NOT_CONVERGED
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, cli.verbose),
        Command::Estimate(a) => cmd_estimate(a, None, cli.verbose),
        Command::Placebo(a) => cmd_estimate(&a.estimate, Some(a.placebo_t0), cli.verbose),
        Command::Detrend(a) => cmd_detrend(a, cli.verbose),
        Command::Mc(a) => cmd_mc(a, cli.verbose),
    }
}

#[derive(Serialize)]
struct Metadata<'a, O: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    options: &'a O,
}

fn metadata<'a, O: Serialize>(command: &'static str, options: &'a O) -> Metadata<'a, O> {
    Metadata {
        tool: "proxsc",
        version: env!("CARGO_PKG_VERSION"),
        command,
        options,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(format!("serializing report: {e}")))?;
    text.push('\n');
    write_file(path, &text)
}

fn parse_bandwidth(s: &str) -> Result<Bandwidth> {
    s.parse()
}

fn scenario_config(scenario: ScenarioArg, k: usize, t: usize, t0: Option<usize>, seed: u64, raw: bool) -> DgpConfig {
    let mut cfg = match scenario {
        ScenarioArg::Just => DgpConfig::just_identified(k, t, seed),
        ScenarioArg::Over => DgpConfig::over_identified(t, seed),
    };
    cfg.t0 = t0;
    cfg.standardize = !raw;
    cfg
}

fn cmd_simulate(a: &SimulateArgs, verbose: bool) -> Result<Outcome> {
    let cfg = scenario_config(a.scenario, a.k, a.t, a.t0, a.seed, a.raw_copula);
    let sim = dgp::simulate(&cfg)?;
    ensure_dir(&a.out)?;
    write_file(&a.out.join("panel.csv"), &sim.panel.to_delimited())?;
    write_file(&a.out.join("panel.layout"), &sim.panel.layout().to_config_string())?;
    #[derive(Serialize)]
    struct Report<'a> {
        metadata: Metadata<'a, DgpConfig>,
        att_true: f64,
        n_periods: usize,
        t0: usize,
        outcome_bridge: Vec<f64>,
        treatment_bridge: Vec<f64>,
    }
    let report = Report {
        metadata: metadata("simulate", &cfg),
        att_true: sim.att_true,
        n_periods: sim.panel.n_periods(),
        t0: sim.panel.t0(),
        outcome_bridge: dgp::oracle_outcome_bridge(&cfg)?.alpha,
        treatment_bridge: dgp::oracle_treatment_bridge(&cfg)?.beta,
    };
    write_json(&a.out.join("simulate.json"), &report)?;
    if verbose {
        eprintln!("wrote {} periods to {}", sim.panel.n_periods(), a.out.display());
    }
    Ok(Outcome { converged: true })
}

fn resolve_layout(a: &LayoutArgs) -> Result<Layout> {
    let explicit = a.layout.clone().or_else(|| {
        let p = a.input.with_extension("layout");
        let flags_complete = a.time_col.is_some() && a.treated_col.is_some() && a.donors.is_some() && a.supplemental.is_some();
        (p.exists() && !flags_complete).then_some(p)
    });
    let mut layout = match &explicit {
        Some(p) => Some(Layout::from_config_file(p)?),
        None => None,
    };
    let split = match (a.t0, a.last_pre_time) {
        (Some(_), Some(_)) => return Err(Error::Validation("give only one of --T0 and --last-pre-time".into())),
        (Some(n), None) => Some(Split::PreCount(n)),
        (None, Some(v)) => Some(Split::LastPreTime(v)),
        (None, None) => None,
    };
    if let Some(l) = layout.as_mut() {
        if let Some(v) = &a.time_col {
            l.time = v.clone();
        }
        if let Some(v) = &a.treated_col {
            l.treated = v.clone();
        }
        if let Some(v) = &a.donors {
            l.donors = v.clone();
        }
        if let Some(v) = &a.supplemental {
            l.supplemental = v.clone();
        }
        if let Some(s) = split.clone() {
            l.split = s;
        }
    }
    match layout {
        Some(l) => Ok(l),
        None => {
            let need = |what: &str| Error::Validation(format!("no layout file; missing --{what}"));
            Ok(Layout {
                time: a.time_col.clone().ok_or_else(|| need("time-col"))?,
                treated: a.treated_col.clone().ok_or_else(|| need("treated-col"))?,
                donors: a.donors.clone().ok_or_else(|| need("donors"))?,
                supplemental: a.supplemental.clone().ok_or_else(|| need("supplemental"))?,
                split: split.ok_or_else(|| need("T0"))?,
            })
        }
    }
}

fn resolve_columns(keys: &[String], labels: &[String], what: &str) -> Result<Vec<usize>> {
    let mut cols = Vec::with_capacity(keys.len());
    for key in keys {
        let idx = match labels.iter().position(|l| l == key) {
            Some(i) => i,
            None => match key.parse::<usize>() {
                Ok(i) if i >= 1 && i <= labels.len() => i - 1,
                _ => return Err(Error::Validation(format!("{what}: unknown column `{key}`"))),
            },
        };
        cols.push(idx);
    }
    cols.sort_unstable();
    cols.dedup();
    Ok(cols)
}

fn read_ell(spec: &str, n_post: usize) -> Result<ImportanceWeights> {
    if spec == "uniform" {
        return Ok(ImportanceWeights::Uniform);
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let weights: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Validation(format!("importance weights: bad value `{s}`"))))
        .collect::<Result<_>>()?;
    if weights.len() != n_post {
        return Err(Error::dim(n_post, weights.len(), "importance weights"));
    }
    Ok(ImportanceWeights::Custom(weights))
}

fn build_spec(a: &EstimateArgs, panel: &PanelData) -> Result<MomentSpec> {
    let mut spec = MomentSpec::new(a.method.into(), panel);
    spec.stationary = a.stationary;
    if let Some(cols) = &a.w_cols {
        spec.h_columns = resolve_columns(cols, &panel.labels().donors, "--w-cols")?;
    }
    if let Some(cols) = &a.z_cols {
        spec.q_columns = resolve_columns(cols, &panel.labels().supplemental, "--z-cols")?;
    }
    spec.gh = InstrumentBasis::all(a.basis_h.into(), panel.dz());
    spec.gq = InstrumentBasis::all(a.basis_q.into(), panel.dw());
    spec.ell = read_ell(&a.ell, panel.n_post())?;
    spec.validate(panel)?;
    Ok(spec)
}

#[derive(Serialize)]
struct EstimateOptions<'a> {
    input: String,
    layout: String,
    method: MethodArg,
    stationary: bool,
    ell: &'a str,
    basis_h: BasisArg,
    basis_q: BasisArg,
    h_columns: Vec<String>,
    q_columns: Vec<String>,
    detrend: Option<usize>,
    detrend_scope: ScopeArg,
    placebo_t0: Option<usize>,
    ci_level: f64,
    hac: HacOptions,
    multi_start: usize,
    seed: u64,
    max_iter: usize,
    grad_tol: f64,
    weight_matrix: &'static str,
}

#[derive(Serialize)]
struct DetrendSummary {
    degree: usize,
    scope: &'static str,
    coefficients: Vec<f64>,
    time_min: f64,
    time_span: f64,
}

impl From<&DetrendInfo> for DetrendSummary {
    fn from(d: &DetrendInfo) -> Self {
        DetrendSummary {
            degree: d.degree,
            scope: match d.scope {
                DetrendScope::AllPeriods => "all",
                DetrendScope::PrePeriod => "pre",
            },
            coefficients: d.coefficients.clone(),
            time_min: d.time_min,
            time_span: d.time_span,
        }
    }
}

#[derive(Serialize)]
struct Parameters {
    alpha: Option<Vec<f64>>,
    beta: Option<Vec<f64>>,
    att: f64,
    psi: Option<Vec<f64>>,
    psi_minus: Option<f64>,
}

impl Parameters {
    fn from_fit(fit: &GmmFit) -> Self {
        let l = &fit.layout;
        Parameters {
            alpha: l.alpha.clone().map(|r| fit.theta_hat[r].to_vec()),
            beta: l.beta.clone().map(|r| fit.theta_hat[r].to_vec()),
            att: fit.theta_hat[l.lambda],
            psi: l.psi.clone().map(|r| fit.theta_hat[r].to_vec()),
            psi_minus: l.psi_minus.map(|i| fit.theta_hat[i]),
        }
    }
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    metadata: Metadata<'a, EstimateOptions<'a>>,
    /// Known value of the estimand; zero for placebo splits.
    estimand_truth: Option<f64>,
    n_periods: usize,
    t0: usize,
    moment_dim: usize,
    param_dim: usize,
    estimate: f64,
    se: f64,
    ci: Option<(f64, f64)>,
    ci_level: f64,
    converged: bool,
    objective: f64,
    hac_lag: usize,
    clamped_rows: usize,
    parameters: Parameters,
    detrend: Option<DetrendSummary>,
    diagnostics: &'a FitDiagnostics,
}

fn cmd_estimate(a: &EstimateArgs, placebo_t0: Option<usize>, verbose: bool) -> Result<Outcome> {
    let layout = resolve_layout(&a.data)?;
    let mut panel = panel::load_panel(&a.data.input, &layout)?;
    // the trend is fitted on the full panel, before any placebo truncation
    let mut trend = None;
    if let Some(degree) = a.detrend {
        let (detrended, info) = panel::detrend_with(&panel, degree, a.detrend_scope.into())?;
        panel = detrended;
        trend = Some(info);
    }
    if let Some(p) = placebo_t0 {
        panel = panel::placebo_split(&panel, p)?;
    }
    let spec = build_spec(a, &panel)?;
    let opts = GmmOptions {
        max_iter: a.max_iter,
        multi_start: a.multi_start,
        seed: a.seed,
        ci_level: a.ci_level,
        hac: HacOptions {
            bandwidth: parse_bandwidth(&a.hac_lag)?,
            centered: a.hac_centered,
            ..Default::default()
        },
        ..Default::default()
    };
    let fit = gmm::fit(&panel, &spec, &opts, None)?;
    if verbose {
        eprintln!(
            "ATT {:.6} (SE {:.6}), objective {:.3e}, {} iterations",
            fit.att_estimate, fit.att_se, fit.objective_value, fit.diagnostics.iterations
        );
    }

    ensure_dir(&a.out)?;
    let labels = panel.labels();
    let options = EstimateOptions {
        input: a.data.input.display().to_string(),
        layout: layout.to_config_string(),
        method: a.method,
        stationary: a.stationary,
        ell: &a.ell,
        basis_h: a.basis_h,
        basis_q: a.basis_q,
        h_columns: spec.h_columns.iter().map(|&i| labels.donors[i].clone()).collect(),
        q_columns: spec.q_columns.iter().map(|&i| labels.supplemental[i].clone()).collect(),
        detrend: a.detrend,
        detrend_scope: a.detrend_scope,
        placebo_t0,
        ci_level: a.ci_level,
        hac: opts.hac.clone(),
        multi_start: a.multi_start,
        seed: a.seed,
        max_iter: a.max_iter,
        grad_tol: opts.grad_tol,
        weight_matrix: "identity",
    };
    let report = EstimateReport {
        metadata: metadata(if placebo_t0.is_some() { "placebo" } else { "estimate" }, &options),
        estimand_truth: placebo_t0.map(|_| 0.0),
        n_periods: panel.n_periods(),
        t0: panel.t0(),
        moment_dim: fit.diagnostics.moment_dim,
        param_dim: fit.diagnostics.param_dim,
        estimate: fit.att_estimate,
        se: fit.att_se,
        ci: fit.att_ci,
        ci_level: a.ci_level,
        converged: fit.converged,
        objective: fit.objective_value,
        hac_lag: fit.diagnostics.hac_lag,
        clamped_rows: fit.n_clamps,
        parameters: Parameters::from_fit(&fit),
        detrend: trend.as_ref().map(DetrendSummary::from),
        diagnostics: &fit.diagnostics,
    };
    write_json(&a.out.join("report.json"), &report)?;

    let trajectory = a.out.join("trajectory.csv");
    if spec.method.uses_outcome_bridge() {
        write_file(&trajectory, &trajectory_csv(&panel, &spec, &fit, trend.as_ref())?)?;
    } else if trajectory.exists() {
        // a stale trajectory from an earlier run would misrepresent this one
        fs::remove_file(&trajectory).map_err(|e| Error::io(&trajectory, e))?;
    }
    Ok(Outcome { converged: fit.converged })
}

/// `t -> h(W_t)` next to the observed outcome; with detrending, also on the
/// original scale.
fn trajectory_csv(panel: &PanelData, spec: &MomentSpec, fit: &GmmFit, trend: Option<&DetrendInfo>) -> Result<String> {
    let alpha = crate::bridges::OutcomeBridgeParams::on_columns(fit.alpha().unwrap_or_default().to_vec(), spec.h_columns.clone())?;
    let mut out = String::from("time,post,observed,synthetic,gap");
    if trend.is_some() {
        out.push_str(",observed_original,synthetic_original");
    }
    out.push('\n');
    for t in 0..panel.n_periods() {
        let time = panel.times()[t];
        let y = panel.y()[t];
        let h = alpha.eval(panel.w_row(t))?;
        let _ = write!(out, "{},{},{},{},{}", time, u8::from(!panel.is_pre(t)), y, h, y - h);
        if let Some(info) = trend {
            let f = info.trend_at(time);
            let _ = write!(out, ",{},{}", y + f, h + f);
        }
        out.push('\n');
    }
    Ok(out)
}

fn cmd_detrend(a: &DetrendArgs, verbose: bool) -> Result<Outcome> {
    let layout = resolve_layout(&a.data)?;
    let panel = panel::load_panel(&a.data.input, &layout)?;
    let (detrended, info) = panel::detrend_with(&panel, a.degree, a.scope.into())?;
    ensure_dir(&a.out)?;
    write_file(&a.out.join("panel.csv"), &detrended.to_delimited())?;
    write_file(&a.out.join("panel.layout"), &detrended.layout().to_config_string())?;
    #[derive(Serialize)]
    struct Options {
        input: String,
        degree: usize,
        scope: ScopeArg,
    }
    #[derive(Serialize)]
    struct Report<'a> {
        metadata: Metadata<'a, Options>,
        trend: DetrendSummary,
    }
    let options = Options {
        input: a.data.input.display().to_string(),
        degree: a.degree,
        scope: a.scope,
    };
    write_json(
        &a.out.join("report.json"),
        &Report {
            metadata: metadata("detrend", &options),
            trend: DetrendSummary::from(&info),
        },
    )?;
    if verbose {
        eprintln!("trend coefficients {:?}", info.coefficients);
    }
    Ok(Outcome { converged: true })
}

fn cmd_mc(a: &McArgs, verbose: bool) -> Result<Outcome> {
    let methods = match &a.methods {
        Some(list) => list.iter().map(|s| s.parse()).collect::<Result<Vec<McMethod>>>()?,
        None => McMethod::ALL.to_vec(),
    };
    let design = McDesign {
        scenario: match a.scenario {
            ScenarioArg::Just => McScenario::JustIdentified,
            ScenarioArg::Over => McScenario::OverIdentified,
        },
        t_grid: a.t.clone(),
        k_grid: a.k.clone(),
        reps: a.reps,
        methods: methods.clone(),
        base_seed: a.seed,
        ci_level: a.ci_level,
        gmm: GmmOptions {
            hac: HacOptions {
                bandwidth: parse_bandwidth(&a.hac_lag)?,
                ..Default::default()
            },
            ..Default::default()
        },
        workers: a.workers,
        standardize: !a.raw_copula,
    };
    let report = mc::run_mc(&design)?;
    ensure_dir(&a.out)?;
    write_file(&a.out.join("mc_summary.csv"), &report.summary_csv())?;
    write_file(&a.out.join("mc_plot.csv"), &report.plot_csv())?;
    write_file(&a.out.join("mc_records.csv"), &report.records_csv())?;

    #[derive(Serialize)]
    struct Options {
        scenario: ScenarioArg,
        t_grid: Vec<usize>,
        k_grid: Vec<usize>,
        reps: usize,
        methods: Vec<&'static str>,
        base_seed: u64,
        ci_level: f64,
        hac: HacOptions,
        standardize_copula: bool,
        ols_se: &'static str,
    }
    #[derive(Serialize)]
    struct Report<'a> {
        metadata: Metadata<'a, Options>,
        att_true: f64,
        cells: &'a [mc::McCell],
    }
    let options = Options {
        scenario: a.scenario,
        t_grid: a.t.clone(),
        k_grid: if a.scenario == ScenarioArg::Over { vec![Scenario::OverIdentified.latent_dim()] } else { a.k.clone() },
        reps: a.reps,
        methods: methods.iter().map(|m| m.label()).collect(),
        base_seed: a.seed,
        ci_level: a.ci_level,
        hac: design.gmm.hac.clone(),
        standardize_copula: !a.raw_copula,
        ols_se: "centered HAC long-run variance of post-period OLS residuals",
    };
    write_json(
        &a.out.join("report.json"),
        &Report {
            metadata: metadata("mc", &options),
            att_true: report.att_true,
            cells: &report.cells,
        },
    )?;
    if verbose {
        eprint!("{}", report.summary_csv());
    }
    Ok(Outcome { converged: true })
}
