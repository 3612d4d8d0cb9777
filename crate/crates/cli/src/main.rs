//! Command-line entry point: fitting, coverage-set construction, shape
//! selection, posterior-mean prediction, and simulation studies, with
//! stable file formats and exit codes (0 success, 1 input error, 2
//! non-convergence, 3 precondition violation).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsnpmle::coverage::{build_rule, CoverageRule};
use gsnpmle::mixture::{CountSample, GammaMixtureModel};
use gsnpmle::npmle::{fit_npmle, SolverConfig};
use gsnpmle::shape::{delta_profile, resolve_eta, EtaRule, KappaConfig, KappaReport};
use gsnpmle::simlab::{
    aggregate_csv, rate_experiment, replications_csv, run_coverage_study, PriorSpec, ScenarioSpec,
};
use gsnpmle::{Error, Rng};

#[derive(Parser)]
#[command(name = "gsnpmle", version, about = "Gamma-smoothed NPMLE for Poisson count data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the NPMLE mixing measure to a file of counts
    Fit(FitArgs),
    /// Build marginal coverage sets from a fitted model
    Coverage(CoverageArgs),
    /// Estimate the minimal Gamma shape by the neighborhood procedure
    Kappa(KappaArgs),
    /// Posterior-mean predictions for a file of counts
    Predict(PredictArgs),
    /// Run a replicated coverage/length study from a scenario file
    Simulate(SimulateArgs),
    /// Prior-estimation error versus sample size with a fitted slope
    Rates(RatesArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Counts file: one nonnegative integer per line, or CSV with --column
    counts: PathBuf,
    /// Gamma shape parameter κ
    #[arg(long)]
    kappa: f64,
    #[arg(long, default_value_t = 300)]
    grid_size: usize,
    #[arg(long)]
    grid_min: Option<f64>,
    #[arg(long)]
    grid_max: Option<f64>,
    /// Gradient-gap stopping tolerance
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 50_000)]
    max_iters: usize,
    /// Force the infinity atom on or off (default: automatic)
    #[arg(long)]
    allow_infinity_atom: Option<bool>,
    /// Column name when the counts file is a CSV
    #[arg(long)]
    column: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Diagnostics path (default: <out> with a .diagnostics.json suffix)
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct CoverageArgs {
    /// Fitted model JSON
    model: PathBuf,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 200_000)]
    mc_draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of posterior-density samples for plotting
    #[arg(long)]
    emit_density: Option<PathBuf>,
}

#[derive(Args)]
struct KappaArgs {
    counts: PathBuf,
    /// Radius rule: a number, dkw:C, or cv
    #[arg(long)]
    eta: String,
    /// Shape grid as start:stop:step
    #[arg(long)]
    kappa_grid: Option<String>,
    #[arg(long, default_value_t = 150)]
    atom_grid_size: usize,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
    /// Comma-separated candidate radii for cross-validation
    #[arg(long)]
    cv_eta_grid: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    column: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of the (kappa, delta) profile
    #[arg(long)]
    profile_csv: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    model: PathBuf,
    counts: PathBuf,
    #[arg(long)]
    column: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario spec file (.json or .toml)
    spec: PathBuf,
    /// Output directory for replications.csv and aggregate.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RatesArgs {
    /// Rate-experiment spec file (.json or .toml)
    spec: PathBuf,
    /// Per-replication CSV path; the slope summary lands next to it
    #[arg(long)]
    out: PathBuf,
}

/// Rate-experiment spec file payload.
#[derive(serde::Serialize, serde::Deserialize)]
struct RateSpec {
    prior: PriorSpec,
    kappa: f64,
    n_list: Vec<usize>,
    reps: usize,
    base_seed: u64,
}

enum CliError {
    Input(String),
    NonConvergence(String),
    Precondition(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::NonConvergence(_) => 2,
            CliError::Precondition(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::NonConvergence(m) | CliError::Precondition(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match &e {
            Error::NonConvergence { .. } | Error::Solver(_) => {
                CliError::NonConvergence(e.to_string())
            }
            Error::Precondition(_) => CliError::Precondition(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {}", e.message());
        return ExitCode::from(e.exit_code());
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

/// GSNPMLE_THREADS caps the worker pool; 0 or unset means automatic.
fn configure_threads() -> Result<(), CliError> {
    if let Ok(raw) = std::env::var("GSNPMLE_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| CliError::Input(format!("bad GSNPMLE_THREADS value '{raw}'")))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Coverage(args) => cmd_coverage(args),
        Command::Kappa(args) => cmd_kappa(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Rates(args) => cmd_rates(args),
    }
}

/// Reads counts from plain lines or from a named CSV column.
fn read_counts(path: &Path, column: Option<&str>) -> Result<Vec<u32>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if let Some(column) = column {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let idx = headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| {
                CliError::Input(format!("{}: no column '{column}'", path.display()))
            })?;
        let mut counts = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record =
                record.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let field = record.get(idx).unwrap_or("");
            let value: u32 = field.trim().parse().map_err(|_| {
                CliError::Input(format!(
                    "{}: line {}: bad count '{}'",
                    path.display(),
                    row + 2,
                    field
                ))
            })?;
            counts.push(value);
        }
        Ok(counts)
    } else {
        let mut counts = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let value: u32 = line.parse().map_err(|_| {
                CliError::Input(format!(
                    "{}: line {}: bad count '{}'",
                    path.display(),
                    lineno + 1,
                    line
                ))
            })?;
            counts.push(value);
        }
        Ok(counts)
    }
}

fn load_model(path: &Path) -> Result<GammaMixtureModel, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    GammaMixtureModel::from_json_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    if !(args.kappa > 0.0) {
        return Err(CliError::Input(format!(
            "--kappa must be > 0, got {}",
            args.kappa
        )));
    }
    let counts = read_counts(&args.counts, args.column.as_deref())?;
    let sample = CountSample::new(counts)?;
    let config = SolverConfig {
        grid_size: args.grid_size,
        grid_min: args.grid_min,
        grid_max: args.grid_max,
        allow_infinity_atom: args.allow_infinity_atom,
        tol_gradient: args.tol,
        max_iters: args.max_iters,
        ..SolverConfig::default()
    };
    let diagnostics_path = args.diagnostics.unwrap_or_else(|| {
        let mut stem = args.out.clone();
        stem.set_extension("diagnostics.json");
        stem
    });
    match fit_npmle(&sample, args.kappa, &config) {
        Ok((model, diagnostics)) => {
            if model.mixing().mass_at_infinity() > 0.0 {
                eprintln!(
                    "warning: fitted measure places mass {} at infinity (prior atom at 0)",
                    model.mixing().mass_at_infinity()
                );
            }
            fs::write(&args.out, model.to_json_string().map_err(CliError::from)?)?;
            fs::write(
                &diagnostics_path,
                serde_json::to_string_pretty(&diagnostics)
                    .map_err(|e| CliError::Input(e.to_string()))?,
            )?;
            Ok(())
        }
        Err(Error::NonConvergence {
            gap,
            iterations,
            tol,
            diagnostics,
        }) => {
            fs::write(
                &diagnostics_path,
                serde_json::to_string_pretty(&diagnostics)
                    .map_err(|e| CliError::Input(e.to_string()))?,
            )?;
            Err(CliError::NonConvergence(format!(
                "NPMLE did not converge: gap {gap:.3e} after {iterations} iterations (tolerance {tol:.1e}); diagnostics written to {}",
                diagnostics_path.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_coverage(args: CoverageArgs) -> Result<(), CliError> {
    if !(args.beta > 0.0 && args.beta < 1.0) {
        return Err(CliError::Input(format!(
            "--beta must lie strictly between 0 and 1, got {}",
            args.beta
        )));
    }
    if args.mc_draws == 0 {
        return Err(CliError::Input("--mc-draws must be positive".into()));
    }
    let model = load_model(&args.model)?;
    let mut rng = Rng::new(args.seed, 0);
    let rule = build_rule(&model, args.beta, args.mc_draws, &mut rng)?;
    fs::write(&args.out, rule.to_json_string().map_err(CliError::from)?)?;
    if let Some(density_path) = args.emit_density {
        fs::write(&density_path, density_csv(&model, &rule)?)?;
    }
    Ok(())
}

/// Posterior density sampled on each count's level-set scan grid.
fn density_csv(model: &GammaMixtureModel, rule: &CoverageRule) -> Result<String, CliError> {
    let mut out = String::from("x,theta,posterior_density\n");
    for x in 0..=rule.x_max {
        for (theta, density) in gsnpmle::coverage::posterior_density_grid(model, x, 256)? {
            out.push_str(&format!("{x},{theta},{density}\n"));
        }
    }
    Ok(out)
}

fn parse_kappa_grid(raw: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Input(format!(
            "--kappa-grid wants start:stop:step, got '{raw}'"
        )));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| CliError::Input(format!("bad number '{p}' in --kappa-grid")))
        })
        .collect::<Result<_, _>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(start > 0.0 && stop >= start && step > 0.0) {
        return Err(CliError::Input(format!("degenerate --kappa-grid '{raw}'")));
    }
    let mut grid = Vec::new();
    let mut i = 0u32;
    loop {
        let v = start + step * f64::from(i);
        if v > stop + 1e-12 {
            break;
        }
        grid.push(v);
        i += 1;
    }
    Ok(grid)
}

fn cmd_kappa(args: KappaArgs) -> Result<(), CliError> {
    let counts = read_counts(&args.counts, args.column.as_deref())?;
    let sample = CountSample::new(counts)?;
    let eta_rule: EtaRule = args
        .eta
        .parse()
        .map_err(|e: Error| CliError::Input(e.to_string()))?;
    let mut config = KappaConfig {
        atom_grid_size: args.atom_grid_size,
        cv_folds: args.cv_folds,
        eta: eta_rule,
        ..KappaConfig::default()
    };
    if let Some(raw) = &args.kappa_grid {
        config.kappa_grid = parse_kappa_grid(raw)?;
    }
    if let Some(raw) = &args.cv_eta_grid {
        config.cv_eta_grid = raw
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Input(format!("bad --cv-eta-grid entry '{p}'")))
            })
            .collect::<Result<_, _>>()?;
    }
    let mut rng = Rng::new(args.seed, 0);
    let (eta, rule_name) = resolve_eta(&sample, &config, &mut rng)?;
    let profile = delta_profile(&sample, &config)?;
    let kappa_hat = match profile.iter().find(|&&(_, delta)| delta <= eta) {
        Some(&(kappa, _)) => kappa,
        None => {
            let fallback = config.kappa_grid[config.kappa_grid.len() - 1];
            eprintln!(
                "warning: no grid shape reaches radius {eta}; returning the largest grid value {fallback}"
            );
            fallback
        }
    };
    let report = KappaReport {
        kappa_hat,
        eta,
        eta_rule: rule_name.to_string(),
        profile: profile.clone(),
    };
    fs::write(
        &args.out,
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Input(e.to_string()))?,
    )?;
    if let Some(path) = args.profile_csv {
        let mut csv_text = String::from("kappa,delta\n");
        for (k, d) in &profile {
            csv_text.push_str(&format!("{k},{d}\n"));
        }
        fs::write(&path, csv_text)?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let counts = read_counts(&args.counts, args.column.as_deref())?;
    let mut out = String::from("index,x,posterior_mean\n");
    for (i, &x) in counts.iter().enumerate() {
        let mean = model.posterior_mean(x)?;
        out.push_str(&format!("{i},{x},{mean}\n"));
    }
    fs::write(&args.out, out)?;
    Ok(())
}

fn load_spec_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn parse_spec<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, CliError> {
    let is_toml = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("toml"))
        .unwrap_or(false);
    if is_toml {
        toml::from_str(text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let text = load_spec_text(&args.spec)?;
    let spec: ScenarioSpec = parse_spec(&args.spec, &text)?;
    spec.validate()?;
    fs::create_dir_all(&args.out)?;
    let result = run_coverage_study(&spec)?;
    for (rep, err) in &result.failures {
        eprintln!("warning: replication {rep} failed: {err}");
    }
    if result.replications.is_empty() {
        return Err(CliError::NonConvergence(
            "every replication failed".into(),
        ));
    }
    fs::write(
        args.out.join("replications.csv"),
        replications_csv(&result.replications),
    )?;
    fs::write(args.out.join("aggregate.csv"), aggregate_csv(&result.aggregate))?;
    for (name, mean, sd) in &result.aggregate {
        println!("{name}: {mean:.4} ({sd:.4})");
    }
    Ok(())
}

fn cmd_rates(args: RatesArgs) -> Result<(), CliError> {
    let text = load_spec_text(&args.spec)?;
    let spec: RateSpec = parse_spec(&args.spec, &text)?;
    let result = rate_experiment(
        &spec.prior,
        spec.kappa,
        &spec.n_list,
        spec.reps,
        spec.base_seed,
    )?;
    let mut out = String::from("n,rep_id,tv\n");
    for (n, rep, tv) in &result.samples {
        out.push_str(&format!("{n},{rep},{tv}\n"));
    }
    fs::write(&args.out, out)?;

    let summary_path = summary_path(&args.out);
    let mut summary = String::from("quantity,value\n");
    summary.push_str(&format!("slope,{}\n", result.slope));
    summary.push_str(&format!("intercept,{}\n", result.intercept));
    for (n, mean_tv) in &result.per_n {
        summary.push_str(&format!("mean_tv_n{n},{mean_tv}\n"));
    }
    fs::write(&summary_path, summary)?;
    println!(
        "slope: {:.4} (summary written to {})",
        result.slope,
        summary_path.display()
    );
    Ok(())
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "rates".into());
    out.with_file_name(format!("{stem}_summary.csv"))
}
