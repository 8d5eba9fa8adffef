//! `survequiv` command-line tool.
//!
//! Exit codes: 0 success (or rejection for `test`), 1 no rejection for
//! `test`, 2 bad arguments or input data, 3 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use survequiv::bands::{pointwise_band, BootstrapOptions, Resampling};
use survequiv::dataset::{parse_dataset, Dataset};
use survequiv::equivtest::{run_test, Margin, TestKind, TimeSpec, DEFAULT_INTERVAL_GRID};
use survequiv::inference::{fit_with_censoring, select_model};
use survequiv::nonparametric::{kaplan_meier, km_difference_band, logrank_test};
use survequiv::simulation::{scenario, StudyConfig, StudyKind, StudyMethod, TestSpec};
use survequiv::{BandMethod, BandTarget, ConfidenceBand, Error, Family, FitOptions, FitResult, VarianceMethod};

#[derive(Parser, Serialize)]
#[command(name = "survequiv", version, about = "Equivalence and non-inferiority tests for parametric survival curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Fit a parametric model and the censoring model to each group.
    Fit(FitArgs),
    /// Rank all four families by AIC in each group.
    Select(SelectArgs),
    /// Pointwise confidence band for the difference between the groups.
    Bands(BandsArgs),
    /// Non-inferiority or equivalence test at a time point or over an interval.
    Test(TestArgs),
    /// Kaplan-Meier curves, or their difference band with --band.
    Km(KmArgs),
    /// Two-group log-rank test.
    Logrank(DataArgs),
    /// Monte-Carlo coverage or rejection study on a bundled scenario.
    Simulate(SimulateArgs),
}

#[derive(Args, Serialize)]
struct DataArgs {
    /// Delimited file with columns time, status, group (and optionally id).
    #[arg(long)]
    data: PathBuf,
    /// Name of the reference group; defaults to the lexicographically first.
    #[arg(long)]
    reference: Option<String>,
    /// Label for the time unit, echoed into outputs.
    #[arg(long)]
    time_unit: Option<String>,
    /// Output file; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ModelArgs {
    #[arg(long, default_value = "weibull")]
    family: Family,
    #[arg(long, default_value = "exponential")]
    censoring_family: Family,
}

#[derive(Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    family: Family,
    #[arg(long, default_value = "exponential")]
    censoring_family: Family,
}

#[derive(Args, Serialize)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Serialize)]
struct VarianceArgs {
    /// asymptotic, bootstrap or nonparametric_bootstrap.
    #[arg(long, default_value = "asymptotic")]
    method: BandMethod,
    #[arg(long, default_value_t = 500)]
    n_boot: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Administrative end of follow-up for parametric bootstrap samples.
    #[arg(long)]
    admin_cutoff: Option<f64>,
}

#[derive(Args, Serialize)]
struct BandsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    variance: VarianceArgs,
    #[arg(long, default_value = "diff")]
    target: BandTarget,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// t1:t2:n, n equispaced points including both ends.
    #[arg(long, value_parser = parse_grid)]
    grid: Grid,
}

#[derive(Args, Serialize)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    variance: VarianceArgs,
    /// noninf or equiv.
    #[arg(long)]
    kind: TestKind,
    #[arg(long, default_value = "diff")]
    target: BandTarget,
    #[arg(long)]
    margin: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, conflicts_with = "interval", required_unless_present = "interval")]
    at: Option<f64>,
    /// T1:T2, optionally T1:T2:N.
    #[arg(long)]
    interval: Option<String>,
    /// Grid size for interval tests when not given in --interval.
    #[arg(long)]
    grid_n: Option<usize>,
}

#[derive(Args, Serialize)]
struct KmArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output the band for S_ref - S_test instead of the curves.
    #[arg(long, requires = "grid")]
    band: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_parser = parse_grid)]
    grid: Option<Grid>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// TOML study file; replaces the study flags below.
    #[arg(long, conflicts_with_all = ["scenario", "n1", "n2", "seed", "study"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    scenario: Option<String>,
    #[arg(long, required_unless_present = "config")]
    n1: Option<usize>,
    #[arg(long, required_unless_present = "config")]
    n2: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    n_sim: usize,
    #[arg(long, default_value_t = 500)]
    n_boot: usize,
    #[arg(long, required_unless_present = "config")]
    seed: Option<u64>,
    /// coverage or rejection.
    #[arg(long, required_unless_present = "config", value_parser = ["coverage", "rejection"])]
    study: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Test as KIND,TARGET,TIME,MARGIN, e.g. equiv,diff,4,0.2 or noninf,diff,1.5:6,0.15; repeatable.
    #[arg(long = "test", alias = "tests")]
    tests: Vec<String>,
    /// Variance method of rejection studies.
    #[arg(long, default_value = "asymptotic")]
    method: StudyMethod,
    /// Variance methods of coverage studies.
    #[arg(long, value_delimiter = ',', default_value = "asymptotic")]
    methods: Vec<StudyMethod>,
    #[arg(long, value_delimiter = ',', default_value = "diff")]
    targets: Vec<BandTarget>,
    /// Overrides the scenario grid: t1:t2:n.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<Grid>,
    /// Output prefix: writes PREFIX.csv, PREFIX.json and, for rejection
    /// studies, PREFIX.table.csv. JSON to standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct Grid {
    start: f64,
    end: f64,
    n: usize,
}

impl Grid {
    fn points(&self) -> Vec<f64> {
        survequiv::equivtest::linspace(self.start, self.end, self.n)
    }
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts.as_slice() else {
        return Err(format!("grid '{s}' must look like t1:t2:n"));
    };
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("invalid number '{v}' in grid"));
    let (start, end) = (num(a)?, num(b)?);
    let n: usize = n.trim().parse().map_err(|_| format!("invalid point count '{n}' in grid"))?;
    if !(start > 0.0 && end.is_finite()) {
        return Err(format!("grid times must be positive, got {start}:{end}"));
    }
    if n == 0 || (n == 1 && start != end) || (n > 1 && start >= end) {
        return Err(format!("grid needs t1 < t2 and n >= 2 (or t1 = t2 and n = 1), got {s}"));
    }
    Ok(Grid { start, end, n })
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    options: &'a Cli,
    seed: Option<u64>,
    version: &'static str,
    input: Option<String>,
    input_sha256: Option<String>,
    time_unit: Option<&'a str>,
    timestamp: String,
}

#[derive(Serialize)]
struct Bundle<'a, T: Serialize> {
    manifest: &'a Manifest<'a>,
    #[serde(flatten)]
    result: T,
}

/// Failure of a command, carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_input_error() { 2 } else { 3 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CmdResult = Result<u8, Failure>;

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn manifest<'a>(cli: &'a Cli, command: &'static str, input: Option<&Path>, seed: Option<u64>, time_unit: Option<&'a str>) -> Result<Manifest<'a>, Failure> {
    Ok(Manifest {
        command,
        options: cli,
        seed,
        version: env!("CARGO_PKG_VERSION"),
        input: input.map(|p| p.display().to_string()),
        input_sha256: input.map(sha256_file).transpose()?,
        time_unit,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    })
}

fn write_file(path: &Path, content: &str) -> Result<(), Failure> {
    fs::write(path, content).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn write_stdout(content: &str) -> Result<(), Failure> {
    std::io::stdout()
        .write_all(content.as_bytes())
        .map_err(|e| usage(format!("cannot write output: {e}")))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure {
        code: 3,
        message: format!("JSON output: {e}"),
    })?;
    s.push('\n');
    Ok(s)
}

/// JSON results carry their manifest inline.
fn emit_json<T: Serialize>(out: Option<&Path>, manifest: &Manifest, result: T) -> Result<(), Failure> {
    let text = to_json(&Bundle { manifest, result })?;
    match out {
        Some(p) => write_file(p, &text),
        None => write_stdout(&text),
    }
}

/// CSV results get the manifest as a sidecar `<out>.manifest.json`, or on
/// standard error when the CSV goes to standard output.
fn emit_csv(out: Option<&Path>, manifest: &Manifest, csv: &str) -> Result<(), Failure> {
    let m = to_json(manifest)?;
    match out {
        Some(p) => {
            write_file(p, csv)?;
            let mut sidecar = p.as_os_str().to_owned();
            sidecar.push(".manifest.json");
            write_file(Path::new(&sidecar), &m)
        }
        None => {
            write_stdout(csv)?;
            eprint!("{m}");
            Ok(())
        }
    }
}

fn load(data: &DataArgs) -> Result<Dataset, Failure> {
    let d = parse_dataset(&data.data, data.reference.as_deref())?;
    for w in &d.warnings {
        eprintln!("warning: {w}");
    }
    Ok(d)
}

fn fit_groups(d: &Dataset, family: Family, censoring_family: Family) -> Result<[FitResult; 2], Failure> {
    let fit = |s| -> Result<FitResult, Failure> {
        let f = fit_with_censoring(s, family, censoring_family, &FitOptions::default())?;
        if !f.converged {
            eprintln!("warning: {} fit for group '{}' did not converge (gradient norm {:.3e})", family, f.group, f.grad_norm);
        }
        Ok(f)
    };
    Ok([fit(&d.reference)?, fit(&d.test)?])
}

fn variance_method(v: &VarianceArgs, d: &Dataset) -> Result<VarianceMethod, Failure> {
    let resampling = match v.method {
        BandMethod::Asymptotic => return Ok(VarianceMethod::Asymptotic),
        BandMethod::Bootstrap => Resampling::Parametric,
        BandMethod::NonparametricBootstrap => Resampling::Nonparametric {
            sample1: d.reference.clone(),
            sample2: d.test.clone(),
        },
        BandMethod::Greenwood => return Err(usage("Greenwood bands come from `km --band`")),
    };
    Ok(VarianceMethod::Bootstrap(BootstrapOptions {
        n_boot: v.n_boot,
        seed: v.seed,
        admin_cutoff: v.admin_cutoff,
        resampling,
    }))
}

fn stochastic_seed(v: &VarianceArgs) -> Option<u64> {
    (v.method != BandMethod::Asymptotic).then_some(v.seed)
}

fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

fn band_csv(band: &ConfidenceBand, with_available: bool) -> String {
    let mut s = String::from(if with_available {
        "t,estimate,lower,upper,sigma,available\n"
    } else {
        "t,estimate,lower,upper,sigma\n"
    });
    for p in &band.points {
        let cells = if p.available {
            [p.estimate, p.lower, p.upper, p.sigma].map(fmt_num)
        } else {
            Default::default()
        };
        let _ = write!(s, "{},{}", fmt_num(p.t), cells.join(","));
        if with_available {
            let _ = write!(s, ",{}", p.available);
        }
        s.push('\n');
    }
    s
}

fn cmd_fit(cli: &Cli, a: &FitArgs) -> CmdResult {
    let d = load(&a.data)?;
    let fits = fit_groups(&d, a.family, a.censoring_family)?;
    let m = manifest(cli, "fit", Some(&a.data.data), None, a.data.time_unit.as_deref())?;
    #[derive(Serialize)]
    struct Out<'a> {
        reference: &'a str,
        fits: &'a [FitResult; 2],
    }
    emit_json(a.data.out.as_deref(), &m, Out { reference: d.reference.label(), fits: &fits })?;
    Ok(0)
}

fn cmd_select(cli: &Cli, a: &SelectArgs) -> CmdResult {
    let d = load(&a.data)?;
    let mut csv = String::from("group,rank,family,n_params,loglik,aic,delta_aic,converged\n");
    for s in [&d.reference, &d.test] {
        let fits = select_model(s, &Family::ALL)?;
        let best = fits[0].aic;
        for (i, f) in fits.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                s.label(),
                i + 1,
                f.family,
                f.n_params(),
                f.loglik,
                f.aic,
                f.aic - best,
                f.converged
            );
        }
    }
    let m = manifest(cli, "select", Some(&a.data.data), None, a.data.time_unit.as_deref())?;
    emit_csv(a.data.out.as_deref(), &m, &csv)?;
    Ok(0)
}

fn cmd_bands(cli: &Cli, a: &BandsArgs) -> CmdResult {
    let d = load(&a.data)?;
    let [fit_ref, fit_test] = fit_groups(&d, a.model.family, a.model.censoring_family)?;
    let method = variance_method(&a.variance, &d)?;
    let band = pointwise_band(&fit_ref, &fit_test, &a.grid.points(), a.target, a.alpha, &method)?;
    let m = manifest(cli, "bands", Some(&a.data.data), stochastic_seed(&a.variance), a.data.time_unit.as_deref())?;
    emit_csv(a.data.out.as_deref(), &m, &band_csv(&band, false))?;
    Ok(0)
}

fn time_spec(a: &TestArgs) -> Result<TimeSpec, Failure> {
    if let Some(t) = a.at {
        return Ok(TimeSpec::point(t));
    }
    let s = a.interval.as_deref().unwrap_or_default();
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| usage(format!("invalid number '{v}' in --interval")));
    let parts: Vec<&str> = s.split(':').collect();
    let (start, end, n) = match parts.as_slice() {
        [a1, b] => (num(a1)?, num(b)?, None),
        [a1, b, n] => (
            num(a1)?,
            num(b)?,
            Some(n.trim().parse().map_err(|_| usage(format!("invalid grid size '{n}' in --interval")))?),
        ),
        _ => return Err(usage(format!("--interval '{s}' must look like T1:T2 or T1:T2:N"))),
    };
    let grid_n = n.or(a.grid_n).unwrap_or(DEFAULT_INTERVAL_GRID);
    Ok(TimeSpec::interval(start, end, grid_n))
}

fn cmd_test(cli: &Cli, a: &TestArgs) -> CmdResult {
    let time = time_spec(a)?;
    let margin = Margin::new(a.margin, a.target)?;
    let d = load(&a.data)?;
    let [fit_ref, fit_test] = fit_groups(&d, a.model.family, a.model.censoring_family)?;
    let method = variance_method(&a.variance, &d)?;
    let decision = run_test(&fit_ref, &fit_test, a.kind, time, margin, a.alpha, &method)?;
    let m = manifest(cli, "test", Some(&a.data.data), stochastic_seed(&a.variance), a.data.time_unit.as_deref())?;
    emit_json(a.data.out.as_deref(), &m, &decision)?;
    Ok(if decision.reject { 0 } else { 1 })
}

fn cmd_km(cli: &Cli, a: &KmArgs) -> CmdResult {
    let d = load(&a.data)?;
    let (km_ref, km_test) = (kaplan_meier(&d.reference), kaplan_meier(&d.test));
    let csv = if a.band {
        let grid = a.grid.expect("clap enforces --grid with --band").points();
        band_csv(&km_difference_band(&km_ref, &km_test, &grid, a.alpha)?, true)
    } else {
        let mut s = String::from("group,t,survival,std_err,at_risk,events\n");
        for (label, km) in [(d.reference.label(), &km_ref), (d.test.label(), &km_test)] {
            for i in 0..km.event_times.len() {
                let _ = writeln!(
                    s,
                    "{label},{},{},{},{},{}",
                    km.event_times[i],
                    km.survival[i],
                    km.greenwood_var[i].sqrt(),
                    km.at_risk[i],
                    km.n_events[i]
                );
            }
        }
        s
    };
    let m = manifest(cli, "km", Some(&a.data.data), None, a.data.time_unit.as_deref())?;
    emit_csv(a.data.out.as_deref(), &m, &csv)?;
    Ok(0)
}

fn cmd_logrank(cli: &Cli, a: &DataArgs) -> CmdResult {
    let d = load(a)?;
    let r = logrank_test(&d.reference, &d.test)?;
    #[derive(Serialize)]
    struct Out<'a> {
        groups: [&'a str; 2],
        #[serde(flatten)]
        result: survequiv::nonparametric::LogRankResult,
    }
    let m = manifest(cli, "logrank", Some(&a.data), None, a.time_unit.as_deref())?;
    emit_json(
        a.out.as_deref(),
        &m,
        Out {
            groups: [d.reference.label(), d.test.label()],
            result: r,
        },
    )?;
    Ok(0)
}

fn study_config(a: &SimulateArgs) -> Result<StudyConfig, Failure> {
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        return Ok(StudyConfig::from_toml_str(&text)?);
    }
    let study = match a.study.as_deref() {
        Some("rejection") => StudyKind::Rejection,
        _ => StudyKind::Coverage,
    };
    if study == StudyKind::Rejection && a.tests.is_empty() {
        return Err(usage("a rejection study needs at least one --test KIND,TARGET,TIME,MARGIN"));
    }
    for t in &a.tests {
        t.parse::<TestSpec>()?;
    }
    Ok(StudyConfig {
        study,
        scenario: a.scenario.clone().unwrap_or_default(),
        n1: a.n1.unwrap_or_default(),
        n2: a.n2.unwrap_or_default(),
        n_sim: a.n_sim,
        seed: a.seed.unwrap_or_default(),
        alpha: a.alpha,
        n_boot: a.n_boot,
        method: a.method,
        tests: a.tests.clone(),
        methods: a.methods.clone(),
        targets: a.targets.clone(),
        grid: a.grid.map(|g| g.points()),
    })
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> CmdResult {
    let config = study_config(a)?;
    scenario(&config.scenario)?;
    if config.n1 < 2 || config.n2 < 2 || config.n_sim == 0 {
        return Err(usage("n1 and n2 must be at least 2 and n_sim positive"));
    }
    let result = config.run()?;
    let m = manifest(cli, "simulate", a.config.as_deref(), Some(config.seed), None)?;
    #[derive(Serialize)]
    struct Out<'a> {
        config: &'a StudyConfig,
        result: &'a survequiv::simulation::StudyResult,
    }
    let out = Out { config: &config, result: &result };
    match &a.out {
        None => emit_json(None, &m, out)?,
        Some(prefix) => {
            let with_ext = |ext: &str| {
                let mut p = prefix.as_os_str().to_owned();
                p.push(ext);
                PathBuf::from(p)
            };
            emit_json(Some(&with_ext(".json")), &m, out)?;
            write_file(&with_ext(".csv"), &result.to_csv()?)?;
            if result.study == StudyKind::Rejection {
                write_file(&with_ext(".table.csv"), &result.to_table_csv()?)?;
            }
        }
    }
    Ok(0)
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Fit(a) => cmd_fit(cli, a),
        Command::Select(a) => cmd_select(cli, a),
        Command::Bands(a) => cmd_bands(cli, a),
        Command::Test(a) => cmd_test(cli, a),
        Command::Km(a) => cmd_km(cli, a),
        Command::Logrank(a) => cmd_logrank(cli, a),
        Command::Simulate(a) => cmd_simulate(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
