//! `qgs`: simulation, filtering, smoothing, Monte Carlo and timing runs.
//!
//! Exit status: 0 success, 1 usage error, 2 runtime failure.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qgs_core::error::Error;
use qgs_core::harness::config::parse_algorithms;
use qgs_core::harness::experiment::{run_realization, DensityRequest};
use qgs_core::harness::metrics::mse;
use qgs_core::harness::output::{write_run, write_simulation, write_table};
use qgs_core::harness::{benchmark, monte_carlo, Algorithm, Experiment, ExperimentConfig, Grid};
use qgs_core::model::WienerModel;
use qgs_core::nonlinearity::PiecewiseNonlinearity;
use qgs_core::quadrature::legendre_rule;
use qgs_core::simulate::simulate;

/// Environment variable overriding the worker-thread count.
const THREADS_ENV: &str = "QGS_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "qgs",
    version,
    about = "Quadrature Gaussian sum filtering and smoothing for Wiener systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one realization and write simulation.csv.
    Simulate(Common),
    /// Run filters on one realization.
    Filter(Common),
    /// Run smoothers on one realization.
    Smooth(Common),
    /// Monte Carlo runs with metrics and density files.
    Mc(Common),
    /// Median wall-clock per estimator.
    Benchmark(Common),
    /// Print Gauss-Legendre nodes and weights.
    Rule {
        #[arg(long, default_value_t = 10)]
        order: usize,
    },
    /// List model and nonlinearity presets.
    Presets,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Use a preset example instead of a config file.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated estimators: qgsf,qgss,ekf,eks,pf,ps.
    #[arg(long, value_name = "LIST")]
    algos: Option<String>,
    /// Fixed density grid.
    #[arg(long, value_name = "LO:HI:POINTS", allow_hyphen_values = true)]
    grid: Option<String>,
    /// Comma-separated density times.
    #[arg(long, value_name = "LIST")]
    times: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            e => Failure::Runtime(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load(c: &Common) -> CliResult<(Experiment, PathBuf)> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(p), _) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io(m) => Failure::Runtime(Error::Io(m)),
            e => Failure::from(e),
        })?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(Failure::Usage("one of --config or --preset is required".into())),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(r) = c.runs {
        cfg.runs = r;
    }
    if let Some(h) = c.horizon {
        cfg.horizon = h;
    }
    if let Some(a) = &c.algos {
        cfg.algorithms.enabled = parse_algorithms(a)?;
    }
    if let Some(g) = &c.grid {
        let g: Grid = g.parse()?;
        cfg.grid.set_fixed(g);
    }
    if let Some(t) = &c.times {
        cfg.grid.times = t
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Failure::Usage(format!("bad time `{s}`")))
            })
            .collect::<CliResult<_>>()?;
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.output.clone());
    Ok((cfg.resolve()?, out))
}

fn single_run(c: &Common, smoothers: bool) -> CliResult<()> {
    let (mut exp, out) = load(c)?;
    let explicit = c.algos.is_some();
    let mut algos: Vec<Algorithm> = exp.config.algorithms.enabled.clone();
    if explicit {
        if let Some(a) = algos.iter().find(|a| a.is_smoother() != smoothers) {
            let kind = if smoothers { "smoother" } else { "filter" };
            return Err(Failure::Usage(format!("`{a}` is not a {kind}")));
        }
    } else {
        algos.retain(|a| a.is_smoother() == smoothers);
        if algos.is_empty() {
            algos.push(if smoothers { Algorithm::Qgss } else { Algorithm::Qgsf });
        }
    }
    exp.config.algorithms.enabled = algos.clone();
    let g = &exp.config.grid;
    let request = (!g.times.is_empty()).then(|| DensityRequest {
        times: g.times.clone(),
        coordinate: g.coordinate - 1,
    });
    let run = run_realization(&exp, 0, exp.config.seed, &algos, request.as_ref(), g.ground_truth)?;
    write_run(&out, &exp, &run)?;
    let mut rows = Vec::new();
    let mut stdout = std::io::stdout().lock();
    for a in &algos {
        match &run.runs[a] {
            Ok(r) => {
                let e = mse(&run.trajectory.states, &r.means);
                rows.push(vec![a.to_string(), format!("{e}"), "ok".into()]);
                let _ = writeln!(stdout, "{a:<5} mse {e:.6}");
            }
            Err(e) => {
                rows.push(vec![a.to_string(), String::new(), e.to_string()]);
                let _ = writeln!(stdout, "{a:<5} failed: {e}");
            }
        }
    }
    write_table(&out.join("metrics.csv"), &["algorithm", "mse", "status"], &rows)?;
    if let Some(Err(e)) = &run.reference {
        return Err(Failure::Runtime(e.clone()));
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(c) => {
            let (exp, out) = load(&c)?;
            let cfg = &exp.config;
            let traj = simulate(&exp.model, &exp.nl, cfg.horizon, &exp.input_spec(), cfg.seed)?;
            write_simulation(&out.join("simulation.csv"), &traj)?;
            println!("wrote {} steps to {}", traj.len(), out.join("simulation.csv").display());
        }
        Command::Filter(c) => single_run(&c, false)?,
        Command::Smooth(c) => single_run(&c, true)?,
        Command::Mc(c) => {
            let (exp, out) = load(&c)?;
            let report = monte_carlo(&exp, Some(&out))?;
            for &a in &report.algorithms {
                println!("{:<5} median mse {:.6}", a.name(), report.median_mse(a));
            }
            if report.failures() > 0 {
                eprintln!("{} estimator runs failed; see metrics.csv", report.failures());
            }
        }
        Command::Benchmark(c) => {
            let (exp, _) = load(&c)?;
            print!("{}", benchmark(&exp)?);
        }
        Command::Rule { order } => {
            let rule = legendre_rule(order).map_err(|e| Failure::Usage(e.to_string()))?;
            println!("node,weight");
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                println!("{},{}", sixteen_digits(*x), sixteen_digits(*w));
            }
        }
        Command::Presets => {
            println!("models: example1 example2 example3");
            println!("nonlinearities: {}", PiecewiseNonlinearity::PRESETS.join(" "));
            for name in ["example1", "example2", "example3"] {
                if let Some(m) = WienerModel::preset(name) {
                    println!("{name}: n = {}, m = {}", m.n(), m.m());
                }
            }
        }
    }
    Ok(())
}

/// Rounds to 16 significant digits and prints the shortest form, hiding
/// last-bit noise such as `1.0000000000000002`.
fn sixteen_digits(x: f64) -> String {
    let rounded: f64 = format!("{x:.15e}").parse().unwrap_or(x);
    format!("{rounded}")
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| format!("{THREADS_ENV} must be a positive integer"))?;
    if n == 0 {
        return Err(format!("{THREADS_ENV} must be a positive integer"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(m) = configure_threads() {
        eprintln!("error: {m}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}\n\nRun `qgs --help` for usage.");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
