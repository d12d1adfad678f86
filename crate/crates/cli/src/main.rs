use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use safeod::experiments::{
    self, parse_list, read_idx_files, reference_instance, run_mnist_suite, run_safepe_suite, run_synthetic_suite,
    summarize, write_rows_csv, write_safepe_csv, DesignConfig, EvalOptions, MnistOptions, SuiteConfig,
};
use safeod::linear::{frank_wolfe_safe, FwOptions};
use safeod::numerics::seeded_rng;
use safeod::safepe::run_safepe;
use safeod::tabular::{g_tabular, safe_design_boxed, water_fill};
use safeod::Policy;

#[derive(Parser)]
#[command(name = "safeod", version, about = "Safe exploratory logging policies and their experiments")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a safe logging policy.
    #[command(subcommand)]
    Design(DesignCommand),
    /// Run an experiment suite and write its CSV.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Simulate SafePE runs.
    Safepe(SafepeArgs),
}

#[derive(Subcommand)]
enum DesignCommand {
    /// Tabular design: water-filling, or the boxed LP when a box file is given.
    Tabular(TabularArgs),
    /// Linear design by Frank-Wolfe with an ellipsoidal reward set.
    Linear(LinearArgs),
}

#[derive(Args)]
struct TabularArgs {
    #[arg(long, value_parser = parse_values)]
    pi0: Values,
    #[arg(long)]
    alpha: f64,
    /// File with `lower = …` and `upper = …` lines.
    #[arg(long = "box")]
    box_file: Option<PathBuf>,
    /// Write the result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LinearArgs {
    /// Config with theta_bar, sigma_bar rows, optional columns, pi0 and alpha.
    #[arg(long)]
    ellipsoid: PathBuf,
    #[arg(long, value_parser = parse_values)]
    pi0: Option<Values>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Random unit-sphere instances.
    Synthetic(SyntheticArgs),
    /// Instances built from MNIST IDX files.
    Mnist(MnistArgs),
}

#[derive(Args)]
struct SyntheticArgs {
    /// Comma-separated feature dimensions.
    #[arg(long, value_parser = parse_usizes, default_value = "2,3,4,6,8")]
    d: Usizes,
    /// Comma-separated safety levels.
    #[arg(long, value_parser = parse_values, default_value = "0.5,0.7,0.9,0.95")]
    alpha: Values,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    seeds: usize,
    /// Repetitions behind each off-policy gap.
    #[arg(long, default_value_t = 200)]
    gap_runs: usize,
    /// Record solve times; otherwise runtime_ms is 0 and output is reproducible.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a gnuplot script.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct MnistArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0)]
    digit: u8,
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    pool: usize,
    #[arg(long, default_value_t = 1.0)]
    ridge: f64,
    #[arg(long, default_value_t = 5000)]
    train_size: usize,
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    #[arg(long, default_value_t = 200)]
    gap_runs: usize,
    /// Allow pool = 1.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SafepeArgs {
    /// Number of non-default arms.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Horizon.
    #[arg(long, default_value_t = 10_000)]
    t: usize,
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 200)]
    seeds: usize,
    /// Per-run summary CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the first run's round log to PREFIX.csv and its summary to PREFIX.json.
    #[arg(long)]
    trace: Option<PathBuf>,
}

type Values = Vec<f64>;
type Usizes = Vec<usize>;

fn parse_values(s: &str) -> std::result::Result<Values, String> {
    parse_list(s).map_err(|e| e.to_string())
}

fn parse_usizes(s: &str) -> std::result::Result<Usizes, String> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("not a count: {t}")))
        .collect()
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = output(Some(path))?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn fmt_policy(p: &Policy) -> String {
    let parts: Vec<String> = p.probs().iter().map(|v| format!("{v:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn design_tabular(args: &TabularArgs) -> Result<()> {
    let pi0 = Policy::new(args.pi0.clone())?;
    let reward_box = match &args.box_file {
        Some(path) => DesignConfig::from_file(path)
            .with_context(|| format!("reading {}", path.display()))?
            .reward_box()?,
        None => None,
    };
    let (policy, method) = match &reward_box {
        Some(b) => (safe_design_boxed(&pi0, args.alpha, b)?.0, "boxed"),
        None => (water_fill(&pi0, args.alpha)?, "water-fill"),
    };
    let g = g_tabular(&policy);
    println!("method = {method}");
    println!("pi_e = {}", fmt_policy(&policy));
    println!("g = {g:.9}");
    if let Some(out) = &args.out {
        write_json(out, &json!({ "method": method, "policy": policy.probs(), "g": g }))?;
    }
    Ok(())
}

fn design_linear(args: &LinearArgs) -> Result<()> {
    let file = DesignConfig::from_file(&args.ellipsoid).with_context(|| format!("reading {}", args.ellipsoid.display()))?;
    let overrides = DesignConfig {
        pi0: args.pi0.clone(),
        alpha: args.alpha,
        ..DesignConfig::default()
    };
    let prob = overrides.merged_with(file).linear_problem()?;
    let r = frank_wolfe_safe(&prob, &FwOptions::default())?;
    println!("pi_e = {}", fmt_policy(&r.policy));
    println!("g = {:.9}", r.g_value);
    println!("width = {:.9}", r.width);
    println!("safety_margin = {:.3e}", r.safety_margin);
    println!("iterations = {}, cuts = {}, converged = {}", r.iterations, r.cuts_generated, r.converged);
    if let Some(out) = &args.out {
        write_json(
            out,
            &json!({
                "policy": r.policy.probs(),
                "g": r.g_value,
                "width": r.width,
                "safety_margin": r.safety_margin,
                "iterations": r.iterations,
                "cuts_generated": r.cuts_generated,
                "converged": r.converged,
            }),
        )?;
    }
    Ok(())
}

fn print_summary(rows: &[experiments::ExperimentRow]) {
    eprintln!("method,d,alpha,runs,median_width,violation_fraction,mean_gap");
    for s in summarize(rows) {
        eprintln!(
            "{},{},{},{},{:.4},{:.3},{:.4}",
            s.method, s.d, s.alpha, s.runs, s.median_width, s.violation_fraction, s.mean_gap
        );
    }
}

fn bench_synthetic(args: &SyntheticArgs, seed: u64) -> Result<()> {
    let cfg = SuiteConfig {
        dims: args.d.clone(),
        alphas: args.alpha.clone(),
        k: args.k,
        seeds: args.seeds,
        base_seed: seed,
        eval: EvalOptions {
            gap_runs: args.gap_runs,
            timing: args.timing,
            ..EvalOptions::default()
        },
    };
    let rows = run_synthetic_suite(&cfg)?;
    let mut w = output(args.out.as_deref())?;
    write_rows_csv(&rows, &mut w)?;
    w.flush()?;
    if let Some(plot) = &args.plot {
        let csv_name = args
            .out
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "synthetic.csv".into());
        std::fs::write(plot, experiments::plot_script(&csv_name, &rows))
            .with_context(|| format!("cannot write {}", plot.display()))?;
    }
    print_summary(&rows);
    Ok(())
}

fn bench_mnist(args: &MnistArgs, seed: u64) -> Result<()> {
    let (images, labels) = read_idx_files(&args.images, &args.labels)?;
    let opts = MnistOptions {
        target_digit: args.digit,
        k: args.k,
        pool: args.pool,
        ridge: args.ridge,
        train_size: args.train_size,
        alpha: args.alpha,
        seed,
        force: args.force,
        ..MnistOptions::default()
    };
    let eval = EvalOptions {
        gap_runs: args.gap_runs,
        timing: args.timing,
        ..EvalOptions::default()
    };
    let rows = run_mnist_suite(&images, &labels, &opts, args.seeds, &eval)?;
    let mut w = output(args.out.as_deref())?;
    write_rows_csv(&rows, &mut w)?;
    w.flush()?;
    print_summary(&rows);
    Ok(())
}

fn safepe(args: &SafepeArgs, seed: u64) -> Result<()> {
    let instance = reference_instance(args.k)?;
    let rows = run_safepe_suite(&instance, args.t, args.alpha, args.delta, args.seeds, seed)?;
    let mut w = output(args.out.as_deref())?;
    write_safepe_csv(&rows, &mut w)?;
    w.flush()?;
    if let Some(prefix) = &args.trace {
        let mut rng = seeded_rng(experiments::derive_seed(seed, &[args.t as u64, 0]));
        let log = run_safepe(&instance, args.t, args.alpha, args.delta, &mut rng)?;
        let mut csv = output(Some(&prefix.with_extension("csv")))?;
        log.write_csv(&mut csv)?;
        csv.flush()?;
        let mut js = output(Some(&prefix.with_extension("json")))?;
        log.write_summary_json(&instance, args.alpha, &mut js)?;
        js.flush()?;
    }
    let n = rows.len().max(1) as f64;
    let unsafe_runs = rows.iter().filter(|r| r.worst_slack < 0.0).count();
    eprintln!(
        "runs = {}, mean regret = {:.3}, max updates = {}, unsafe runs = {}",
        rows.len(),
        rows.iter().map(|r| r.regret).sum::<f64>() / n,
        rows.iter().map(|r| r.update_count).max().unwrap_or(0),
        unsafe_runs
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Design(DesignCommand::Tabular(a)) => design_tabular(a),
        Command::Design(DesignCommand::Linear(a)) => design_linear(a),
        Command::Bench(BenchCommand::Synthetic(a)) => bench_synthetic(a, cli.seed),
        Command::Bench(BenchCommand::Mnist(a)) => bench_mnist(a, cli.seed),
        Command::Safepe(a) => safepe(a, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
