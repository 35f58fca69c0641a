//! Command-line driver: simulation, verification suites and distances.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use agingpop::config_space::{ground_distance, kappa_distance, MarkedConfiguration};
use agingpop::habitat::{DepartureModel, Dynamics};
use agingpop::rng::{par_paths, path_rng};
use agingpop::sampler::{event_driven_simulate, sample_trajectory_marginals, write_marginals_csv, IntensityMeasure};
use agingpop::verify::suites::{Suite, SuiteSetup, CRITERIA};
use agingpop::verify::{write_reports_csv, VerificationReport};

use config::Loaded;

#[derive(Parser)]
#[command(name = "agingpop", version, about = "Aging particle populations: simulation, metrics and verification")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the process at the configured times and log one event trajectory.
    Simulate,
    /// Run verification suites.
    Verify {
        /// metrics, generator, sampler, laws, ergodicity or all.
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Distance between two configuration files.
    Distance {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value = "kappa")]
        metric: Metric,
        /// Index budget; defaults to `run.budgets` of the config.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Draw configurations from the stationary Poisson law.
    StationarySample {
        /// Number of configurations; defaults to `run.n_paths`.
        #[arg(long)]
        count: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Ground,
    Kappa,
}

/// First line of every output file.
#[derive(Serialize)]
struct Header<'a> {
    command: &'a str,
    seed: u64,
    config: &'a str,
}

struct RunContext {
    loaded: Loaded,
    seed: u64,
    out_dir: PathBuf,
}

impl RunContext {
    fn header(&self, command: &str) -> String {
        let h = Header { command, seed: self.seed, config: &self.loaded.text };
        serde_json::to_string(&h).expect("header serializes")
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        let path = self.out_dir.join(name);
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("--threads")?;
    }
    let path = cli.config.as_deref().context("--config is required")?;
    let loaded = Loaded::read(path)?;
    let seed = cli.seed.unwrap_or(loaded.config.seed);
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| loaded.config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = RunContext { loaded, seed, out_dir };
    match cli.command {
        Command::Simulate => simulate(&ctx).map(|_| true),
        Command::Verify { suite } => verify(&ctx, suite.parse()?),
        Command::Distance { a, b, metric, budget } => distance(&ctx, &a, &b, metric, budget).map(|_| true),
        Command::StationarySample { count } => stationary_sample(&ctx, count).map(|_| true),
    }
}

fn simulate(ctx: &RunContext) -> Result<()> {
    let d = &ctx.loaded.dynamics;
    let run = &ctx.loaded.config.run;
    let law = ctx.loaded.initial_law()?;
    let theta = ctx.loaded.theta();
    let initial = |rng: &mut _| law.sample(d, rng).expect("validated initial law");
    let marginals = sample_trajectory_marginals(initial, &run.times, run.n_paths, ctx.seed, &theta, d)?;
    let mut out = ctx.create("summary.csv")?;
    writeln!(out, "# {}", ctx.header("simulate"))?;
    write_marginals_csv(&marginals, &mut out)?;
    out.flush()?;

    // one logged trajectory on a stream the marginal paths never use
    let horizon = run.times.last().copied().unwrap_or(0.0);
    let mut rng = path_rng(ctx.seed, u64::MAX);
    let start = law.sample(d, &mut rng)?;
    let trajectory = event_driven_simulate(&start, horizon, d, &mut rng)?;
    let mut out = ctx.create("events.jsonl")?;
    writeln!(out, "{}", ctx.header("simulate"))?;
    trajectory.write_jsonl(&mut out)?;
    out.flush()?;
    fs::write(ctx.out_dir.join("initial.json"), start.to_json_string())?;
    fs::write(ctx.out_dir.join("terminal.json"), trajectory.terminal.to_json_string())?;

    println!("time,statistic,value,stderr");
    for m in &marginals {
        println!("{},f_theta,{},{}", m.time, m.f_theta.value, m.f_theta.stderr);
        println!("{},count,{},{}", m.time, m.count.value, m.count.stderr);
    }
    println!(
        "logged {} events to t = {horizon}; outputs in {}",
        trajectory.events.len(),
        ctx.out_dir.display()
    );
    Ok(())
}

fn verify(ctx: &RunContext, suite: Suite) -> Result<bool> {
    let cfg = &ctx.loaded.config;
    let criteria = suite.criteria();
    if criteria.contains(&10) && !matches!(cfg.model, DepartureModel::Constant { .. }) {
        bail!("model.family: suite {suite} includes the immigration-death oracle, which needs a constant rate");
    }
    let secondary = cfg
        .secondary_model
        .clone()
        .map(|m| Dynamics::new(ctx.loaded.dynamics.habitat.clone(), m).with_tolerances(cfg.run.tolerances));
    let setup = SuiteSetup {
        primary: ctx.loaded.dynamics.clone(),
        secondary,
        ladder: ctx.loaded.ladder(),
        seed: ctx.seed,
        scale: cfg.run.scale,
    };
    let mut all: Vec<VerificationReport> = Vec::new();
    let mut pass = true;
    for n in criteria {
        let start = Instant::now();
        let outcome = setup.criterion(n);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(reports) => {
                let ok = reports.iter().all(|r| r.pass);
                pass &= ok;
                println!("criterion {n:2} {:<28} {} ({secs:.1}s)", CRITERIA[n - 1], if ok { "PASS" } else { "FAIL" });
                for r in &reports {
                    println!("    {}", r.line());
                }
                all.extend(reports);
            }
            Err(e) => {
                pass = false;
                println!("criterion {n:2} {:<28} FAIL (error: {e})", CRITERIA[n - 1]);
                all.push(VerificationReport::at_least(&format!("criterion_{n}"), "error", 0.0, 1.0).with_note(e.to_string()));
            }
        }
    }
    let mut out = ctx.create("reports.csv")?;
    writeln!(out, "# {}", ctx.header("verify"))?;
    write_reports_csv(&all, &mut out)?;
    out.flush()?;
    println!("suite {suite}: {}", if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}

fn distance(ctx: &RunContext, a: &Path, b: &Path, metric: Metric, budget: Option<usize>) -> Result<()> {
    let read = |p: &Path| MarkedConfiguration::read(p).with_context(|| format!("parsing {}", p.display()));
    let (ca, cb) = (read(a)?, read(b)?);
    let dim = ctx.loaded.dynamics.habitat.dim();
    ca.check_dim(dim).with_context(|| a.display().to_string())?;
    cb.check_dim(dim).with_context(|| b.display().to_string())?;
    let basis = ctx.loaded.basis();
    let budgets = ctx.loaded.config.run.budgets;
    let t = match metric {
        Metric::Ground => ground_distance(&basis, &ca, &cb, budget.unwrap_or(budgets.ground)),
        Metric::Kappa => kappa_distance(&basis, &ctx.loaded.ladder(), &ca, &cb, budget.unwrap_or(budgets.kappa)),
    };
    println!("distance = {:e}", t.value);
    println!("tail_bound = {:e}", t.tail);
    Ok(())
}

fn stationary_sample(ctx: &RunContext, count: Option<usize>) -> Result<()> {
    let d = &ctx.loaded.dynamics;
    let n = count.unwrap_or(ctx.loaded.config.run.n_paths);
    let intensity = IntensityMeasure::stationary(d).context("model")?;
    let samples = par_paths(ctx.seed, n, |rng| intensity.sample_poisson(rng));
    let mut out = ctx.create("stationary.jsonl")?;
    writeln!(out, "{}", ctx.header("stationary-sample"))?;
    for c in &samples {
        writeln!(out, "{}", c.to_json_string())?;
    }
    out.flush()?;
    let mean = samples.iter().map(|c| c.len() as f64).sum::<f64>() / n.max(1) as f64;
    println!("{n} configurations, mean size {mean:.4}, truncation error {:e}", intensity.truncation_error());
    Ok(())
}
