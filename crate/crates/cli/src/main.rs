//! `evitrack`: dataset generation, experiments, oracle checks and
//! re-aggregation.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure (including
//! failed checks).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use evitrack_core::config::RunConfig;
use evitrack_core::exact_filter::{generate_dataset, Dataset};
use evitrack_core::harness::{self, Experiment};
use evitrack_core::metrics::MetricName;
use evitrack_core::verify::{self, CheckFamily, SuiteSettings};

#[derive(Parser)]
#[command(name = "evitrack", version, about = "Trajectory-level evidence tracking benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the DD-balanced trajectory dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Trajectories per DD bin.
        #[arg(long)]
        per_bin: Option<usize>,
        /// Output directory; overrides `dataset.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite an existing dataset.
        #[arg(long)]
        force: bool,
    },
    /// Run an experiment on an existing dataset.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "main")]
        experiment: String,
        /// Comma-separated evaluation seeds; overrides `evaluation.seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Dataset directory; overrides `dataset.dir`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Results root; the experiment writes into `<out>/<experiment>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Run the built-in oracle suite.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Only run these check families (repeatable).
        #[arg(long = "check")]
        checks: Vec<String>,
    },
    /// Re-aggregate the records of an experiment directory.
    Summarize {
        /// Experiment directory containing manifest.json and records.csv.
        dir: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(path) => Ok(RunConfig::load(path)?),
        None => {
            let mut cfg = RunConfig::default();
            cfg.apply_env()?;
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn init_pool(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(evitrack_core::Error::Config("--jobs must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building the worker pool")?;
    }
    Ok(())
}

fn gen_data(common: &Common, per_bin: Option<usize>, out: Option<PathBuf>, force: bool) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(n) = per_bin {
        cfg.dataset.per_bin = n;
    }
    let spec = cfg.dataset_spec();
    spec.validate()?;
    let dir = out.unwrap_or(cfg.dataset.dir.clone());
    if dir.join("manifest.tsv").exists() && !force {
        return Err(evitrack_core::Error::OutputExists(dir).into());
    }
    init_pool(common.jobs)?;
    log::info!("generating {} trajectories per bin into {}", spec.per_bin, dir.display());
    let ds = generate_dataset(&spec)?;
    ds.write(&dir, force)?;
    println!(
        "wrote {} trajectories to {} ({} candidates, {:.1}% rejected)",
        ds.trajectories.len(),
        dir.display(),
        ds.stats.attempts,
        100.0 * ds.stats.rejected_fraction()
    );
    Ok(())
}

fn run(
    common: &Common,
    experiment: &str,
    seeds: Option<Vec<u64>>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    force: bool,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    let experiment: Experiment = experiment.parse()?;
    if let Some(s) = seeds {
        cfg.evaluation.seeds = s;
    }
    if let Some(d) = data {
        cfg.dataset.dir = d;
    }
    if let Some(o) = out {
        cfg.output.dir = o;
    }
    cfg.validate()?;
    let spec = harness::SweepSpec::from_config(experiment, &cfg)?;
    let dir = cfg.output.dir.join(experiment.as_str());
    if dir.join(harness::MANIFEST_FILE).exists() && !force {
        return Err(evitrack_core::Error::OutputExists(dir).into());
    }
    let dataset = Dataset::read(&cfg.dataset.dir)
        .with_context(|| format!("reading dataset from {}", cfg.dataset.dir.display()))?;
    if dataset.spec.params != cfg.world {
        log::warn!("dataset was generated with different world-model parameters; using the dataset's");
    }
    init_pool(common.jobs)?;
    let result = harness::run_sweep(&spec, &dataset, &cfg, &cfg.evaluation.seeds)?;
    harness::write_results(&dir, &result, &cfg, &dataset, force)?;
    print_headline(&result);
    println!("results written to {}", dir.display());
    Ok(())
}

fn print_headline(result: &harness::ExperimentResult) {
    println!("{:<32} {:>12} {:>12} {:>12}", "method (all bins)", "BA pre", "BA post", "PLL H1 post");
    for m in &result.methods {
        let ba = result.summary(m, harness::ALL_BINS, MetricName::BaFilt, 0);
        let pll = result.summary(m, harness::ALL_BINS, MetricName::Pll, 1);
        println!(
            "{:<32} {:>12.4} {:>12.4} {:>12.3}",
            m,
            ba.map_or(f64::NAN, |s| s.pre_mean),
            ba.map_or(f64::NAN, |s| s.post_mean),
            pll.map_or(f64::NAN, |s| s.post_mean)
        );
    }
}

fn verify_cmd(common: &Common, checks: &[String]) -> Result<bool> {
    let cfg = load_config(common)?;
    let families: Vec<CheckFamily> = if checks.is_empty() {
        CheckFamily::ALL.to_vec()
    } else {
        checks.iter().map(|c| c.parse()).collect::<Result<_, _>>()?
    };
    init_pool(common.jobs)?;
    let settings = SuiteSettings {
        params: cfg.world,
        grid: cfg.grid,
        sigma_bg: cfg.inference.sigma_bg,
        ..SuiteSettings::default()
    };
    let results = verify::run_checks(&families, &settings);
    print!("{}", verify::report_table(&results));
    let ok = results.iter().all(|r| r.passed);
    println!("{}", if ok { "all checks passed" } else { "some checks FAILED" });
    Ok(ok)
}

fn summarize(dir: &Path) -> Result<()> {
    let result = harness::summarize(dir)?;
    print_headline(&result);
    println!("tables rewritten in {}", dir.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .find_map(|e| e.downcast_ref::<evitrack_core::Error>())
        .is_some_and(|e| e.is_validation());
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::GenData {
            common,
            per_bin,
            out,
            force,
        } => gen_data(common, *per_bin, out.clone(), *force).map(|_| true),
        Command::Run {
            common,
            experiment,
            seeds,
            data,
            out,
            force,
        } => run(common, experiment, seeds.clone(), data.clone(), out.clone(), *force).map(|_| true),
        Command::Verify { common, checks } => verify_cmd(common, checks),
        Command::Summarize { dir } => summarize(dir).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
