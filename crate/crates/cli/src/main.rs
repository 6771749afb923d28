use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use lqg_transfer::experiments::{self, ExperimentConfig, ResultRecord, Scenario};
use lqg_transfer::{RngSeed, Tolerance};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "lqg-transfer",
    version,
    about = "Imitation and transfer learning of static LQG controllers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its CSV and JSON summary.
    Run(RunArgs),
    /// Run the single-input and two-input batch-reactor experiments with default settings.
    ReproducePaper {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML file with the same field names as the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_sources: Option<usize>,
    #[arg(long)]
    t_source: Option<usize>,
    #[arg(long)]
    t_target: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol_rank: Option<f64>,
    #[arg(long)]
    tol_res: Option<f64>,
}

/// Config file layout; every field may also be given on the command line.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    scenario: Option<String>,
    seed: Option<u64>,
    #[serde(alias = "N_sources")]
    n_sources: Option<usize>,
    #[serde(alias = "T_source")]
    t_source: Option<usize>,
    #[serde(alias = "T_target")]
    t_target: Option<usize>,
    #[serde(alias = "output_path")]
    out: Option<PathBuf>,
    tol_rank: Option<f64>,
    tol_res: Option<f64>,
}

fn load_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn build_config(args: RunArgs) -> Result<ExperimentConfig> {
    let file = match &args.config {
        Some(p) => load_file(p)?,
        None => FileConfig::default(),
    };
    let Some(tag) = args.scenario.or(file.scenario) else {
        bail!("--scenario is required (or set `scenario` in the config file)");
    };
    let scenario: Scenario = tag.parse()?;
    let Some(out) = args.out.or(file.out) else {
        bail!("--out is required (or set `out` in the config file)");
    };
    let seed = RngSeed(args.seed.or(file.seed).unwrap_or(0));
    let mut cfg = ExperimentConfig::reactor_defaults(scenario, seed, out);
    if let Some(v) = args.n_sources.or(file.n_sources) {
        cfg.n_sources = v;
    }
    if let Some(v) = args.t_source.or(file.t_source) {
        cfg.t_source = v;
    }
    if let Some(v) = args.t_target.or(file.t_target) {
        cfg.t_target = v;
    }
    let rank = args.tol_rank.or(file.tol_rank).unwrap_or(cfg.tolerances.rank_tol);
    let res = args.tol_res.or(file.tol_res).unwrap_or(cfg.tolerances.residual_tol);
    cfg.tolerances = Tolerance::new(rank, res)?;
    cfg.validate()?;
    Ok(cfg)
}

fn report(records: &[ResultRecord]) {
    for r in records {
        let status = if r.pass { "pass" } else { "FAIL" };
        let threshold = r.threshold.map(|t| format!(" (threshold {t:e})")).unwrap_or_default();
        println!(
            "{status} {} seed={} {} = {:.6e}{threshold}",
            r.scenario, r.seed, r.metric, r.value
        );
    }
}

fn run_one(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let records = experiments::run(cfg).with_context(|| format!("scenario {}", cfg.scenario))?;
    experiments::write_outputs(&records, &cfg.output_path)
        .with_context(|| format!("writing {}", cfg.output_path.display()))?;
    report(&records);
    Ok(records)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let cfg = build_config(args)?;
            Ok(experiments::all_pass(&run_one(&cfg)?))
        }
        Command::ReproducePaper { seed, out } => {
            let mut ok = true;
            for scenario in [Scenario::ReactorSingle, Scenario::ReactorMulti] {
                let path = out.join(format!("{}.csv", scenario.tag()));
                let cfg = ExperimentConfig::reactor_defaults(scenario, RngSeed(seed), path);
                ok &= experiments::all_pass(&run_one(&cfg)?);
            }
            Ok(ok)
        }
    }
}
