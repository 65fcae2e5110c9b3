use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mixsearch_core::agent::Checkpoint;
use mixsearch_core::catalog::load_catalog;
use mixsearch_core::eval::{self, EvalReport};
use mixsearch_core::pipeline::{self, build_catalog, Experiment};
use mixsearch_core::Config;
use tracing::info;

#[derive(Parser)]
#[command(name = "mixsearch", version, about = "Mixed-initiative interactive image search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; replaces every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Catalog file (JSON, or CSV by extension). Without it the synthetic
    /// catalog described by the configuration is generated.
    #[arg(long)]
    catalog: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic catalog and write it as JSON.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "catalog.json")]
        out: PathBuf,
    },
    /// Train the Q-network and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "checkpoint.json")]
        out: PathBuf,
        /// Per-epoch loss and validation log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate the baselines (and the checkpoint, if given) on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory for report.json, curves.csv, auc.csv and actions.csv.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Rewrite the CSV tables from a saved evaluation report.
    ExportCurves {
        /// report.json written by `eval`.
        #[arg(long, default_value = "results/report.json")]
        report: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.reseed(seed);
    }
    Ok(cfg)
}

fn experiment(common: &Common) -> Result<Experiment> {
    let cfg = load_config(common)?;
    let exp = match &common.catalog {
        Some(p) => {
            let catalog = load_catalog(p).with_context(|| format!("loading catalog {}", p.display()))?;
            Experiment::new(cfg, catalog)?
        }
        None => Experiment::synthetic(cfg)?,
    };
    info!(items = exp.catalog().len(), d = exp.catalog().d(), m = exp.catalog().m(), "catalog ready");
    Ok(exp)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn print_table(reports: &[EvalReport]) {
    println!("{:<8} {:>8} {:>10} {:>10}", "policy", "auc", "successes", "searches");
    for r in eval::compare(reports) {
        println!("{:<8} {:>8.4} {:>10} {:>10}", r.policy, r.auc, r.successes, r.searches);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out } => {
            if common.catalog.is_some() {
                bail!("gen-data builds a catalog; --catalog does not apply");
            }
            let cfg = load_config(&common)?;
            let catalog = build_catalog(&cfg.data)?;
            std::fs::write(&out, catalog.to_json_string())?;
            println!("wrote {} items to {}", catalog.len(), out.display());
        }
        Command::Train { common, out, log } => {
            let exp = experiment(&common)?;
            let outcome = exp.train()?;
            let cp = exp.checkpoint(&outcome);
            cp.save(&out)?;
            if let Some(log) = log {
                std::fs::write(log, outcome.log_csv())?;
            }
            println!("selected epoch {}; param hash {}", outcome.selected_epoch, cp.param_hash);
        }
        Command::Eval { common, checkpoint, out } => {
            let exp = experiment(&common)?;
            let network = checkpoint.as_deref().map(load_checkpoint).transpose()?.map(|cp| cp.network()).transpose()?;
            let reports = exp.evaluate_all(network.map(Arc::new))?;
            pipeline::write_reports(&out, &reports)?;
            std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&reports)?)?;
            print_table(&reports);
        }
        Command::Serve { common, checkpoint, addr } => {
            let exp = experiment(&common)?;
            let cp = checkpoint.as_deref().map(load_checkpoint).transpose()?;
            let state = mixsearch_service::AppState::new(exp.ctx.clone(), exp.config.user.clone(), cp.as_ref())?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                println!("listening on http://{}", listener.local_addr()?);
                mixsearch_service::serve(listener, state).await
            })?;
        }
        Command::ExportCurves { report, out } => {
            let text = std::fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let reports: Vec<EvalReport> = serde_json::from_str(&text)?;
            pipeline::write_reports(&out, &reports)?;
            print_table(&reports);
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "mixsearch=info,mixsearch_core=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    run(Cli::parse())
}
