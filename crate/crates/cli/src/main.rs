use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use phenocast_cli::commands;
use phenocast_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "phenocast", version, about = "Direct multi-horizon NDVI forecasting")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration file (TOML).
    #[arg(long, global = true, conflicts_with = "profile")]
    config: Option<PathBuf>,
    /// Bundled configuration: full, desk or smoke.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic archive.
    GenData,
    /// Gradient self-test, then train and write the best checkpoint.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Metrics file; defaults to the configured path.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Forecast one pixel at a target year and month.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        pixel: u64,
        #[arg(long)]
        year: i32,
        /// 1 (winter) or 7 (summer).
        #[arg(long)]
        month: u32,
        /// Longest history to use, in composite steps.
        #[arg(long, default_value_t = 40)]
        history: usize,
    },
    /// Evaluate the model and baselines at one history length and horizon.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        history: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Evaluate the model and baselines over the configured grid.
    Grid {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write curve data for plotting.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

fn load_config(g: &Global) -> Result<RunConfig, CliError> {
    let cfg = match (&g.config, &g.profile) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::profile(name)?,
        (None, None) => RunConfig::default(),
    };
    Ok(match g.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(&cli.global)?;
    info!("config hash {}", cfg.hash());
    let out = cli.global.out;
    match cli.command {
        Command::GenData => {
            let out = out.unwrap_or(cfg.paths.data.clone());
            let s = commands::gen_data(&cfg, &out)?;
            println!("wrote {} ({} pixels, {} steps, dataset {})", out.display(), s.pixels, s.steps, s.dataset_id);
            for (class, n) in &s.classes {
                println!("  {class}: {n}");
            }
        }
        Command::Train { data, metrics } => {
            let data = data.unwrap_or(cfg.paths.data.clone());
            let ckpt = out.unwrap_or(cfg.paths.checkpoint.clone());
            let metrics = metrics.unwrap_or(cfg.paths.metrics.clone());
            let o = commands::train(&cfg, &data, &ckpt, &metrics)?;
            println!(
                "self-test: {} entries, max relative error {:.3e}",
                o.selftest_checked, o.selftest_error
            );
            let last = o.history.epochs.last().expect("at least one epoch");
            println!("epochs {}, final train loss {}", o.history.epochs.len(), last.train_loss);
            if let (Some(e), Some(m)) = (o.history.best_epoch, o.history.best_val_mae) {
                println!("best validation MAE {m} at epoch {e}");
            }
            println!("wrote {} and {}", ckpt.display(), metrics.display());
        }
        Command::Predict {
            checkpoint,
            data,
            pixel,
            year,
            month,
            history,
        } => {
            let model = commands::load_model(&checkpoint.unwrap_or(cfg.paths.checkpoint.clone()))?;
            let (archive, _) = commands::load_data(&data.unwrap_or(cfg.paths.data.clone()))?;
            let p = commands::predict(&model, &archive, pixel, year, month, history)?;
            println!("{}", commands::Prediction::HEADER);
            println!("{}", p.to_row());
        }
        Command::Eval {
            checkpoint,
            data,
            history,
            horizon,
        } => {
            cfg.eval.history = history.unwrap_or(cfg.eval.history);
            cfg.eval.horizon = horizon.unwrap_or(cfg.eval.horizon);
            let ckpt = checkpoint.unwrap_or(cfg.paths.checkpoint.clone());
            let data = data.unwrap_or(cfg.paths.data.clone());
            let out = out.unwrap_or(cfg.paths.report.clone());
            let report = commands::eval(&cfg, &ckpt, &data, &out)?;
            print_rows(&report);
        }
        Command::Grid { checkpoint, data, plot } => {
            let ckpt = checkpoint.unwrap_or(cfg.paths.checkpoint.clone());
            let data = data.unwrap_or(cfg.paths.data.clone());
            let out = out.unwrap_or(cfg.paths.report.clone());
            let plot = plot.or(cfg.paths.plot.clone());
            let report = commands::grid(&cfg, &ckpt, &data, &out, plot.as_ref())?;
            println!("wrote {} rows to {}", report.rows.len(), out.display());
        }
    }
    Ok(())
}

fn print_rows(report: &phenocast::eval::EvalReport) {
    println!("model,T,delta,patch_size,mae,r2,n_examples");
    for r in &report.rows {
        let r2 = r.r2.map(|v| format!("{v:.4}")).unwrap_or_default();
        println!("{},{},{},{},{:.5},{r2},{}", r.model, r.t, r.delta, r.patch_size, r.mae, r.n_examples);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
