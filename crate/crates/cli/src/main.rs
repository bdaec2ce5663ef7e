use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hourcast::model::Ablation;
use hourcast::pipeline::{
    build_graphs, calibrate_stage, delta_stage, evaluate_stage, parse_hours, predict_stage, route_stage, train_stage,
    Overrides, RunConfig,
};
use hourcast::training::CpMode;
use hourcast::{Error, Result};

/// Hour-conditioned, incident-aware traffic forecasting with conformal
/// prediction intervals.
#[derive(Debug, Parser)]
#[command(name = "hourcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the travel-time bank and build the 24 hourly adjacency matrices.
    BuildGraphs(Common),
    /// Train the forecaster and compute conformal radii.
    Train(Common),
    /// Recompute conformal radii at `--alpha` for a trained model.
    Calibrate(Common),
    /// Write test-split forecasts with prediction intervals.
    Predict(Common),
    /// Accuracy and interval metrics against the historical average.
    Evaluate(Common),
    /// Incident minus crash-free adjacency for the selected hours.
    Delta(Common),
    /// Monte-Carlo trip times along a route with a log-normal KS test.
    RouteMc(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Miscoverage level of the prediction intervals.
    #[arg(long)]
    alpha: Option<f64>,
    /// Hours of day, e.g. `8` or `6-9,16-18`.
    #[arg(long)]
    hours: Option<String>,
    /// Full, EncoderOnly, DecoderOnly, NoPatch or NoCrossAttn.
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Ignore crash data and use the crash-free adjacency.
    #[arg(long)]
    no_crash: bool,
    #[arg(long, value_name = "acp|split")]
    cp_mode: Option<CpMode>,
    /// Run directory (overrides the config and `HOURCAST_OUT`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let env_out = std::env::var_os("HOURCAST_OUT").map(PathBuf::from);
        let hours = self.hours.as_deref().map(parse_hours).transpose()?;
        cfg.apply(&Overrides {
            seed: self.seed,
            alpha: self.alpha,
            hours,
            ablation: self.ablation,
            no_crash: self.no_crash,
            cp_mode: self.cp_mode,
            out: self.out.clone().or(env_out),
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildGraphs(c) => {
            let cfg = c.resolve()?;
            let m = build_graphs(&cfg)?;
            println!(
                "graphs written to {} ({} files, mode {})",
                cfg.out_dir.join("graphs").display(),
                m.outputs.keys().filter(|k| k.starts_with("graphs/")).count(),
                m.notes.get("mode").map_or("base", String::as_str)
            );
        }
        Command::Train(c) => {
            let cfg = c.resolve()?;
            let s = train_stage(&cfg)?;
            for e in &s.history {
                println!("epoch {:>3}  train {:.5}  val {:.5}", e.epoch, e.train_loss, e.val_loss);
            }
            println!(
                "{}: best epoch {} of {}, {} parameters, mean radius {:.3}",
                s.ablation, s.best_epoch, s.epochs_run, s.param_count, s.mean_radius
            );
        }
        Command::Calibrate(c) => {
            let cfg = c.resolve()?;
            let r = calibrate_stage(&cfg)?;
            println!("alpha {} n_cal {} mean radius {:.3}", r.alpha, r.n_cal, r.mean_radius());
        }
        Command::Predict(c) => {
            let cfg = c.resolve()?;
            println!("{}", predict_stage(&cfg)?.display());
        }
        Command::Evaluate(c) => {
            let cfg = c.resolve()?;
            let r = evaluate_stage(&cfg)?;
            println!("{:<8} {:>10} {:>10} {:>10} {:>8} {:>10}", "horizon", "MAE", "RMSE", "HA MAE", "PICP", "MPIW");
            for k in 0..r.meta.horizons {
                println!(
                    "{:<8} {:>10.3} {:>10.3} {:>10.3} {:>8.2} {:>10.3}",
                    k + 1,
                    r.accuracy.mae[k],
                    r.accuracy.rmse[k],
                    r.baseline.mae[k],
                    r.intervals.picp[k],
                    r.intervals.mpiw[k]
                );
            }
            println!(
                "{:<8} {:>10.3} {:>10.3} {:>10.3} {:>8.2} {:>10.3}",
                "all", r.accuracy.mae_all, r.accuracy.rmse_all, r.baseline.mae_all, r.intervals.picp_all, r.intervals.mpiw_all
            );
        }
        Command::Delta(c) => {
            let cfg = c.resolve()?;
            for p in delta_stage(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::RouteMc(c) => {
            let cfg = c.resolve()?;
            let r = route_stage(&cfg)?;
            let s = &r.summary;
            println!(
                "{} from hour {}: mean {:.2} min, p05 {:.2}, p95 {:.2} ({} runs)",
                r.route.join(" -> "),
                r.start_hour,
                s.mean,
                s.p05,
                s.p95,
                s.runs
            );
            println!("log-normal KS {:.4}, p = {:.4}", r.ks.statistic, r.ks.p_value);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}

fn report(e: &Error) {
    eprintln!("error: {e}");
    let mut src = std::error::Error::source(e);
    while let Some(s) = src {
        eprintln!("  caused by: {s}");
        src = s.source();
    }
}
