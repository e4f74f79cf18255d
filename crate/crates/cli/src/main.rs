//! `jamswarm` command-line driver.
//!
//! stdout carries one JSON summary line per run; diagnostics go to stderr.
//! Exit codes: 0 ok, 2 usage or config error, 3 I/O or malformed input,
//! 4 non-finite training loss, 5 disruption failure, 6 timeout.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jamswarm::config::RunConfig;
use jamswarm::datagen::{generate_dataset, read_dataset};
use jamswarm::episode::{episode_outcome, run_episode, Outcome, TrajectoryLog};
use jamswarm::gcn::{evaluate, read_loss_csv, train_with_progress, write_loss_csv, GcnModel};
use jamswarm::plot::{render_episode, render_loss_curve};
use jamswarm::Error;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "jamswarm", version, about = "UAV swarm anti-jamming: data generation, GCN training, closed-loop simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled JSONL dataset of random scenarios.
    GenData {
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the GCN estimator on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        hidden: Option<usize>,
    },
    /// Evaluate a model on a dataset, stratified by the largest node P.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one closed-loop episode and write its trajectory log.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_traj: PathBuf,
    },
    /// Render trajectory snapshots (and optionally a loss curve) as SVG.
    Plot {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        snapshot_every: Option<f64>,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum Failure {
    Lib(Error),
    Outcome(Outcome),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Json(_) | Error::MalformedLog(_) => 3,
        Error::NonFiniteLoss { .. } => 4,
        _ => 2,
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            RunConfig::from_json(&text)
        }
        None => Ok(RunConfig::default()),
    }
}

fn load_model(path: &Path) -> Result<GcnModel<f64>, Error> {
    GcnModel::from_json(&fs::read_to_string(path)?).map_err(|e| match e {
        Error::Json(j) => Error::MalformedLog(format!("{}: {j}", path.display())),
        other => other,
    })
}

fn summary(value: serde_json::Value) {
    println!("{value}");
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { n, seed, config, out } => {
            let cfg = load_config(config.as_deref())?;
            generate_dataset(n, seed, &cfg.scenario, &cfg.formation(), &out)?;
            eprintln!("wrote {n} samples to {}", out.display());
            summary(json!({"command": "gen-data", "samples": n, "seed": seed, "out": out}));
        }
        Command::Train { data, out_model, loss_csv, config, epochs, batch_size, lr, seed, hidden } => {
            let cfg = load_config(config.as_deref())?;
            let mut tc = cfg.train;
            tc.epochs = epochs.unwrap_or(tc.epochs);
            tc.batch_size = batch_size.unwrap_or(tc.batch_size);
            tc.learning_rate = lr.unwrap_or(tc.learning_rate);
            tc.seed = seed.unwrap_or(tc.seed);
            tc.hidden = hidden.unwrap_or(tc.hidden);
            tc.validate()?;
            let (_, samples) = read_dataset(&data)?;
            eprintln!("training on {} samples for {} epochs", samples.len(), tc.epochs);
            let outcome = train_with_progress(&samples, &tc, |e| {
                eprintln!("epoch {} train {:.6} val {:.6}", e.epoch, e.train_loss, e.val_loss);
            })?;
            fs::write(&out_model, outcome.model.to_json()?)?;
            if let Some(path) = &loss_csv {
                let mut w = BufWriter::new(File::create(path)?);
                write_loss_csv(&outcome.curve, &mut w)?;
                w.flush()?;
            }
            let last = outcome.curve.last();
            summary(json!({
                "command": "train",
                "epochs": outcome.curve.len(),
                "final_train_loss": last.map(|e| e.train_loss),
                "final_val_loss": last.map(|e| e.val_loss),
                "model": out_model,
            }));
        }
        Command::Eval { model, data, report, config } => {
            load_config(config.as_deref())?;
            let model = load_model(&model)?;
            let (_, samples) = read_dataset(&data)?;
            let rep = evaluate(&model, &samples)?;
            fs::write(&report, serde_json::to_string_pretty(&rep).map_err(Error::from)?)?;
            let buckets: Vec<_> = rep
                .buckets
                .iter()
                .map(|b| json!({"lo": b.lo, "hi": b.hi, "position_rmse_m": b.metrics.map(|m| m.position_rmse_m)}))
                .collect();
            summary(json!({
                "command": "eval",
                "count": rep.overall.count,
                "position_rmse_m": rep.overall.position_rmse_m,
                "a_mae": rep.overall.a_mae,
                "buckets": buckets,
                "report": report,
            }));
        }
        Command::Simulate { model, config, seed, out_traj } => {
            let cfg = load_config(config.as_deref())?;
            let mut ep = cfg.episode_config(seed);
            ep.model_path = Some(model.display().to_string());
            let estimator = load_model(&model)?;
            let log = run_episode(&ep, &estimator)?;
            log.save(&out_traj)?;
            let s = episode_outcome(&log)?;
            eprintln!(
                "jammer ({:.2}, {:.2}) A={:.4}: {:?} at t={:.1} s",
                ep.field.pos.x, ep.field.pos.y, ep.field.decay_a, s.outcome, s.t_final
            );
            summary(json!({
                "command": "simulate",
                "outcome": s.outcome,
                "t_final": s.t_final,
                "min_margin": s.min_margin,
                "final_connected": s.final_connected,
                "out": out_traj,
            }));
            if s.outcome != Outcome::Success {
                return Err(Failure::Outcome(s.outcome));
            }
        }
        Command::Plot { traj, out_dir, snapshot_every, loss_csv, config } => {
            let cfg = config.as_deref().map(|p| load_config(Some(p))).transpose()?;
            let log = TrajectoryLog::load(&traj)?;
            let every = snapshot_every
                .or(cfg.map(|c| c.episode.snapshot_interval))
                .unwrap_or(log.header.config.snapshot_interval);
            let frames = render_episode(&log, every)?;
            fs::create_dir_all(&out_dir)?;
            for (name, svg) in &frames {
                fs::write(out_dir.join(name), svg)?;
            }
            let mut loss_svg = None;
            if let Some(path) = &loss_csv {
                let curve = read_loss_csv(BufReader::new(File::open(path)?))?;
                let out = out_dir.join("loss_curve.svg");
                fs::write(&out, render_loss_curve(&curve))?;
                loss_svg = Some(out);
            }
            eprintln!("wrote {} snapshots to {}", frames.len(), out_dir.display());
            summary(json!({"command": "plot", "snapshots": frames.len(), "loss_curve": loss_svg, "out_dir": out_dir}));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Outcome(o)) => ExitCode::from(match o {
            Outcome::DisruptionFailure => 5,
            _ => 6,
        }),
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
