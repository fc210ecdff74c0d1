use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use fruitpal::commands::{self, LOG_DIR_ENV};
use fruitpal::server::{self, AppState};
use fruitpal_core::dataset::{AugmentationPlan, SplitRatios};
use fruitpal_core::evaluation::EvalConfig;
use fruitpal_core::hub::{FileStore, Hub};

#[derive(Parser)]
#[command(name = "fruitpal", version, about = "Fruit allergen alerts, intake tracking and detection tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scenario simulator
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Score detections against a ground-truth manifest
    Eval {
        /// Detection fixtures, one JSON line per image
        #[arg(long)]
        preds: PathBuf,
        /// Ground-truth manifest
        #[arg(long)]
        truths: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value_t = 0.25)]
        conf: f64,
        /// Report directory (default: $FRUITPAL_LOG_DIR, else ./eval-out)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset tooling
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Message hub service
    Hub {
        #[command(subcommand)]
        command: HubCommand,
    },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run a scenario directory
    Run {
        dir: PathBuf,
        /// Output directory (default: $FRUITPAL_LOG_DIR, else <dir>/out)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Per-class image and annotation counts
    Health {
        manifest: PathBuf,
        /// Print the report as JSON
        #[arg(long)]
        json: bool,
    },
    /// Assign train/val/test splits
    Split {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train, val and test fractions
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.2, 0.1])]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Augment images with a named recipe (none, set1, set2, set3)
    Augment {
        manifest: PathBuf,
        #[arg(long, default_value = "set1")]
        recipe: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        copies: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert center-form pixel annotations to a manifest
    Convert {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum HubCommand {
    /// Serve the HTTP API
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Durable log file (default: $FRUITPAL_LOG_DIR/hub.jsonl, else in memory)
        #[arg(long)]
        log: Option<PathBuf>,
        /// Static client token required on every route except /healthz
        #[arg(long, env = "FRUITPAL_HUB_TOKEN")]
        token: Option<String>,
        /// Day whose midnight is tick 0 (default: today, UTC)
        #[arg(long)]
        epoch: Option<NaiveDate>,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sim {
            command: SimCommand::Run { dir, out },
        } => {
            let out = commands::resolve_out(out, dir.join("out"));
            let report = commands::sim_run(&dir, &out)?;
            println!("{}", report.summary);
            println!("output written to {}", out.display());
            if report.passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &report.summary.violations {
                    eprintln!("violation: {v}");
                }
                Ok(ExitCode::from(1))
            }
        }
        Command::Eval {
            preds,
            truths,
            iou,
            conf,
            out,
        } => {
            let config = EvalConfig {
                conf_threshold: conf,
                iou_threshold: iou,
            };
            let report = commands::eval(&preds, &truths, config)?;
            let out = commands::resolve_out(out, "eval-out");
            commands::write_eval(&report, &out)?;
            println!("{}", report.summary_line());
            Ok(ExitCode::SUCCESS)
        }
        Command::Dataset { command } => dataset(command),
        Command::Hub {
            command:
                HubCommand::Serve {
                    port,
                    host,
                    log,
                    token,
                    epoch,
                },
        } => {
            let epoch = epoch.unwrap_or_else(|| chrono::Utc::now().date_naive());
            let log = log.or_else(|| {
                std::env::var_os(LOG_DIR_ENV)
                    .filter(|v| !v.is_empty())
                    .map(|d| PathBuf::from(d).join("hub.jsonl"))
            });
            let hub = match &log {
                Some(path) => {
                    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                        std::fs::create_dir_all(parent)?;
                    }
                    Hub::open(Box::new(FileStore::open(path)?), epoch)
                        .with_context(|| format!("replaying {}", path.display()))?
                }
                None => Hub::in_memory(epoch),
            };
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad --host/--port")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                eprintln!(
                    "hub listening on {} ({} logged messages, log {})",
                    listener.local_addr()?,
                    hub.len(),
                    log.as_ref().map_or("in memory".to_string(), |p| p.display().to_string())
                );
                let app = server::router(AppState::new(hub, token));
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn dataset(command: DatasetCommand) -> Result<ExitCode> {
    match command {
        DatasetCommand::Health { manifest, json } => {
            let report = commands::dataset_health(&manifest)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_table());
            }
        }
        DatasetCommand::Split {
            manifest,
            out,
            ratios,
            seed,
        } => {
            let ratios = SplitRatios::new(ratios[0], ratios[1], ratios[2])?;
            let [train, val, test] = commands::dataset_split(&manifest, ratios, seed, &out)?;
            println!("train={train} val={val} test={test} written to {}", out.display());
        }
        DatasetCommand::Augment {
            manifest,
            recipe,
            seed,
            copies,
            out,
        } => {
            let mut plan = AugmentationPlan::new(commands::parse_recipe(&recipe)?, seed);
            plan.copies = copies;
            let summary = commands::dataset_augment(&manifest, plan, &out)?;
            println!(
                "{} augmented images, {} with parameters within {:?} bounds, written to {}",
                summary.outputs,
                summary.within_bounds,
                plan.recipe,
                out.display()
            );
            if summary.within_bounds != summary.outputs {
                return Ok(ExitCode::from(1));
            }
        }
        DatasetCommand::Convert { input, out } => {
            let n = commands::dataset_convert(&input, &out)?;
            println!("{n} images written to {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
