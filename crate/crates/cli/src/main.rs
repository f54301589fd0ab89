use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use stiffness_copilot::commands;
use stiffness_copilot::service::{self, ServeConfig};
use stiffness_core::inference::{InferenceConfig, SectorGrid};
use stiffness_core::labels::HMapConfig;
use stiffness_core::policy::{Variant, DEFAULT_KNN_K};
use stiffness_core::runtime::{ImpedanceConfig, Mode, StiffnessPolicy};
use stiffness_core::sim::{EnvKind, Environment, DEFAULT_EPISODES};
use stiffness_core::stats::PercentileMethod;

#[derive(Parser)]
#[command(
    name = "stiffness-copilot",
    version,
    about = "Stiffness copilot pipeline and live service"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record scripted demonstrations in a preset environment.
    Simulate {
        #[arg(long)]
        env: EnvKind,
        #[arg(long, default_value_t = DEFAULT_EPISODES)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Infer environment stiffness for every demonstration record.
    Infer {
        #[arg(long)]
        demos: PathBuf,
        #[command(flatten)]
        inference: InferArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn demonstrations and inferred stiffness into training labels.
    Label {
        /// Demonstration file; repeat once per task, in the same order as --inferred.
        #[arg(long, required = true)]
        demos: Vec<PathBuf>,
        #[arg(long, required = true)]
        inferred: Vec<PathBuf>,
        #[arg(long, default_value_t = HMapConfig::default().eps_h)]
        eps_h: f64,
        #[arg(long, default_value_t = HMapConfig::default().p_low)]
        p_low: f64,
        #[arg(long, default_value_t = HMapConfig::default().p_high)]
        p_high: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a stiffness policy on one task of a label file.
    Fit {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        task: Option<EnvKind>,
        #[arg(long, value_enum, default_value_t = VariantName::Knn)]
        variant: VariantName,
        /// Neighbors for the knn variant.
        #[arg(long, default_value_t = DEFAULT_KNN_K)]
        k: usize,
        /// Ridge penalty for the linear-ridge variant.
        #[arg(long, default_value_t = 1e-3)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the impedance loop against a scripted operator and log every tick.
    Rollout {
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        env: EnvKind,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 450)]
        ticks: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        impedance: ImpedanceArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream the live simulator over WebSocket at /ws.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value = "wall")]
        env: EnvKind,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Initial mode; defaults to copilot when a model is given, otherwise low.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value_t = service::DEFAULT_FRAME_HZ)]
        frame_hz: f64,
        #[command(flatten)]
        impedance: ImpedanceArgs,
    },
}

#[derive(Args)]
struct InferArgs {
    /// Neighborhood size.
    #[arg(long, default_value_t = InferenceConfig::default().k)]
    k: usize,
    #[arg(long, default_value_t = SectorGrid::default().azimuth_bins)]
    azimuth_bins: usize,
    #[arg(long, default_value_t = SectorGrid::default().inclination_bins)]
    inclination_bins: usize,
    #[arg(long, default_value_t = SectorGrid::default().f_min)]
    f_min: f64,
    #[arg(long, default_value_t = SectorGrid::default().percentile)]
    percentile: f64,
    #[arg(long, value_enum, default_value_t = PercentileName::Observed)]
    percentile_method: PercentileName,
    #[arg(long, default_value_t = InferenceConfig::default().eps_reg)]
    eps_reg: f64,
    /// Free-space stiffness; defaults to the square root of --eps-reg.
    #[arg(long)]
    eps_free: Option<f64>,
}

impl InferArgs {
    fn config(&self) -> InferenceConfig {
        InferenceConfig {
            k: self.k,
            grid: SectorGrid {
                azimuth_bins: self.azimuth_bins,
                inclination_bins: self.inclination_bins,
                f_min: self.f_min,
                percentile: self.percentile,
                method: match self.percentile_method {
                    PercentileName::Observed => PercentileMethod::Observed,
                    PercentileName::Linear => PercentileMethod::Linear,
                },
            },
            eps_reg: self.eps_reg,
            eps_free: self.eps_free.unwrap_or(self.eps_reg.sqrt()),
        }
    }
}

#[derive(Args)]
struct ImpedanceArgs {
    #[arg(long, default_value_t = ImpedanceConfig::default().alpha)]
    alpha: f64,
    /// Contact force (N) above which frames carry the stop flag.
    #[arg(long, default_value_t = ImpedanceConfig::default().stop_force)]
    stop_force: f64,
}

impl ImpedanceArgs {
    fn config(&self) -> ImpedanceConfig {
        ImpedanceConfig {
            alpha: self.alpha,
            stop_force: self.stop_force,
            ..ImpedanceConfig::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantName {
    Knn,
    LinearRidge,
}

#[derive(Clone, Copy, ValueEnum)]
enum PercentileName {
    Observed,
    Linear,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() && !matches!(e.kind(), ErrorKind::MissingRequiredArgument) => {
            let _ = e.print();
            eprintln!("\n{}", Cli::command().render_usage());
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            env,
            episodes,
            seed,
            out,
        } => {
            let n = commands::simulate(env, episodes, seed, &out)?;
            eprintln!("wrote {n} records to {}", out.display());
        }
        Command::Infer {
            demos,
            inference,
            out,
        } => {
            let n = commands::infer(&demos, &inference.config(), &out)?;
            eprintln!("wrote {n} inferred records to {}", out.display());
        }
        Command::Label {
            demos,
            inferred,
            eps_h,
            p_low,
            p_high,
            out,
        } => {
            if demos.len() != inferred.len() {
                bail!(
                    "{} --demos files but {} --inferred files",
                    demos.len(),
                    inferred.len()
                );
            }
            let pairs: Vec<_> = demos.into_iter().zip(inferred).collect();
            let set = commands::label(
                &pairs,
                &HMapConfig {
                    eps_h,
                    p_low,
                    p_high,
                },
                &out,
            )?;
            eprintln!(
                "wrote {} labels to {} (kappa [{:.6e}, {:.6e}])",
                set.labels.len(),
                out.display(),
                set.bounds.kappa_min,
                set.bounds.kappa_max
            );
        }
        Command::Fit {
            labels,
            task,
            variant,
            k,
            lambda,
            out,
        } => {
            let variant = match variant {
                VariantName::Knn => Variant::Knn { k },
                VariantName::LinearRidge => Variant::LinearRidge { lambda },
            };
            let model = commands::fit(&labels, task, variant, &out)?;
            let task = model.task.map_or("all".to_string(), |t| t.to_string());
            eprintln!("wrote {task} model to {}", out.display());
        }
        Command::Rollout {
            mode,
            env,
            model,
            ticks,
            seed,
            impedance,
            out,
        } => {
            let traj = commands::rollout(
                mode,
                env,
                model.as_deref(),
                &impedance.config(),
                ticks,
                seed,
                &out,
            )?;
            eprintln!("wrote {} ticks to {}", traj.ticks.len(), out.display());
        }
        Command::Serve {
            port,
            host,
            env,
            model,
            mode,
            frame_hz,
            impedance,
        } => {
            let policy: Option<Arc<dyn StiffnessPolicy>> = match &model {
                Some(path) => Some(Arc::new(commands::load_model(path, env)?)),
                None => None,
            };
            let mode = mode.unwrap_or(if policy.is_some() {
                Mode::Copilot
            } else {
                Mode::Low
            });
            if mode == Mode::Copilot && policy.is_none() {
                bail!("copilot mode needs --model");
            }
            let cfg = ServeConfig {
                env: Environment::preset(env),
                impedance: impedance.config(),
                mode,
                policy,
                frame_hz,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                service::serve(listener, cfg).await
            })?;
        }
    }
    Ok(())
}
