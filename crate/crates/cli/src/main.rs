use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use decomp::oracle;
use decomp_core::embednet::{TrainConfig, WordVectorTable};
use decomp_core::parser::ParserConfig;
use decomp_core::pipeline::Resources;
use decomp_core::scripted_user::OracleOptions;
use decomp_core::service::Service;
use decomp_core::session::{UserModel, EPISODES_PER_SESSION};
use decomp_core::world::{Catalog, TaskType};

#[derive(Debug, Parser)]
#[command(
    name = "decomp",
    version,
    about = "Household-robot command parser that learns from decompositions"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Args)]
struct Common {
    /// Object catalog JSON; the built-in catalog when omitted.
    #[arg(long, global = true, env = "DECOMP_CATALOG")]
    catalog: Option<PathBuf>,
    /// Saved seed model directory; bootstrapped at startup when omitted.
    #[arg(long, global = true, env = "DECOMP_SEED_CHECKPOINT")]
    seed_checkpoint: Option<PathBuf>,
    #[arg(long, global = true, env = "DECOMP_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, global = true, env = "DECOMP_HOST", default_value = "127.0.0.1")]
    host: String,
    /// Where session logs and per-user checkpoints go.
    #[arg(long, global = true, env = "DECOMP_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the HTTP API (the default).
    Serve,
    /// Train the seed model and save it as a checkpoint.
    Bootstrap {
        #[arg(long, default_value = "seed-checkpoint")]
        out: PathBuf,
    },
    /// Scripted-user runs.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
}

#[derive(Debug, Subcommand)]
enum OracleCommand {
    /// Run the protocol for one task type and write transcript, metrics and plots.
    Run {
        #[arg(long)]
        task: TaskType,
        #[arg(long, default_value_t = EPISODES_PER_SESSION)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "oracle-out")]
        out: PathBuf,
        /// Name objects with alternative typical names ("cup" for the mug).
        #[arg(long)]
        lexical_variation: bool,
    },
}

fn resources(common: &Common) -> Result<Resources> {
    let catalog = match &common.catalog {
        Some(p) => Catalog::load(p).with_context(|| format!("loading catalog {}", p.display()))?,
        None => Catalog::builtin().clone(),
    };
    Ok(Resources::new(
        catalog,
        WordVectorTable::builtin().clone(),
        ParserConfig::default(),
    ))
}

fn seed_model(common: &Common, res: &Resources) -> Result<UserModel> {
    match &common.seed_checkpoint {
        Some(dir) => UserModel::load(dir)
            .with_context(|| format!("loading seed checkpoint {}", dir.display())),
        None => {
            log::info!("no seed checkpoint given; bootstrapping from the bundled seeds");
            Ok(UserModel::bootstrap(res, TrainConfig::default())?)
        }
    }
}

async fn serve(common: &Common) -> Result<()> {
    let res = resources(common)?;
    let model = seed_model(common, &res)?;
    let service = Service::with_model(res, model, &common.data_dir);
    let app = decomp::router(Arc::new(service));
    let addr: SocketAddr = format!("{}:{}", common.host, common.port)
        .parse()
        .context("listen address")?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    log::info!(
        "listening on http://{addr}, data in {}",
        common.data_dir.display()
    );
    axum::serve(listener, app).await?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command.unwrap_or(Command::Serve) {
        Command::Serve => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(&cli.common))
        }
        Command::Bootstrap { out } => {
            let res = resources(&cli.common)?;
            let model = UserModel::bootstrap(&res, TrainConfig::default())?;
            model.save(&out)?;
            println!(
                "seed model: {} examples, tau {:.4}, written to {}",
                model.examples_taught(),
                model.calibration.tau,
                out.display()
            );
            Ok(())
        }
        Command::Oracle {
            command:
                OracleCommand::Run {
                    task,
                    episodes,
                    seed,
                    out,
                    lexical_variation,
                },
        } => {
            let res = resources(&cli.common)?;
            let model = seed_model(&cli.common, &res)?;
            let run = oracle::run(
                model,
                &res,
                task,
                episodes,
                seed,
                OracleOptions { lexical_variation },
            )?;
            let files = oracle::write_run(&run, &out, lexical_variation)?;
            for e in &run.metrics.episodes {
                println!(
                    "episode {}: {} utterances / {} primitives = {:.2}, complexity {:.2}, examples {}",
                    e.episode,
                    e.utterances,
                    e.min_primitives,
                    e.normalized_episode_length,
                    e.per_turn_complexity,
                    e.examples_taught
                );
            }
            println!("wrote {}", files.transcript.display());
            Ok(())
        }
    }
}
