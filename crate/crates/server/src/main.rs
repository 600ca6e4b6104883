use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use axum::serve::ListenerExt;
use chatbridge_server::config::{Config, Profile};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "chatbridge", version, about = "Experiment chat gateway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP server.
    Serve {
        #[arg(long, short, env = "CHATBRIDGE_CONFIG")]
        config: PathBuf,
        #[arg(long, value_enum, env = "CHATBRIDGE_PROFILE", default_value = "dev")]
        profile: Profile,
        /// Overrides `bind` from the config file.
        #[arg(long)]
        bind: Option<SocketAddr>,
    },
    /// Validate the config file and registry, then exit.
    CheckConfig {
        #[arg(long, short, env = "CHATBRIDGE_CONFIG")]
        config: PathBuf,
        #[arg(long, value_enum, env = "CHATBRIDGE_PROFILE", default_value = "dev")]
        profile: Profile,
    },
}

async fn shutdown() {
    let _ = tokio::signal::ctrl_c().await;
    tracing::info!("shutting down");
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::CheckConfig { config, profile } => {
            let loaded = Config::load(&config)?;
            let registry = loaded.validate(profile)?;
            println!(
                "ok: {} provider(s), {} model(s): {}",
                registry.providers().count(),
                registry.models().count(),
                registry.aliases().collect::<Vec<_>>().join(", ")
            );
        }
        Command::Serve { config, profile, bind } => {
            let default_level = if profile == Profile::Dev { "debug" } else { "info" };
            tracing_subscriber::fmt()
                .with_env_filter(
                    EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)),
                )
                .init();
            let loaded = Config::load(&config)?;
            let state = loaded.build(profile)?;
            let addr = bind.unwrap_or(loaded.bind);
            let listener = tokio::net::TcpListener::bind(addr)
                .await
                .with_context(|| format!("cannot bind {addr}"))?;
            tracing::info!(addr = %listener.local_addr()?, ?profile, "listening");
            // token frames are small writes; do not let Nagle hold them back
            let listener = listener.tap_io(|tcp| {
                let _ = tcp.set_nodelay(true);
            });
            axum::serve(listener, chatbridge_server::app(state))
                .with_graceful_shutdown(shutdown())
                .await?;
        }
    }
    Ok(())
}
