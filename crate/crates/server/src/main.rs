use std::path::PathBuf;

use clap::Parser;
use tutor_core::gateway::ModelGateway;
use tutor_core::session::{SessionStore, TurnEngine};
use tutor_server::{router, AppState, ServerConfig};

#[derive(Parser)]
#[command(name = "tutor-server", about = "Serve spoken tutoring sessions over HTTP")]
struct Args {
    /// TOML config file. Without one, every model is stubbed.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured bind address.
    #[arg(long)]
    bind: Option<String>,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let args = Args::parse();
    let mut config = match &args.config {
        Some(p) => ServerConfig::load(p)?,
        None => ServerConfig::default(),
    };
    if let Some(b) = args.bind {
        config.bind = b;
    }
    let gateway = ModelGateway::from_config(&config.gateway_config())?;
    let store = SessionStore::open(&config.data_dir)?;
    let known = store.list_sessions()?.len();
    let state = AppState::new(store, TurnEngine::new(gateway), config.session_defaults()?);

    let listener = tokio::net::TcpListener::bind(&config.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, data_dir = %config.data_dir.display(), sessions = known, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
