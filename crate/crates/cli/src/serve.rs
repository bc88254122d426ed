use std::io::Write;
use std::sync::Arc;
use std::time::Duration;

use structoid_broker::{Broker, BrokerConfig, HttpRepositoryClient, LocalRepositoryClient, RepositoryClient, SandboxLimits};
use structoid_core::mechanisms::{gallery_manifest, translator_manifest};
use structoid_core::BehaviorRegistry;
use structoid_repository::{Repository, RepositoryConfig};
use tokio::net::TcpListener;

use crate::config::{pick, require, CliConfig, DEFAULT_BROKER_BIND, DEFAULT_REPO_BIND, DEFAULT_TIMEOUT_SECS};
use crate::local::{registry_error, repository_error};
use crate::{CliError, CliResult, ServeBrokerArgs, ServeRepoArgs, ServiceArgs};

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

async fn bind(addr: &str) -> Result<(TcpListener, String), CliError> {
    let listener = TcpListener::bind(addr).await.map_err(|e| CliError::Io(format!("cannot bind {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
    Ok((listener, format!("http://{local}")))
}

/// Announces the bound address on stdout so scripts can pick it up.
fn announce(what: &str, url: &str) {
    println!("{what} listening on {url}");
    let _ = std::io::stdout().flush();
}

async fn run(listener: TcpListener, app: axum::Router) -> CliResult {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Io(e.to_string()))
}

fn broker(service: &ServiceArgs, config: &CliConfig, client: Arc<dyn RepositoryClient>, default_repo: Option<String>, registered_only: bool) -> Result<Arc<Broker>, CliError> {
    let registry = match pick(&service.registry_dir, &config.registry_dir) {
        Some(dir) => BehaviorRegistry::open(dir).map_err(registry_error)?,
        None => BehaviorRegistry::new(),
    };
    if service.builtins {
        for entry in [gallery_manifest(), translator_manifest()] {
            if registry.get(&entry.mechanism_id).is_none() {
                registry.register(entry).map_err(registry_error)?;
            }
        }
    }
    let mut limits = SandboxLimits {
        timeout: Duration::from_secs(pick(&service.timeout_secs, &config.timeout_secs).unwrap_or(DEFAULT_TIMEOUT_SECS)),
        ..SandboxLimits::default()
    };
    if let Some(max) = pick(&service.max_output_bytes, &config.max_output_bytes) {
        limits.max_output = max;
    }
    let config = BrokerConfig {
        limits,
        default_repository: default_repo.map(|r| r.trim_end_matches('/').to_string()),
        fetch_unregistered: !registered_only,
    };
    Ok(Arc::new(Broker::new(Arc::new(registry), client, config)))
}

pub async fn serve_repo(args: ServeRepoArgs, config: &CliConfig) -> CliResult {
    init_logging();
    let root = require(pick(&args.repo_root, &config.repo_root), "--repo-root")?;
    let bind_addr = pick(&args.bind, &config.repo_bind).unwrap_or_else(|| DEFAULT_REPO_BIND.to_string());
    let (listener, bound) = bind(&bind_addr).await?;
    let base = pick(&args.base_url, &config.base_url).unwrap_or_else(|| bound.clone());
    let repo = Arc::new(Repository::open(RepositoryConfig::new(root, base.clone())).map_err(repository_error)?);
    let mut app = structoid_repository::router(repo.clone());
    if args.with_broker || args.service.registry_dir.is_some() {
        // Content for this repository is read in process; other
        // repositories are still reached over HTTP.
        let client = Arc::new(LocalRepositoryClient::new(repo, HttpRepositoryClient::default()));
        let broker = broker(&args.service, config, client, Some(base.clone()), false)?;
        let ui = pick(&args.service.ui_dir, &config.ui_dir);
        app = app.merge(structoid_broker::router(broker, ui));
    }
    announce("repository", &base);
    run(listener, app).await
}

pub async fn serve_broker(args: ServeBrokerArgs, config: &CliConfig) -> CliResult {
    init_logging();
    let bind_addr = pick(&args.bind, &config.broker_bind).unwrap_or_else(|| DEFAULT_BROKER_BIND.to_string());
    let (listener, bound) = bind(&bind_addr).await?;
    let client = Arc::new(HttpRepositoryClient::default());
    let broker = broker(&args.service, config, client, pick(&args.repo, &config.repo_url), args.registered_only)?;
    let ui = pick(&args.service.ui_dir, &config.ui_dir);
    announce("broker", &bound);
    run(listener, structoid_broker::router(broker, ui)).await
}
