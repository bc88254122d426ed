//! The `structoid` command line: local ingest and validation, the repository
//! and broker services, registry administration, and clients for both
//! services.

pub mod config;
mod local;
mod remote;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::CliConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid input or an error reply from a service.
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

pub type CliResult = Result<(), CliError>;

#[derive(Debug, Parser)]
#[command(name = "structoid", version, about = "Structoid repositories, brokers and behavior mechanisms")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print machine-readable JSON instead of XML or text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Store an object document and its datastream content.
    Ingest(IngestArgs),
    /// Check an object document: identifiers, schema grammar and MIME rules.
    Validate(ValidateArgs),
    /// Run the repository service (and optionally a broker beside it).
    ServeRepo(ServeRepoArgs),
    /// Run a context broker.
    ServeBroker(ServeBrokerArgs),
    /// Add a mechanism manifest to a registry directory or a running broker.
    RegisterMech(RegisterArgs),
    /// Remove a mechanism from a registry directory or a running broker.
    DeregisterMech(DeregisterArgs),
    /// Issue an OAI request to a repository.
    Harvest(HarvestArgs),
    /// Ask a broker which behaviors apply to an object.
    ListBehaviors(ListArgs),
    /// Ask a broker to perform a behavior on an object.
    Perform(PerformArgs),
    /// Print a stored object document.
    GetObject(GetObjectArgs),
    /// Print or save the content of one datastream.
    GetDatastream(GetDatastreamArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Object document (XML).
    pub document: PathBuf,
    /// Content for a datastream, as `DSID=PATH` (or `HREF=PATH`).
    #[arg(long = "blob", value_name = "KEY=PATH")]
    pub blobs: Vec<String>,
    /// Directory searched for content files named like the href's last
    /// segment or the DSID; defaults to the document's directory.
    #[arg(long)]
    pub blob_dir: Option<PathBuf>,
    /// Local repository directory.
    #[arg(long)]
    pub repo_root: Option<PathBuf>,
    /// Base URL used for role URLs when ingesting locally.
    #[arg(long)]
    pub base_url: Option<String>,
    /// Ingest into a running repository instead.
    #[arg(long)]
    pub repo: Option<String>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub document: PathBuf,
    /// Extra structoid schema documents to validate against.
    #[arg(long = "schema", value_name = "SSD")]
    pub schemas: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServiceArgs {
    /// Manifest directory for a persistent registry.
    #[arg(long)]
    pub registry_dir: Option<PathBuf>,
    /// Register the bundled gallery and translator mechanisms at startup.
    #[arg(long)]
    pub builtins: bool,
    /// Time budget for one PerformBehavior.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub max_output_bytes: Option<usize>,
    /// Static user interface served under /ui/.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeRepoArgs {
    #[arg(long)]
    pub repo_root: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    /// Public base URL; defaults to `http://` plus the bound address.
    #[arg(long)]
    pub base_url: Option<String>,
    /// Also mount broker routes that read this repository in process.
    #[arg(long)]
    pub with_broker: bool,
    #[command(flatten)]
    pub service: ServiceArgs,
}

#[derive(Debug, Args)]
pub struct ServeBrokerArgs {
    #[arg(long)]
    pub bind: Option<String>,
    /// Repository used when a request names none.
    #[arg(long)]
    pub repo: Option<String>,
    /// Refuse mechanism URLs that are not in the registry.
    #[arg(long)]
    pub registered_only: bool,
    #[command(flatten)]
    pub service: ServiceArgs,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Manifest document.
    #[arg(required_unless_present = "builtin", conflicts_with = "builtin")]
    pub manifest: Option<PathBuf>,
    /// A bundled manifest by name (`gallery` or `translator`).
    #[arg(long)]
    pub builtin: Option<String>,
    #[arg(long)]
    pub registry_dir: Option<PathBuf>,
    /// Register with a running broker instead.
    #[arg(long)]
    pub broker: Option<String>,
}

#[derive(Debug, Args)]
pub struct DeregisterArgs {
    pub mechanism_id: String,
    #[arg(long)]
    pub registry_dir: Option<PathBuf>,
    #[arg(long)]
    pub broker: Option<String>,
}

#[derive(Debug, Args)]
pub struct HarvestArgs {
    /// Identify, ListIdentifiers, ListRecords or GetRecord.
    pub verb: String,
    #[arg(long)]
    pub repo: Option<String>,
    /// Go through this broker's OAI proxy.
    #[arg(long)]
    pub broker: Option<String>,
    #[arg(long)]
    pub identifier: Option<String>,
    #[arg(long)]
    pub from: Option<String>,
    #[arg(long)]
    pub until: Option<String>,
    /// Defaults to `structoid` for verbs that need one.
    #[arg(long)]
    pub metadata_prefix: Option<String>,
}

#[derive(Debug, Args)]
pub struct ListArgs {
    #[arg(long)]
    pub broker: Option<String>,
    #[arg(long)]
    pub repo: Option<String>,
    #[arg(long)]
    pub object: String,
}

#[derive(Debug, Args)]
pub struct PerformArgs {
    #[arg(long)]
    pub broker: Option<String>,
    #[arg(long)]
    pub repo: Option<String>,
    #[arg(long)]
    pub object: String,
    #[arg(long)]
    pub structoid: String,
    /// Mechanism id or manifest URL.
    #[arg(long)]
    pub mechanism: String,
    #[arg(long)]
    pub behavior: String,
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
    /// Write the result body to this file (`-` for stdout).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GetObjectArgs {
    pub object: String,
    #[arg(long)]
    pub repo: Option<String>,
    #[arg(long)]
    pub repo_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GetDatastreamArgs {
    pub object: String,
    pub dsid: String,
    #[arg(long)]
    pub repo: Option<String>,
    #[arg(long)]
    pub repo_root: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// Splits `KEY=VALUE`.
pub(crate) fn key_value(s: &str, what: &str) -> Result<(String, String), CliError> {
    s.split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| CliError::Usage(format!("{what} must look like KEY=VALUE, got `{s}`")))
}

pub fn run(cli: Cli) -> CliResult {
    let config = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    let json = cli.json;
    let serving = matches!(cli.command, Command::ServeRepo(_) | Command::ServeBroker(_));
    let runtime = if serving {
        tokio::runtime::Builder::new_multi_thread().enable_all().build()
    } else {
        tokio::runtime::Builder::new_current_thread().enable_all().build()
    }
    .map_err(|e| CliError::Io(format!("cannot start runtime: {e}")))?;

    match cli.command {
        Command::Ingest(a) if a.repo.is_some() || (a.repo_root.is_none() && config.repo_root.is_none()) => {
            runtime.block_on(remote::ingest(&a, &config, json))
        }
        Command::Ingest(a) => local::ingest(&a, &config, json),
        Command::Validate(a) => local::validate(&a, json),
        Command::ServeRepo(a) => runtime.block_on(serve::serve_repo(a, &config)),
        Command::ServeBroker(a) => runtime.block_on(serve::serve_broker(a, &config)),
        Command::RegisterMech(a) if a.broker.is_some() => runtime.block_on(remote::register(&a, json)),
        Command::RegisterMech(a) => local::register(&a, &config, json),
        Command::DeregisterMech(a) if a.broker.is_some() => runtime.block_on(remote::deregister(&a, json)),
        Command::DeregisterMech(a) => local::deregister(&a, &config, json),
        Command::Harvest(a) => runtime.block_on(remote::harvest(&a, &config, json)),
        Command::ListBehaviors(a) => runtime.block_on(remote::list_behaviors(&a, &config, json)),
        Command::Perform(a) => runtime.block_on(remote::perform(&a, &config, json)),
        Command::GetObject(a) if a.repo.is_some() || (a.repo_root.is_none() && config.repo_root.is_none()) => {
            runtime.block_on(remote::get_object(&a, &config, json))
        }
        Command::GetObject(a) => local::get_object(&a, &config, json),
        Command::GetDatastream(a) if a.repo.is_some() || (a.repo_root.is_none() && config.repo_root.is_none()) => {
            runtime.block_on(remote::get_datastream(&a, &config))
        }
        Command::GetDatastream(a) => runtime.block_on(local::get_datastream(&a, &config)),
    }
}

/// Runs the command line and maps the outcome to the process exit code.
pub fn main_with(cli: Cli) -> ExitCode {
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let text = e.to_string();
            if !text.is_empty() {
                eprintln!("structoid: {}", text.trim_end());
            }
            ExitCode::from(e.exit_code())
        }
    }
}
