use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use structoid_core::mechanisms::bundled_manifests;
use structoid_core::object::{parse_object_unchecked, NamespaceConfig};
use structoid_core::oai::format_datestamp;
use structoid_core::registry::parse_manifest;
use structoid_core::validate::validate_document;
use structoid_core::{parse_schema, BehaviorRegistry, MechanismEntry, RegistryError, SchemaRegistry};
use structoid_repository::{Repository, RepositoryConfig, RepositoryError};

use crate::config::{pick, require, CliConfig, DEFAULT_REPO_BIND};
use crate::{key_value, CliError, CliResult, DeregisterArgs, GetDatastreamArgs, GetObjectArgs, IngestArgs, RegisterArgs, ValidateArgs};

pub(crate) fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Prints to stdout; a closed pipe is not an error worth reporting.
pub(crate) fn print_json<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    let _ = write_output(None, text.as_bytes());
}

fn last_segment(href: &str) -> &str {
    href.rsplit('/').next().unwrap_or(href)
}

/// Content for the document's datastreams: explicit `--blob` entries, then
/// files in the blob directory named like the href's last segment or the
/// DSID. Datastreams with no local file are left for the repository to
/// treat as external.
pub(crate) fn collect_blobs(document: &[u8], args: &IngestArgs) -> Result<BTreeMap<String, Vec<u8>>, CliError> {
    let mut blobs = BTreeMap::new();
    for spec in &args.blobs {
        let (key, path) = key_value(spec, "--blob")?;
        blobs.insert(key, read(Path::new(&path))?);
    }
    let dir = match &args.blob_dir {
        Some(d) => d.clone(),
        None => args.document.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    };
    let Ok(object) = parse_object_unchecked(document, &NamespaceConfig::default()) else {
        return Ok(blobs);
    };
    for ds in &object.datastreams {
        if blobs.contains_key(&ds.dsid) || blobs.contains_key(&ds.bytes_ref) {
            continue;
        }
        let candidates = [last_segment(&ds.bytes_ref), ds.dsid.as_str()];
        if let Some(path) = candidates.iter().filter(|c| !c.is_empty()).map(|c| dir.join(c)).find(|p| p.is_file()) {
            blobs.insert(ds.dsid.clone(), read(&path)?);
        }
    }
    Ok(blobs)
}

fn open_repository(repo_root: Option<PathBuf>, base_url: Option<String>) -> Result<Repository, CliError> {
    let root = require(repo_root, "--repo-root")?;
    let base = base_url.unwrap_or_else(|| format!("http://{DEFAULT_REPO_BIND}"));
    Repository::open(RepositoryConfig::new(root, base)).map_err(repository_error)
}

pub(crate) fn repository_error(e: RepositoryError) -> CliError {
    match e {
        RepositoryError::Io(_) | RepositoryError::Corrupt(_) | RepositoryError::UpstreamUnavailable { .. } => {
            CliError::Io(e.to_string())
        }
        _ => CliError::Failed(e.to_string()),
    }
}

pub fn ingest(args: &IngestArgs, config: &CliConfig, json: bool) -> CliResult {
    let document = read(&args.document)?;
    let blobs = collect_blobs(&document, args)?;
    let repo = open_repository(pick(&args.repo_root, &config.repo_root), pick(&args.base_url, &config.base_url))?;
    let id = repo.ingest(&document, &blobs).map_err(repository_error)?;
    let stored = repo.stored(&id).map_err(repository_error)?;
    let datestamp = format_datestamp(&stored.datestamp);
    if json {
        print_json(&serde_json::json!({ "object_id": id, "datestamp": datestamp }));
    } else {
        println!("{id} {datestamp}");
    }
    Ok(())
}

pub fn validate(args: &ValidateArgs, json: bool) -> CliResult {
    let document = read(&args.document)?;
    let schemas = SchemaRegistry::with_builtins();
    for path in &args.schemas {
        let schema = parse_schema(&read(path)?).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
        schemas.register(schema);
    }
    let report = validate_document(&document, &schemas, &NamespaceConfig::default());
    if json {
        print_json(&report);
    } else {
        let _ = write_output(None, report.to_string().as_bytes());
    }
    if report.valid {
        Ok(())
    } else {
        Err(CliError::Failed(String::new()))
    }
}

pub(crate) fn load_manifest(args: &RegisterArgs) -> Result<(MechanismEntry, Vec<u8>), CliError> {
    let bytes = match (&args.manifest, &args.builtin) {
        (Some(path), _) => read(path)?,
        (None, Some(name)) => bundled_manifests()
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, doc)| doc.as_bytes().to_vec())
            .ok_or_else(|| CliError::Usage(format!("no bundled mechanism `{name}`")))?,
        (None, None) => return Err(CliError::Usage("give a manifest file or --builtin".into())),
    };
    let entry = parse_manifest(&bytes).map_err(|e| CliError::Failed(e.to_string()))?;
    Ok((entry, bytes))
}

pub(crate) fn registry_error(e: RegistryError) -> CliError {
    match e {
        RegistryError::Io(_) => CliError::Io(e.to_string()),
        _ => CliError::Failed(e.to_string()),
    }
}

fn open_registry(dir: Option<PathBuf>) -> Result<BehaviorRegistry, CliError> {
    let dir = require(dir, "--registry-dir or --broker")?;
    BehaviorRegistry::open(dir).map_err(registry_error)
}

pub fn register(args: &RegisterArgs, config: &CliConfig, json: bool) -> CliResult {
    let (entry, _) = load_manifest(args)?;
    let registry = open_registry(pick(&args.registry_dir, &config.registry_dir))?;
    let id = registry.register(entry).map_err(registry_error)?;
    if json {
        print_json(&serde_json::json!({ "mechanism_id": id }));
    } else {
        println!("registered {id}");
    }
    Ok(())
}

pub fn deregister(args: &DeregisterArgs, config: &CliConfig, json: bool) -> CliResult {
    let registry = open_registry(pick(&args.registry_dir, &config.registry_dir))?;
    match registry.deregister(&args.mechanism_id) {
        Ok(true) if json => print_json(&serde_json::json!({ "mechanism_id": args.mechanism_id })),
        Ok(true) => println!("deregistered {}", args.mechanism_id),
        Ok(false) => return Err(CliError::Failed(format!("no mechanism `{}` is registered", args.mechanism_id))),
        Err(e) => return Err(registry_error(e)),
    }
    Ok(())
}

pub fn get_object(args: &GetObjectArgs, config: &CliConfig, json: bool) -> CliResult {
    let repo = open_repository(pick(&args.repo_root, &config.repo_root), config.base_url.clone())?;
    let stored = repo.stored(&args.object).map_err(repository_error)?;
    if json {
        print_json(&stored.object);
    } else {
        std::io::stdout().write_all(&stored.document).map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

pub async fn get_datastream(args: &GetDatastreamArgs, config: &CliConfig) -> CliResult {
    let repo = open_repository(pick(&args.repo_root, &config.repo_root), config.base_url.clone())?;
    let (bytes, _) = repo.get_datastream(&args.object, &args.dsid).await.map_err(repository_error)?;
    write_output(args.output.as_deref(), &bytes)
}

pub(crate) fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult {
    match path {
        Some(p) if p != Path::new("-") => std::fs::write(p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}
