//! On-disk object store.
//!
//! Layout under the root directory:
//!
//! ```text
//! index.json                 object_id -> directory, datestamp, blob keys
//! objects/00000001/object.xml
//! objects/00000001/blobs/DS-3
//! ```
//!
//! Each ingest writes a fresh generation directory and then replaces
//! `index.json` by rename; the rename is the commit point.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::{DateTime, SubsecRound, TimeDelta, Utc};
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use structoid_core::object::{parse_object_with, NamespaceConfig};
use structoid_core::{DigitalObject, ObjectError};
use thiserror::Error;

const INDEX_FILE: &str = "index.json";
const OBJECTS_DIR: &str = "objects";
const OBJECT_FILE: &str = "object.xml";

const BLOB_NAME: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'~');

#[derive(Debug, Error)]
pub enum RepositoryError {
    #[error("validation failed: {0}")]
    ValidationFailed(#[from] ObjectError),
    #[error("no bytes supplied for datastream `{dsid}` and its href `{href}` is not an external URL")]
    MissingBlob { dsid: String, href: String },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("upstream content at {url} unavailable: {reason}")]
    UpstreamUnavailable { url: String, reason: String },
    #[error("store corrupt: {0}")]
    Corrupt(String),
    #[error("store I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct RepositoryConfig {
    pub root: PathBuf,
    /// Absolute URL the repository is reachable at; public role URLs are
    /// built from it.
    pub base_url: String,
    pub repository_name: String,
    pub namespaces: NamespaceConfig,
    /// Deadline for fetching externally held datastream bytes.
    pub fetch_timeout: Duration,
}

impl RepositoryConfig {
    pub fn new(root: impl Into<PathBuf>, base_url: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            base_url: base_url.into(),
            repository_name: "Structoid Repository".into(),
            namespaces: NamespaceConfig::default(),
            fetch_timeout: Duration::from_secs(10),
        }
    }
}

/// Where a datastream's bytes live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentSource {
    /// A blob file under the object's directory.
    Local(PathBuf),
    External(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredObject {
    pub object: DigitalObject,
    pub datestamp: DateTime<Utc>,
    /// DSID -> blob key (path relative to the object directory).
    pub content_keys: BTreeMap<String, String>,
    /// The ingested document, served verbatim.
    pub document: Arc<Vec<u8>>,
    dir: PathBuf,
}

impl StoredObject {
    pub fn source(&self, dsid: &str) -> Option<ContentSource> {
        if let Some(key) = self.content_keys.get(dsid) {
            return Some(ContentSource::Local(self.dir.join(key)));
        }
        self.object
            .datastream(dsid)
            .map(|ds| ContentSource::External(ds.bytes_ref.clone()))
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct IndexFile {
    next_generation: u64,
    objects: BTreeMap<String, IndexEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    dir: String,
    #[serde(with = "datestamp_format")]
    datestamp: DateTime<Utc>,
    content_keys: BTreeMap<String, String>,
}

mod datestamp_format {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};
    use structoid_core::oai::{format_datestamp, parse_datestamp};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_datestamp(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        parse_datestamp(&s).ok_or_else(|| serde::de::Error::custom(format!("bad datestamp `{s}`")))
    }
}

pub struct Repository {
    config: RepositoryConfig,
    base_url: RwLock<String>,
    objects: RwLock<BTreeMap<String, Arc<StoredObject>>>,
    /// Serializes ingests; holds the next generation number.
    writer: Mutex<u64>,
    http: reqwest::Client,
}

fn is_external(href: &str) -> bool {
    let lower = href.to_ascii_lowercase();
    (lower.starts_with("http://") || lower.starts_with("https://")) && href.len() > "http://".len()
}

fn write_synced(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

fn now_seconds() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(0)
}

impl Repository {
    /// Opens (or creates) the store at `config.root`, loading every indexed
    /// object and discarding directories no index entry refers to.
    pub fn open(config: RepositoryConfig) -> Result<Self, RepositoryError> {
        let objects_dir = config.root.join(OBJECTS_DIR);
        fs::create_dir_all(&objects_dir)?;
        let index: IndexFile = match fs::read(config.root.join(INDEX_FILE)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| RepositoryError::Corrupt(e.to_string()))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => IndexFile::default(),
            Err(e) => return Err(e.into()),
        };

        let mut objects = BTreeMap::new();
        for (id, entry) in &index.objects {
            let dir = objects_dir.join(&entry.dir);
            let document = fs::read(dir.join(OBJECT_FILE))?;
            let object = parse_object_with(&document, &config.namespaces)
                .map_err(|e| RepositoryError::Corrupt(format!("{id}: {e}")))?;
            objects.insert(
                id.clone(),
                Arc::new(StoredObject {
                    object,
                    datestamp: entry.datestamp,
                    content_keys: entry.content_keys.clone(),
                    document: Arc::new(document),
                    dir,
                }),
            );
        }

        let live: Vec<&str> = index.objects.values().map(|e| e.dir.as_str()).collect();
        for stray in fs::read_dir(&objects_dir)? {
            let stray = stray?;
            if !live.contains(&stray.file_name().to_string_lossy().as_ref()) {
                tracing::info!(path = %stray.path().display(), "removing unreferenced store directory");
                let _ = fs::remove_dir_all(stray.path());
            }
        }

        let http = reqwest::Client::builder()
            .timeout(config.fetch_timeout)
            .build()
            .map_err(|e| io::Error::other(e.to_string()))?;
        Ok(Self {
            base_url: RwLock::new(config.base_url.trim_end_matches('/').to_string()),
            config,
            objects: RwLock::new(objects),
            writer: Mutex::new(index.next_generation.max(1)),
            http,
        })
    }

    pub fn config(&self) -> &RepositoryConfig {
        &self.config
    }

    pub fn base_url(&self) -> String {
        self.base_url.read().expect("lock").clone()
    }

    /// Changes the public base URL, for servers bound to an ephemeral port.
    pub fn set_base_url(&self, url: &str) {
        *self.base_url.write().expect("lock") = url.trim_end_matches('/').to_string();
    }

    /// Parses, checks and persists an object together with the bytes of its
    /// locally held datastreams. Blobs are keyed by DSID or by the
    /// datastream's href. Replaces any earlier version atomically.
    pub fn ingest(&self, document: &[u8], blobs: &BTreeMap<String, Vec<u8>>) -> Result<String, RepositoryError> {
        let object = parse_object_with(document, &self.config.namespaces)?;

        let mut local: Vec<(&str, &[u8])> = Vec::new();
        for ds in &object.datastreams {
            match blobs.get(&ds.dsid).or_else(|| blobs.get(&ds.bytes_ref)) {
                Some(bytes) => local.push((&ds.dsid, bytes)),
                None if is_external(&ds.bytes_ref) => {}
                None => {
                    return Err(RepositoryError::MissingBlob { dsid: ds.dsid.clone(), href: ds.bytes_ref.clone() })
                }
            }
        }

        let mut next_generation = self.writer.lock().expect("writer lock");
        let generation = *next_generation;
        let dir_name = format!("{generation:08}");
        let objects_dir = self.config.root.join(OBJECTS_DIR);
        let staging = objects_dir.join(format!("{dir_name}.tmp"));
        let final_dir = objects_dir.join(&dir_name);

        let staged = (|| -> io::Result<BTreeMap<String, String>> {
            fs::create_dir_all(staging.join("blobs"))?;
            write_synced(&staging.join(OBJECT_FILE), document)?;
            let mut keys = BTreeMap::new();
            for (dsid, bytes) in &local {
                let key = format!("blobs/{}", utf8_percent_encode(dsid, BLOB_NAME));
                write_synced(&staging.join(&key), bytes)?;
                keys.insert(dsid.to_string(), key);
            }
            fs::rename(&staging, &final_dir)?;
            Ok(keys)
        })();
        let content_keys = match staged {
            Ok(keys) => keys,
            Err(e) => {
                let _ = fs::remove_dir_all(&staging);
                return Err(e.into());
            }
        };

        let previous = self.objects.read().expect("lock").get(&object.object_id).cloned();
        let mut datestamp = now_seconds();
        if let Some(prev) = &previous {
            datestamp = datestamp.max(prev.datestamp + TimeDelta::seconds(1));
        }

        let stored = Arc::new(StoredObject {
            object,
            datestamp,
            content_keys,
            document: Arc::new(document.to_vec()),
            dir: final_dir.clone(),
        });
        let object_id = stored.object.object_id.clone();

        let mut index = IndexFile { next_generation: generation + 1, objects: BTreeMap::new() };
        for (id, s) in self.objects.read().expect("lock").iter() {
            index.objects.insert(id.clone(), self.index_entry(s));
        }
        index.objects.insert(object_id.clone(), self.index_entry(&stored));
        if let Err(e) = self.write_index(&index) {
            let _ = fs::remove_dir_all(&final_dir);
            return Err(e.into());
        }

        *next_generation = generation + 1;
        self.objects.write().expect("lock").insert(object_id.clone(), stored);
        if let Some(prev) = previous {
            let _ = fs::remove_dir_all(&prev.dir);
        }
        Ok(object_id)
    }

    fn index_entry(&self, s: &StoredObject) -> IndexEntry {
        IndexEntry {
            dir: s.dir.file_name().expect("object dir").to_string_lossy().into_owned(),
            datestamp: s.datestamp,
            content_keys: s.content_keys.clone(),
        }
    }

    fn write_index(&self, index: &IndexFile) -> io::Result<()> {
        let tmp = self.config.root.join(format!("{INDEX_FILE}.tmp"));
        write_synced(&tmp, &serde_json::to_vec_pretty(index).expect("index serializes"))?;
        fs::rename(&tmp, self.config.root.join(INDEX_FILE))
    }

    pub fn stored(&self, object_id: &str) -> Result<Arc<StoredObject>, RepositoryError> {
        self.objects
            .read()
            .expect("lock")
            .get(object_id)
            .cloned()
            .ok_or_else(|| RepositoryError::NotFound(format!("object `{object_id}`")))
    }

    pub fn get_object(&self, object_id: &str) -> Result<DigitalObject, RepositoryError> {
        Ok(self.stored(object_id)?.object.clone())
    }

    /// Every stored object, in identifier order.
    pub fn list(&self) -> Vec<Arc<StoredObject>> {
        self.objects.read().expect("lock").values().cloned().collect()
    }

    /// The bytes of one datastream and its declared MIME type.
    pub async fn get_datastream(&self, object_id: &str, dsid: &str) -> Result<(Vec<u8>, String), RepositoryError> {
        let stored = self.stored(object_id)?;
        let mime = stored
            .object
            .datastream(dsid)
            .map(|ds| ds.mime.clone())
            .ok_or_else(|| RepositoryError::NotFound(format!("datastream `{dsid}` of `{object_id}`")))?;
        let bytes = match stored.source(dsid).expect("datastream exists") {
            ContentSource::Local(path) => tokio::fs::read(&path).await?,
            ContentSource::External(url) => self.fetch_external(&url).await?,
        };
        Ok((bytes, mime))
    }

    async fn fetch_external(&self, url: &str) -> Result<Vec<u8>, RepositoryError> {
        let unavailable = |reason: String| RepositoryError::UpstreamUnavailable { url: url.to_string(), reason };
        let response = self.http.get(url).send().await.map_err(|e| unavailable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(unavailable(format!("status {}", response.status())));
        }
        Ok(response.bytes().await.map_err(|e| unavailable(e.to_string()))?.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use structoid_core::fixtures::{figure2_blobs, figure2_document, figure2_object, THUMBNAIL_GIF};

    fn repo(dir: &Path) -> Repository {
        Repository::open(RepositoryConfig::new(dir, "http://r.example")).unwrap()
    }

    #[tokio::test]
    async fn ingest_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let r = repo(dir.path());
        let id = r.ingest(figure2_document().as_bytes(), &figure2_blobs()).unwrap();
        assert_eq!(id, "cornell/sampleDO");
        assert_eq!(r.get_object(&id).unwrap(), figure2_object());
        let (bytes, mime) = r.get_datastream(&id, "DS-3").await.unwrap();
        assert_eq!((bytes.as_slice(), mime.as_str()), (THUMBNAIL_GIF, "image/gif"));
        assert!(matches!(r.get_datastream(&id, "DS-9").await, Err(RepositoryError::NotFound(_))));
        assert!(matches!(r.get_object("nope"), Err(RepositoryError::NotFound(_))));
    }

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let first = repo(dir.path());
        first.ingest(figure2_document().as_bytes(), &figure2_blobs()).unwrap();
        let before = first.stored("cornell/sampleDO").unwrap();
        drop(first);
        let again = repo(dir.path());
        let after = again.stored("cornell/sampleDO").unwrap();
        assert_eq!(after.object, before.object);
        assert_eq!(after.datestamp, before.datestamp);
        assert_eq!(after.document, before.document);
    }

    #[test]
    fn reingest_advances_datestamp() {
        let dir = tempfile::tempdir().unwrap();
        let r = repo(dir.path());
        r.ingest(figure2_document().as_bytes(), &figure2_blobs()).unwrap();
        let first = r.stored("cornell/sampleDO").unwrap().datestamp;
        let extra = figure2_document().replacen(
            "<DataStream",
            "<DataStream DSID=\"DS-5\"><MIME>text/plain</MIME><descriptor/><bytes xlink:href=\"http://elsewhere.example/x\"/></DataStream>\n  <DataStream",
            1,
        );
        r.ingest(extra.as_bytes(), &figure2_blobs()).unwrap();
        let second = r.stored("cornell/sampleDO").unwrap();
        assert!(second.datestamp > first);
        assert_eq!(second.object.datastreams.len(), 4);
        assert_eq!(fs::read_dir(dir.path().join(OBJECTS_DIR)).unwrap().count(), 1);
    }

    #[test]
    fn missing_blob_and_invalid_documents_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let r = repo(dir.path());
        let local_href = figure2_document().replace("http://local.secure.storage/DS-2.txt", "DS-2.txt");
        let mut blobs = figure2_blobs();
        blobs.remove("DS-2");
        assert!(matches!(
            r.ingest(local_href.as_bytes(), &blobs),
            Err(RepositoryError::MissingBlob { dsid, .. }) if dsid == "DS-2"
        ));
        // Keyed by href instead of DSID.
        blobs.insert("DS-2.txt".into(), b"text".to_vec());
        r.ingest(local_href.as_bytes(), &blobs).unwrap();
        assert_eq!(r.stored("cornell/sampleDO").unwrap().content_keys.len(), 3);

        let dangling = figure2_document().replace(r#"thumbnail DSID="DS-3""#, r#"thumbnail DSID="DS-9""#);
        assert!(matches!(r.ingest(dangling.as_bytes(), &figure2_blobs()), Err(RepositoryError::ValidationFailed(_))));
    }

    #[test]
    fn external_hrefs_need_no_blob() {
        let dir = tempfile::tempdir().unwrap();
        let r = repo(dir.path());
        r.ingest(figure2_document().as_bytes(), &BTreeMap::new()).unwrap();
        let s = r.stored("cornell/sampleDO").unwrap();
        assert!(s.content_keys.is_empty());
        assert_eq!(s.source("DS-3"), Some(ContentSource::External("http://local.secure.storage/DS-3.gif".into())));
    }

    #[tokio::test]
    async fn unreachable_upstream() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RepositoryConfig::new(dir.path(), "http://r.example");
        config.fetch_timeout = Duration::from_secs(2);
        let r = Repository::open(config).unwrap();
        let doc = figure2_document().replace("http://local.secure.storage/DS-3.gif", "http://127.0.0.1:9/DS-3.gif");
        r.ingest(doc.as_bytes(), &BTreeMap::new()).unwrap();
        assert!(matches!(
            r.get_datastream("cornell/sampleDO", "DS-3").await,
            Err(RepositoryError::UpstreamUnavailable { .. })
        ));
    }

    #[test]
    fn stray_staging_directories_are_discarded() {
        let dir = tempfile::tempdir().unwrap();
        repo(dir.path()).ingest(figure2_document().as_bytes(), &figure2_blobs()).unwrap();
        let stray = dir.path().join(OBJECTS_DIR).join("00000099.tmp");
        fs::create_dir_all(&stray).unwrap();
        let r = repo(dir.path());
        assert!(!stray.exists());
        assert!(r.get_object("cornell/sampleDO").is_ok());
    }
}
