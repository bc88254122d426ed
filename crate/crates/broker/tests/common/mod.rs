#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::Request;
use axum::http::Method;
use axum::middleware::Next;
use axum::Router;
use structoid_broker::{Broker, BrokerConfig, HttpRepositoryClient, SandboxLimits};
use structoid_core::fixtures::{figure2_blobs, figure2_document};
use structoid_core::mechanisms::gallery_manifest;
use structoid_core::{BehaviorInterface, BehaviorRegistry, BehaviorSignature, ExecutionSpec, MechanismEntry};
use structoid_repository::{Repository, RepositoryConfig};

pub const FIXTURE_MECH_ID: &str = "urn:test:mech:fixture";

pub async fn serve(app: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    base
}

pub struct RepoStack {
    pub _dir: tempfile::TempDir,
    pub repo: Arc<Repository>,
    pub base: String,
    /// Requests other than GET seen by the repository.
    pub writes: Arc<AtomicUsize>,
}

impl RepoStack {
    pub fn writes(&self) -> usize {
        self.writes.load(Ordering::SeqCst)
    }
}

/// A repository on loopback holding the sample image object and a text object.
pub async fn repository() -> RepoStack {
    let dir = tempfile::tempdir().unwrap();
    let repo = Arc::new(Repository::open(RepositoryConfig::new(dir.path(), "http://placeholder")).unwrap());
    repo.ingest(figure2_document().as_bytes(), &figure2_blobs()).unwrap();
    let (doc, blobs) = text_object("texts/hello", "Hello world. Good morning, library!");
    repo.ingest(doc.as_bytes(), &blobs).unwrap();

    let writes = Arc::new(AtomicUsize::new(0));
    let counter = writes.clone();
    let app = structoid_repository::router(repo.clone()).layer(axum::middleware::from_fn(move |req: Request, next: Next| {
        let counter = counter.clone();
        async move {
            if req.method() != Method::GET {
                counter.fetch_add(1, Ordering::SeqCst);
            }
            next.run(req).await
        }
    }));
    let base = serve(app).await;
    repo.set_base_url(&base);
    RepoStack { _dir: dir, repo, base, writes }
}

pub fn text_object(id: &str, text: &str) -> (String, BTreeMap<String, Vec<u8>>) {
    let doc = format!(
        r#"<?xml version="1.0" encoding="UTF-8"?>
<DigitalObject DigitalObjectID="{id}" xmlns="http://www.cornell.edu/DO" xmlns:xlink="http://www.w3.org/1999/xlink" xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance">
  <DataStream DSID="DS-1">
    <MIME>text/plain</MIME>
    <descriptor>body text</descriptor>
    <bytes xlink:href="DS-1.txt"/>
  </DataStream>
  <Structoid SID="S-1" xsi:type="txt:TextDocumentType" xmlns:txt="http://structoids.example.org/Text">
    <descriptor>a text document</descriptor>
    <txt:text DSID="DS-1"/>
  </Structoid>
</DigitalObject>
"#
    );
    (doc, BTreeMap::from([("DS-1".to_string(), text.as_bytes().to_vec())]))
}

pub fn broker_with(entries: Vec<MechanismEntry>, limits: SandboxLimits, default_repo: Option<&str>) -> Arc<Broker> {
    let registry = Arc::new(BehaviorRegistry::new());
    for e in entries {
        registry.register(e).unwrap();
    }
    let config = BrokerConfig { limits, default_repository: default_repo.map(str::to_string), ..Default::default() };
    Arc::new(Broker::new(registry, Arc::new(HttpRepositoryClient::default()), config))
}

pub fn fixture_script() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/mech.py").to_string()
}

/// An external-command mechanism for the image schema backed by `mech.py`.
pub fn fixture_entry(mode: &str, log: Option<&Path>) -> MechanismEntry {
    let mut args = vec![fixture_script(), mode.to_string()];
    if let Some(log) = log {
        args.push(log.display().to_string());
    }
    MechanismEntry {
        mechanism_id: FIXTURE_MECH_ID.into(),
        required_schema_uri: gallery_manifest().required_schema_uri,
        interface: BehaviorInterface {
            interface_id: "urn:test:bi:fixture".into(),
            behaviors: vec![BehaviorSignature { name: "Describe".into(), params: vec![], output_mime: "text/html".into() }],
        },
        execution: ExecutionSpec::Command { program: "python3".into(), args },
    }
}
