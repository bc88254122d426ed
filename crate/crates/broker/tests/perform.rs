mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::routing::post;
use axum::Router;
use common::*;
use structoid_broker::{
    Broker, BrokerConfig, BrokerError, HttpRepositoryClient, LocalRepositoryClient, PerformRequest, SandboxLimits,
};
use structoid_core::fixtures::{DESCRIPTION_TEXT, FULL_IMAGE_GIF, THUMBNAIL_GIF};
use structoid_core::mechanisms::{gallery_manifest, translator_manifest, Gallery, GALLERY_ID, TRANSLATOR_ID};
use structoid_core::wire::{handle, WireMessage};
use structoid_core::xml::escape;
use structoid_core::{BehaviorRegistry, ExecutionSpec, MechanismEntry};

const SAMPLE: &str = "cornell/sampleDO";

fn request(mechanism: &str, behavior: &str, sid: &str) -> PerformRequest {
    PerformRequest {
        object_id: SAMPLE.into(),
        mechanism_url: mechanism.into(),
        behavior_name: behavior.into(),
        params: BTreeMap::new(),
        structoid_sid: sid.into(),
        repo: None,
    }
}

fn defaults() -> Vec<MechanismEntry> {
    vec![gallery_manifest(), translator_manifest()]
}

#[tokio::test]
async fn list_behaviors_follows_the_registry() {
    let stack = repository().await;
    let broker = broker_with(vec![gallery_manifest()], SandboxLimits::default(), None);
    let listed = broker.list_behaviors(&stack.base, SAMPLE).await.unwrap();
    assert_eq!(listed.object_id, SAMPLE);
    assert_eq!(listed.bindings.len(), 1);
    let binding = &listed.bindings[0];
    assert_eq!((binding.structoid_sid.as_str(), binding.mechanism_id.as_str()), ("S-7", GALLERY_ID));
    let names: Vec<_> = binding.interface.behaviors.iter().map(|b| b.name.as_str()).collect();
    assert_eq!(names, ["Gallery", "Description", "Thumbnail", "FullImage"]);

    let before = stack.repo.stored(SAMPLE).unwrap().document.clone();

    broker.registry().deregister(GALLERY_ID).unwrap();
    assert!(broker.list_behaviors(&stack.base, SAMPLE).await.unwrap().bindings.is_empty());

    // A new interface for the same schema shows up without touching the object.
    let mut revised = gallery_manifest();
    revised.interface.interface_id = "urn:test:bi:slideshow".into();
    revised.interface.behaviors.retain(|b| b.name == "Description");
    broker.registry().register(revised).unwrap();
    let listed = broker.list_behaviors(&stack.base, SAMPLE).await.unwrap();
    assert_eq!(listed.bindings[0].interface.interface_id, "urn:test:bi:slideshow");
    assert_eq!(listed.bindings[0].interface.behaviors.len(), 1);

    assert_eq!(stack.repo.stored(SAMPLE).unwrap().document, before);
    assert_eq!(stack.writes(), 0);
}

#[tokio::test]
async fn gallery_page_uses_public_urls() {
    let stack = repository().await;
    let broker = broker_with(defaults(), SandboxLimits::default(), None);
    let (result, trace) = broker.perform_traced(&request(GALLERY_ID, "Gallery", "S-7"), &stack.base).await.unwrap();
    assert_eq!(result.mime, "text/html");
    let html = String::from_utf8(result.body).unwrap();
    let url = |dsid: &str| format!("{}/objects/cornell%2FsampleDO/datastreams/{dsid}", stack.base);
    assert!(html.contains(&escape(DESCRIPTION_TEXT)));
    assert!(html.contains(&format!("src=\"{}\"", url("DS-3"))));
    assert!(html.contains(&format!("href=\"{}\"", url("DS-4"))));
    assert!(!html.contains("local.secure.storage"));
    assert_eq!((trace.invocations, trace.needs_rounds), (2, 1));
    assert_eq!(trace.fetched, [url("DS-2"), url("DS-3"), url("DS-4")]);

    let thumb = broker.perform_behavior(&request(GALLERY_ID, "Thumbnail", "S-7"), &stack.base).await.unwrap();
    assert_eq!((thumb.mime.as_str(), thumb.body.as_slice()), ("image/gif", THUMBNAIL_GIF));
    let full = broker.perform_behavior(&request(GALLERY_ID, "FullImage", "S-7"), &stack.base).await.unwrap();
    assert_eq!(full.body, FULL_IMAGE_GIF);
    assert_eq!(stack.writes(), 0);
}

#[tokio::test]
async fn translator_on_text_document() {
    let stack = repository().await;
    let broker = broker_with(defaults(), SandboxLimits::default(), Some(&stack.base));
    let listed = broker.list_behaviors(&stack.base, "texts/hello").await.unwrap();
    assert_eq!(listed.bindings.len(), 1);
    assert_eq!(listed.bindings[0].mechanism_id, TRANSLATOR_ID);

    let mut req = request(TRANSLATOR_ID, "Translate", "S-1");
    req.object_id = "texts/hello".into();
    req.params.insert("lang".into(), "fr".into());
    let repo = broker.repository_for(None).unwrap();
    let result = broker.perform_behavior(&req, &repo).await.unwrap();
    assert_eq!(result.mime, "text/plain");
    let text = String::from_utf8(result.body).unwrap();
    assert_ne!(text, "Hello world. Good morning, library!");
    assert!(text.to_lowercase().contains("bonjour"), "{text}");

    req.params.insert("lang".into(), "de".into());
    assert!(matches!(broker.perform_behavior(&req, &repo).await, Err(BrokerError::MechanismFault(_))));
}

#[tokio::test]
async fn request_errors() {
    let stack = repository().await;
    let broker = broker_with(defaults(), SandboxLimits::default(), None);
    let perform = |req: PerformRequest| {
        let broker = broker.clone();
        let base = stack.base.clone();
        async move { broker.perform_behavior(&req, &base).await.unwrap_err() }
    };

    assert!(matches!(perform(request(GALLERY_ID, "Rotate", "S-7")).await, BrokerError::BehaviorNotFound { .. }));
    assert!(matches!(
        perform(request(TRANSLATOR_ID, "Translate", "S-7")).await,
        BrokerError::MissingParam(_)
    ));
    let mut translate = request(TRANSLATOR_ID, "Translate", "S-7");
    translate.params.insert("lang".into(), "fr".into());
    let err = perform(translate.clone()).await;
    assert!(matches!(err, BrokerError::SchemaMismatch { .. }), "{err:?}");
    assert_eq!(err.code(), "SchemaMismatch");
    translate.params.insert("extra".into(), "1".into());
    assert!(matches!(perform(translate).await, BrokerError::BadParamType(_)));
    assert!(matches!(perform(request(GALLERY_ID, "Gallery", "S-9")).await, BrokerError::StructoidNotFound(_)));
    assert!(matches!(
        perform(request("urn:nowhere:mech", "Gallery", "S-7")).await,
        BrokerError::UnknownMechanism(_)
    ));
    let mut missing = request(GALLERY_ID, "Gallery", "S-7");
    missing.object_id = "no/such".into();
    assert!(matches!(perform(missing).await, BrokerError::ObjectNotFound(_)));
    assert!(matches!(perform(request(GALLERY_ID, "", "S-7")).await, BrokerError::InvalidRequest(_)));

    let dead = broker.perform_behavior(&request(GALLERY_ID, "Gallery", "S-7"), "http://127.0.0.1:9").await;
    assert!(matches!(dead, Err(BrokerError::RepositoryUnavailable(_))), "{dead:?}");
    assert_eq!(stack.writes(), 0);
}

#[tokio::test]
async fn mechanism_loaded_from_manifest_url() {
    let stack = repository().await;
    let manifest = gallery_manifest().to_xml();
    let site = serve(
        Router::new()
            .route("/gallery.xml", axum::routing::get(move || async move { manifest }))
            .route("/junk.xml", axum::routing::get(|| async { "<Mechanism><oops/>" })),
    )
    .await;
    let broker = broker_with(vec![], SandboxLimits::default(), None);

    let runner = broker.load_mechanism(&format!("{site}/gallery.xml")).await.unwrap();
    assert_eq!((runner.entry.mechanism_id.as_str(), runner.kind()), (GALLERY_ID, "builtin"));
    assert!(matches!(
        broker.load_mechanism(&format!("{site}/junk.xml")).await,
        Err(BrokerError::InvalidManifest(_))
    ));
    assert!(matches!(
        broker.load_mechanism(&format!("{site}/absent.xml")).await,
        Err(BrokerError::FetchFailed { .. })
    ));

    let result =
        broker.perform_behavior(&request(&format!("{site}/gallery.xml"), "Description", "S-7"), &stack.base).await.unwrap();
    assert!(String::from_utf8(result.body).unwrap().contains(&escape(DESCRIPTION_TEXT)));

    let closed = Arc::new(Broker::new(
        Arc::new(BehaviorRegistry::new()),
        Arc::new(HttpRepositoryClient::default()),
        BrokerConfig { fetch_unregistered: false, ..Default::default() },
    ));
    assert!(matches!(
        closed.perform_behavior(&request(&format!("{site}/gallery.xml"), "Description", "S-7"), &stack.base).await,
        Err(BrokerError::UnknownMechanism(_))
    ));
}

#[tokio::test]
async fn external_command_mechanism() {
    let stack = repository().await;
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("requests.log");
    let broker = broker_with(vec![fixture_entry("conforming", Some(&log))], SandboxLimits::default(), None);
    let (result, trace) =
        broker.perform_traced(&request(FIXTURE_MECH_ID, "Describe", "S-7"), &stack.base).await.unwrap();
    assert_eq!(result.mime, "text/html");
    assert_eq!(String::from_utf8(result.body).unwrap(), format!("<p>{}</p>", escape(DESCRIPTION_TEXT)));
    assert_eq!((trace.invocations, trace.needs_rounds), (2, 1));
    assert_eq!(std::fs::read_to_string(&log).unwrap(), "PROBE\nSUPPLY\n");
}

#[tokio::test]
async fn misbehaving_mechanisms_fault() {
    let stack = repository().await;
    for mode in ["out-of-schema", "double-needs"] {
        let broker = broker_with(vec![fixture_entry(mode, None)], SandboxLimits::default(), None);
        let err = broker.perform_behavior(&request(FIXTURE_MECH_ID, "Describe", "S-7"), &stack.base).await.unwrap_err();
        assert!(matches!(err, BrokerError::MechanismFault(_)), "{mode}: {err:?}");
    }

    // A label the schema defines but the structoid does not bind.
    let dir = tempfile::tempdir().unwrap();
    let partial = r#"<DigitalObject DigitalObjectID="partial" xmlns="http://www.cornell.edu/DO" xmlns:xlink="http://www.w3.org/1999/xlink" xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance">
  <DataStream DSID="DS-3"><MIME>image/gif</MIME><descriptor>small</descriptor><bytes xlink:href="t.gif"/></DataStream>
  <Structoid SID="S-1" xsi:type="image:Cornell_ImageType" xmlns:image="http://www.cornell.edu/structoids/Image">
    <descriptor>thumbnail only</descriptor>
    <image:thumbnail DSID="DS-3"/>
  </Structoid>
</DigitalObject>"#;
    let repo = structoid_repository::Repository::open(structoid_repository::RepositoryConfig::new(dir.path(), "http://x"))
        .unwrap();
    repo.ingest(partial.as_bytes(), &BTreeMap::from([("DS-3".to_string(), THUMBNAIL_GIF.to_vec())])).unwrap();
    let repo = Arc::new(repo);
    let base = serve(structoid_repository::router(repo.clone())).await;
    repo.set_base_url(&base);
    let broker = broker_with(defaults(), SandboxLimits::default(), None);
    let mut req = request(GALLERY_ID, "Description", "S-1");
    req.object_id = "partial".into();
    let err = broker.perform_behavior(&req, &base).await.unwrap_err();
    assert!(matches!(err, BrokerError::RoleResolutionFailed { .. }), "{err:?}");
}

#[tokio::test]
async fn slow_mechanism_times_out_without_blocking_others() {
    let stack = repository().await;
    let limit = Duration::from_secs(2);
    let broker = broker_with(
        vec![gallery_manifest(), fixture_entry("sleep", None)],
        SandboxLimits { timeout: limit, ..Default::default() },
        None,
    );
    let started = Instant::now();
    let slow = {
        let (broker, base) = (broker.clone(), stack.base.clone());
        tokio::spawn(async move { broker.perform_behavior(&request(FIXTURE_MECH_ID, "Describe", "S-7"), &base).await })
    };
    let gallery: Vec<_> = (0..10)
        .map(|_| {
            let (broker, base) = (broker.clone(), stack.base.clone());
            tokio::spawn(async move {
                let t = Instant::now();
                let r = broker.perform_behavior(&request(GALLERY_ID, "Gallery", "S-7"), &base).await;
                (r, t.elapsed())
            })
        })
        .collect();
    for task in gallery {
        let (result, elapsed) = task.await.unwrap();
        assert_eq!(result.unwrap().mime, "text/html");
        assert!(elapsed < limit, "gallery request took {elapsed:?}");
    }
    let err = slow.await.unwrap().unwrap_err();
    assert!(matches!(err, BrokerError::Timeout(_)), "{err:?}");
    assert!(started.elapsed() < limit + Duration::from_secs(1), "{:?}", started.elapsed());
}

#[tokio::test]
async fn endpoint_mechanism_matches_builtin() {
    let stack = repository().await;
    let endpoint = serve(Router::new().route(
        "/mech",
        post(|body: Bytes| async move {
            let reply = match WireMessage::from_json(&body) {
                Ok(msg) => handle(&Gallery, msg),
                Err(e) => WireMessage::Fault { message: e.to_string() },
            };
            reply.to_json()
        }),
    ))
    .await;
    let mut remote = gallery_manifest();
    remote.mechanism_id = "urn:test:mech:remote-gallery".into();
    remote.execution = ExecutionSpec::Endpoint { url: format!("{endpoint}/mech") };
    let broker = broker_with(vec![gallery_manifest(), remote], SandboxLimits::default(), None);

    for behavior in ["Gallery", "Description", "Thumbnail", "FullImage"] {
        let local = broker.perform_behavior(&request(GALLERY_ID, behavior, "S-7"), &stack.base).await.unwrap();
        let far = broker
            .perform_behavior(&request("urn:test:mech:remote-gallery", behavior, "S-7"), &stack.base)
            .await
            .unwrap();
        assert_eq!(local, far, "{behavior}");
    }
}

#[tokio::test]
async fn output_limit_applies_to_every_execution_kind() {
    let stack = repository().await;
    let broker = broker_with(defaults(), SandboxLimits { max_output: 16, ..Default::default() }, None);
    let err = broker.perform_behavior(&request(GALLERY_ID, "Gallery", "S-7"), &stack.base).await.unwrap_err();
    assert!(matches!(err, BrokerError::OutputTooLarge(16)), "{err:?}");
}

#[tokio::test]
async fn co_located_repository_is_read_in_process() {
    let stack = repository().await;
    let client = LocalRepositoryClient::new(stack.repo.clone(), HttpRepositoryClient::default());
    let broker = Broker::new(
        Arc::new(BehaviorRegistry::new()),
        Arc::new(client),
        BrokerConfig { default_repository: Some(stack.base.clone()), ..Default::default() },
    );
    for entry in defaults() {
        broker.registry().register(entry).unwrap();
    }
    let repo = broker.repository_for(None).unwrap();
    let local = broker.perform_behavior(&request(GALLERY_ID, "Gallery", "S-7"), &repo).await.unwrap();
    let remote = broker_with(defaults(), SandboxLimits::default(), None)
        .perform_behavior(&request(GALLERY_ID, "Gallery", "S-7"), &stack.base)
        .await
        .unwrap();
    assert_eq!(local, remote);
}

#[tokio::test]
async fn behaviors_are_local_to_each_broker() {
    let stack = repository().await;
    let plain = broker_with(vec![gallery_manifest()], SandboxLimits::default(), None);
    let mut fancy_entry = gallery_manifest();
    fancy_entry.mechanism_id = "urn:test:mech:fancy".into();
    fancy_entry.interface.interface_id = "urn:test:bi:fancy".into();
    let fancy = broker_with(vec![fancy_entry], SandboxLimits::default(), None);

    let a = plain.list_behaviors(&stack.base, SAMPLE).await.unwrap();
    let b = fancy.list_behaviors(&stack.base, SAMPLE).await.unwrap();
    assert_ne!(a.bindings[0].interface, b.bindings[0].interface);
    assert!(plain.perform_behavior(&request("urn:test:mech:fancy", "Gallery", "S-7"), &stack.base).await.is_err());
    assert!(fancy.perform_behavior(&request("urn:test:mech:fancy", "Gallery", "S-7"), &stack.base).await.is_ok());
    assert_eq!(stack.writes(), 0);
}
