use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, RawQuery, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{delete, get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use structoid_core::MechanismEntry;
use tower_http::services::ServeDir;

use crate::broker::{Broker, PerformRequest};
use crate::error::BrokerError;
use crate::render::{
    behavior_result_xml, error_xml, list_behaviors_xml, parse_perform_request, BehaviorResultJson, ErrorJson,
};

const XML: &str = "text/xml; charset=utf-8";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Xml,
    Json,
    /// The result body itself, typed with its MIME.
    Raw,
}

/// Picks the response format from `format=` first, then `Accept`, then
/// the given default.
fn negotiate(format: Option<&str>, headers: &HeaderMap, default: Format) -> Format {
    match format.map(str::to_ascii_lowercase).as_deref() {
        Some("json") => return Format::Json,
        Some("xml") => return Format::Xml,
        Some("raw") => return Format::Raw,
        _ => {}
    }
    let accept = headers.get(header::ACCEPT).and_then(|v| v.to_str().ok()).unwrap_or("");
    if accept.contains("application/json") {
        Format::Json
    } else if accept.contains("xml") {
        Format::Xml
    } else {
        default
    }
}

fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], serde_json::to_vec(value).expect("serializable")).into_response()
}

fn xml_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, XML)], body).into_response()
}

fn error_response(error: &BrokerError, format: Format) -> Response {
    let status = StatusCode::from_u16(error.status()).expect("valid status");
    match format {
        Format::Json => json_response(status, &ErrorJson::from(error)),
        Format::Xml | Format::Raw => xml_response(status, error_xml(error)),
    }
}

/// Routes of the broker protocol, the registry admin API and, when
/// `ui_dir` is given, the static user interface under `/ui/`.
pub fn router(broker: Arc<Broker>, ui_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/broker/ListBehaviors", get(list_behaviors))
        .route("/broker/PerformBehavior", post(perform_behavior))
        .route("/broker/proxy/oai", get(proxy_oai))
        .route("/registry", get(list_registry).post(register))
        .route("/registry/{id}", delete(deregister))
        .with_state(broker);
    if let Some(dir) = ui_dir {
        app = app
            .nest_service("/ui", ServeDir::new(dir))
            .route("/", get(|| async { Redirect::temporary("/ui/") }));
    }
    app
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    repo: Option<String>,
    #[serde(rename = "objectID")]
    object_id: Option<String>,
    format: Option<String>,
}

async fn list_behaviors(State(broker): State<Arc<Broker>>, headers: HeaderMap, Query(q): Query<ListQuery>) -> Response {
    let format = negotiate(q.format.as_deref(), &headers, Format::Xml);
    let result = async {
        let object_id = q
            .object_id
            .filter(|id| !id.is_empty())
            .ok_or_else(|| BrokerError::InvalidRequest("missing `objectID`".into()))?;
        let repo = broker.repository_for(q.repo.as_deref())?;
        broker.list_behaviors(&repo, &object_id).await
    }
    .await;
    match result {
        Ok(response) if format == Format::Json => json_response(StatusCode::OK, &response),
        Ok(response) => xml_response(StatusCode::OK, list_behaviors_xml(&response)),
        Err(e) => error_response(&e, format),
    }
}

#[derive(Debug, Deserialize)]
struct FormatQuery {
    format: Option<String>,
    repo: Option<String>,
}

fn is_json_body(headers: &HeaderMap, body: &[u8]) -> bool {
    let declared = headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("");
    declared.contains("json") || (!declared.contains("xml") && body.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{'))
}

async fn perform_behavior(
    State(broker): State<Arc<Broker>>,
    headers: HeaderMap,
    Query(q): Query<FormatQuery>,
    body: Bytes,
) -> Response {
    let json_body = is_json_body(&headers, &body);
    let format = negotiate(q.format.as_deref(), &headers, if json_body { Format::Json } else { Format::Xml });
    let result = async {
        let request: PerformRequest = if json_body {
            serde_json::from_slice(&body).map_err(|e| BrokerError::InvalidRequest(e.to_string()))?
        } else {
            parse_perform_request(&body)?
        };
        let repo = broker.repository_for(request.repo.as_deref().or(q.repo.as_deref()))?;
        broker.perform_behavior(&request, &repo).await
    }
    .await;
    match (result, format) {
        (Ok(r), Format::Json) => json_response(StatusCode::OK, &BehaviorResultJson::from(&r)),
        (Ok(r), Format::Xml) => xml_response(StatusCode::OK, behavior_result_xml(&r)),
        (Ok(r), Format::Raw) => {
            let mime = HeaderValue::from_str(&r.mime).unwrap_or(HeaderValue::from_static("application/octet-stream"));
            // Mechanism output is third-party content.
            let csp = HeaderValue::from_static("sandbox");
            (StatusCode::OK, [(header::CONTENT_TYPE, mime), (header::CONTENT_SECURITY_POLICY, csp)], r.body).into_response()
        }
        (Err(e), format) => error_response(&e, format),
    }
}

/// Forwards an OAI request to a repository (`repo=` or the default one).
async fn proxy_oai(State(broker): State<Arc<Broker>>, RawQuery(query): RawQuery) -> Response {
    let query = query.unwrap_or_default();
    let parsed = reqwest::Url::parse(&format!("http://proxy/?{query}")).expect("static base URL");
    let mut repo = None;
    let mut pairs = Vec::new();
    for (k, v) in parsed.query_pairs() {
        if k == "repo" {
            repo = Some(v.into_owned());
        } else {
            pairs.push((k.into_owned(), v.into_owned()));
        }
    }
    let result = async {
        let repo = broker.repository_for(repo.as_deref())?;
        broker.repositories().oai(&repo, &pairs).await
    }
    .await;
    match result {
        Ok(body) => xml_response(StatusCode::OK, body),
        Err(e) => error_response(&e, Format::Xml),
    }
}

#[derive(Debug, Deserialize)]
struct AdminQuery {
    format: Option<String>,
}

#[derive(Serialize)]
struct RegistryListing<'a> {
    mechanisms: Vec<&'a MechanismEntry>,
}

async fn list_registry(State(broker): State<Arc<Broker>>, headers: HeaderMap, Query(q): Query<AdminQuery>) -> Response {
    let snapshot = broker.registry().snapshot();
    if negotiate(q.format.as_deref(), &headers, Format::Xml) == Format::Json {
        return json_response(StatusCode::OK, &RegistryListing { mechanisms: snapshot.iter().map(AsRef::as_ref).collect() });
    }
    let mut body = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<Registry>\n");
    for entry in snapshot.iter() {
        for line in entry.to_xml().lines().filter(|l| !l.starts_with("<?xml")) {
            body.push_str("  ");
            body.push_str(line);
            body.push('\n');
        }
    }
    body.push_str("</Registry>\n");
    xml_response(StatusCode::OK, body)
}

#[derive(Serialize)]
struct Registered {
    mechanism_id: String,
}

async fn register(
    State(broker): State<Arc<Broker>>,
    headers: HeaderMap,
    Query(q): Query<AdminQuery>,
    body: Bytes,
) -> Response {
    let format = negotiate(q.format.as_deref(), &headers, Format::Xml);
    let result = structoid_core::registry::parse_manifest(&body)
        .map_err(|e| BrokerError::InvalidManifest(e.to_string()))
        .and_then(|entry| broker.registry().register(entry).map_err(|e| BrokerError::Registry(e.to_string())));
    match result {
        Ok(id) if format == Format::Json => json_response(StatusCode::CREATED, &Registered { mechanism_id: id }),
        Ok(id) => xml_response(StatusCode::CREATED, format!("<registered>{}</registered>\n", structoid_core::xml::escape(&id))),
        Err(e) => error_response(&e, format),
    }
}

async fn deregister(
    State(broker): State<Arc<Broker>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<AdminQuery>,
) -> Response {
    let format = negotiate(q.format.as_deref(), &headers, Format::Xml);
    match broker.registry().deregister(&id) {
        Ok(true) if format == Format::Json => json_response(StatusCode::OK, &Registered { mechanism_id: id }),
        Ok(true) => xml_response(StatusCode::OK, format!("<deregistered>{}</deregistered>\n", structoid_core::xml::escape(&id))),
        Ok(false) => error_response(&BrokerError::UnknownMechanism(id), format),
        Err(e) => error_response(&BrokerError::Registry(e.to_string()), format),
    }
}
