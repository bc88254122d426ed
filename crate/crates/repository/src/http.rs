use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, RawQuery, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use structoid_core::oai::format_datestamp;

use crate::store::{Repository, RepositoryError};

/// Largest accepted ingest request.
pub const MAX_INGEST_BYTES: usize = 512 * 1024 * 1024;

const XML: &str = "text/xml; charset=utf-8";

/// Routes: `GET /objects/{id}`, `GET /objects/{id}/datastreams/{dsid}`,
/// `POST /objects` and `GET /oai`.
pub fn router(repo: Arc<Repository>) -> Router {
    Router::new()
        .route("/objects", post(ingest))
        .route("/objects/{id}", get(object))
        .route("/objects/{id}/datastreams/{dsid}", get(datastream))
        .route("/oai", get(oai))
        .layer(DefaultBodyLimit::max(MAX_INGEST_BYTES))
        .with_state(repo)
}

impl IntoResponse for RepositoryError {
    fn into_response(self) -> Response {
        let status = match &self {
            RepositoryError::ValidationFailed(_) => StatusCode::UNPROCESSABLE_ENTITY,
            RepositoryError::MissingBlob { .. } => StatusCode::BAD_REQUEST,
            RepositoryError::NotFound(_) => StatusCode::NOT_FOUND,
            RepositoryError::UpstreamUnavailable { .. } => StatusCode::BAD_GATEWAY,
            RepositoryError::Corrupt(_) | RepositoryError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, [(header::CONTENT_TYPE, "text/plain; charset=utf-8")], format!("{self}\n")).into_response()
    }
}

async fn object(State(repo): State<Arc<Repository>>, Path(id): Path<String>) -> Result<Response, RepositoryError> {
    let stored = repo.stored(&id)?;
    Ok(([(header::CONTENT_TYPE, XML)], stored.document.as_ref().clone()).into_response())
}

async fn datastream(
    State(repo): State<Arc<Repository>>,
    Path((id, dsid)): Path<(String, String)>,
) -> Result<Response, RepositoryError> {
    let (bytes, mime) = repo.get_datastream(&id, &dsid).await?;
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn oai(State(repo): State<Arc<Repository>>, RawQuery(query): RawQuery) -> Response {
    let pairs: Vec<(String, String)> = url_pairs(query.as_deref().unwrap_or(""));
    ([(header::CONTENT_TYPE, XML)], repo.oai_query(&pairs).to_xml()).into_response()
}

fn url_pairs(query: &str) -> Vec<(String, String)> {
    query
        .split('&')
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (k, v) = p.split_once('=').unwrap_or((p, ""));
            (decode_component(k), decode_component(v))
        })
        .collect()
}

fn decode_component(s: &str) -> String {
    percent_encoding::percent_decode_str(&s.replace('+', " ")).decode_utf8_lossy().into_owned()
}

#[derive(Serialize)]
struct Ingested {
    object_id: String,
    datestamp: String,
}

/// Multipart ingest: a `document` field holding the object XML, plus one
/// field per locally stored datastream, named by its DSID (or its href).
async fn ingest(State(repo): State<Arc<Repository>>, mut form: Multipart) -> Response {
    let mut document = None;
    let mut blobs = BTreeMap::new();
    loop {
        match form.next_field().await {
            Ok(Some(field)) => {
                let name = field.name().unwrap_or_default().to_string();
                let bytes = match field.bytes().await {
                    Ok(b) => b.to_vec(),
                    Err(e) => return (StatusCode::BAD_REQUEST, format!("unreadable field `{name}`: {e}\n")).into_response(),
                };
                if name == "document" {
                    document = Some(bytes);
                } else {
                    blobs.insert(name, bytes);
                }
            }
            Ok(None) => break,
            Err(e) => return (StatusCode::BAD_REQUEST, format!("malformed multipart body: {e}\n")).into_response(),
        }
    }
    let Some(document) = document else {
        return (StatusCode::BAD_REQUEST, "missing `document` field\n").into_response();
    };
    let result = tokio::task::spawn_blocking({
        let repo = repo.clone();
        move || repo.ingest(&document, &blobs)
    })
    .await
    .expect("ingest task");
    match result.and_then(|id| repo.stored(&id)) {
        Ok(stored) => (
            StatusCode::CREATED,
            Json(Ingested { object_id: stored.object.object_id.clone(), datestamp: format_datestamp(&stored.datestamp) }),
        )
            .into_response(),
        Err(e) => e.into_response(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_pairs_keep_repeats_and_decode() {
        assert_eq!(
            url_pairs("verb=GetRecord&identifier=cornell%2FsampleDO&verb=x&flag"),
            vec![
                ("verb".to_string(), "GetRecord".to_string()),
                ("identifier".to_string(), "cornell/sampleDO".to_string()),
                ("verb".to_string(), "x".to_string()),
                ("flag".to_string(), String::new()),
            ]
        );
        assert_eq!(decode_component("a+b%20c"), "a b c");
    }
}
