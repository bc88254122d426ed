//! How the broker talks to repositories: OAI harvesting and content fetches.

use std::sync::Arc;

use async_trait::async_trait;
use reqwest::Url;
use structoid_core::oai::{ErrorCode, HarvestRecord, OaiResponse, Payload, METADATA_PREFIX};
use structoid_repository::{Repository, RepositoryError};

use crate::error::BrokerError;

#[async_trait]
pub trait RepositoryClient: Send + Sync {
    /// Harvests one object's public structoids with `GetRecord`.
    async fn get_record(&self, repo_base: &str, object_id: &str) -> Result<HarvestRecord, BrokerError>;

    /// Fetches content from a role URL, returning the bytes and their MIME type.
    async fn fetch(&self, url: &str) -> Result<(Vec<u8>, String), BrokerError>;

    /// Runs a raw OAI request and returns the response document.
    async fn oai(&self, repo_base: &str, query: &[(String, String)]) -> Result<String, BrokerError>;
}

/// Reaches repositories over HTTP. Only GET requests are ever issued.
#[derive(Debug, Clone, Default)]
pub struct HttpRepositoryClient {
    http: reqwest::Client,
}

impl HttpRepositoryClient {
    pub fn new(http: reqwest::Client) -> Self {
        Self { http }
    }
}

fn oai_url(repo_base: &str, query: &[(String, String)]) -> Result<Url, BrokerError> {
    let base = format!("{}/oai", repo_base.trim_end_matches('/'));
    Url::parse_with_params(&base, query)
        .map_err(|e| BrokerError::RepositoryUnavailable(format!("bad repository URL `{repo_base}`: {e}")))
}

fn record_from(response: OaiResponse, object_id: &str) -> Result<HarvestRecord, BrokerError> {
    match response.result {
        Ok(Payload::GetRecord(record)) => Ok(record),
        Ok(_) => Err(BrokerError::RepositoryUnavailable("GetRecord answered with another payload".into())),
        Err(e) if e.code == ErrorCode::IdDoesNotExist => Err(BrokerError::ObjectNotFound(object_id.to_string())),
        Err(e) => Err(BrokerError::RepositoryUnavailable(format!("{}: {}", e.code, e.message))),
    }
}

fn get_record_query(object_id: &str) -> Vec<(String, String)> {
    vec![
        ("verb".into(), "GetRecord".into()),
        ("metadataPrefix".into(), METADATA_PREFIX.into()),
        ("identifier".into(), object_id.into()),
    ]
}

#[async_trait]
impl RepositoryClient for HttpRepositoryClient {
    async fn get_record(&self, repo_base: &str, object_id: &str) -> Result<HarvestRecord, BrokerError> {
        let body = self.oai(repo_base, &get_record_query(object_id)).await?;
        let response = OaiResponse::parse(body.as_bytes()).map_err(|e| BrokerError::RepositoryUnavailable(e.to_string()))?;
        record_from(response, object_id)
    }

    async fn fetch(&self, url: &str) -> Result<(Vec<u8>, String), BrokerError> {
        let failed = |reason: String| BrokerError::ContentFetchFailed { url: url.to_string(), reason };
        let response = self.http.get(url).send().await.map_err(|e| failed(e.to_string()))?;
        if !response.status().is_success() {
            return Err(failed(format!("status {}", response.status())));
        }
        let mime = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("application/octet-stream")
            .to_string();
        let bytes = response.bytes().await.map_err(|e| failed(e.to_string()))?;
        Ok((bytes.to_vec(), mime))
    }

    async fn oai(&self, repo_base: &str, query: &[(String, String)]) -> Result<String, BrokerError> {
        let url = oai_url(repo_base, query)?;
        let unavailable = |e: reqwest::Error| BrokerError::RepositoryUnavailable(e.to_string());
        let response = self.http.get(url).send().await.map_err(unavailable)?;
        if !response.status().is_success() {
            return Err(BrokerError::RepositoryUnavailable(format!("OAI endpoint answered {}", response.status())));
        }
        response.text().await.map_err(unavailable)
    }
}

/// Serves a co-located repository in-process, falling back to HTTP for any
/// other repository or URL.
pub struct LocalRepositoryClient {
    repo: Arc<Repository>,
    remote: HttpRepositoryClient,
}

impl LocalRepositoryClient {
    pub fn new(repo: Arc<Repository>, remote: HttpRepositoryClient) -> Self {
        Self { repo, remote }
    }

    fn is_local(&self, repo_base: &str) -> bool {
        repo_base.is_empty() || repo_base.trim_end_matches('/') == self.repo.base_url()
    }

    /// `(object_id, dsid)` when `url` is a content URL of the local repository.
    fn local_target(&self, url: &str) -> Option<(String, String)> {
        let rest = url.strip_prefix(&self.repo.base_url())?.strip_prefix("/objects/")?;
        let (id, dsid) = rest.split_once("/datastreams/")?;
        let decode = |s: &str| percent_encoding::percent_decode_str(s).decode_utf8().ok().map(|c| c.into_owned());
        Some((decode(id)?, decode(dsid)?))
    }
}

#[async_trait]
impl RepositoryClient for LocalRepositoryClient {
    async fn get_record(&self, repo_base: &str, object_id: &str) -> Result<HarvestRecord, BrokerError> {
        if !self.is_local(repo_base) {
            return self.remote.get_record(repo_base, object_id).await;
        }
        let query = get_record_query(object_id);
        record_from(self.repo.oai_query(&query), object_id)
    }

    async fn fetch(&self, url: &str) -> Result<(Vec<u8>, String), BrokerError> {
        let Some((id, dsid)) = self.local_target(url) else {
            return self.remote.fetch(url).await;
        };
        self.repo.get_datastream(&id, &dsid).await.map_err(|e| BrokerError::ContentFetchFailed {
            url: url.to_string(),
            reason: match e {
                RepositoryError::NotFound(what) => format!("{what} not found"),
                other => other.to_string(),
            },
        })
    }

    async fn oai(&self, repo_base: &str, query: &[(String, String)]) -> Result<String, BrokerError> {
        if !self.is_local(repo_base) {
            return self.remote.oai(repo_base, query).await;
        }
        Ok(self.repo.oai_query(query).to_xml())
    }
}
