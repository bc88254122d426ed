use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize};
use structoid_core::mechanisms::{BehaviorResult, Input, Inputs, InvokeReply};
use structoid_core::registry::{match_structoids, mime_matches, parse_manifest, ParamError};
use structoid_core::{BehaviorInterface, BehaviorRegistry, MechanismEntry, PublicStructoid, SchemaRegistry};
use tokio::time::Instant;

use crate::client::RepositoryClient;
use crate::error::BrokerError;
use crate::runner::{MechanismRunner, SandboxLimits};

/// Manifests fetched by URL larger than this are refused.
const MAX_MANIFEST_BYTES: usize = 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub structoid_sid: String,
    pub schema_uri: String,
    pub mechanism_id: String,
    pub interface: BehaviorInterface,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListBehaviorsResponse {
    pub object_id: String,
    pub bindings: Vec<Binding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerformRequest {
    pub object_id: String,
    pub mechanism_url: String,
    pub behavior_name: String,
    /// Raw parameter values; JSON numbers and booleans are accepted too.
    #[serde(default, deserialize_with = "scalar_map")]
    pub params: BTreeMap<String, String>,
    pub structoid_sid: String,
    /// Repository base URL; the broker's default repository when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repo: Option<String>,
}

fn scalar_map<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, String>, D::Error> {
    let raw: BTreeMap<String, serde_json::Value> = BTreeMap::deserialize(d)?;
    raw.into_iter()
        .map(|(k, v)| {
            let s = match v {
                serde_json::Value::String(s) => s,
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                other => return Err(serde::de::Error::custom(format!("parameter `{k}` must be a scalar, got {other}"))),
            };
            Ok((k, s))
        })
        .collect()
}

impl PerformRequest {
    pub fn check(&self) -> Result<(), BrokerError> {
        for (name, value) in [
            ("object_id", &self.object_id),
            ("mechanism_url", &self.mechanism_url),
            ("behavior_name", &self.behavior_name),
            ("structoid_sid", &self.structoid_sid),
        ] {
            if value.trim().is_empty() {
                return Err(BrokerError::InvalidRequest(format!("`{name}` must not be empty")));
            }
        }
        Ok(())
    }
}

/// What happened during one PerformBehavior, for diagnostics and tests.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PerformTrace {
    pub invocations: u32,
    pub needs_rounds: u32,
    pub fetched: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub limits: SandboxLimits,
    /// Repository used when a request names none.
    pub default_repository: Option<String>,
    /// Whether mechanism URLs absent from the registry may be fetched.
    pub fetch_unregistered: bool,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self { limits: SandboxLimits::default(), default_repository: None, fetch_unregistered: true }
    }
}

pub struct Broker {
    registry: Arc<BehaviorRegistry>,
    schemas: SchemaRegistry,
    repositories: Arc<dyn RepositoryClient>,
    config: BrokerConfig,
    http: reqwest::Client,
}

impl Broker {
    pub fn new(registry: Arc<BehaviorRegistry>, repositories: Arc<dyn RepositoryClient>, config: BrokerConfig) -> Self {
        Self { registry, schemas: SchemaRegistry::with_builtins(), repositories, config, http: reqwest::Client::new() }
    }

    pub fn with_schemas(mut self, schemas: SchemaRegistry) -> Self {
        self.schemas = schemas;
        self
    }

    pub fn registry(&self) -> &Arc<BehaviorRegistry> {
        &self.registry
    }

    pub fn repositories(&self) -> &Arc<dyn RepositoryClient> {
        &self.repositories
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    /// The repository a request refers to.
    pub fn repository_for(&self, requested: Option<&str>) -> Result<String, BrokerError> {
        requested
            .filter(|r| !r.trim().is_empty())
            .or(self.config.default_repository.as_deref())
            .map(|r| r.trim_end_matches('/').to_string())
            .ok_or_else(|| BrokerError::InvalidRequest("no repository given and no default configured".into()))
    }

    /// Harvests the object's structoids and joins them with the registry.
    pub async fn list_behaviors(&self, repo_base: &str, object_id: &str) -> Result<ListBehaviorsResponse, BrokerError> {
        let record = self.repositories.get_record(repo_base, object_id).await?;
        let structoids: Vec<_> = record.metadata.iter().map(internal_shape).collect();
        // One snapshot for both the match and the interfaces it reports.
        let snapshot = self.registry.snapshot();
        let bindings = match_structoids(&structoids, &snapshot)
            .into_iter()
            .map(|m| {
                let entry = snapshot.iter().find(|e| e.mechanism_id == m.mechanism_id).expect("matched from snapshot");
                Binding {
                    structoid_sid: m.structoid_sid,
                    schema_uri: m.schema_uri,
                    mechanism_id: m.mechanism_id,
                    interface: entry.interface.clone(),
                }
            })
            .collect();
        Ok(ListBehaviorsResponse { object_id: record.object_id, bindings })
    }

    /// Finds the mechanism in the registry, or fetches its manifest from the
    /// URL, and prepares it to run within the broker's limits.
    pub async fn load_mechanism(&self, mechanism_url: &str) -> Result<MechanismRunner, BrokerError> {
        let entry = match self.registry.get(mechanism_url) {
            Some(entry) => entry,
            None => Arc::new(self.fetch_manifest(mechanism_url).await?),
        };
        MechanismRunner::new(entry, self.config.limits, self.http.clone())
    }

    async fn fetch_manifest(&self, url: &str) -> Result<MechanismEntry, BrokerError> {
        let failed = |reason: String| BrokerError::FetchFailed { url: url.to_string(), reason };
        if !self.config.fetch_unregistered {
            return Err(failed("not registered".into()));
        }
        let parsed = reqwest::Url::parse(url).map_err(|_| failed("not registered and not a URL".into()))?;
        if parsed.scheme() != "http" {
            return Err(failed(format!("cannot fetch `{}` URLs", parsed.scheme())));
        }
        let mut response = self.http.get(parsed).send().await.map_err(|e| failed(e.to_string()))?;
        if !response.status().is_success() {
            return Err(failed(format!("status {}", response.status())));
        }
        let mut body = Vec::new();
        while let Some(chunk) = response.chunk().await.map_err(|e| failed(e.to_string()))? {
            body.extend_from_slice(&chunk);
            if body.len() > MAX_MANIFEST_BYTES {
                return Err(BrokerError::InvalidManifest("manifest too large".into()));
            }
        }
        parse_manifest(&body).map_err(|e| BrokerError::InvalidManifest(e.to_string()))
    }

    pub async fn perform_behavior(&self, request: &PerformRequest, repo_base: &str) -> Result<BehaviorResult, BrokerError> {
        self.perform_traced(request, repo_base).await.map(|(result, _)| result)
    }

    /// PerformBehavior: load the mechanism, probe it, fetch the content it
    /// asks for through the structoid's public role URLs, and invoke it once
    /// more with that content. The time limit covers the whole sequence.
    pub async fn perform_traced(
        &self,
        request: &PerformRequest,
        repo_base: &str,
    ) -> Result<(BehaviorResult, PerformTrace), BrokerError> {
        request.check()?;
        let deadline = Instant::now() + self.config.limits.timeout;
        let timeout = BrokerError::Timeout(self.config.limits.timeout);
        let mut trace = PerformTrace::default();

        let runner = match self.load_mechanism(&request.mechanism_url).await {
            Err(BrokerError::FetchFailed { .. }) => return Err(BrokerError::UnknownMechanism(request.mechanism_url.clone())),
            other => other?,
        };
        let entry = runner.entry.clone();
        let signature = entry.interface.behavior(&request.behavior_name).ok_or_else(|| BrokerError::BehaviorNotFound {
            mechanism: entry.mechanism_id.clone(),
            behavior: request.behavior_name.clone(),
        })?;
        let params = signature.check_params(&request.params).map_err(|e| match e {
            ParamError::Missing(_) => BrokerError::MissingParam(e.to_string()),
            ParamError::BadType { .. } | ParamError::Unexpected(_) => BrokerError::BadParamType(e.to_string()),
        })?;

        let record = tokio::time::timeout_at(deadline, self.repositories.get_record(repo_base, &request.object_id))
            .await
            .map_err(|_| timeout.clone())??;
        let structoid = record
            .metadata
            .iter()
            .find(|s| s.sid == request.structoid_sid)
            .ok_or_else(|| BrokerError::StructoidNotFound(request.structoid_sid.clone()))?;
        if structoid.schema_uri != entry.required_schema_uri {
            return Err(BrokerError::SchemaMismatch {
                sid: structoid.sid.clone(),
                found: structoid.schema_uri.clone(),
                required: entry.required_schema_uri.clone(),
            });
        }

        trace.invocations += 1;
        let mut reply = runner.invoke(&request.behavior_name, &params, &Inputs::new(), deadline).await?;
        if let InvokeReply::NeedsInput(labels) = reply {
            trace.needs_rounds += 1;
            let inputs = self.resolve_inputs(&entry, structoid, &labels, deadline, &mut trace).await?;
            trace.invocations += 1;
            reply = runner.invoke(&request.behavior_name, &params, &inputs, deadline).await?;
        }
        let result = match reply {
            InvokeReply::Result(result) => result,
            InvokeReply::NeedsInput(labels) => {
                return Err(BrokerError::MechanismFault(format!(
                    "asked for input again after it was supplied ({})",
                    labels.join(", ")
                )))
            }
        };
        if !mime_matches(&signature.output_mime, &result.mime) {
            return Err(BrokerError::MechanismFault(format!(
                "returned {} but `{}` declares {}",
                result.mime, signature.name, signature.output_mime
            )));
        }
        Ok((result, trace))
    }

    async fn resolve_inputs(
        &self,
        entry: &MechanismEntry,
        structoid: &PublicStructoid,
        labels: &[String],
        deadline: Instant,
        trace: &mut PerformTrace,
    ) -> Result<Inputs, BrokerError> {
        if labels.is_empty() {
            return Err(BrokerError::MechanismFault("asked for input without naming any label".into()));
        }
        // Mechanisms may only ask for labels of the schema they require.
        if let Ok(schema) = self.schemas.resolve(&entry.required_schema_uri) {
            if let Some(bad) = labels.iter().find(|l| schema.label(l).is_none()) {
                return Err(BrokerError::MechanismFault(format!(
                    "asked for `{bad}`, which {} does not define",
                    entry.required_schema_uri
                )));
            }
        }
        let mut inputs = Inputs::new();
        for label in labels {
            if inputs.contains_key(label) {
                continue;
            }
            let role = structoid
                .roles
                .iter()
                .find(|r| &r.label == label && !r.url.is_empty())
                .ok_or_else(|| BrokerError::RoleResolutionFailed { sid: structoid.sid.clone(), label: label.clone() })?;
            let (body, mime) = tokio::time::timeout_at(deadline, self.repositories.fetch(&role.url))
                .await
                .map_err(|_| BrokerError::Timeout(self.config.limits.timeout))??;
            trace.fetched.push(role.url.clone());
            inputs.insert(label.clone(), Input { mime, body, url: Some(role.url.clone()) });
        }
        Ok(inputs)
    }
}

/// A public structoid in the shape the matcher takes. Matching only reads
/// schema identifiers, so role targets are left empty.
fn internal_shape(p: &PublicStructoid) -> structoid_core::Structoid {
    structoid_core::Structoid {
        sid: p.sid.clone(),
        schema_uri: p.schema_uri.clone(),
        descriptor: p.descriptor.clone(),
        roles: vec![],
    }
}
