//! The OAI data provider: answers harvest requests from the store.

use std::collections::BTreeMap;

use chrono::{DateTime, TimeDelta, Utc};
use structoid_core::oai::{
    parse_datestamp, ErrorCode, HarvestRecord, Identify, OaiError, OaiResponse, Payload, RecordHeader, Verb,
    METADATA_PREFIX, PROTOCOL_VERSION,
};
use structoid_core::public_view;

use crate::store::{Repository, StoredObject};

fn bad_argument(message: impl Into<String>) -> OaiError {
    OaiError::new(ErrorCode::BadArgument, message)
}

/// Parses a `from`/`until` bound. A day-granularity `until` covers the whole day.
fn bound(arguments: &BTreeMap<String, String>, name: &str) -> Result<Option<DateTime<Utc>>, OaiError> {
    let Some(raw) = arguments.get(name) else { return Ok(None) };
    let t = parse_datestamp(raw).ok_or_else(|| bad_argument(format!("`{name}` is not a valid datestamp")))?;
    if name == "until" && raw.trim().len() == "YYYY-MM-DD".len() {
        return Ok(Some(t + TimeDelta::days(1) - TimeDelta::seconds(1)));
    }
    Ok(Some(t))
}

fn check_arguments(arguments: &BTreeMap<String, String>, required: &[&str], optional: &[&str]) -> Result<(), OaiError> {
    for name in arguments.keys() {
        if !required.contains(&name.as_str()) && !optional.contains(&name.as_str()) {
            return Err(bad_argument(format!("illegal argument `{name}`")));
        }
    }
    for name in required {
        if !arguments.contains_key(*name) {
            return Err(bad_argument(format!("missing argument `{name}`")));
        }
    }
    if let Some(prefix) = arguments.get("metadataPrefix") {
        if prefix != METADATA_PREFIX {
            return Err(OaiError::new(
                ErrorCode::CannotDisseminateFormat,
                format!("metadata format `{prefix}` is not supported; use `{METADATA_PREFIX}`"),
            ));
        }
    }
    Ok(())
}

impl Repository {
    /// The harvest record of one stored object: the public view of each of
    /// its structoids, regenerated on every call.
    pub fn harvest_record(&self, stored: &StoredObject) -> HarvestRecord {
        let base = self.base_url();
        HarvestRecord {
            object_id: stored.object.object_id.clone(),
            datestamp: stored.datestamp,
            metadata: stored
                .object
                .structoids
                .iter()
                .map(|s| public_view(s, &base, &stored.object.object_id))
                .collect(),
        }
    }

    /// Answers one protocol request. `verb` is the raw verb argument.
    pub fn oai_request(&self, verb: &str, arguments: &BTreeMap<String, String>) -> OaiResponse {
        let result = match verb.parse::<Verb>() {
            Err(()) => Err(OaiError::new(ErrorCode::BadVerb, format!("illegal verb `{verb}`"))),
            Ok(verb) => self.dispatch(verb, arguments),
        };
        // Arguments are not echoed when the request itself was unacceptable.
        let echo = !matches!(&result, Err(e) if matches!(e.code, ErrorCode::BadVerb | ErrorCode::BadArgument));
        OaiResponse {
            response_date: Utc::now(),
            request_url: format!("{}/oai", self.base_url()),
            verb: echo.then(|| verb.to_string()),
            arguments: if echo { arguments.clone() } else { BTreeMap::new() },
            result,
        }
    }

    /// Answers a request given as raw query pairs, where the verb may be
    /// missing and arguments may repeat.
    pub fn oai_query(&self, pairs: &[(String, String)]) -> OaiResponse {
        let mut verb = None;
        let mut arguments = BTreeMap::new();
        let mut repeated = None;
        for (k, v) in pairs {
            let slot = if k == "verb" { verb.replace(v.clone()) } else { arguments.insert(k.clone(), v.clone()) };
            if slot.is_some() {
                repeated = Some(k.clone());
            }
        }
        match (verb, repeated) {
            (Some(verb), None) => self.oai_request(&verb, &arguments),
            (verb, repeated) => {
                let message = match repeated {
                    Some(k) => format!("argument `{k}` is repeated"),
                    None => "missing verb".to_string(),
                };
                let code = if verb.is_none() { ErrorCode::BadVerb } else { ErrorCode::BadArgument };
                OaiResponse {
                    response_date: Utc::now(),
                    request_url: format!("{}/oai", self.base_url()),
                    verb: None,
                    arguments: BTreeMap::new(),
                    result: Err(OaiError::new(code, message)),
                }
            }
        }
    }

    fn dispatch(&self, verb: Verb, arguments: &BTreeMap<String, String>) -> Result<Payload, OaiError> {
        match verb {
            Verb::Identify => {
                check_arguments(arguments, &[], &[])?;
                Ok(Payload::Identify(Identify {
                    repository_name: self.config().repository_name.clone(),
                    base_url: format!("{}/oai", self.base_url()),
                    protocol_version: PROTOCOL_VERSION.into(),
                    earliest_datestamp: self.list().iter().map(|s| s.datestamp).min(),
                    granularity: "YYYY-MM-DDThh:mm:ssZ".into(),
                }))
            }
            Verb::GetRecord => {
                check_arguments(arguments, &["identifier", "metadataPrefix"], &[])?;
                let id = &arguments["identifier"];
                let stored = self
                    .stored(id)
                    .map_err(|_| OaiError::new(ErrorCode::IdDoesNotExist, format!("no object `{id}`")))?;
                Ok(Payload::GetRecord(self.harvest_record(&stored)))
            }
            Verb::ListIdentifiers | Verb::ListRecords => {
                check_arguments(arguments, &["metadataPrefix"], &["from", "until"])?;
                let from = bound(arguments, "from")?;
                let until = bound(arguments, "until")?;
                if let (Some(f), Some(u)) = (from, until) {
                    if f > u {
                        return Err(bad_argument("`from` is later than `until`"));
                    }
                }
                let selected: Vec<_> = self
                    .list()
                    .into_iter()
                    .filter(|s| from.is_none_or(|f| s.datestamp >= f) && until.is_none_or(|u| s.datestamp <= u))
                    .collect();
                Ok(if verb == Verb::ListIdentifiers {
                    Payload::ListIdentifiers(
                        selected
                            .iter()
                            .map(|s| RecordHeader { identifier: s.object.object_id.clone(), datestamp: s.datestamp })
                            .collect(),
                    )
                } else {
                    Payload::ListRecords(selected.iter().map(|s| self.harvest_record(s)).collect())
                })
            }
        }
    }
}
