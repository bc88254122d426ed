//! OAI-PMH style messages carrying public structoids.
//!
//! Only the subset used between repositories and brokers is modeled: the
//! `Identify`, `ListIdentifiers`, `ListRecords` and `GetRecord` verbs, one
//! metadata format (`structoid`), no sets and no resumption tokens.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::object::{PublicRole, PublicStructoid};
use crate::xml::{self, Element, XmlWriter};

pub const OAI_NAMESPACE: &str = "http://www.openarchives.org/OAI/2.0/";
pub const STRUCTOID_METADATA_NAMESPACE: &str = "urn:structoid:oai:public-structoids";
pub const METADATA_PREFIX: &str = "structoid";
pub const PROTOCOL_VERSION: &str = "2.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verb {
    Identify,
    ListIdentifiers,
    ListRecords,
    GetRecord,
}

impl Verb {
    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Identify => "Identify",
            Verb::ListIdentifiers => "ListIdentifiers",
            Verb::ListRecords => "ListRecords",
            Verb::GetRecord => "GetRecord",
        }
    }
}

impl FromStr for Verb {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "Identify" => Ok(Verb::Identify),
            "ListIdentifiers" => Ok(Verb::ListIdentifiers),
            "ListRecords" => Ok(Verb::ListRecords),
            "GetRecord" => Ok(Verb::GetRecord),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ErrorCode {
    BadVerb,
    BadArgument,
    IdDoesNotExist,
    CannotDisseminateFormat,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::BadVerb => "badVerb",
            ErrorCode::BadArgument => "badArgument",
            ErrorCode::IdDoesNotExist => "idDoesNotExist",
            ErrorCode::CannotDisseminateFormat => "cannotDisseminateFormat",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "badVerb" => Some(ErrorCode::BadVerb),
            "badArgument" => Some(ErrorCode::BadArgument),
            "idDoesNotExist" => Some(ErrorCode::IdDoesNotExist),
            "cannotDisseminateFormat" => Some(ErrorCode::CannotDisseminateFormat),
            _ => None,
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OaiError {
    pub code: ErrorCode,
    pub message: String,
}

impl OaiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub identifier: String,
    pub datestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestRecord {
    pub object_id: String,
    pub datestamp: DateTime<Utc>,
    pub metadata: Vec<PublicStructoid>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identify {
    pub repository_name: String,
    pub base_url: String,
    pub protocol_version: String,
    pub earliest_datestamp: Option<DateTime<Utc>>,
    pub granularity: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    Identify(Identify),
    ListIdentifiers(Vec<RecordHeader>),
    ListRecords(Vec<HarvestRecord>),
    GetRecord(HarvestRecord),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OaiResponse {
    pub response_date: DateTime<Utc>,
    /// Base URL of the responding endpoint, echoed in the `request` element.
    pub request_url: String,
    pub verb: Option<String>,
    pub arguments: BTreeMap<String, String>,
    pub result: Result<Payload, OaiError>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unreadable OAI response: {0}")]
pub struct OaiParseError(pub String);

/// UTC, second granularity: `2002-05-01T14:32:09Z`.
pub fn format_datestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Accepts full datestamps and day-granularity dates (`2002-05-01`).
pub fn parse_datestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    let day = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    Some(Utc.from_utc_datetime(&day.and_hms_opt(0, 0, 0)?))
}

/// Writes one `<record>` element. `ListRecords` and `GetRecord` both place
/// records at the same depth, so their renderings are textually identical.
pub fn write_record(w: &mut XmlWriter, record: &HarvestRecord) {
    w.open("record", &[]);
    write_header(w, &record.object_id, &record.datestamp);
    w.open("metadata", &[]);
    w.open("structoids", &[("xmlns", STRUCTOID_METADATA_NAMESPACE)]);
    for s in &record.metadata {
        w.open("Structoid", &[("SID", &s.sid), ("schema", &s.schema_uri)]);
        w.text_element("descriptor", &[], &s.descriptor);
        for role in &s.roles {
            w.empty("role", &[("label", &role.label), ("href", &role.url)]);
        }
        w.close("Structoid");
    }
    w.close("structoids");
    w.close("metadata");
    w.close("record");
}

fn write_header(w: &mut XmlWriter, identifier: &str, datestamp: &DateTime<Utc>) {
    w.open("header", &[]);
    w.text_element("identifier", &[], identifier);
    w.text_element("datestamp", &[], &format_datestamp(datestamp));
    w.close("header");
}

/// The `<record>` element of `record` alone, as it appears inside a response.
pub fn record_fragment(record: &HarvestRecord) -> String {
    let mut w = XmlWriter::fragment(2);
    write_record(&mut w, record);
    w.finish()
}

impl OaiResponse {
    pub fn to_xml(&self) -> String {
        let mut w = XmlWriter::new();
        w.open("OAI-PMH", &[("xmlns", OAI_NAMESPACE)]);
        w.text_element("responseDate", &[], &format_datestamp(&self.response_date));
        let mut attrs: Vec<(&str, &str)> = Vec::new();
        if let Some(verb) = &self.verb {
            attrs.push(("verb", verb));
        }
        for (k, v) in &self.arguments {
            attrs.push((k, v));
        }
        w.text_element("request", &attrs, &self.request_url);

        match &self.result {
            Err(e) => w.text_element("error", &[("code", e.code.as_str())], &e.message),
            Ok(Payload::Identify(id)) => {
                w.open("Identify", &[]);
                w.text_element("repositoryName", &[], &id.repository_name);
                w.text_element("baseURL", &[], &id.base_url);
                w.text_element("protocolVersion", &[], &id.protocol_version);
                if let Some(t) = &id.earliest_datestamp {
                    w.text_element("earliestDatestamp", &[], &format_datestamp(t));
                }
                w.text_element("granularity", &[], &id.granularity);
                w.close("Identify");
            }
            Ok(Payload::ListIdentifiers(headers)) => {
                if headers.is_empty() {
                    w.empty("ListIdentifiers", &[]);
                } else {
                    w.open("ListIdentifiers", &[]);
                    for h in headers {
                        write_header(&mut w, &h.identifier, &h.datestamp);
                    }
                    w.close("ListIdentifiers");
                }
            }
            Ok(Payload::ListRecords(records)) => {
                if records.is_empty() {
                    w.empty("ListRecords", &[]);
                } else {
                    w.open("ListRecords", &[]);
                    for r in records {
                        write_record(&mut w, r);
                    }
                    w.close("ListRecords");
                }
            }
            Ok(Payload::GetRecord(r)) => {
                w.open("GetRecord", &[]);
                write_record(&mut w, r);
                w.close("GetRecord");
            }
        }
        w.close("OAI-PMH");
        w.finish()
    }

    pub fn parse(document: &[u8]) -> Result<Self, OaiParseError> {
        let root = xml::parse(document, &BTreeMap::new()).map_err(|e| OaiParseError(e.0))?;
        if root.local != "OAI-PMH" {
            return Err(OaiParseError(format!("root is <{}>", root.local)));
        }
        let response_date = root
            .child_text("responseDate")
            .and_then(parse_datestamp)
            .ok_or_else(|| OaiParseError("missing responseDate".into()))?;
        let request = root.child("request").ok_or_else(|| OaiParseError("missing request".into()))?;
        let verb = request.plain_attr("verb").map(str::to_string);
        let arguments = request
            .attributes
            .iter()
            .filter(|a| a.local != "verb")
            .map(|a| (a.local.clone(), a.value.clone()))
            .collect();

        let body = root
            .children
            .iter()
            .find(|c| c.local != "responseDate" && c.local != "request")
            .ok_or_else(|| OaiParseError("no payload".into()))?;

        let result = match body.local.as_str() {
            "error" => {
                let code = body
                    .plain_attr("code")
                    .and_then(ErrorCode::parse)
                    .ok_or_else(|| OaiParseError("unknown error code".into()))?;
                Err(OaiError::new(code, body.text.trim()))
            }
            "Identify" => Ok(Payload::Identify(Identify {
                repository_name: body.child_text("repositoryName").unwrap_or_default().to_string(),
                base_url: body.child_text("baseURL").unwrap_or_default().to_string(),
                protocol_version: body.child_text("protocolVersion").unwrap_or_default().to_string(),
                earliest_datestamp: body.child_text("earliestDatestamp").and_then(parse_datestamp),
                granularity: body.child_text("granularity").unwrap_or_default().to_string(),
            })),
            "ListIdentifiers" => Ok(Payload::ListIdentifiers(
                body.children_named("header").map(read_header).collect::<Result<_, _>>()?,
            )),
            "ListRecords" => Ok(Payload::ListRecords(
                body.children_named("record").map(read_record).collect::<Result<_, _>>()?,
            )),
            "GetRecord" => Ok(Payload::GetRecord(read_record(
                body.child("record").ok_or_else(|| OaiParseError("GetRecord without record".into()))?,
            )?)),
            other => return Err(OaiParseError(format!("unexpected <{other}>"))),
        };

        Ok(OaiResponse {
            response_date,
            request_url: request.text.trim().to_string(),
            verb,
            arguments,
            result,
        })
    }
}

fn read_header(el: &Element) -> Result<RecordHeader, OaiParseError> {
    Ok(RecordHeader {
        identifier: el
            .child_text("identifier")
            .ok_or_else(|| OaiParseError("header without identifier".into()))?
            .trim()
            .to_string(),
        datestamp: el
            .child_text("datestamp")
            .and_then(parse_datestamp)
            .ok_or_else(|| OaiParseError("header without a valid datestamp".into()))?,
    })
}

fn read_record(el: &Element) -> Result<HarvestRecord, OaiParseError> {
    let header = read_header(el.child("header").ok_or_else(|| OaiParseError("record without header".into()))?)?;
    let mut metadata = Vec::new();
    if let Some(structoids) = el.child("metadata").and_then(|m| m.child("structoids")) {
        for s in structoids.children_named("Structoid") {
            let missing = |what: &str| OaiParseError(format!("structoid without {what}"));
            let mut roles = Vec::new();
            for r in s.children_named("role") {
                roles.push(PublicRole {
                    label: r.plain_attr("label").ok_or_else(|| missing("role label"))?.to_string(),
                    url: r.plain_attr("href").ok_or_else(|| missing("role href"))?.to_string(),
                });
            }
            metadata.push(PublicStructoid {
                sid: s.plain_attr("SID").ok_or_else(|| missing("SID"))?.to_string(),
                schema_uri: s.plain_attr("schema").ok_or_else(|| missing("schema"))?.to_string(),
                descriptor: s.child_text("descriptor").unwrap_or_default().to_string(),
                roles,
            });
        }
    }
    Ok(HarvestRecord { object_id: header.identifier, datestamp: header.datestamp, metadata })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::figure2_object;
    use crate::object::public_view;

    fn record() -> HarvestRecord {
        let obj = figure2_object();
        HarvestRecord {
            object_id: obj.object_id.clone(),
            datestamp: parse_datestamp("2026-10-16T09:30:00Z").unwrap(),
            metadata: obj.structoids.iter().map(|s| public_view(s, "http://r.example", &obj.object_id)).collect(),
        }
    }

    fn response(result: Result<Payload, OaiError>) -> OaiResponse {
        OaiResponse {
            response_date: parse_datestamp("2026-10-16T10:00:00Z").unwrap(),
            request_url: "http://r.example/oai".into(),
            verb: Some("GetRecord".into()),
            arguments: BTreeMap::from([("identifier".into(), "cornell/sampleDO".into()), ("metadataPrefix".into(), "structoid".into())]),
            result,
        }
    }

    #[test]
    fn responses_round_trip() {
        for result in [
            Ok(Payload::GetRecord(record())),
            Ok(Payload::ListRecords(vec![record(), record()])),
            Ok(Payload::ListRecords(vec![])),
            Ok(Payload::ListIdentifiers(vec![RecordHeader { identifier: "a".into(), datestamp: record().datestamp }])),
            Ok(Payload::Identify(Identify {
                repository_name: "r".into(),
                base_url: "http://r.example/oai".into(),
                protocol_version: PROTOCOL_VERSION.into(),
                earliest_datestamp: None,
                granularity: "YYYY-MM-DDThh:mm:ssZ".into(),
            })),
            Err(OaiError::new(ErrorCode::IdDoesNotExist, "no such object")),
        ] {
            let r = response(result);
            assert_eq!(OaiResponse::parse(r.to_xml().as_bytes()).unwrap(), r);
        }
    }

    #[test]
    fn record_fragment_appears_verbatim() {
        let xml = response(Ok(Payload::GetRecord(record()))).to_xml();
        assert!(xml.contains(&record_fragment(&record())));
        let list = response(Ok(Payload::ListRecords(vec![record()]))).to_xml();
        assert!(list.contains(&record_fragment(&record())));
    }

    #[test]
    fn datestamps() {
        let t = parse_datestamp("2002-05-01T14:32:09Z").unwrap();
        assert_eq!(format_datestamp(&t), "2002-05-01T14:32:09Z");
        assert_eq!(format_datestamp(&parse_datestamp("2002-05-01").unwrap()), "2002-05-01T00:00:00Z");
        assert!(parse_datestamp("yesterday").is_none());
    }
}
