//! XML renderings of broker protocol messages. Element names match the JSON
//! field names, so both renderings carry the same vocabulary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use structoid_core::mechanisms::BehaviorResult;
use structoid_core::wire::encode_base64;
use structoid_core::xml::{self, XmlWriter};
use structoid_core::BehaviorInterface;

use crate::broker::{ListBehaviorsResponse, PerformRequest};
use crate::error::BrokerError;

pub fn write_interface(w: &mut XmlWriter, interface: &BehaviorInterface) {
    w.open("interface", &[]);
    w.text_element("interface_id", &[], &interface.interface_id);
    w.open("behaviors", &[]);
    for b in &interface.behaviors {
        w.open("behavior", &[]);
        w.text_element("name", &[], &b.name);
        if b.params.is_empty() {
            w.empty("params", &[]);
        } else {
            w.open("params", &[]);
            for p in &b.params {
                w.open("param", &[]);
                w.text_element("name", &[], &p.name);
                w.text_element("type", &[], p.kind.as_str());
                w.text_element("required", &[], if p.required { "true" } else { "false" });
                w.close("param");
            }
            w.close("params");
        }
        w.text_element("output_mime", &[], &b.output_mime);
        w.close("behavior");
    }
    w.close("behaviors");
    w.close("interface");
}

pub fn list_behaviors_xml(response: &ListBehaviorsResponse) -> String {
    let mut w = XmlWriter::new();
    w.open("ListBehaviorsResponse", &[]);
    w.text_element("object_id", &[], &response.object_id);
    if response.bindings.is_empty() {
        w.empty("bindings", &[]);
    } else {
        w.open("bindings", &[]);
        for b in &response.bindings {
            w.open("binding", &[]);
            w.text_element("structoid_sid", &[], &b.structoid_sid);
            w.text_element("schema_uri", &[], &b.schema_uri);
            w.text_element("mechanism_id", &[], &b.mechanism_id);
            write_interface(&mut w, &b.interface);
            w.close("binding");
        }
        w.close("bindings");
    }
    w.close("ListBehaviorsResponse");
    w.finish()
}

/// JSON shape of a behavior result: the body is base64.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorResultJson {
    pub mime: String,
    pub body: String,
}

impl From<&BehaviorResult> for BehaviorResultJson {
    fn from(r: &BehaviorResult) -> Self {
        Self { mime: r.mime.clone(), body: encode_base64(&r.body) }
    }
}

pub fn behavior_result_xml(result: &BehaviorResult) -> String {
    let mut w = XmlWriter::new();
    w.open("BehaviorResult", &[]);
    w.text_element("mime", &[], &result.mime);
    w.text_element("body", &[("encoding", "base64")], &encode_base64(&result.body));
    w.close("BehaviorResult");
    w.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorJson {
    pub error: ErrorBody,
}

impl From<&BrokerError> for ErrorJson {
    fn from(e: &BrokerError) -> Self {
        Self { error: ErrorBody { code: e.code().to_string(), message: e.to_string() } }
    }
}

pub fn error_xml(error: &BrokerError) -> String {
    let mut w = XmlWriter::new();
    w.open("error", &[]);
    w.text_element("code", &[], error.code());
    w.text_element("message", &[], &error.to_string());
    w.close("error");
    w.finish()
}

/// Reads a PerformRequest from its XML rendering:
///
/// ```xml
/// <PerformRequest>
///   <object_id>cornell/sampleDO</object_id>
///   <mechanism_url>urn:structoid:mech:gallery</mechanism_url>
///   <behavior_name>Gallery</behavior_name>
///   <params><param name="lang">fr</param></params>
///   <structoid_sid>S-7</structoid_sid>
/// </PerformRequest>
/// ```
pub fn parse_perform_request(document: &[u8]) -> Result<PerformRequest, BrokerError> {
    let bad = |m: String| BrokerError::InvalidRequest(m);
    let root = xml::parse(document, &BTreeMap::new()).map_err(|e| bad(e.0))?;
    if root.local != "PerformRequest" {
        return Err(bad(format!("expected <PerformRequest>, found <{}>", root.local)));
    }
    let field = |name: &str| root.child_text(name).map(|t| t.trim().to_string()).unwrap_or_default();
    let mut params = BTreeMap::new();
    if let Some(list) = root.child("params") {
        for p in list.children_named("param") {
            let name = p.plain_attr("name").ok_or_else(|| bad("<param> without a name".into()))?;
            if params.insert(name.to_string(), p.text.clone()).is_some() {
                return Err(bad(format!("parameter `{name}` given twice")));
            }
        }
    }
    let repo = field("repo");
    Ok(PerformRequest {
        object_id: field("object_id"),
        mechanism_url: field("mechanism_url"),
        behavior_name: field("behavior_name"),
        params,
        structoid_sid: field("structoid_sid"),
        repo: (!repo.is_empty()).then_some(repo),
    })
}

pub fn perform_request_xml(request: &PerformRequest) -> String {
    let mut w = XmlWriter::new();
    w.open("PerformRequest", &[]);
    w.text_element("object_id", &[], &request.object_id);
    w.text_element("mechanism_url", &[], &request.mechanism_url);
    w.text_element("behavior_name", &[], &request.behavior_name);
    if request.params.is_empty() {
        w.empty("params", &[]);
    } else {
        w.open("params", &[]);
        for (k, v) in &request.params {
            w.text_element("param", &[("name", k)], v);
        }
        w.close("params");
    }
    w.text_element("structoid_sid", &[], &request.structoid_sid);
    if let Some(repo) = &request.repo {
        w.text_element("repo", &[], repo);
    }
    w.close("PerformRequest");
    w.finish()
}
