//! Structoid schemas: label vocabulary with ordered occurrence constraints
//! (the grammar half) and per-label MIME restrictions (the rule half).
//!
//! Schemas are read from SSD documents:
//!
//! ```xml
//! <StructoidSchema uri="http://www.cornell.edu/structoids/Image#Cornell_ImageType">
//!   <description>...</description>
//!   <Label name="thumbnail" minOccurs="1" maxOccurs="1">
//!     <MIME>image/jpeg</MIME>
//!     <MIME>image/gif</MIME>
//!   </Label>
//! </StructoidSchema>
//! ```
//!
//! `minOccurs` and `maxOccurs` default to 1; `maxOccurs="unbounded"` lifts the
//! upper bound. A label without `MIME` children accepts any datastream type.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::object::{DigitalObject, Structoid};
use crate::xml::{self, XmlWriter};

const CORNELL_IMAGE_SSD: &str = include_str!("../data/cornell_image.ssd.xml");
const TEXT_DOCUMENT_SSD: &str = include_str!("../data/text_document.ssd.xml");

/// Schema identifier of the seeded single-text-body schema.
pub const TEXT_DOCUMENT_TYPE: &str = "http://structoids.example.org/Text#TextDocumentType";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxOccurs {
    Bounded(u32),
    Unbounded,
}

impl MaxOccurs {
    pub fn admits(self, count: u32) -> bool {
        match self {
            MaxOccurs::Bounded(max) => count <= max,
            MaxOccurs::Unbounded => true,
        }
    }
}

impl fmt::Display for MaxOccurs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaxOccurs::Bounded(n) => write!(f, "{n}"),
            MaxOccurs::Unbounded => f.write_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub name: String,
    pub min_occurs: u32,
    pub max_occurs: MaxOccurs,
    /// Allowed datastream MIME types, in declaration order. Empty means any.
    pub allowed_mimes: Vec<String>,
}

impl LabelSpec {
    /// A label occurring exactly once.
    pub fn once(name: &str, mimes: &[&str]) -> Self {
        Self {
            name: name.into(),
            min_occurs: 1,
            max_occurs: MaxOccurs::Bounded(1),
            allowed_mimes: mimes.iter().map(|m| m.to_string()).collect(),
        }
    }

    pub fn accepts_mime(&self, mime: &str) -> bool {
        self.allowed_mimes.is_empty() || self.allowed_mimes.iter().any(|m| m == mime)
    }

    /// The MIME set as it appears in rule messages: `image/jpeg or image/gif`.
    pub fn mime_phrase(&self) -> String {
        self.allowed_mimes.join(" or ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructoidSchema {
    pub schema_uri: String,
    pub description: String,
    pub labels: Vec<LabelSpec>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("malformed schema: {0}")]
    MalformedSchema(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("unknown structoid schema `{0}`")]
    UnknownSchema(String),
    #[error("role `{label}` refers to `{dsid}`, which is not a datastream of the object")]
    UnresolvedRole { label: String, dsid: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FindingClass {
    UnknownLabel,
    OutOfOrder,
    TooFew,
    TooMany,
    MimeMismatch,
    MimeAccepted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub class: FindingClass,
    pub label: String,
    pub message: String,
    /// For rule findings: the MIME set the label requires.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expected_mimes: Vec<String>,
}

impl Finding {
    fn error(class: FindingClass, label: &str, message: String) -> Self {
        Self { severity: Severity::Error, class, label: label.into(), message, expected_mimes: vec![] }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub grammar_findings: Vec<Finding>,
    pub rule_findings: Vec<Finding>,
    pub valid: bool,
}

impl ValidationReport {
    pub fn new(grammar_findings: Vec<Finding>, rule_findings: Vec<Finding>) -> Self {
        let valid = !grammar_findings.iter().chain(&rule_findings).any(Finding::is_error);
        Self { grammar_findings, rule_findings, valid }
    }

    pub fn findings(&self) -> impl Iterator<Item = &Finding> {
        self.grammar_findings.iter().chain(&self.rule_findings)
    }
}

impl StructoidSchema {
    pub fn label(&self, name: &str) -> Option<&LabelSpec> {
        self.labels.iter().find(|l| l.name == name)
    }

    fn check(self) -> Result<Self, SchemaError> {
        if self.schema_uri.is_empty() {
            return Err(SchemaError::MalformedSchema("empty schema uri".into()));
        }
        if self.labels.is_empty() {
            return Err(SchemaError::MalformedSchema("a schema needs at least one label".into()));
        }
        let mut seen = HashSet::new();
        for label in &self.labels {
            if label.name.is_empty() {
                return Err(SchemaError::MalformedSchema("empty label name".into()));
            }
            if !seen.insert(label.name.as_str()) {
                return Err(SchemaError::DuplicateLabel(label.name.clone()));
            }
            if !label.max_occurs.admits(label.min_occurs) {
                return Err(SchemaError::MalformedSchema(format!(
                    "label `{}` has minOccurs {} above maxOccurs {}",
                    label.name, label.min_occurs, label.max_occurs
                )));
            }
        }
        Ok(self)
    }

    pub fn to_xml(&self) -> String {
        let mut w = XmlWriter::new();
        w.open("StructoidSchema", &[("uri", &self.schema_uri)]);
        if !self.description.is_empty() {
            w.text_element("description", &[], &self.description);
        }
        for label in &self.labels {
            let min = label.min_occurs.to_string();
            let max = label.max_occurs.to_string();
            let attrs = [("name", label.name.as_str()), ("minOccurs", &min), ("maxOccurs", &max)];
            if label.allowed_mimes.is_empty() {
                w.empty("Label", &attrs);
            } else {
                w.open("Label", &attrs);
                for mime in &label.allowed_mimes {
                    w.text_element("MIME", &[], mime);
                }
                w.close("Label");
            }
        }
        w.close("StructoidSchema");
        w.finish()
    }
}

fn malformed(msg: impl Into<String>) -> SchemaError {
    SchemaError::MalformedSchema(msg.into())
}

pub fn parse_schema(document: &[u8]) -> Result<StructoidSchema, SchemaError> {
    let root = xml::parse(document, &BTreeMap::new()).map_err(|e| malformed(e.0))?;
    if root.local != "StructoidSchema" {
        return Err(malformed(format!("root must be <StructoidSchema>, found <{}>", root.local)));
    }
    let schema_uri = root
        .plain_attr("uri")
        .ok_or_else(|| malformed("missing uri attribute"))?
        .trim()
        .to_string();

    let mut description = String::new();
    let mut labels = Vec::new();
    for child in &root.children {
        match child.local.as_str() {
            "description" => description = child.text.trim().to_string(),
            "Label" => labels.push(parse_label(child)?),
            other => return Err(malformed(format!("unexpected element <{other}>"))),
        }
    }
    StructoidSchema { schema_uri, description, labels }.check()
}

fn parse_label(el: &xml::Element) -> Result<LabelSpec, SchemaError> {
    let name = el
        .plain_attr("name")
        .ok_or_else(|| malformed("<Label> without a name"))?
        .to_string();
    let min_occurs = match el.plain_attr("minOccurs") {
        None => 1,
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| malformed(format!("label `{name}`: bad minOccurs `{v}`")))?,
    };
    let max_occurs = match el.plain_attr("maxOccurs").map(str::trim) {
        None => MaxOccurs::Bounded(1),
        Some("unbounded") => MaxOccurs::Unbounded,
        Some(v) => match v.parse::<u32>() {
            Ok(n) if n > 0 => MaxOccurs::Bounded(n),
            _ => return Err(malformed(format!("label `{name}`: bad maxOccurs `{v}`"))),
        },
    };
    let mut allowed_mimes = Vec::new();
    for child in &el.children {
        if child.local != "MIME" {
            return Err(malformed(format!("label `{name}`: unexpected element <{}>", child.local)));
        }
        let mime = child.text.trim().to_string();
        if !crate::object::is_valid_mime(&mime) {
            return Err(malformed(format!("label `{name}`: invalid MIME `{mime}`")));
        }
        if !allowed_mimes.contains(&mime) {
            allowed_mimes.push(mime);
        }
    }
    Ok(LabelSpec { name, min_occurs, max_occurs, allowed_mimes })
}

/// Checks the structoid's label sequence against the schema's ordered
/// occurrence grammar: labels in declaration order, each occurring within
/// its `[minOccurs, maxOccurs]` range.
pub fn validate_grammar(structoid: &Structoid, schema: &StructoidSchema) -> Vec<Finding> {
    let position: HashMap<&str, usize> = schema
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.name.as_str(), i))
        .collect();

    let mut findings = Vec::new();
    let mut counts = vec![0u32; schema.labels.len()];
    let mut furthest: Option<usize> = None;

    for role in &structoid.roles {
        let Some(&idx) = position.get(role.label.as_str()) else {
            findings.push(Finding::error(
                FindingClass::UnknownLabel,
                &role.label,
                format!("{} -- unknown label for {}.", role.label, schema.schema_uri),
            ));
            continue;
        };
        counts[idx] += 1;
        match furthest {
            Some(f) if idx < f => findings.push(Finding::error(
                FindingClass::OutOfOrder,
                &role.label,
                format!(
                    "{} -- out of order. It must come before {}.",
                    role.label, schema.labels[f].name
                ),
            )),
            _ => furthest = Some(idx),
        }
    }

    for (spec, &count) in schema.labels.iter().zip(&counts) {
        if count < spec.min_occurs {
            findings.push(Finding::error(
                FindingClass::TooFew,
                &spec.name,
                format!("{} -- occurs {count} time(s), at least {} required.", spec.name, spec.min_occurs),
            ));
        } else if !spec.max_occurs.admits(count) {
            findings.push(Finding::error(
                FindingClass::TooMany,
                &spec.name,
                format!("{} -- occurs {count} time(s), at most {} allowed.", spec.name, spec.max_occurs),
            ));
        }
    }
    findings
}

/// Checks each role against the MIME rule of its label: one finding per role
/// with a schema-declared label, an error when the referenced datastream's
/// MIME is outside the label's set and an info otherwise.
pub fn validate_rules(
    structoid: &Structoid,
    object: &DigitalObject,
    schema: &StructoidSchema,
) -> Result<Vec<Finding>, SchemaError> {
    let mimes = object.mime_map();
    let mut findings = Vec::new();
    for role in &structoid.roles {
        let mime = *mimes.get(role.target_dsid.as_str()).ok_or_else(|| SchemaError::UnresolvedRole {
            label: role.label.clone(),
            dsid: role.target_dsid.clone(),
        })?;
        let Some(spec) = schema.label(&role.label) else {
            continue;
        };
        let finding = if spec.accepts_mime(mime) {
            Finding {
                severity: Severity::Info,
                class: FindingClass::MimeAccepted,
                label: role.label.clone(),
                message: format!("{} -- valid.", role.label),
                expected_mimes: spec.allowed_mimes.clone(),
            }
        } else {
            Finding {
                severity: Severity::Error,
                class: FindingClass::MimeMismatch,
                label: role.label.clone(),
                message: format!(
                    "{} -- invalid. It must refer to DataStream of MIME {}.",
                    role.label,
                    spec.mime_phrase()
                ),
                expected_mimes: spec.allowed_mimes.clone(),
            }
        };
        findings.push(finding);
    }
    Ok(findings)
}

/// Grammar plus rule validation of one structoid.
pub fn validate_structoid(
    structoid: &Structoid,
    object: &DigitalObject,
    schema: &StructoidSchema,
) -> Result<ValidationReport, SchemaError> {
    let grammar = validate_grammar(structoid, schema);
    let rules = validate_rules(structoid, object, schema)?;
    Ok(ValidationReport::new(grammar, rules))
}

/// Known structoid schemas, keyed by schema identifier.
#[derive(Debug, Default)]
pub struct SchemaRegistry {
    schemas: RwLock<HashMap<String, Arc<StructoidSchema>>>,
}

impl SchemaRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// A registry seeded with the bundled image and text schemas.
    pub fn with_builtins() -> Self {
        let registry = Self::default();
        for ssd in [CORNELL_IMAGE_SSD, TEXT_DOCUMENT_SSD] {
            registry.register(parse_schema(ssd.as_bytes()).expect("bundled schema parses"));
        }
        registry
    }

    /// Adds or replaces the schema under its own identifier.
    pub fn register(&self, schema: StructoidSchema) -> Arc<StructoidSchema> {
        let schema = Arc::new(schema);
        self.schemas
            .write()
            .expect("schema registry poisoned")
            .insert(schema.schema_uri.clone(), schema.clone());
        schema
    }

    pub fn resolve(&self, schema_uri: &str) -> Result<Arc<StructoidSchema>, SchemaError> {
        resolve_schema(schema_uri, self)
    }

    pub fn uris(&self) -> Vec<String> {
        let mut uris: Vec<_> = self.schemas.read().expect("schema registry poisoned").keys().cloned().collect();
        uris.sort();
        uris
    }
}

pub fn resolve_schema(schema_uri: &str, registry: &SchemaRegistry) -> Result<Arc<StructoidSchema>, SchemaError> {
    registry
        .schemas
        .read()
        .expect("schema registry poisoned")
        .get(schema_uri)
        .cloned()
        .ok_or_else(|| SchemaError::UnknownSchema(schema_uri.to_string()))
}

/// The bundled SSD for `Cornell_ImageType`.
pub fn cornell_image_ssd() -> &'static str {
    CORNELL_IMAGE_SSD
}

pub fn text_document_ssd() -> &'static str {
    TEXT_DOCUMENT_SSD
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::figure2_object;
    use crate::object::{cornell_image_type, Role};

    fn cornell() -> StructoidSchema {
        parse_schema(cornell_image_ssd().as_bytes()).unwrap()
    }

    fn classes(findings: &[Finding]) -> Vec<FindingClass> {
        findings.iter().filter(|f| f.is_error()).map(|f| f.class).collect()
    }

    #[test]
    fn cornell_transliteration() {
        let s = cornell();
        assert_eq!(s.schema_uri, cornell_image_type());
        assert_eq!(
            s.labels,
            vec![
                LabelSpec::once("description", &["text/plain"]),
                LabelSpec::once("thumbnail", &["image/jpeg", "image/gif"]),
                LabelSpec::once("fullImage", &["image/jpeg", "image/gif"]),
            ]
        );
        assert_eq!(parse_schema(s.to_xml().as_bytes()).unwrap(), s);
    }

    #[test]
    fn duplicate_and_malformed_schemas() {
        let dup = r#"<StructoidSchema uri="u"><Label name="thumbnail"/><Label name="thumbnail"/></StructoidSchema>"#;
        assert_eq!(parse_schema(dup.as_bytes()), Err(SchemaError::DuplicateLabel("thumbnail".into())));
        for bad in [
            r#"<StructoidSchema uri="u"/>"#,
            r#"<StructoidSchema><Label name="a"/></StructoidSchema>"#,
            r#"<StructoidSchema uri="u"><Label name="a" minOccurs="2" maxOccurs="1"/></StructoidSchema>"#,
            r#"<StructoidSchema uri="u"><Label name="a" maxOccurs="0"/></StructoidSchema>"#,
            r#"<StructoidSchema uri="u"><Label name="a"><MIME>nope</MIME></Label></StructoidSchema>"#,
            r#"<Schema uri="u"><Label name="a"/></Schema>"#,
            "not xml",
        ] {
            assert!(matches!(parse_schema(bad.as_bytes()), Err(SchemaError::MalformedSchema(_))), "{bad}");
        }
    }

    #[test]
    fn empty_mime_set_is_wildcard() {
        let s = parse_schema(br#"<StructoidSchema uri="u"><Label name="any" minOccurs="0" maxOccurs="unbounded"/></StructoidSchema>"#).unwrap();
        assert!(s.labels[0].allowed_mimes.is_empty());
        assert_eq!(s.labels[0].max_occurs, MaxOccurs::Unbounded);
        let obj = figure2_object();
        let st = Structoid {
            sid: "S".into(),
            schema_uri: "u".into(),
            descriptor: String::new(),
            roles: vec![Role { label: "any".into(), target_dsid: "DS-3".into() }],
        };
        let f = validate_rules(&st, &obj, &s).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].severity, Severity::Info);
    }

    #[test]
    fn grammar_examples() {
        let schema = cornell();
        let s7 = figure2_object().structoids[0].clone();
        assert!(validate_grammar(&s7, &schema).is_empty());

        let mut reordered = s7.clone();
        reordered.roles.swap(0, 1);
        assert_eq!(classes(&validate_grammar(&reordered, &schema)), [FindingClass::OutOfOrder]);

        let mut extra = s7.clone();
        extra.roles.push(Role { label: "caption".into(), target_dsid: "DS-2".into() });
        assert_eq!(classes(&validate_grammar(&extra, &schema)), [FindingClass::UnknownLabel]);

        let mut missing = s7.clone();
        missing.roles.pop();
        assert_eq!(classes(&validate_grammar(&missing, &schema)), [FindingClass::TooFew]);

        let mut doubled = s7;
        doubled.roles.insert(2, doubled.roles[1].clone());
        assert_eq!(classes(&validate_grammar(&doubled, &schema)), [FindingClass::TooMany]);
    }

    #[test]
    fn rule_examples() {
        let schema = cornell();
        let obj = figure2_object();
        let s7 = obj.structoids[0].clone();
        let f = validate_rules(&s7, &obj, &schema).unwrap();
        let msgs: Vec<_> = f.iter().map(|f| f.message.as_str()).collect();
        assert_eq!(msgs, ["description -- valid.", "thumbnail -- valid.", "fullImage -- valid."]);
        assert!(f.iter().all(|f| f.severity == Severity::Info));

        let mut wrong = s7.clone();
        wrong.roles[1].target_dsid = "DS-2".into();
        let f = validate_rules(&wrong, &obj, &schema).unwrap();
        let errors: Vec<_> = f.iter().filter(|f| f.is_error()).collect();
        assert_eq!(errors.len(), 1);
        assert_eq!(
            errors[0].message,
            "thumbnail -- invalid. It must refer to DataStream of MIME image/jpeg or image/gif."
        );
        assert_eq!(errors[0].expected_mimes, ["image/jpeg", "image/gif"]);

        let mut dangling = s7;
        dangling.roles[0].target_dsid = "DS-9".into();
        assert!(matches!(
            validate_rules(&dangling, &obj, &schema),
            Err(SchemaError::UnresolvedRole { ref dsid, .. }) if dsid == "DS-9"
        ));
    }

    #[test]
    fn rules_ignore_bytes() {
        let schema = cornell();
        let obj = figure2_object();
        let mut moved = obj.clone();
        for ds in &mut moved.datastreams {
            ds.bytes_ref = format!("http://elsewhere.example/{}", ds.dsid);
            ds.descriptor = "changed".into();
        }
        let s7 = &obj.structoids[0];
        assert_eq!(
            validate_rules(s7, &obj, &schema).unwrap(),
            validate_rules(s7, &moved, &schema).unwrap()
        );
    }

    #[test]
    fn registry_resolution() {
        let registry = SchemaRegistry::with_builtins();
        assert_eq!(*registry.resolve(&cornell_image_type()).unwrap(), cornell());
        assert!(registry.resolve(TEXT_DOCUMENT_TYPE).is_ok());
        assert_eq!(
            registry.resolve("urn:nothing").unwrap_err(),
            SchemaError::UnknownSchema("urn:nothing".into())
        );
        let custom = StructoidSchema {
            schema_uri: "urn:custom#T".into(),
            description: "custom".into(),
            labels: vec![LabelSpec::once("a", &[])],
        };
        registry.register(custom.clone());
        assert_eq!(*resolve_schema("urn:custom#T", &registry).unwrap(), custom);
    }
}
