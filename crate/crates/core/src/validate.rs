//! Whole-document validation: identifier integrity, then grammar and MIME
//! rules for every structoid whose schema is known.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::object::{check_integrity, parse_object_unchecked, DigitalObject, NamespaceConfig, Violation, ViolationKind};
use crate::schema::{validate_grammar, validate_rules, FindingClass, SchemaRegistry, Severity, ValidationReport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StructoidOutcome {
    Checked { report: ValidationReport },
    /// The declared schema is not registered, so nothing can be checked.
    UnknownSchema,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructoidReport {
    pub sid: String,
    pub schema_uri: String,
    #[serde(flatten)]
    pub outcome: StructoidOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentReport {
    pub object_id: Option<String>,
    pub malformed: Option<String>,
    pub integrity: Vec<Violation>,
    pub structoids: Vec<StructoidReport>,
    pub valid: bool,
}

/// Coarse classification of everything that can make a document invalid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorClass {
    Malformed,
    DuplicateId,
    DanglingReference,
    InvalidMime,
    EmptyLabel,
    UnknownLabel,
    OutOfOrder,
    TooFew,
    TooMany,
    MimeMismatch,
}

impl From<ViolationKind> for ErrorClass {
    fn from(k: ViolationKind) -> Self {
        match k {
            ViolationKind::DuplicateId => ErrorClass::DuplicateId,
            ViolationKind::DanglingReference => ErrorClass::DanglingReference,
            ViolationKind::InvalidMime => ErrorClass::InvalidMime,
            ViolationKind::EmptyLabel => ErrorClass::EmptyLabel,
        }
    }
}

fn finding_class(c: FindingClass) -> Option<ErrorClass> {
    match c {
        FindingClass::UnknownLabel => Some(ErrorClass::UnknownLabel),
        FindingClass::OutOfOrder => Some(ErrorClass::OutOfOrder),
        FindingClass::TooFew => Some(ErrorClass::TooFew),
        FindingClass::TooMany => Some(ErrorClass::TooMany),
        FindingClass::MimeMismatch => Some(ErrorClass::MimeMismatch),
        FindingClass::MimeAccepted => None,
    }
}

impl DocumentReport {
    /// One entry per error-severity problem, in report order.
    pub fn error_classes(&self) -> Vec<ErrorClass> {
        let mut out = Vec::new();
        if self.malformed.is_some() {
            out.push(ErrorClass::Malformed);
        }
        out.extend(self.integrity.iter().map(|v| ErrorClass::from(v.kind)));
        for s in &self.structoids {
            if let StructoidOutcome::Checked { report } = &s.outcome {
                out.extend(report.findings().filter(|f| f.is_error()).filter_map(|f| finding_class(f.class)));
            }
        }
        out
    }

    pub fn render_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for DocumentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        if let Some(m) = &self.malformed {
            let _ = writeln!(out, "malformed document: {m}");
        }
        if let Some(id) = &self.object_id {
            let _ = writeln!(out, "object {id}");
        }
        if self.malformed.is_none() {
            if self.integrity.is_empty() {
                let _ = writeln!(out, "integrity: ok");
            }
            for v in &self.integrity {
                let _ = writeln!(out, "integrity: [error] {v}");
            }
        }
        for s in &self.structoids {
            let _ = writeln!(out, "structoid {} ({})", s.sid, s.schema_uri);
            match &s.outcome {
                StructoidOutcome::UnknownSchema => {
                    let _ = writeln!(out, "  schema not registered; not validated");
                }
                StructoidOutcome::Checked { report } => {
                    if report.grammar_findings.is_empty() {
                        let _ = writeln!(out, "  grammar: ok");
                    }
                    for finding in report.findings() {
                        let sev = match finding.severity {
                            Severity::Error => "error",
                            Severity::Info => "info",
                        };
                        let _ = writeln!(out, "  [{sev}] {}", finding.message);
                    }
                }
            }
        }
        let _ = writeln!(out, "result: {}", if self.valid { "valid" } else { "invalid" });
        f.write_str(&out)
    }
}

/// Validates an object document against the schemas in `schemas`.
pub fn validate_document(document: &[u8], schemas: &SchemaRegistry, config: &NamespaceConfig) -> DocumentReport {
    match parse_object_unchecked(document, config) {
        Ok(object) => validate_object(&object, schemas),
        Err(e) => DocumentReport {
            object_id: None,
            malformed: Some(e.to_string()),
            integrity: vec![],
            structoids: vec![],
            valid: false,
        },
    }
}

pub fn validate_object(object: &DigitalObject, schemas: &SchemaRegistry) -> DocumentReport {
    let integrity = check_integrity(object);
    let mimes = object.mime_map();
    let structoids: Vec<_> = object
        .structoids
        .iter()
        .map(|s| {
            let outcome = match schemas.resolve(&s.schema_uri) {
                Err(_) => StructoidOutcome::UnknownSchema,
                Ok(schema) => {
                    let grammar = validate_grammar(s, &schema);
                    // Dangling roles are integrity violations already; rules
                    // only look at roles that resolve.
                    let mut resolved = s.clone();
                    resolved.roles.retain(|r| mimes.contains_key(r.target_dsid.as_str()));
                    let rules = validate_rules(&resolved, object, &schema).expect("roles resolve");
                    StructoidOutcome::Checked { report: ValidationReport::new(grammar, rules) }
                }
            };
            StructoidReport { sid: s.sid.clone(), schema_uri: s.schema_uri.clone(), outcome }
        })
        .collect();
    let valid = integrity.is_empty()
        && structoids.iter().all(|s| match &s.outcome {
            StructoidOutcome::Checked { report } => report.valid,
            StructoidOutcome::UnknownSchema => true,
        });
    DocumentReport { object_id: Some(object.object_id.clone()), malformed: None, integrity, structoids, valid }
}
