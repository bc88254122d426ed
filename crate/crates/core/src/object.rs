//! Digital objects: datastreams, structoids and disseminators.
//!
//! The document format is the `DigitalObject` XML vocabulary: a root element
//! carrying a `DigitalObjectID` attribute, followed by zero or more
//! `DataStream`, `Structoid` and `Disseminator` children in that order.
//! Structoid role elements are flat, one per labeled access point, and live in
//! the namespace of the structoid's declared schema.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::xml::{self, Element, XmlWriter, XLINK_NS, XSI_NS};

/// Namespace of the digital object vocabulary.
pub const DO_NAMESPACE: &str = "http://www.cornell.edu/DO";
/// Namespace of the Cornell image structoid schema.
pub const IMAGE_NAMESPACE: &str = "http://www.cornell.edu/structoids/Image";

/// Characters left unescaped in object identifiers embedded in URL paths.
const ID_SEGMENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b'~');

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitalObject {
    pub object_id: String,
    pub datastreams: Vec<DataStream>,
    pub structoids: Vec<Structoid>,
    pub disseminators: Vec<Disseminator>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataStream {
    pub dsid: String,
    pub mime: String,
    pub descriptor: String,
    /// Locator of the bytes (the `bytes` element's href).
    pub bytes_ref: String,
}

/// A labeled access point: one role element of a structoid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Role {
    pub label: String,
    pub target_dsid: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Structoid {
    pub sid: String,
    /// Expanded name of the declared type, see [`SchemaUri`].
    pub schema_uri: String,
    pub descriptor: String,
    pub roles: Vec<Role>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disseminator {
    pub did: String,
    pub descriptor: String,
    pub behavior_interface_id: String,
    pub behavior_mechanism_id: String,
    pub structoid_sid: String,
}

/// A role whose target is a dereferenceable content URL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicRole {
    pub label: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicStructoid {
    pub sid: String,
    pub schema_uri: String,
    pub descriptor: String,
    pub roles: Vec<PublicRole>,
}

/// Structoid schema identifiers are written `namespace#TypeName`, or just
/// `TypeName` for types outside any namespace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemaUri<'a> {
    pub namespace: Option<&'a str>,
    pub type_name: &'a str,
}

impl<'a> SchemaUri<'a> {
    pub fn split(uri: &'a str) -> Self {
        match uri.rsplit_once('#') {
            Some((ns, name)) => SchemaUri { namespace: Some(ns), type_name: name },
            None => SchemaUri { namespace: None, type_name: uri },
        }
    }

    pub fn join(namespace: Option<&str>, type_name: &str) -> String {
        match namespace {
            Some(ns) => format!("{ns}#{type_name}"),
            None => type_name.to_string(),
        }
    }
}

/// The schema identifier of `Cornell_ImageType`.
pub fn cornell_image_type() -> String {
    SchemaUri::join(Some(IMAGE_NAMESPACE), "Cornell_ImageType")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    DuplicateId,
    DanglingReference,
    InvalidMime,
    EmptyLabel,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::DuplicateId => "DuplicateId",
            ViolationKind::DanglingReference => "DanglingReference",
            ViolationKind::InvalidMime => "InvalidMime",
            ViolationKind::EmptyLabel => "EmptyLabel",
        };
        f.write_str(s)
    }
}

/// A broken object invariant, located by a path into the object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub path: String,
    pub id: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}) at {}", self.kind, self.id, self.path)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ObjectError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("duplicate identifier `{id}` at {path}")]
    DuplicateId { id: String, path: String },
    #[error("dangling reference `{id}` at {path}")]
    DanglingReference { id: String, path: String },
}

impl ObjectError {
    /// The offending identifier, when the error is about one.
    pub fn id(&self) -> Option<&str> {
        match self {
            ObjectError::MalformedDocument(_) => None,
            ObjectError::DuplicateId { id, .. } | ObjectError::DanglingReference { id, .. } => Some(id),
        }
    }
}

impl From<Violation> for ObjectError {
    fn from(v: Violation) -> Self {
        match v.kind {
            ViolationKind::DuplicateId => ObjectError::DuplicateId { id: v.id, path: v.path },
            ViolationKind::DanglingReference => ObjectError::DanglingReference { id: v.id, path: v.path },
            ViolationKind::InvalidMime => ObjectError::MalformedDocument(format!("invalid MIME type `{}` at {}", v.id, v.path)),
            ViolationKind::EmptyLabel => ObjectError::MalformedDocument(format!("empty role label at {}", v.path)),
        }
    }
}

/// Namespace settings for reading and writing object documents.
#[derive(Debug, Clone)]
pub struct NamespaceConfig {
    /// Namespace the `DigitalObject` vocabulary must be in.
    pub object_namespace: String,
    /// Extra namespace URIs accepted for the object vocabulary.
    pub accepted_object_namespaces: Vec<String>,
    /// Prefixes assumed when a document uses them without declaring them.
    pub fallback_prefixes: BTreeMap<String, String>,
    /// Preferred prefix per structoid namespace when serializing.
    pub preferred_prefixes: BTreeMap<String, String>,
}

impl Default for NamespaceConfig {
    fn default() -> Self {
        Self {
            object_namespace: DO_NAMESPACE.to_string(),
            accepted_object_namespaces: Vec::new(),
            fallback_prefixes: BTreeMap::from([
                ("xsi".to_string(), XSI_NS.to_string()),
                ("xlink".to_string(), XLINK_NS.to_string()),
            ]),
            preferred_prefixes: BTreeMap::from([(IMAGE_NAMESPACE.to_string(), "image".to_string())]),
        }
    }
}

impl NamespaceConfig {
    /// Registers an additional structoid namespace with its preferred prefix.
    pub fn register_namespace(&mut self, prefix: &str, uri: &str) {
        self.fallback_prefixes.insert(prefix.to_string(), uri.to_string());
        self.preferred_prefixes.insert(uri.to_string(), prefix.to_string());
    }

    fn accepts_object_namespace(&self, ns: Option<&str>) -> bool {
        match ns {
            Some(ns) => ns == self.object_namespace || self.accepted_object_namespaces.iter().any(|n| n == ns),
            None => false,
        }
    }
}

/// Parses and fully checks an object document with the default namespaces.
pub fn parse_object(document: &[u8]) -> Result<DigitalObject, ObjectError> {
    parse_object_with(document, &NamespaceConfig::default())
}

pub fn parse_object_with(document: &[u8], config: &NamespaceConfig) -> Result<DigitalObject, ObjectError> {
    let object = parse_object_unchecked(document, config)?;
    if let Some(first) = check_integrity(&object).into_iter().next() {
        return Err(first.into());
    }
    Ok(object)
}

/// Reads the document structure without checking identifier constraints, so
/// callers can report every [`Violation`] instead of the first.
pub fn parse_object_unchecked(document: &[u8], config: &NamespaceConfig) -> Result<DigitalObject, ObjectError> {
    let root = xml::parse(document, &config.fallback_prefixes).map_err(|e| ObjectError::MalformedDocument(e.0))?;
    read_object(&root, config)
}

fn malformed(msg: impl Into<String>) -> ObjectError {
    ObjectError::MalformedDocument(msg.into())
}

fn no_children(el: &Element, path: &str) -> Result<(), ObjectError> {
    if let Some(child) = el.children.first() {
        return Err(malformed(format!("unexpected element <{}> in {path}", child.local)));
    }
    Ok(())
}

fn no_text(el: &Element, path: &str) -> Result<(), ObjectError> {
    if !el.text.trim().is_empty() {
        return Err(malformed(format!("unexpected text in {path}")));
    }
    Ok(())
}

fn required_attr<'a>(el: &'a Element, name: &str, path: &str) -> Result<&'a str, ObjectError> {
    el.plain_attr(name)
        .ok_or_else(|| malformed(format!("{path} is missing the {name} attribute")))
}

/// Reads children of `el` that must appear exactly once each, in order.
fn exact_sequence<'a>(el: &'a Element, names: &[&str], path: &str) -> Result<Vec<&'a Element>, ObjectError> {
    if el.children.len() != names.len() {
        return Err(malformed(format!(
            "{path} must contain exactly <{}> in order",
            names.join(">, <")
        )));
    }
    el.children
        .iter()
        .zip(names)
        .map(|(child, name)| {
            if child.local == *name {
                Ok(child)
            } else {
                Err(malformed(format!("{path}: expected <{name}>, found <{}>", child.local)))
            }
        })
        .collect()
}

fn leaf_text(el: &Element, path: &str) -> Result<String, ObjectError> {
    no_children(el, path)?;
    Ok(el.text.clone())
}

fn read_object(root: &Element, config: &NamespaceConfig) -> Result<DigitalObject, ObjectError> {
    if root.local != "DigitalObject" {
        return Err(malformed(format!("root element must be <DigitalObject>, found <{}>", root.local)));
    }
    if !config.accepts_object_namespace(root.namespace.as_deref()) {
        return Err(malformed(format!(
            "root element is in namespace {:?}, expected {}",
            root.namespace, config.object_namespace
        )));
    }
    no_text(root, "/DigitalObject")?;
    let object_id = required_attr(root, "DigitalObjectID", "/DigitalObject")?.to_string();
    if object_id.is_empty() {
        return Err(malformed("DigitalObjectID is empty"));
    }

    let mut object = DigitalObject {
        object_id,
        datastreams: Vec::new(),
        structoids: Vec::new(),
        disseminators: Vec::new(),
    };

    // DataStream* Structoid* Disseminator*, in that order.
    let mut phase = 0;
    for child in &root.children {
        if child.namespace != root.namespace {
            return Err(malformed(format!("<{}> is not in the object namespace", child.local)));
        }
        let (rank, path) = match child.local.as_str() {
            "DataStream" => (0, format!("/DigitalObject/DataStream[{}]", object.datastreams.len() + 1)),
            "Structoid" => (1, format!("/DigitalObject/Structoid[{}]", object.structoids.len() + 1)),
            "Disseminator" => (2, format!("/DigitalObject/Disseminator[{}]", object.disseminators.len() + 1)),
            other => return Err(malformed(format!("unexpected element <{other}> in /DigitalObject"))),
        };
        if rank < phase {
            return Err(malformed(format!("<{}> out of sequence in /DigitalObject", child.local)));
        }
        phase = rank;
        match rank {
            0 => object.datastreams.push(read_datastream(child, &path)?),
            1 => object.structoids.push(read_structoid(child, &path, config)?),
            _ => object.disseminators.push(read_disseminator(child, &path)?),
        }
    }
    Ok(object)
}

fn read_datastream(el: &Element, path: &str) -> Result<DataStream, ObjectError> {
    no_text(el, path)?;
    let dsid = required_attr(el, "DSID", path)?.to_string();
    let parts = exact_sequence(el, &["MIME", "descriptor", "bytes"], path)?;
    let mime = leaf_text(parts[0], path)?.trim().to_string();
    let descriptor = leaf_text(parts[1], path)?;
    let bytes = parts[2];
    no_children(bytes, path)?;
    let bytes_ref = bytes
        .attr("href")
        .ok_or_else(|| malformed(format!("{path}/bytes is missing an href")))?
        .to_string();
    Ok(DataStream { dsid, mime, descriptor, bytes_ref })
}

fn read_structoid(el: &Element, path: &str, config: &NamespaceConfig) -> Result<Structoid, ObjectError> {
    no_text(el, path)?;
    let sid = required_attr(el, "SID", path)?.to_string();
    let declared = el
        .attributes
        .iter()
        .find(|a| a.local == "type" && a.prefix.is_some())
        .map(|a| a.value.as_str())
        .ok_or_else(|| malformed(format!("{path} has no type declaration")))?;
    let (ns, type_name) = el.resolve_qname(declared, &config.fallback_prefixes);
    if declared.contains(':') && ns.is_none() {
        return Err(malformed(format!("{path}: undeclared prefix in type `{declared}`")));
    }
    let schema_uri = SchemaUri::join(ns.as_deref(), type_name);

    let mut children = el.children.iter();
    let descriptor = match children.next() {
        Some(d) if d.local == "descriptor" && d.namespace == el.namespace => leaf_text(d, path)?,
        _ => return Err(malformed(format!("{path} must begin with <descriptor>"))),
    };
    let mut roles = Vec::new();
    for role in children {
        let role_path = format!("{path}/{}", role.local);
        if !role.children.is_empty() {
            return Err(malformed(format!("{role_path}: nested labels are not allowed")));
        }
        no_text(role, &role_path)?;
        let target_dsid = required_attr(role, "DSID", &role_path)?.to_string();
        roles.push(Role { label: role.local.clone(), target_dsid });
    }
    Ok(Structoid { sid, schema_uri, descriptor, roles })
}

fn read_disseminator(el: &Element, path: &str) -> Result<Disseminator, ObjectError> {
    no_text(el, path)?;
    let did = required_attr(el, "DID", path)?.to_string();
    let structoid_sid = required_attr(el, "StructoidID", path)?.to_string();
    let parts = exact_sequence(el, &["descriptor", "BehaviorInterfaceID", "BehaviorMechanismID"], path)?;
    Ok(Disseminator {
        did,
        descriptor: leaf_text(parts[0], path)?,
        behavior_interface_id: leaf_text(parts[1], path)?.trim().to_string(),
        behavior_mechanism_id: leaf_text(parts[2], path)?.trim().to_string(),
        structoid_sid,
    })
}

/// `type/subtype` with RFC 2045 token characters on both sides.
pub fn is_valid_mime(mime: &str) -> bool {
    fn token(s: &str) -> bool {
        !s.is_empty()
            && s.bytes().all(|b| {
                b.is_ascii_graphic() && !b"()<>@,;:\\\"/[]?=".contains(&b)
            })
    }
    match mime.split_once('/') {
        Some((t, s)) => token(t) && token(s),
        None => false,
    }
}

/// Lists every broken identifier invariant of `object`.
pub fn check_integrity(object: &DigitalObject) -> Vec<Violation> {
    let mut violations = Vec::new();

    let mut dsids = HashSet::new();
    for (i, ds) in object.datastreams.iter().enumerate() {
        let path = format!("/DigitalObject/DataStream[{}]", i + 1);
        if !dsids.insert(ds.dsid.as_str()) {
            violations.push(Violation { kind: ViolationKind::DuplicateId, path: path.clone(), id: ds.dsid.clone() });
        }
        if !is_valid_mime(&ds.mime) {
            violations.push(Violation { kind: ViolationKind::InvalidMime, path: format!("{path}/MIME"), id: ds.mime.clone() });
        }
    }

    let mut sids = HashSet::new();
    for (i, s) in object.structoids.iter().enumerate() {
        let path = format!("/DigitalObject/Structoid[{}]", i + 1);
        if !sids.insert(s.sid.as_str()) {
            violations.push(Violation { kind: ViolationKind::DuplicateId, path: path.clone(), id: s.sid.clone() });
        }
        for (j, role) in s.roles.iter().enumerate() {
            let role_path = format!("{path}/role[{}]", j + 1);
            if role.label.is_empty() {
                violations.push(Violation { kind: ViolationKind::EmptyLabel, path: role_path.clone(), id: role.target_dsid.clone() });
            }
            if !dsids.contains(role.target_dsid.as_str()) {
                violations.push(Violation {
                    kind: ViolationKind::DanglingReference,
                    path: format!("{role_path}/@DSID"),
                    id: role.target_dsid.clone(),
                });
            }
        }
    }

    let mut dids = HashSet::new();
    for (i, d) in object.disseminators.iter().enumerate() {
        let path = format!("/DigitalObject/Disseminator[{}]", i + 1);
        if !dids.insert(d.did.as_str()) {
            violations.push(Violation { kind: ViolationKind::DuplicateId, path: path.clone(), id: d.did.clone() });
        }
        if !sids.contains(d.structoid_sid.as_str()) {
            violations.push(Violation {
                kind: ViolationKind::DanglingReference,
                path: format!("{path}/@StructoidID"),
                id: d.structoid_sid.clone(),
            });
        }
    }

    violations
}

impl DigitalObject {
    pub fn datastream(&self, dsid: &str) -> Option<&DataStream> {
        self.datastreams.iter().find(|d| d.dsid == dsid)
    }

    pub fn structoid(&self, sid: &str) -> Option<&Structoid> {
        self.structoids.iter().find(|s| s.sid == sid)
    }

    /// DSID to declared MIME type.
    pub fn mime_map(&self) -> HashMap<&str, &str> {
        self.datastreams.iter().map(|d| (d.dsid.as_str(), d.mime.as_str())).collect()
    }

    pub fn to_xml(&self) -> String {
        serialize_object_with(self, &NamespaceConfig::default())
    }
}

pub fn serialize_object(object: &DigitalObject) -> Vec<u8> {
    serialize_object_with(object, &NamespaceConfig::default()).into_bytes()
}

pub fn serialize_object_with(object: &DigitalObject, config: &NamespaceConfig) -> String {
    let mut w = XmlWriter::new();
    let mut root_attrs = vec![
        ("DigitalObjectID", object.object_id.as_str()),
        ("xmlns", config.object_namespace.as_str()),
    ];
    if !object.datastreams.is_empty() {
        root_attrs.push(("xmlns:xlink", XLINK_NS));
    }
    if !object.structoids.is_empty() {
        root_attrs.push(("xmlns:xsi", XSI_NS));
    }
    if object.datastreams.is_empty() && object.structoids.is_empty() && object.disseminators.is_empty() {
        w.empty("DigitalObject", &root_attrs);
        return w.finish();
    }
    w.open("DigitalObject", &root_attrs);

    for ds in &object.datastreams {
        w.open("DataStream", &[("DSID", &ds.dsid)]);
        w.text_element("MIME", &[], &ds.mime);
        w.text_element("descriptor", &[], &ds.descriptor);
        w.empty("bytes", &[("xlink:href", &ds.bytes_ref)]);
        w.close("DataStream");
    }

    for s in &object.structoids {
        let uri = SchemaUri::split(&s.schema_uri);
        match uri.namespace {
            Some(ns) => {
                let prefix = config
                    .preferred_prefixes
                    .get(ns)
                    .map(String::as_str)
                    .unwrap_or("st");
                let type_attr = format!("{prefix}:{}", uri.type_name);
                let xmlns_attr = format!("xmlns:{prefix}");
                w.open(
                    "Structoid",
                    &[("SID", &s.sid), ("xsi:type", &type_attr), (&xmlns_attr, ns)],
                );
                w.text_element("descriptor", &[], &s.descriptor);
                for role in &s.roles {
                    w.empty(&format!("{prefix}:{}", role.label), &[("DSID", &role.target_dsid)]);
                }
            }
            None => {
                w.open("Structoid", &[("SID", &s.sid), ("xsi:type", uri.type_name)]);
                w.text_element("descriptor", &[], &s.descriptor);
                for role in &s.roles {
                    w.empty(&role.label, &[("DSID", &role.target_dsid)]);
                }
            }
        }
        w.close("Structoid");
    }

    for d in &object.disseminators {
        w.open("Disseminator", &[("DID", &d.did), ("StructoidID", &d.structoid_sid)]);
        w.text_element("descriptor", &[], &d.descriptor);
        w.text_element("BehaviorInterfaceID", &[], &d.behavior_interface_id);
        w.text_element("BehaviorMechanismID", &[], &d.behavior_mechanism_id);
        w.close("Disseminator");
    }

    w.close("DigitalObject");
    w.finish()
}

/// Percent-encodes an object identifier as a single URL path segment.
pub fn encode_object_id(object_id: &str) -> String {
    utf8_percent_encode(object_id, ID_SEGMENT).to_string()
}

/// Content URL of one datastream on a repository.
pub fn datastream_url(base_url: &str, object_id: &str, dsid: &str) -> String {
    format!(
        "{}/objects/{}/datastreams/{}",
        base_url.trim_end_matches('/'),
        encode_object_id(object_id),
        utf8_percent_encode(dsid, ID_SEGMENT)
    )
}

/// Rewrites each role target into a content-request URL on `base_url`.
pub fn public_view(structoid: &Structoid, base_url: &str, object_id: &str) -> PublicStructoid {
    PublicStructoid {
        sid: structoid.sid.clone(),
        schema_uri: structoid.schema_uri.clone(),
        descriptor: structoid.descriptor.clone(),
        roles: structoid
            .roles
            .iter()
            .map(|r| PublicRole {
                label: r.label.clone(),
                url: datastream_url(base_url, object_id, &r.target_dsid),
            })
            .collect(),
    }
}
