//! The behavior registry: which mechanisms exist, which structoid schema each
//! one requires, and which behaviors each one offers.
//!
//! Mechanisms are described by XML manifests:
//!
//! ```xml
//! <Mechanism id="urn:structoid:mech:gallery">
//!   <RequiresStructoidSchema>http://www.cornell.edu/structoids/Image#Cornell_ImageType</RequiresStructoidSchema>
//!   <BehaviorInterface id="urn:structoid:bi:image-viewing">
//!     <Behavior name="Gallery" outputMime="text/html"/>
//!     <Behavior name="Translate" outputMime="text/plain">
//!       <Param name="lang" type="string" required="true"/>
//!     </Behavior>
//!   </BehaviorInterface>
//!   <Execution><Builtin name="gallery"/></Execution>
//! </Mechanism>
//! ```
//!
//! `Execution` holds exactly one of `<Builtin name=".."/>`,
//! `<Command program=".."><Arg>..</Arg></Command>` or `<Endpoint url=".."/>`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::object::Structoid;
use crate::xml::{self, XmlWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Boolean,
}

impl ParamType {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Integer => "integer",
            ParamType::Boolean => "boolean",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "string" => Some(ParamType::String),
            "integer" => Some(ParamType::Integer),
            "boolean" => Some(ParamType::Boolean),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ParamType,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Boolean(bool),
    Integer(i64),
    String(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Boolean(b) => write!(f, "{b}"),
            ParamValue::Integer(i) => write!(f, "{i}"),
            ParamValue::String(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParamError {
    #[error("missing required parameter `{0}`")]
    Missing(String),
    #[error("parameter `{name}` must be {expected}, got `{value}`")]
    BadType { name: String, expected: &'static str, value: String },
    #[error("unexpected parameter `{0}`")]
    Unexpected(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorSignature {
    pub name: String,
    pub params: Vec<ParamSpec>,
    /// Declared result type; `type/*` admits any subtype.
    pub output_mime: String,
}

impl BehaviorSignature {
    /// Converts raw string parameters into typed values per the signature.
    pub fn check_params(&self, raw: &BTreeMap<String, String>) -> Result<BTreeMap<String, ParamValue>, ParamError> {
        if let Some(extra) = raw.keys().find(|k| !self.params.iter().any(|p| &p.name == *k)) {
            return Err(ParamError::Unexpected(extra.clone()));
        }
        let mut typed = BTreeMap::new();
        for spec in &self.params {
            let Some(value) = raw.get(&spec.name) else {
                if spec.required {
                    return Err(ParamError::Missing(spec.name.clone()));
                }
                continue;
            };
            if spec.required && value.is_empty() {
                return Err(ParamError::Missing(spec.name.clone()));
            }
            let bad = || ParamError::BadType { name: spec.name.clone(), expected: spec.kind.as_str(), value: value.clone() };
            let v = match spec.kind {
                ParamType::String => ParamValue::String(value.clone()),
                ParamType::Integer => ParamValue::Integer(value.trim().parse().map_err(|_| bad())?),
                ParamType::Boolean => ParamValue::Boolean(match value.trim() {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(bad()),
                }),
            };
            typed.insert(spec.name.clone(), v);
        }
        Ok(typed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorInterface {
    pub interface_id: String,
    pub behaviors: Vec<BehaviorSignature>,
}

impl BehaviorInterface {
    pub fn behavior(&self, name: &str) -> Option<&BehaviorSignature> {
        self.behaviors.iter().find(|b| b.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExecutionSpec {
    Builtin { name: String },
    Command { program: String, args: Vec<String> },
    Endpoint { url: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MechanismEntry {
    pub mechanism_id: String,
    pub required_schema_uri: String,
    pub interface: BehaviorInterface,
    pub execution: ExecutionSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub structoid_sid: String,
    pub schema_uri: String,
    pub mechanism_id: String,
    pub interface_id: String,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("unknown mechanism `{0}`")]
    UnknownMechanism(String),
    #[error("manifest store: {0}")]
    Io(#[from] io::Error),
}

/// Whether `mime` satisfies a declared output type (`type/subtype` or `type/*`).
pub fn mime_matches(declared: &str, mime: &str) -> bool {
    match declared.strip_suffix("/*") {
        Some(major) => mime.split_once('/').is_some_and(|(t, _)| t.eq_ignore_ascii_case(major)),
        None => declared.eq_ignore_ascii_case(mime),
    }
}

fn invalid(msg: impl Into<String>) -> RegistryError {
    RegistryError::InvalidManifest(msg.into())
}

impl MechanismEntry {
    pub fn validate(&self) -> Result<(), RegistryError> {
        if self.mechanism_id.trim().is_empty() {
            return Err(invalid("empty mechanism id"));
        }
        if self.required_schema_uri.trim().is_empty() {
            return Err(invalid("no required structoid schema"));
        }
        if self.interface.behaviors.is_empty() {
            return Err(invalid(format!("mechanism `{}` offers no behaviors", self.mechanism_id)));
        }
        let mut names = HashSet::new();
        for b in &self.interface.behaviors {
            if b.name.is_empty() {
                return Err(invalid("behavior with an empty name"));
            }
            if !names.insert(b.name.as_str()) {
                return Err(invalid(format!("duplicate behavior `{}`", b.name)));
            }
            let mut params = HashSet::new();
            for p in &b.params {
                if !params.insert(p.name.as_str()) {
                    return Err(invalid(format!("behavior `{}` repeats parameter `{}`", b.name, p.name)));
                }
            }
            let wildcard = b.output_mime.strip_suffix("/*").map(|m| format!("{m}/x"));
            if !crate::object::is_valid_mime(wildcard.as_deref().unwrap_or(&b.output_mime)) {
                return Err(invalid(format!("behavior `{}` has invalid outputMime `{}`", b.name, b.output_mime)));
            }
        }
        match &self.execution {
            ExecutionSpec::Builtin { name } if name.is_empty() => Err(invalid("builtin without a name")),
            ExecutionSpec::Command { program, .. } if program.is_empty() => Err(invalid("command without a program")),
            ExecutionSpec::Endpoint { url } if url.is_empty() => Err(invalid("endpoint without a url")),
            _ => Ok(()),
        }
    }

    pub fn to_xml(&self) -> String {
        let mut w = XmlWriter::new();
        w.open("Mechanism", &[("id", &self.mechanism_id)]);
        w.text_element("RequiresStructoidSchema", &[], &self.required_schema_uri);
        w.open("BehaviorInterface", &[("id", &self.interface.interface_id)]);
        for b in &self.interface.behaviors {
            let attrs = [("name", b.name.as_str()), ("outputMime", b.output_mime.as_str())];
            if b.params.is_empty() {
                w.empty("Behavior", &attrs);
            } else {
                w.open("Behavior", &attrs);
                for p in &b.params {
                    let required = if p.required { "true" } else { "false" };
                    w.empty("Param", &[("name", &p.name), ("type", p.kind.as_str()), ("required", required)]);
                }
                w.close("Behavior");
            }
        }
        w.close("BehaviorInterface");
        w.open("Execution", &[]);
        match &self.execution {
            ExecutionSpec::Builtin { name } => w.empty("Builtin", &[("name", name)]),
            ExecutionSpec::Command { program, args } => {
                if args.is_empty() {
                    w.empty("Command", &[("program", program)]);
                } else {
                    w.open("Command", &[("program", program)]);
                    for a in args {
                        w.text_element("Arg", &[], a);
                    }
                    w.close("Command");
                }
            }
            ExecutionSpec::Endpoint { url } => w.empty("Endpoint", &[("url", url)]),
        }
        w.close("Execution");
        w.close("Mechanism");
        w.finish()
    }
}

/// Parses and validates a mechanism manifest.
pub fn parse_manifest(document: &[u8]) -> Result<MechanismEntry, RegistryError> {
    let root = xml::parse(document, &BTreeMap::new()).map_err(|e| invalid(e.0))?;
    if root.local != "Mechanism" {
        return Err(invalid(format!("root must be <Mechanism>, found <{}>", root.local)));
    }
    let mechanism_id = root.plain_attr("id").ok_or_else(|| invalid("<Mechanism> without id"))?.trim().to_string();
    let required_schema_uri = root
        .child_text("RequiresStructoidSchema")
        .ok_or_else(|| invalid("missing <RequiresStructoidSchema>"))?
        .trim()
        .to_string();

    let iface = root.child("BehaviorInterface").ok_or_else(|| invalid("missing <BehaviorInterface>"))?;
    let mut behaviors = Vec::new();
    for b in iface.children_named("Behavior") {
        let name = b.plain_attr("name").ok_or_else(|| invalid("<Behavior> without name"))?.to_string();
        let output_mime = b
            .plain_attr("outputMime")
            .ok_or_else(|| invalid(format!("behavior `{name}` without outputMime")))?
            .to_string();
        let mut params = Vec::new();
        for p in b.children_named("Param") {
            let pname = p.plain_attr("name").ok_or_else(|| invalid("<Param> without name"))?.to_string();
            let kind = match p.plain_attr("type") {
                None => ParamType::String,
                Some(t) => ParamType::parse(t).ok_or_else(|| invalid(format!("parameter `{pname}` has unknown type `{t}`")))?,
            };
            let required = match p.plain_attr("required") {
                None | Some("false") => false,
                Some("true") => true,
                Some(other) => return Err(invalid(format!("parameter `{pname}`: bad required flag `{other}`"))),
            };
            params.push(ParamSpec { name: pname, kind, required });
        }
        behaviors.push(BehaviorSignature { name, params, output_mime });
    }
    let interface = BehaviorInterface {
        interface_id: iface.plain_attr("id").ok_or_else(|| invalid("<BehaviorInterface> without id"))?.to_string(),
        behaviors,
    };

    let exec = root.child("Execution").ok_or_else(|| invalid("missing <Execution>"))?;
    if exec.children.len() != 1 {
        return Err(invalid("<Execution> must hold exactly one of Builtin, Command, Endpoint"));
    }
    let kind = &exec.children[0];
    let execution = match kind.local.as_str() {
        "Builtin" => ExecutionSpec::Builtin {
            name: kind.plain_attr("name").ok_or_else(|| invalid("<Builtin> without name"))?.to_string(),
        },
        "Command" => ExecutionSpec::Command {
            program: kind
                .plain_attr("program")
                .map(str::to_string)
                .unwrap_or_else(|| kind.text.trim().to_string()),
            args: kind.children_named("Arg").map(|a| a.text.clone()).collect(),
        },
        "Endpoint" => ExecutionSpec::Endpoint {
            url: kind.plain_attr("url").ok_or_else(|| invalid("<Endpoint> without url"))?.to_string(),
        },
        other => return Err(invalid(format!("unsupported execution kind <{other}>"))),
    };

    let entry = MechanismEntry { mechanism_id, required_schema_uri, interface, execution };
    entry.validate()?;
    Ok(entry)
}

/// Every `(structoid, mechanism)` pair whose schema identifiers are equal,
/// structoid order major and registration order minor.
pub fn match_structoids(structoids: &[Structoid], entries: &[Arc<MechanismEntry>]) -> Vec<MatchResult> {
    structoids
        .iter()
        .flat_map(|s| {
            entries
                .iter()
                .filter(move |m| m.required_schema_uri == s.schema_uri)
                .map(move |m| MatchResult {
                    structoid_sid: s.sid.clone(),
                    schema_uri: s.schema_uri.clone(),
                    mechanism_id: m.mechanism_id.clone(),
                    interface_id: m.interface.interface_id.clone(),
                })
        })
        .collect()
}

/// Registered mechanisms in registration order.
///
/// Readers take a snapshot (an `Arc` of the current entry list), so a match
/// never observes a half-applied registration.
#[derive(Debug, Default)]
pub struct BehaviorRegistry {
    entries: RwLock<Arc<Vec<Arc<MechanismEntry>>>>,
    store: Option<ManifestDir>,
}

impl BehaviorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// A registry backed by a manifest directory: existing manifests are
    /// loaded (in file-name order) and later changes are written through.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let store = ManifestDir::create(dir)?;
        let entries = store.load_all()?;
        Ok(Self {
            entries: RwLock::new(Arc::new(entries.into_iter().map(Arc::new).collect())),
            store: Some(store),
        })
    }

    pub fn snapshot(&self) -> Arc<Vec<Arc<MechanismEntry>>> {
        self.entries.read().expect("registry poisoned").clone()
    }

    /// Adds the entry, or replaces the entry with the same id in place.
    pub fn register(&self, entry: MechanismEntry) -> Result<String, RegistryError> {
        entry.validate()?;
        let mut guard = self.entries.write().expect("registry poisoned");
        if let Some(store) = &self.store {
            store.save(&entry)?;
        }
        let id = entry.mechanism_id.clone();
        let mut next: Vec<_> = guard.as_ref().clone();
        match next.iter().position(|e| e.mechanism_id == id) {
            Some(i) => next[i] = Arc::new(entry),
            None => next.push(Arc::new(entry)),
        }
        *guard = Arc::new(next);
        Ok(id)
    }

    pub fn register_manifest(&self, document: &[u8]) -> Result<String, RegistryError> {
        self.register(parse_manifest(document)?)
    }

    pub fn deregister(&self, mechanism_id: &str) -> Result<bool, RegistryError> {
        let mut guard = self.entries.write().expect("registry poisoned");
        if !guard.iter().any(|e| e.mechanism_id == mechanism_id) {
            return Ok(false);
        }
        if let Some(store) = &self.store {
            store.remove(mechanism_id)?;
        }
        let next: Vec<_> = guard.iter().filter(|e| e.mechanism_id != mechanism_id).cloned().collect();
        *guard = Arc::new(next);
        Ok(true)
    }

    pub fn get(&self, mechanism_id: &str) -> Option<Arc<MechanismEntry>> {
        self.snapshot().iter().find(|e| e.mechanism_id == mechanism_id).cloned()
    }

    pub fn get_interface(&self, mechanism_id: &str) -> Result<BehaviorInterface, RegistryError> {
        self.get(mechanism_id)
            .map(|e| e.interface.clone())
            .ok_or_else(|| RegistryError::UnknownMechanism(mechanism_id.to_string()))
    }

    pub fn match_structoids(&self, structoids: &[Structoid]) -> Vec<MatchResult> {
        match_structoids(structoids, &self.snapshot())
    }

    pub fn len(&self) -> usize {
        self.snapshot().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A directory of `<encoded id>.xml` manifest files.
#[derive(Debug, Clone)]
pub struct ManifestDir {
    root: PathBuf,
}

impl ManifestDir {
    pub fn create(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    fn file_for(&self, mechanism_id: &str) -> PathBuf {
        self.root.join(format!("{}.xml", utf8_percent_encode(mechanism_id, NON_ALPHANUMERIC)))
    }

    pub fn load_all(&self) -> Result<Vec<MechanismEntry>, RegistryError> {
        let mut files: Vec<_> = fs::read_dir(&self.root)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "xml"))
            .collect();
        files.sort();
        files
            .iter()
            .map(|p| {
                let bytes = fs::read(p)?;
                parse_manifest(&bytes).map_err(|e| invalid(format!("{}: {e}", p.display())))
            })
            .collect()
    }

    pub fn save(&self, entry: &MechanismEntry) -> io::Result<()> {
        let target = self.file_for(&entry.mechanism_id);
        let tmp = target.with_extension("xml.tmp");
        fs::write(&tmp, entry.to_xml())?;
        fs::rename(tmp, target)
    }

    pub fn remove(&self, mechanism_id: &str) -> io::Result<()> {
        match fs::remove_file(self.file_for(mechanism_id)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::figure2_object;
    use crate::mechanisms::{gallery_manifest, translator_manifest, GALLERY_ID};

    fn entry(id: &str, schema: &str) -> MechanismEntry {
        MechanismEntry {
            mechanism_id: id.into(),
            required_schema_uri: schema.into(),
            interface: BehaviorInterface {
                interface_id: format!("{id}/bi"),
                behaviors: vec![BehaviorSignature { name: "Show".into(), params: vec![], output_mime: "text/html".into() }],
            },
            execution: ExecutionSpec::Builtin { name: "gallery".into() },
        }
    }

    #[test]
    fn gallery_registers_and_matches() {
        let reg = BehaviorRegistry::new();
        let gallery = gallery_manifest();
        assert_eq!(reg.register(gallery.clone()).unwrap(), GALLERY_ID);
        let names: Vec<_> = reg.get_interface(GALLERY_ID).unwrap().behaviors.into_iter().map(|b| b.name).collect();
        assert_eq!(names, ["Gallery", "Description", "Thumbnail", "FullImage"]);

        let matches = reg.match_structoids(&figure2_object().structoids);
        assert_eq!(
            matches,
            [MatchResult {
                structoid_sid: "S-7".into(),
                schema_uri: gallery.required_schema_uri.clone(),
                mechanism_id: GALLERY_ID.into(),
                interface_id: gallery.interface.interface_id.clone(),
            }]
        );
    }

    #[test]
    fn zero_behaviors_is_invalid() {
        let mut e = entry("urn:m", "urn:s");
        e.interface.behaviors.clear();
        assert!(matches!(BehaviorRegistry::new().register(e), Err(RegistryError::InvalidManifest(_))));
    }

    #[test]
    fn replace_and_deregister() {
        let reg = BehaviorRegistry::new();
        reg.register(entry("urn:a", "urn:s")).unwrap();
        reg.register(entry("urn:b", "urn:s")).unwrap();
        let mut replacement = entry("urn:a", "urn:s");
        replacement.interface.interface_id = "urn:a/bi2".into();
        reg.register(replacement.clone()).unwrap();
        assert_eq!(reg.get_interface("urn:a").unwrap(), replacement.interface);
        assert_eq!(reg.len(), 2);

        assert!(reg.deregister("urn:a").unwrap());
        assert!(!reg.deregister("urn:a").unwrap());
        assert!(!reg.deregister("urn:never").unwrap());
        assert!(matches!(reg.get_interface("urn:a"), Err(RegistryError::UnknownMechanism(_))));
        reg.register(entry("urn:a", "urn:s")).unwrap();
        assert!(reg.get("urn:a").is_some());
    }

    #[test]
    fn mismatched_schema_yields_nothing() {
        let reg = BehaviorRegistry::new();
        assert!(reg.match_structoids(&figure2_object().structoids).is_empty());
        reg.register(entry("urn:text", "urn:other#Type")).unwrap();
        assert!(reg.match_structoids(&figure2_object().structoids).is_empty());
    }

    #[test]
    fn manifest_round_trip_and_rejects() {
        for m in [gallery_manifest(), translator_manifest()] {
            assert_eq!(parse_manifest(m.to_xml().as_bytes()).unwrap(), m);
        }
        let cmd = MechanismEntry {
            execution: ExecutionSpec::Command { program: "/bin/mech".into(), args: vec!["--x".into(), "y".into()] },
            ..entry("urn:c", "urn:s")
        };
        assert_eq!(parse_manifest(cmd.to_xml().as_bytes()).unwrap(), cmd);
        for junk in [&b"\x00\x01garbage"[..], b"<Mechanism/>", b"<Other id='x'/>"] {
            assert!(matches!(parse_manifest(junk), Err(RegistryError::InvalidManifest(_))));
        }
    }

    #[test]
    fn params_are_typed() {
        let sig = BehaviorSignature {
            name: "B".into(),
            params: vec![
                ParamSpec { name: "lang".into(), kind: ParamType::String, required: true },
                ParamSpec { name: "n".into(), kind: ParamType::Integer, required: false },
                ParamSpec { name: "b".into(), kind: ParamType::Boolean, required: false },
            ],
            output_mime: "text/plain".into(),
        };
        let raw = |pairs: &[(&str, &str)]| pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        assert_eq!(sig.check_params(&raw(&[])), Err(ParamError::Missing("lang".into())));
        assert!(matches!(sig.check_params(&raw(&[("lang", "fr"), ("n", "x")])), Err(ParamError::BadType { .. })));
        assert_eq!(sig.check_params(&raw(&[("lang", "fr"), ("zzz", "1")])), Err(ParamError::Unexpected("zzz".into())));
        let ok = sig.check_params(&raw(&[("lang", "fr"), ("n", "3"), ("b", "true")])).unwrap();
        assert_eq!(ok["n"], ParamValue::Integer(3));
        assert_eq!(ok["b"], ParamValue::Boolean(true));
    }

    #[test]
    fn mime_patterns() {
        assert!(mime_matches("image/*", "image/gif"));
        assert!(!mime_matches("image/*", "text/plain"));
        assert!(mime_matches("text/html", "text/html"));
        assert!(!mime_matches("text/html", "text/plain"));
    }

    #[test]
    fn directory_persistence() {
        let dir = tempfile::tempdir().unwrap();
        {
            let reg = BehaviorRegistry::open(dir.path()).unwrap();
            reg.register(gallery_manifest()).unwrap();
            reg.register(translator_manifest()).unwrap();
            reg.deregister(crate::mechanisms::TRANSLATOR_ID).unwrap();
        }
        let reopened = BehaviorRegistry::open(dir.path()).unwrap();
        assert_eq!(reopened.len(), 1);
        assert_eq!(*reopened.get(GALLERY_ID).unwrap(), gallery_manifest());
    }
}
