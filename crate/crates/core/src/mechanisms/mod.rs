//! The mechanism invocation contract and the bundled mechanisms.
//!
//! Invocation is two-phase. The broker first calls a behavior with no inputs;
//! a mechanism that needs content answers [`InvokeReply::NeedsInput`] naming
//! role labels of its required schema. The broker resolves those labels
//! through the structoid, fetches the content, and calls again with the
//! inputs supplied. The second call must produce a result.

mod gallery;
mod translator;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{parse_manifest, MechanismEntry, ParamValue};

pub use gallery::Gallery;
pub use translator::{translate_stub, TranslateError, Translator};

pub const GALLERY_ID: &str = "urn:structoid:mech:gallery";
pub const TRANSLATOR_ID: &str = "urn:structoid:mech:translator";

const GALLERY_MANIFEST: &str = include_str!("../../data/gallery.mech.xml");
const TRANSLATOR_MANIFEST: &str = include_str!("../../data/translator.mech.xml");

/// Content supplied for one role label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Input {
    pub mime: String,
    pub body: Vec<u8>,
    /// Public URL the content was fetched from, when known.
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorResult {
    pub mime: String,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvokeReply {
    Result(BehaviorResult),
    NeedsInput(Vec<String>),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("mechanism fault: {0}")]
pub struct MechanismFault(pub String);

pub type Params = BTreeMap<String, ParamValue>;
pub type Inputs = BTreeMap<String, Input>;

pub trait Mechanism: Send + Sync {
    fn invoke(&self, behavior: &str, params: &Params, inputs: &Inputs) -> Result<InvokeReply, MechanismFault>;
}

/// Returns `NeedsInput` for whichever of `labels` are not yet supplied.
pub(crate) fn require(inputs: &Inputs, labels: &[&str]) -> Option<InvokeReply> {
    let missing: Vec<String> = labels
        .iter()
        .filter(|l| !inputs.contains_key(**l))
        .map(|l| l.to_string())
        .collect();
    (!missing.is_empty()).then_some(InvokeReply::NeedsInput(missing))
}

/// Looks up an in-process mechanism by its builtin name.
pub fn builtin(name: &str) -> Option<Arc<dyn Mechanism>> {
    match name {
        "gallery" => Some(Arc::new(Gallery)),
        "translator" => Some(Arc::new(Translator)),
        _ => None,
    }
}

pub fn builtin_names() -> &'static [&'static str] {
    &["gallery", "translator"]
}

pub fn gallery_manifest() -> MechanismEntry {
    parse_manifest(GALLERY_MANIFEST.as_bytes()).expect("bundled gallery manifest parses")
}

pub fn translator_manifest() -> MechanismEntry {
    parse_manifest(TRANSLATOR_MANIFEST.as_bytes()).expect("bundled translator manifest parses")
}

/// The bundled manifest documents, as shipped.
pub fn bundled_manifests() -> [(&'static str, &'static str); 2] {
    [("gallery", GALLERY_MANIFEST), ("translator", TRANSLATOR_MANIFEST)]
}
