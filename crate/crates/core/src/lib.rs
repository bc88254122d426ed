//! Digital objects with structural metadata ("structoids"), structoid schemas,
//! the behavior registry and the bundled behavior mechanisms.

pub mod fixtures;
pub mod mechanisms;
pub mod oai;
pub mod object;
pub mod registry;
pub mod schema;
pub mod validate;
pub mod wire;
pub mod xml;

pub use object::{
    check_integrity, parse_object, public_view, serialize_object, DataStream, DigitalObject, Disseminator,
    ObjectError, PublicRole, PublicStructoid, Role, Structoid, Violation, ViolationKind,
};
pub use registry::{
    BehaviorInterface, BehaviorRegistry, BehaviorSignature, ExecutionSpec, MatchResult, MechanismEntry, RegistryError,
};
pub use schema::{
    parse_schema, resolve_schema, validate_grammar, validate_rules, Finding, FindingClass, LabelSpec, MaxOccurs,
    SchemaError, SchemaRegistry, Severity, StructoidSchema, ValidationReport,
};
