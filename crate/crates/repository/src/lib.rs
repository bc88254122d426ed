//! Digital object repository: persistent storage, content serving, and an
//! OAI-style data provider exposing public structoids to harvesters.

pub mod http;
mod provider;
pub mod store;

pub use http::router;
pub use store::{ContentSource, Repository, RepositoryConfig, RepositoryError, StoredObject};
