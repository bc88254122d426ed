//! The context broker: harvests an object's structoids from a repository,
//! matches them against the local behavior registry, and runs behavior
//! mechanisms on content fetched through public role URLs.

mod broker;
pub mod client;
mod error;
pub mod http;
pub mod render;
pub mod runner;

pub use broker::{Binding, Broker, BrokerConfig, ListBehaviorsResponse, PerformRequest, PerformTrace};
pub use client::{HttpRepositoryClient, LocalRepositoryClient, RepositoryClient};
pub use error::BrokerError;
pub use http::router;
pub use runner::{MechanismRunner, SandboxLimits};
