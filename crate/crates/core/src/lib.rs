//! Mixed-initiative interactive image retrieval.
//!
//! A search session keeps a multiplicative relevance score per catalog item.
//! At each iteration a controller picks the kind of feedback to ask for
//! (free-form comparison, a pivot question, or a sketch) and the user's
//! answer is folded into the ranking. The learned controller is a small
//! convolutional Q-network trained against simulated users.

pub mod agent;
pub mod catalog;
pub mod config;
pub mod eval;
pub mod interactions;
pub mod pipeline;
pub mod relevance;
pub mod rng;
pub mod session;
pub mod simuser;

pub use catalog::{Catalog, CatalogError, Item, ItemId};
pub use config::Config;
pub use session::{SearchContext, SearchSession, SessionError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Agent(#[from] agent::AgentError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
