//! Query reformulation toolkit: a BM25 search engine, classical
//! pseudo-relevance-feedback expanders, and neural term selectors trained
//! with REINFORCE against document recall.

pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod eval;
pub mod error;
pub mod index;
pub mod metrics;
pub mod neural;
pub mod oracle;
pub mod prf;
pub mod rl;
pub mod supervised;

pub use error::{Error, Result};
