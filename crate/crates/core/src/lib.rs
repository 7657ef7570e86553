//! Joint GPS/route trajectory representation learning on synthetic road
//! networks.
//!
//! The crate generates paired GPS/route observations over planted grid
//! networks, trains a three-part encoder (hierarchical GPS BiGRU,
//! graph-attention route encoder, shared cross-modal transformer) with masked
//! segment recovery and cross-modal matching objectives, and evaluates the
//! learned representations on four downstream protocols: road classification,
//! speed inference, travel-time estimation and detour-based similarity search.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod geo;
pub mod model;
pub mod network;
pub mod objectives;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
