pub mod corpus;
pub mod dot;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod graph;
pub mod model;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
