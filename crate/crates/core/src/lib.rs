pub mod diagrams;
pub mod error;
pub mod estimators;
pub mod explore;
pub mod lattice;
pub mod oracle;
pub mod osss;
pub mod pioneers;
pub mod randomness;
pub mod sampling;

pub use error::{PercError, Result};
