pub mod cli;
pub mod error;
pub mod fock;
pub mod linalg;
pub mod phi_rules;
pub mod rigidity;
pub mod signaling;
pub mod steering;
pub mod transition;

pub use error::{Error, Result};
