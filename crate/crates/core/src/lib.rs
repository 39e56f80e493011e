pub mod corpus;
pub mod error;
pub mod influence;
pub mod mixer;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod proxylm;
pub mod rng;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
