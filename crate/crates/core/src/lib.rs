pub mod agent;
pub mod analysis;
pub mod cluster;
pub mod config;
pub mod contrastive;
pub mod error;
pub mod pipeline;
pub mod reward;
pub mod trajectory;
pub mod vq;
pub mod world;

pub use error::{Error, Result};
