//! Network building blocks and the assembled classifier.

pub mod favor;
pub mod gat;
pub mod init;
pub mod model;

pub use favor::{PerformerStack, MIN_NORMALIZER};
pub use gat::{GatLayer, GatOutput};
pub use init::Linear;
pub use model::{hetero_aggregate, ForwardOptions, ForwardOutput, Mode, Model, ModelConfig};
