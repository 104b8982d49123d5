//! Multi-interest user modeling: behavior-to-interest dynamic routing,
//! label-aware attention, sampled-softmax training, top-N retrieval and the
//! offline hit-rate harness around them.
//!
//! Item index 0 is padding everywhere. All randomness is seeded.

pub mod data;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod model;
pub mod retrieval;
pub mod routing;
pub mod synthetic;

pub use data::{InteractionRecord, ItemCatalog, PreparedData, SplitConfig, TrainingInstance, Vocabulary};
pub use error::{MindError, Result};
pub use evaluation::{EvalReport, EvalSettings, RetrievalMode, SweepReport};
pub use linalg::Matrix;
pub use model::checkpoint::Checkpoint;
pub use model::train::{AdamState, TrainConfig};
pub use model::{Attention, ModelConfig, ModelParams, ModelShape};
pub use retrieval::{ItemIndex, RetrievalResult};
pub use routing::RoutingConfig;
