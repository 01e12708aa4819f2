//! Hierarchy-aware representation learning with class representatives.

pub mod data;
pub mod error;
pub mod heads;
pub mod hierarchy;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod proxy;
pub mod scale;
pub mod trainer;
pub mod vecops;

pub use data::{Dataset, Split, SplitSpec, SynthSpec};
pub use error::{Error, Result};
pub use heads::{HeadConfig, HeadKind};
pub use hierarchy::{ClassDistanceMatrix, HierarchyTree};
pub use metrics::MetricsReport;
pub use model::{Architecture, Checkpoint, EmbedderModel};
pub use proxy::{PrototypeSet, ProxyPolicy, ProxySet};
pub use scale::ScaleState;
pub use trainer::{TrainConfig, TrainOptions, TrainTrace};
