//! Dynamic link prediction on call-detail event streams: temporal graph
//! network memory feeding enclosing-subgraph features into a DGCNN decoder.

pub mod config;
pub mod dgcnn;
pub mod error;
pub mod events;
pub mod experiment;
pub mod ingest;
mod init;
pub mod memory;
pub mod metrics;
pub mod mlp;
mod rng;
pub mod seal;
pub mod synth;
pub mod train;

pub use config::{EmbeddingKind, ModelKind, TrainConfig};
pub use error::{Error, Result};
pub use experiment::{compare_dirs, run_experiment, ExperimentSummary, Metric};
pub use metrics::{average_precision, mann_whitney_u, Alternative, MannWhitney};
pub use events::{chronological_split, Event, EventStream, NodeId, Region, SplitSpec, TemporalAdjacency};
pub use memory::{Aggregation, Embedding, MemoryState, MessageBuffer, RawMessage, TemporalMemory};
pub use rng::{derive_seed, derived_rng};
pub use seal::{drnl_from_distances, drnl_label, extract_enclosing_subgraph, EnclosingSubgraph};
pub use synth::{generate_synthetic, SynthParams};
pub use train::{train_and_evaluate, MetricsReport, RunOutcome, Session};

pub type MemoryState64 = MemoryState<f64>;
pub type ParamStore64 = tgn_seal_autograd::ParamStore<f64>;
pub type Tensor64 = tgn_seal_autograd::Tensor<f64>;
