//! Simulator and metrics harness for semantic point-cloud transmission over a
//! quantum secure direct communication (QSDC) link.
//!
//! - [`pointcloud`]: clouds, file formats, kNN graphs, Chamfer distance
//! - [`codec`]: semantic codes, the farthest-point baseline codec, code archives
//! - [`link`]: decoy-state weak-coherent link budget, QBER and capacity lines
//! - [`stike`]: the STIKE session state machine with its key pool
//! - [`pipeline`]: timed end-to-end runs, EDR/RTE, timing calibration
//! - [`config`], [`cli`]: JSON configuration and the `qsc` subcommands

pub mod cli;
pub mod codec;
pub mod config;
pub mod link;
pub mod pipeline;
pub mod pointcloud;
pub mod stike;

pub use codec::{CodecDescriptor, SemanticCode};
pub use link::ChannelParams;
pub use pipeline::{TimingModel, TransmissionReport};
pub use pointcloud::{chamfer_distance, knn_graph, KnnGraph, PointCloud};
pub use stike::{KeyPool, SessionReport};
