//! Skeleton-based gait identification.
//!
//! Pose keypoint sequences are turned into spatio-temporal skeleton graphs,
//! embedded into 256-d vectors by a partitioned spatio-temporal graph
//! convolutional network trained with batch-hard triplet loss, and identified
//! by nearest-neighbor search against an enrolled gallery.
//!
//! Modules, bottom-up:
//!
//! * [`skeleton`]: joint layouts, hop distances and partitioned adjacency.
//! * [`tensor`]: dense arrays and a reverse-mode tape with the layer kernels.
//! * [`net`]: the ST-GCN unit, the full network and a literal reference convolution.
//! * [`metric`]: pairwise distances, batch-hard mining and triplet loss.
//! * [`data`]: keypoint files, sequences, normalization, synthetic walkers, protocols.
//! * [`train`]: P×K sampling, Adam, the training loop and checkpoints.
//! * [`eval`]: gallery indexing, rank-1 identification and accuracy reports.

pub mod data;
pub mod error;
pub mod eval;
pub mod metric;
pub mod net;
pub mod skeleton;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use skeleton::{PartitionStrategy, PartitionedAdjacency, SkeletonLayout};
pub use tensor::{Real, Tape, Tensor, Var};
