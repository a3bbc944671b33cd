//! Distance-based classification heads (SoftMax, IsoMax, IsoMax+) for
//! out-of-distribution detection, with the detection scores and metrics
//! needed to evaluate them on small synthetic or file-backed datasets.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: a small dense matrix type and the kernels the heads need.
//! * [`heads`]: the three classification heads with analytic gradients.
//! * [`scores`]: per-example detection scores (higher means in-distribution).
//! * [`metrics`]: AUROC, TNR at 95% TPR, detection accuracy, accuracy.
//! * [`model`]: a fully connected backbone and the SGD/Nesterov trainer.
//! * [`data`]: synthetic generators, IDX/CSV ingestion, splitting.
//! * [`experiment`]: config-driven runs, reports, checkpoints and the CLI.
//! * [`gradcheck`]: central finite-difference verification of every gradient.

pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod scores;

pub use error::{Error, Result};
pub use heads::{ClassifierHead, HeadKind};
pub use numerics::RealMatrix;
