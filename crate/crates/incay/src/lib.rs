//! Loss-function laboratory for norm-regularized softmax variants.
//!
//! The crate trains small CNN/MLP classifiers from scratch (no autograd,
//! no BLAS) and studies the feature-incay regularizer — a reciprocal
//! squared-norm penalty on correctly classified features — against
//! softmax, large-margin softmax, angular softmax, center, COCO and
//! L2-softmax baselines. A property-verification suite checks the
//! geometric claims behind the regularizer, and every analytic gradient
//! is validated against central finite differences.

pub mod data;
pub mod error;
pub mod io;
pub mod layers;
pub mod losses;
pub mod propcheck;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use layers::{Architecture, Network};
pub use losses::{LossConfig, LossKind};
pub use tensor::{finite_diff_grad, SeededRng, Tensor};
pub use trainer::{evaluate, train, train_with, MetricsRecord, Model, TrainConfig};
