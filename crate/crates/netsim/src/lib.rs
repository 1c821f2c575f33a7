//! Monte Carlo companion to the analytic engine: concrete finite-width MLPs
//! with exact forward/backward passes, reproducible parallel estimators for
//! kernels and cumulants, full-batch gradient descent, catapult dynamics,
//! and finite-difference measurement of the higher contraction tensors.

pub mod catapult;
pub mod error;
pub mod estimate;
pub mod jacobian;
pub mod mlp;
pub mod osmeasure;
pub mod rng;
pub mod sampler;
pub mod train;

pub use error::NetsimError;
pub use estimate::EstimatorResult;
pub use mlp::{MlpParams, Parameterization};
pub use rng::RngPlan;
pub use train::TrajectoryRecord;

pub type Result<T> = std::result::Result<T, NetsimError>;
