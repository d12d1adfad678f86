pub mod error;
pub mod experiments;
pub mod linear;
pub mod lp;
pub mod numerics;
pub mod ope;
pub mod safepe;
pub mod tabular;

pub use error::{Error, Result};
pub use linear::{DesignProblem, DesignResult, FeatureMatrix, FwOptions};
pub use numerics::{Ellipsoid, Matrix};
pub use tabular::{Policy, RewardBox};
