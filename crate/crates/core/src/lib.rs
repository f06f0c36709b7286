//! Estimators of local average treatment effects with a binary treatment:
//! Wald/IV, two-step control functions under a pluggable link, polynomial
//! control functions for multi-valued instruments, covariate-restricted
//! control functions, likelihood estimators for binary outcomes, and two
//! deliberately non-equivalent comparison estimators.

pub mod binary;
pub mod covariates;
pub mod data;
pub mod defier;
pub mod dgp;
pub mod error;
pub mod fiml;
pub mod linalg;
pub mod link;
pub mod multi;
pub mod normal;
pub mod quad;

pub use binary::{CfFit, Extrapolation, LalondeFit, PoMeans};
pub use covariates::{CovCfFit, Prop3Decomposition, Reweighted};
pub use defier::{DefierFit, MixtureWeighting};
pub use data::{check_condition1, check_condition2, CellStats, Observation, Sample};
pub use dgp::{CovariateSpec, DgpSpec, OutcomeModel};
pub use error::{Error, Result};
pub use fiml::{BinaryCounts, FimlParams, FimlResult};
pub use link::{LinkFamily, LinkKind, TruncatedMoment};
pub use multi::{Combination, PolyCfFit};
