//! Dynamic-parameter identification for serial rigid-body chains.
//!
//! The library pairs a staged estimator — stacked-regressor least squares,
//! conditional feasibility projection, closed-loop input-error refinement,
//! principal-component selection and a final feasibility rescue — with a
//! simulated plant (FF+PD realization layer, encoder quantization, dead time,
//! torque noise) so the whole pipeline can be exercised and verified against
//! a known ground truth.
//!
//! Data-parallel sections use rayon through the `rayon` feature (on by
//! default); disabling it yields a sequential build with identical results.

pub mod chain;
pub mod cloud;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod estimate;
pub mod excitation;
pub mod par;
pub mod pipeline;
pub mod plant;
pub mod preprocess;
pub mod reduction;
pub mod report;
pub mod scurve;

pub use chain::{build_default_chain, ChainDescription, DhLink, StandardInertialParams};
pub use dynamics::{forward_accel, inertia_matrix, min_eig_audit, regressor, rnea_torque, AuditContext, JointState};

pub use error::{Error, Result};
pub use reduction::{numerical_base_reduction, BaseParamMapping, ReducedParamVector};
