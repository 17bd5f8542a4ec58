//! Harmonic balance computation of periodic solutions of forced nonlinear
//! structural systems, with continuation over frequency, Hill stability,
//! and detection/tracking of fold, branch-point and Neimark-Sacker
//! bifurcations in a two-parameter space.

pub mod bifurcation;
pub mod continuation;
pub mod error;
pub mod harmonic;
pub mod model;
pub mod oracle;
pub mod solver;
pub mod stability;

pub use bifurcation::{BifurcationKind, TestFunctionRecord};
pub use continuation::{ContinuationSettings, ContinuationSystem};
pub use error::{HbError, Result};
pub use harmonic::{Collocation, FourierState, HarmonicGrid};
pub use model::{ElementLaw, ForcingSpec, NonlinearElement, SystemModel};
pub use solver::{continue_branch, Branch, BranchPoint, BranchStatus, Workspace};
pub use stability::{HillSpectrum, Stability};
