//! Imitation and transfer learning of static output-feedback LQG controllers
//! from expert input/output trajectories.
//!
//! A static gain maps a window of `n` past inputs and outputs to the next
//! input. [`imitation`] learns it from one expert trajectory; [`transfer`]
//! factors it into a task-invariant estimation matrix learned from several
//! source tasks and a small task-specific gain learned from a short target
//! trajectory. [`oracle`] provides the model-based ground truth.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod imitation;
pub mod io;
pub mod linalg;
pub mod lti;
pub mod oracle;
pub mod par;
pub mod transfer;

pub use error::{Error, Result};
pub use linalg::{Matrix, Tolerance, Vector};
pub use lti::{LinearSystem, RngSeed, Trajectory};
