//! Homotopy continuation for spatial equilibrium models with social interactions.

pub mod ad;
pub mod bifurcation;
pub mod error;
pub mod homotopies;
pub mod linalg;
pub mod model;
pub mod nested;
pub mod oracle;
pub mod par;
pub mod polysys;
pub mod tracker;

pub use error::{Error, Result};
pub use model::{City, Equilibrium, Status, Tolerances};
pub use par::Exec;
