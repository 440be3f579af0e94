//! Coordinatewise soft-impute for sparse longitudinal trajectories.
//!
//! Patients' irregular measurements are rounded onto a common time grid,
//! giving a sparse `N x T` matrix `Y`. Trajectories are modelled as
//! `Y ≈ W B' + mu I_S`, where `B` is an orthonormal spline basis, `W` a
//! low-rank coefficient matrix (nuclear-norm penalized), and `mu I_S` an
//! additive step at each patient's treatment time.

pub mod basis;
pub mod cli;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod masked;
pub mod shrinkage;
pub mod rng;
pub mod simulate;
pub mod solver;

pub use basis::{make_grid, make_spline_basis, Basis, TimeGrid};
pub use error::{Error, Result};
pub use masked::{
    grid_observations, project, project_complement, CollisionPolicy, GriddedData, Mask, MaskedMatrix,
    ObservationSet, PatientRecord, TreatmentMatrix,
};
pub use shrinkage::{nuclear_norm, soft_threshold, solve_basis_lsq, SvdTriple};
pub use solver::{fit, fit_csi, fit_sli, predict, FitResult, Method, Problem, SolverConfig};
