//! Cell-centered finite volume discretisation of the Dirichlet Poisson
//! problem `-Δu = f` on the unit cube in `d >= 2` dimensions, over
//! non-uniform tensor-product meshes.
//!
//! * [`mesh`]: axes, tensor meshes, mesh functions, mesh files.
//! * [`stencil`]: divided differences, transverse averaging, `L^h`.
//! * [`norms`]: discrete `L2`, one-sided, `H1` and dual `H^-1` norms.
//! * [`problem`]: manufactured solutions and cell-averaged right-hand sides.
//! * [`solver`]: CG / BiCGStab on the assembled system.
//! * [`study`]: convergence studies and randomized checks of the stability
//!   inequalities.
//! * [`cli`]: the `fvlab` command-line front end.

pub mod cli;
pub mod error;
pub mod mesh;
pub mod norms;
pub mod problem;
pub mod solver;
pub mod sparse;
pub mod stencil;
pub mod study;
pub mod sum;

pub use error::{Error, Result};
pub use mesh::{Axis, CellBox, MeshFunction, TensorMesh};
pub use norms::NormReport;
pub use problem::{builtin, ManufacturedSolution, QuadratureRule, SolutionSpec};
pub use solver::{solve, solve_poisson, SolveOptions, SolveReport, Source};
pub use sparse::SparseOperator;
pub use study::{run_study, verify_suite, StudyConfig, StudyRow, VerifyReport};
