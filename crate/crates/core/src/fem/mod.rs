//! Finite element analysis on structured grids of unit hexahedral/quadrilateral elements.

pub mod basis;
pub mod element;
pub mod grid;
pub mod loads;
pub mod solver;
pub mod sparse;
pub mod system;

pub use basis::{gauss_legendre, ElementBasis, QuadratureRule};
pub use element::{quadratic_form, ElasticKernel, Material, PointSet, QuadPoint};
pub use grid::{Point, StructuredGrid};
pub use loads::{LoadCase, NodeSelector, PointLoad, ResolvedLoads, Support};
pub use solver::{LinearSolver, SolverKind, SolverSettings};
pub use sparse::CsrMatrix;
pub use system::{
    assemble_scaled, assemble_stiffness, assemble_with, component_free_modes, element_components, solve_and_compliance,
    unconstrained_rigid_modes, DofMap, LinearSystem,
};
