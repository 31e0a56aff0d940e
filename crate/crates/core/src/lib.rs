pub mod catalog;
pub mod curvature;
pub mod decomposition;
pub mod error;
pub mod field;
pub mod formulas;
pub mod grid;
pub mod maps;
pub mod metric;
pub mod operators;
pub mod quadrature;
pub mod report;
pub mod sampled;
pub mod snapshot;
pub mod spectral;
pub mod stability;
pub mod stencil;
pub mod submanifold;

pub use error::{GeomError, Result, SolverStats};
