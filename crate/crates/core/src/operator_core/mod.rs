//! Generators, boundary operators, test functions and scenario validation.

pub mod boundary;
pub mod condition_pk;
pub mod field;
pub mod generator;
pub mod geometry;
pub mod jump;
pub mod polynomial;
pub mod test_function;

pub use boundary::{boundary_apply, BoundaryPiece, BoundarySpec};
pub use condition_pk::{check_condition_pk, CoordinateMap, DiskShearMap, IdentityMap, Patch, PkReport};
pub use field::{FnField, PolyField, VectorField};
pub use generator::{
    generator_apply, generator_apply_masked, manufacture_rhs, Evaluation, GeneratorSpec, TermMask,
};
pub use geometry::{validate_reflection_geometry, GeometryReport, Tangency};
pub use jump::{validate_jump_conditions, JumpReport, JumpSpec, MarkMeasure};
pub use polynomial::Polynomial;
pub use test_function::{ScalarField, TestFunction};
