//! Weighted mean curvature flow of three-sheet clusters meeting at triple
//! junctions, written as normal graphs over a reference cluster, together
//! with the linearized junction problem and a boundary-symbol checker.

pub mod attachment;
pub mod checks;
pub mod eigen;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod linear;
pub mod quasi;
pub mod scenarios;
pub mod shape;
pub mod solver;
pub mod stencil;
pub mod symbol;
pub mod weights;

pub use attachment::{build_t, mu_from_rho, verify_attachment, TCoupling};
pub use error::{FlowError, Result};
pub use geometry::{End, EndCondition, ReferenceCluster, Vec3};
pub use scenarios::{build_reference, GeometrySpec};
pub use weights::{derive_angles, AngleWeights};
