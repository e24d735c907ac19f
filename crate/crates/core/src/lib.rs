//! Finite element simulation of magnetoelastic dynamics in the small-strain
//! regime: the Landau–Lifshitz–Gilbert equation for the magnetization coupled
//! to conservation of linear momentum for the displacement.
//!
//! The time integrator is decoupled and fully linear. Each step solves one
//! tangent-plane system for the magnetization velocity (a linearized midpoint
//! rule built on extrapolated midpoint values) followed by one symmetric
//! positive definite Newmark-β system for the displacement. Space is
//! discretized with piecewise affine elements on tetrahedral meshes.
//!
//! Module map:
//!
//! * [`mesh`] structured Kuhn meshes of boxes and P1 element geometry
//! * [`sparse`] CSR storage, CG / BiCGStab, Dirichlet elimination
//! * [`fem`] bilinear form assembly, norms, interpolation
//! * [`material`] isotropic magnetostriction and Hooke's law
//! * [`magnetization`] tangent-plane midpoint and first-order solvers
//! * [`displacement`] two-step Newmark-β solver
//! * [`integrator`] the full time loop and its diagnostics
//! * [`experiments`] config files, named experiments, CSV output
//!
//! A minimal run:
//!
//! ```
//! use magnetoelastic::integrator::{InitialData, SchemeParams, Simulation};
//! use magnetoelastic::material::MaterialParams;
//! use magnetoelastic::mesh::TetMesh;
//! use nalgebra::Vector3;
//!
//! let mesh = TetMesh::structured_cube(2, 1.0);
//! let material = MaterialParams::default();
//! let scheme = SchemeParams::midpoint_newmark(1e-2);
//! let init = InitialData::uniform(&mesh, Vector3::new(1.0, 0.0, 0.0));
//! let outcome = Simulation::new(&mesh, &material, &scheme)
//!     .unwrap()
//!     .run(&init, 0.1)
//!     .unwrap();
//! assert!(outcome.status.is_completed());
//! assert_eq!(outcome.records.last().unwrap().step, 10);
//! ```

pub mod displacement;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod integrator;
pub mod magnetization;
pub mod material;
pub mod mesh;
pub mod sparse;

pub use error::{Error, Result};

/// Column vector in three dimensions.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3×3 matrix; used for strains, stresses and tensor contractions.
pub type Mat3 = nalgebra::Matrix3<f64>;
