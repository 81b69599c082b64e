//! Finite element solver for Stokes flow coupled to a Biot poroelastic
//! medium through a Nitsche interface.
//!
//! The crate is split along the solver pipeline: [`mesh`] builds and reads
//! triangulations, [`fem`] holds element kernels, degree-of-freedom maps and
//! boundary constraints, [`sparsela`] the CSR/LU/GMRES layer, [`forms`] the
//! block operators, [`schemes`] the time steppers, [`scenarios`] the two test
//! configurations and the studies built on them, [`io`] the file formats and
//! [`audit`] the runtime checks of the stability and splitting properties.

pub mod audit;
pub mod error;
pub mod fem;
pub mod forms;
pub mod io;
pub mod mesh;
pub mod scenarios;
pub mod schemes;
pub mod sparsela;

pub use error::{Error, Result};
pub use fem::{Constraints, DofMap, ElementKind, ElementPreset, Field};
pub use forms::{BlockName, BlockSystem, NitscheParams, PhysParams, Tangential};
pub use mesh::{BoundaryLabel, Mesh2D, Region};
pub use schemes::{EnergyReport, SchemeKind, Stepper};
pub use sparsela::{CsrMatrix, GmresConfig, GmresResult};
