//! Simulation, reconstruction, and spectral diagnostics for a Compton
//! scattering tomography system with attenuation-dependent weights.
//!
//! The forward model integrates the electron density along scan lines with
//! an exponential weight built from a V-line (broken-ray) transform of the
//! density itself, which makes the data non-linear in the image. The crate
//! provides:
//!
//! * physical-coordinate grids, phantoms, and Compton kinematics,
//! * the weighted Radon transform and its adjoint, divergent-beam and
//!   V-line transforms, and the non-linear forward model,
//! * edge-highlighting reconstructions (second-derivative backprojection,
//!   Landweber, smoothed-TV gradient descent),
//! * edge/support/density recovery post-processing,
//! * Fourier-side diagnostics: Sobolev-order estimation from spectral
//!   decay, angular Fourier components of the V-line transform, and local
//!   singularity-order maps of sinograms,
//! * a small binary container format plus PGM/CSV/JSON export.

// Validations use `!(x > 0)` so NaN fails them; the suggested inversion
// would accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod forward;
pub mod grid;
pub mod io;
pub mod phantom;
pub mod physics;
pub mod postproc;
pub mod raytransforms;
pub mod recon;
pub mod rng;

pub use error::CstError;
pub use grid::{GridSpec, ImageGrid, ScanGeometry, Sinogram};
pub use phantom::{BuiltinPhantom, PhantomSpec};
pub use physics::PhysicsParams;
pub use raytransforms::{KernelSpec, VLineParams};
