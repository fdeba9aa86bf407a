//! Nonequilibrium steady states of tight-binding lattices with edge states.
//!
//! A finite device lattice (SSH chain or flux-rhombic diamond chain) is
//! connected to two ring leads that relax toward Fermi-Dirac states at
//! different chemical potentials. On-site dephasing acts on the device.
//! Because the Hamiltonian is quadratic and the dissipators are linear or
//! site-number dephasing, the dynamics closes on the single-particle density
//! matrix, which is what every solver here works with.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod leads;
pub mod master_eq;
pub mod observables;

pub use error::{Error, Result};
pub use lattice::{EdgeStateReport, Lattice, LatticeKind, RhombicTermination, Side};
pub use leads::{Block, BlockLayout, CompositeSystem, RingLead};
pub use master_eq::{Diagnostics, SolverConfig, SolverMethod, Spdm};
pub use observables::CurrentProfile;

/// Complex scalar used throughout.
pub type C64 = nalgebra::Complex<f64>;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;

/// Largest entry modulus of a complex matrix.
pub fn max_abs<R, C, S>(m: &nalgebra::Matrix<C64, R, C, S>) -> f64
where
    R: nalgebra::Dim,
    C: nalgebra::Dim,
    S: nalgebra::RawStorage<C64, R, C>,
{
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}
