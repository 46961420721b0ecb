//! Layered Kac-Ising model: a one-dimensional Kac potential inside each
//! horizontal layer plus a nearest-neighbour vertical coupling `λ`.
//!
//! The crate computes the mean-field (Lebowitz-Penrose) phase diagram of the
//! model and checks every intermediate structure against exact oracles that
//! fit on a desk:
//!
//! - [`ising1d`]: exact ring transfer matrices, pressure and the canonical
//!   free energy of the vertical chain.
//! - [`phase`]: the variational pressure, convex envelope, spontaneous
//!   magnetization and the large-field thresholds.
//! - [`polymer`]: polymer-gas representation of the normalized ring partition
//!   function, the Kotecký-Preiss check and truncated cluster coefficients.
//! - [`monomial`]: exact decomposition of monomials into pure powers plus
//!   negative gradient-squared terms via an absorbing Markov chain.
//! - [`effective`]: field inversion, the effective hamiltonian in tanh
//!   coordinates, its minimization and the multi-canonical ensemble gap.
//! - [`mc`]: Metropolis simulation of the full two-dimensional model.

pub mod effective;
pub mod error;
pub mod ising1d;
mod linalg;
pub mod mc;
pub mod monomial;
pub mod phase;
pub mod polymer;

pub use error::{Error, Result};
pub use ising1d::{Coupling, FieldVector, RingPartition};
