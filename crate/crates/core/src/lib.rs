//! Structure theory of Riemannian symmetric spaces of non-compact type for
//! concrete matrix Lie algebras, and numerical checks of a Bourgain–Brezis
//! type duality estimate on them.
//!
//! The crate is organised bottom-up:
//!
//! * [`lie`]: matrix Lie algebras, brackets and the Killing form;
//! * [`cartan`]: Cartan and Iwasawa decompositions, restricted roots, good frames;
//! * [`geometry`]: the solvable group S = NA in exponential coordinates;
//! * [`quadrature`]: Haar measures and tensor Gauss–Legendre integration;
//! * [`splitting`]: mollification splits on R^d and on S';
//! * [`verify`]: divergence-free test fields, pairings, Hardy checks and the suite driver.

pub mod bump;
pub mod cartan;
pub mod error;
pub mod geometry;
pub mod lie;
pub mod linalg;
pub mod poly;
pub mod quadrature;
pub mod splitting;
pub mod suite;
pub mod verify;

pub use error::{Error, Result};
