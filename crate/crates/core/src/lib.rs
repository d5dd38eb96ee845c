//! Leafwise conformal geometry of diffeomorphisms between 3-dimensional
//! Riemannian domains.

pub mod beltrami;
pub mod conformal;
pub mod error;
pub mod expr;
pub mod grid;
pub mod integrability;
pub mod pullback;
pub mod tensor3;

pub use error::{Error, Result};
