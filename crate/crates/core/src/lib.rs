//! Stochastic homogenisation of surface energies on piecewise rigid fields.
//!
//! Fields live on pixel grids with axis-aligned jump faces. The crate covers
//! density environments ([`env`]), label fields ([`fields`]), energies
//! ([`energy`]), cell problems ([`cellsolve`]), f_hom estimation ([`homog`]),
//! the piecewise rigid approximation and recovery constructions ([`approx`])
//! and the strip counterexample ([`counterex`]).

pub mod approx;
pub mod cellsolve;
pub mod counterex;
pub mod energy;
pub mod env;
pub mod error;
pub mod fields;
pub mod homog;
pub mod io;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat2 = nalgebra::Matrix2<f64>;

pub(crate) fn e1() -> Vec2 {
    Vec2::new(1.0, 0.0)
}

pub(crate) fn e2() -> Vec2 {
    Vec2::new(0.0, 1.0)
}

/// Rotation taking e2 to `nu`.
pub fn r_nu(nu: Vec2) -> Mat2 {
    Mat2::new(nu.y, nu.x, -nu.x, nu.y)
}

pub fn rotation(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    Mat2::new(c, -s, s, c)
}

/// The skew matrix with (1,2) entry `m`.
pub fn skew(m: f64) -> Mat2 {
    Mat2::new(0.0, m, -m, 0.0)
}

pub(crate) fn check_unit(nu: Vec2) -> Result<()> {
    if !nu.x.is_finite() || !nu.y.is_finite() || (nu.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "normal ({}, {}) is not a unit vector",
            nu.x, nu.y
        )));
    }
    Ok(())
}
