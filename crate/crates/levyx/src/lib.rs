//! Asymptotic-expansion analytics for scalar Lévy-type models.
//!
//! The library prices European options, transition densities, survival
//! probabilities, and defaultable bonds for a log-price process with
//! state-dependent diffusion, default intensity, and jump activity.  The
//! central object is the process symbol: for frozen coefficients the
//! characteristic exponent of a Lévy process, and for state-dependent
//! coefficients a family of such exponents expanded in a polynomial basis
//! around one or two reference points.  Expansion terms are propagated through
//! a small Fourier calculus (truncated derivative jets in the frequency
//! variable), assembled term by term, and inverted along a damped contour.
//!
//! Components:
//!
//! * [`models`] — coefficient functions, jump measures, symbol evaluation.
//! * [`basis`] — Taylor, two-point Taylor, and Hermite coefficient expansions.
//! * [`jets`] — truncated Taylor jets in the frequency variable and the
//!   polynomial-in-∂ operators applied to them.
//! * [`expand`] — recursive construction of the expansion terms in the
//!   Fourier domain, for time-homogeneous and time-dependent coefficients.
//! * [`transform`] — payoff transforms and the damped inverse Fourier step.
//! * [`pricing`] — user-facing prices, densities, bond values, implied
//!   volatilities, and log-spot sensitivities.
//! * [`bounds`] — closed-form Gaussian-mixture error envelopes for the
//!   density expansion.
//! * [`mc`] — Monte Carlo reference prices with default thinning.

pub mod basis;
pub mod bounds;
pub mod error;
pub mod expand;
pub mod jets;
pub mod mc;
pub mod models;
pub mod pricing;
pub mod quad;
pub mod transform;

pub use error::{Error, Result};
