//! A numerical laboratory for slow infinite-time concentration ("bubbling")
//! in the energy-critical semilinear heat equation u_t = Δu + u³ on ℝ⁴.
//!
//! The crate implements, at desk scale, the constructive machinery behind the
//! log-slow blow-up: the steady profile and its linearization ([`bubble`]),
//! the Duhamel convolution operator with its envelope case tables
//! ([`kernel`]), the non-local modulation dynamics μ(t) ≈ 1/ln t
//! ([`modulation`]), the explicit correction fields and the elliptic profile
//! with orthogonality projection ([`corrections`]), the inner linear theory —
//! spherical-harmonic decomposition, coercivity, mode-0 evolution, mode-1
//! barrier — ([`inner`]), a direct radial simulator ([`sim`]), and the
//! feasibility checker for the construction's parameter tuple ([`params`]).

pub mod bubble;
pub mod corrections;
pub mod inner;
pub mod kernel;
pub mod modulation;
pub mod params;
pub mod sim;
pub mod util;
