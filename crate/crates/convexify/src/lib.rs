//! Convexified inversion of one-dimensional ground conductivity from
//! single-point frequency sounding.
//!
//! A source over a layered halfspace produces boundary data g(k) — the
//! vertical derivative of the field at the surface — for a band of
//! pseudo-frequencies k. This crate recovers the conductivity profile σ(z)
//! on the slab [0, z_max] from that data by:
//!
//! 1. solving the forward two-point boundary value problem for the scattered
//!    field ([`forward`]),
//! 2. changing variables to a pair of fields (q, r) whose governing
//!    equations no longer contain σ ([`transform`]),
//! 3. minimizing a weighted least-squares residual functional, made convex
//!    on a ball by an exponential Carleman weight, with projected gradient
//!    descent ([`functional`], [`descent`]),
//! 4. mapping the minimizer back to a conductivity profile and averaging
//!    over frequencies ([`reconstruct`]).
//!
//! [`verify`] runs Monte-Carlo checks of the quantitative inequalities the
//! method rests on (Carleman estimate, strong convexity, descent
//! contraction), and [`experiment`] wires everything into reproducible,
//! file-backed runs driven by the `convexify` binary.

pub mod descent;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod functional;
pub mod grid;
pub mod reconstruct;
pub mod transform;
pub mod verify;

pub use error::{Error, Result};

/// The guide's code listings, compiled and run by `cargo test --doc` so the
/// book cannot drift from the crate. One module per chapter keeps test
/// failures attributable to a file.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/forward-model.md")]
    mod forward_model {}
    #[doc = include_str!("../../../book/src/transform-chain.md")]
    mod transform_chain {}
    #[doc = include_str!("../../../book/src/weighted-functional.md")]
    mod weighted_functional {}
    #[doc = include_str!("../../../book/src/inversion.md")]
    mod inversion {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
