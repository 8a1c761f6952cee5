//! laxforge: exact symbolic calculus for pseudodifferential Lax
//! operators and the integrable hierarchies they generate.
//!
//! The crate is organized around six layers:
//!
//! * [`ring`] / [`diffpoly`] — differential polynomial rings over exact
//!   rationals: jet variables, total derivatives, canonical forms.
//! * [`morphism`] — substitutions and change-of-variable rewrites
//!   between rings.
//! * [`psdo`] — noncommutative calculus of formal pseudodifferential
//!   operators with truncation bookkeeping.
//! * [`hierarchy`] — Lax operators, deformed flow derivation, and the
//!   structural verifiers (top evolution, conservation, zero curvature).
//! * [`transform`] — the two changes of variables (chi-substitution and
//!   the reciprocal transformation) with their consistency checks.
//! * [`dispersionless`] — the commutative (Poisson bracket) analog of
//!   the operator calculus and its transforms.
//!
//! Rendering to text/LaTeX lives in [`render`].

pub mod diffpoly;
pub mod dispersionless;
pub mod error;
pub mod hierarchy;
pub mod morphism;
pub mod psdo;
pub mod render;
pub mod ring;
pub mod transform;

pub use diffpoly::DiffPoly;
pub use error::{Error, Result};
pub use psdo::{IntegralTail, PsdOp};
pub use ring::{Axis, GenId, JetKey, Ring, RingBuilder};
