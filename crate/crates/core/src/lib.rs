//! Numerical laboratory for weighted Korn and Poincaré inequalities on
//! irregular planar domains.
//!
//! The crate is organised bottom-up:
//!
//! * [`geom`] exact rectilinear domains, boundary distance and Whitney cubes;
//! * [`qhyp`] quasihyperbolic distance, geodesic chains, shadows and the
//!   s-John / β-QHBC classifiers;
//! * [`gallery`] the rooms-and-corridors family and simple reference domains;
//! * [`fields`] grid fields, difference operators and weighted norms;
//! * [`scaling`] exponent calculators, threshold predicates and log-log fits;
//! * [`divsolve`] the weighted divergence-equation solver built from Whitney
//!   chains and local Bogovskii solves;
//! * [`constants`] quotient maximisation and blow-up experiments.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod constants;
pub mod divsolve;
pub mod error;
pub mod fields;
pub mod gallery;
pub mod geom;
pub mod io;
pub mod par;
pub mod qhyp;
pub mod scaling;

pub use error::{LabError, Result};
pub use fields::ExponentParams;
pub use geom::{Point, Rect, RectDomain};
