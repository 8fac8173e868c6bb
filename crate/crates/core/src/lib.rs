//! Coupling-pattern engine over a toy crystal-materials domain.
//!
//! A deterministic simulated oracle plays the expensive high-fidelity code;
//! a graph attention surrogate, a DDPM structure generator and a screening
//! pipeline play the AI side; [`coupler`] wires them into surrogate,
//! directive and coordinate workflows.

pub mod checkpoint;
pub mod coupler;
pub mod depot;
pub mod diffgen;
pub mod error;
pub mod matcore;
pub mod nn;
pub mod oracle;
pub mod screen;
pub mod surrogate;
pub mod toy;

pub use error::{Error, Result};
pub use matcore::{Composition, CrystalStructure, ElementId, Lattice, PropertyKind, PropertyValue, ValueSource};
