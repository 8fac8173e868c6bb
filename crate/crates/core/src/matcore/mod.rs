//! Core domain types and periodic geometry.

mod element;
pub mod io;
mod lattice;
mod structure;

pub use element::{element_table, ElementData, ElementId, NUM_ELEMENTS};
pub use lattice::{Lattice, MIN_EDGE_LENGTH};
pub use structure::{
    min_image_distance, min_image_vector, structure_hash, to_cartesian, wrap_frac, wrap_unit, Composition,
    CrystalStructure, PropertyKind, PropertyValue, ValueSource, DEFAULT_MAX_ATOMS,
};
