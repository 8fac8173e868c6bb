//! Embedded element property table and the `ElementId` newtype.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const ELEMENT_DATA: &str = include_str!("../../data/elements.csv");

/// Number of elements covered by the embedded table (H through Rn).
pub const NUM_ELEMENTS: usize = 86;

/// One row of the element table.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementData {
    pub atomic_number: u8,
    pub symbol: &'static str,
    pub group: u8,
    pub period: u8,
    /// Pauling electronegativity, 0.0 for the light noble gases.
    pub electronegativity: f64,
    /// Covalent radius in Å.
    pub covalent_radius: f64,
    pub oxidation_states: Vec<i32>,
}

struct Table {
    rows: Vec<ElementData>,
    by_symbol: HashMap<&'static str, u8>,
}

static TABLE: LazyLock<Table> = LazyLock::new(|| {
    let mut rows = Vec::with_capacity(NUM_ELEMENTS);
    for line in ELEMENT_DATA.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&'static str> = line.split(',').collect();
        assert_eq!(cols.len(), 7, "malformed element row: {line}");
        let states = cols[6].split(';').map(|s| s.parse::<i32>().expect("oxidation state")).collect();
        rows.push(ElementData {
            atomic_number: cols[0].parse().expect("atomic number"),
            symbol: cols[1],
            group: cols[2].parse().expect("group"),
            period: cols[3].parse().expect("period"),
            electronegativity: cols[4].parse().expect("electronegativity"),
            covalent_radius: cols[5].parse().expect("covalent radius"),
            oxidation_states: states,
        });
    }
    assert_eq!(rows.len(), NUM_ELEMENTS);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.atomic_number as usize, i + 1, "element table must be dense");
    }
    let by_symbol = rows.iter().map(|r| (r.symbol, r.atomic_number)).collect();
    Table { rows, by_symbol }
});

/// A chemical element present in the embedded table.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementId(u8);

impl ElementId {
    pub fn from_atomic_number(z: u8) -> Result<Self> {
        if z == 0 || z as usize > NUM_ELEMENTS {
            return Err(Error::UnsupportedElement(format!("Z={z}")));
        }
        Ok(ElementId(z))
    }

    pub fn from_symbol(symbol: &str) -> Result<Self> {
        TABLE.by_symbol.get(symbol).map(|&z| ElementId(z)).ok_or_else(|| Error::UnsupportedElement(symbol.to_string()))
    }

    /// Zero-based position in the table, used as the one-hot column.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::from_atomic_number((index + 1).min(255) as u8)
    }

    pub fn atomic_number(self) -> u8 {
        self.0
    }

    pub fn symbol(self) -> &'static str {
        self.data().symbol
    }

    pub fn data(self) -> &'static ElementData {
        &TABLE.rows[self.index()]
    }

    pub fn electronegativity(self) -> f64 {
        self.data().electronegativity
    }

    pub fn covalent_radius(self) -> f64 {
        self.data().covalent_radius
    }

    pub fn all() -> impl Iterator<Item = ElementId> {
        (1..=NUM_ELEMENTS as u8).map(ElementId)
    }
}

pub fn element_table() -> &'static [ElementData] {
    &TABLE.rows
}

impl fmt::Debug for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for ElementId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ElementId::from_symbol(s.trim())
    }
}

impl Serialize for ElementId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.symbol())
    }
}

impl<'de> Deserialize<'de> for ElementId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ElementId::from_symbol(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbol_and_number_agree() {
        for e in ElementId::all() {
            assert_eq!(ElementId::from_symbol(e.symbol()).unwrap(), e);
        }
        assert_eq!(ElementId::from_symbol("Fe").unwrap().atomic_number(), 26);
        assert_eq!(ElementId::from_atomic_number(8).unwrap().symbol(), "O");
    }

    #[test]
    fn unknown_elements_rejected() {
        assert!(ElementId::from_symbol("Xx").is_err());
        assert!(ElementId::from_atomic_number(0).is_err());
        assert!(ElementId::from_atomic_number(92).is_err());
    }

    #[test]
    fn every_element_has_a_state() {
        for row in element_table() {
            assert!(!row.oxidation_states.is_empty(), "{}", row.symbol);
            assert!(row.covalent_radius > 0.0);
        }
    }
}
