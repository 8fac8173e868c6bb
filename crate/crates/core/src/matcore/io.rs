//! Structure file formats: canonical JSON and a POSCAR-style importer.

use std::fs;
use std::path::Path;

use super::element::ElementId;
use super::lattice::Lattice;
use super::structure::CrystalStructure;
use crate::error::{Error, Result};

pub fn read_structure_json(path: &Path) -> Result<CrystalStructure> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), detail: e.to_string() })
}

pub fn write_structure_json(path: &Path, structure: &CrystalStructure) -> Result<()> {
    let text = serde_json::to_string_pretty(structure)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Parses a POSCAR-style document: comment line, scale line, three lattice
/// rows, a symbol line, a count line, an optional `Selective dynamics` line,
/// the `Direct` (or `Cartesian`) marker, then one coordinate row per atom.
pub fn parse_poscar(text: &str) -> Result<CrystalStructure> {
    let bad = |msg: &str| Error::usage(format!("POSCAR: {msg}"));
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let _comment = lines.next().ok_or_else(|| bad("empty file"))?;

    let scale: f64 = lines
        .next()
        .and_then(|l| l.split_whitespace().next())
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("missing scale factor"))?;
    if scale <= 0.0 {
        return Err(bad("volume-style negative scale factors are not supported"));
    }

    let mut rows = [[0.0; 3]; 3];
    for row in rows.iter_mut() {
        let line = lines.next().ok_or_else(|| bad("missing lattice row"))?;
        let vals = parse_floats(line, 3).ok_or_else(|| bad("malformed lattice row"))?;
        for k in 0..3 {
            row[k] = vals[k] * scale;
        }
    }
    let lattice = Lattice::new(rows)?;

    let symbols: Vec<ElementId> = lines
        .next()
        .ok_or_else(|| bad("missing species line"))?
        .split_whitespace()
        .map(|s| ElementId::from_symbol(s.split('/').next().unwrap_or(s)))
        .collect::<Result<_>>()?;
    let counts: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("missing count line"))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad("malformed count")))
        .collect::<Result<_>>()?;
    if symbols.len() != counts.len() {
        return Err(bad("species and count lines differ in length"));
    }

    let mut mode = lines.next().ok_or_else(|| bad("missing coordinate mode"))?;
    if mode.to_ascii_lowercase().starts_with('s') {
        mode = lines.next().ok_or_else(|| bad("missing coordinate mode"))?;
    }
    let cartesian = matches!(mode.chars().next(), Some('c' | 'C' | 'k' | 'K'));

    let mut species = Vec::new();
    let mut frac = Vec::new();
    for (&el, &count) in symbols.iter().zip(&counts) {
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| bad("fewer coordinate rows than atoms"))?;
            let v = parse_floats(line, 3).ok_or_else(|| bad("malformed coordinate row"))?;
            let f = if cartesian {
                lattice.to_fractional(&nalgebra::Vector3::new(v[0] * scale, v[1] * scale, v[2] * scale))
            } else {
                [v[0], v[1], v[2]]
            };
            species.push(el);
            frac.push(f);
        }
    }
    CrystalStructure::new(lattice, species, frac)
}

pub fn read_poscar(path: &Path) -> Result<CrystalStructure> {
    parse_poscar(&fs::read_to_string(path)?)
}

fn parse_floats(line: &str, n: usize) -> Option<Vec<f64>> {
    let vals: Vec<f64> = line.split_whitespace().take(n).map(|t| t.parse().ok()).collect::<Option<_>>()?;
    (vals.len() == n).then_some(vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FE2O3_POSCAR: &str = "Fe2 O3 test cell
1.0
  4.0 0.0 0.0
  0.0 4.0 0.0
  0.0 0.0 5.0
Fe O
2 3
Direct
  0.0 0.0 0.25
  0.0 0.0 0.75
  0.5 0.5 0.0
  0.5 0.0 0.5
  0.0 0.5 0.5
";

    #[test]
    fn poscar_import() {
        let s = parse_poscar(FE2O3_POSCAR).unwrap();
        assert_eq!(s.num_atoms(), 5);
        assert_eq!(s.composition().formula(), "Fe2O3");
        assert_eq!(s.lattice().lengths(), [4.0, 4.0, 5.0]);
        assert_eq!(s.frac_coords()[1], [0.0, 0.0, 0.75]);
    }

    #[test]
    fn poscar_rejects_truncated_input() {
        let truncated: String = FE2O3_POSCAR.lines().take(9).collect::<Vec<_>>().join("\n");
        assert!(parse_poscar(&truncated).is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = parse_poscar(FE2O3_POSCAR).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"species\":[\"Fe\",\"Fe\",\"O\",\"O\",\"O\"]"));
        let back: CrystalStructure = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
