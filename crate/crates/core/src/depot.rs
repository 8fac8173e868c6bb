//! On-disk structure/property store, the fine-tuning buffer, and corpus
//! statistics.
//!
//! Layout: `<root>/records/<id>.json` holds one record each and
//! `<root>/index.json` holds the id counter and logical clock. Every file is
//! written to a temporary name and renamed into place. On open the in-memory
//! digest and formula indexes are rebuilt from the record files, so a crash
//! between a record write and the index write loses nothing.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{structure_hash, Composition, CrystalStructure, Lattice, PropertyValue, ValueSource};

pub const DEPOT_SCHEMA_VERSION: u32 = 1;
/// Rounding used for record digests.
pub const DIGEST_TOL: f64 = 1e-4;
pub const CRYSTAL_SYSTEM_TOL: f64 = 1e-3;

pub fn digest(structure: &CrystalStructure) -> String {
    structure_hash(structure, DIGEST_TOL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Corpus,
    Oracle,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepotRecord {
    pub id: String,
    pub digest: String,
    pub structure: CrystalStructure,
    pub properties: Vec<PropertyValue>,
    pub provenance: Provenance,
    /// Logical clock value at creation and at the last update.
    pub created: u64,
    pub updated: u64,
}

/// Input to [`Depot::ingest`]. Without an explicit id a sequential
/// `mat_NNNNNN` id is assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct NewRecord {
    pub id: Option<String>,
    pub structure: CrystalStructure,
    pub properties: Vec<PropertyValue>,
    pub provenance: Provenance,
}

impl NewRecord {
    pub fn new(structure: CrystalStructure, provenance: Provenance) -> Self {
        NewRecord { id: None, structure, properties: Vec::new(), provenance }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn with_property(mut self, value: PropertyValue) -> Self {
        self.properties.push(value);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchKey {
    Digest(String),
    /// Matches every record with the same reduced formula.
    Composition(Composition),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct IndexFile {
    schema_version: u32,
    next_seq: u64,
    clock: u64,
}

#[derive(Debug)]
pub struct Depot {
    root: PathBuf,
    next_seq: u64,
    clock: u64,
    records: BTreeMap<String, DepotRecord>,
    by_digest: HashMap<String, String>,
    by_formula: HashMap<String, Vec<String>>,
}

fn storage(path: &Path, detail: impl std::fmt::Display) -> Error {
    Error::Storage(format!("{}: {detail}", path.display()))
}

/// Writes `bytes` to `path` via a temporary file and a rename.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes).map_err(|e| storage(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| storage(path, e))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn sequence_of(id: &str) -> Option<u64> {
    id.strip_prefix("mat_").and_then(|s| s.parse().ok())
}

impl Depot {
    /// Opens (creating if needed) the store rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let records_dir = root.join("records");
        fs::create_dir_all(&records_dir).map_err(|e| storage(&records_dir, e))?;
        let index_path = root.join("index.json");
        let index: IndexFile = if index_path.exists() {
            let text = fs::read_to_string(&index_path).map_err(|e| storage(&index_path, e))?;
            let index: IndexFile = serde_json::from_str(&text).map_err(|e| storage(&index_path, e))?;
            if index.schema_version != DEPOT_SCHEMA_VERSION {
                return Err(storage(&index_path, format!("unsupported schema_version {}", index.schema_version)));
            }
            index
        } else {
            IndexFile { schema_version: DEPOT_SCHEMA_VERSION, next_seq: 1, clock: 0 }
        };
        let mut depot = Depot {
            root,
            next_seq: index.next_seq.max(1),
            clock: index.clock,
            records: BTreeMap::new(),
            by_digest: HashMap::new(),
            by_formula: HashMap::new(),
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(&records_dir)
            .map_err(|e| storage(&records_dir, e))?
            .map(|entry| entry.map(|e| e.path()).map_err(|e| storage(&records_dir, e)))
            .collect::<Result<_>>()?;
        paths.retain(|p| p.extension().is_some_and(|x| x == "json"));
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|e| storage(&path, e))?;
            let record: DepotRecord = serde_json::from_str(&text).map_err(|e| storage(&path, e))?;
            if path.file_stem().and_then(|s| s.to_str()) != Some(record.id.as_str()) {
                return Err(storage(&path, "file name does not match record id"));
            }
            if digest(&record.structure) != record.digest {
                return Err(storage(&path, "stored digest does not match structure"));
            }
            depot.clock = depot.clock.max(record.updated);
            if let Some(seq) = sequence_of(&record.id) {
                depot.next_seq = depot.next_seq.max(seq + 1);
            }
            depot.index(record);
        }
        Ok(depot)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &DepotRecord> {
        self.records.values()
    }

    pub fn get(&self, id: &str) -> Option<&DepotRecord> {
        self.records.get(id)
    }

    fn index(&mut self, record: DepotRecord) {
        self.by_digest.insert(record.digest.clone(), record.id.clone());
        let formula = record.structure.composition().reduced_formula();
        self.by_formula.entry(formula).or_default().push(record.id.clone());
        self.records.insert(record.id.clone(), record);
    }

    fn write_record(&self, record: &DepotRecord) -> Result<()> {
        let path = self.root.join("records").join(format!("{}.json", record.id));
        let bytes = serde_json::to_vec_pretty(record)?;
        atomic_write(&path, &bytes)
    }

    fn write_index(&self) -> Result<()> {
        let index = IndexFile { schema_version: DEPOT_SCHEMA_VERSION, next_seq: self.next_seq, clock: self.clock };
        atomic_write(&self.root.join("index.json"), &serde_json::to_vec_pretty(&index)?)
    }

    fn fresh_id(&mut self) -> String {
        loop {
            let id = format!("mat_{:06}", self.next_seq);
            self.next_seq += 1;
            if !self.records.contains_key(&id) {
                return id;
            }
        }
    }

    /// Stores each record and returns its id. A structure whose digest is
    /// already present returns the existing id and leaves the store alone.
    pub fn ingest(&mut self, batch: Vec<NewRecord>) -> Result<Vec<String>> {
        let mut ids = Vec::with_capacity(batch.len());
        for item in batch {
            let d = digest(&item.structure);
            if let Some(existing) = self.by_digest.get(&d) {
                ids.push(existing.clone());
                continue;
            }
            let id = match item.id {
                Some(id) => {
                    if !valid_id(&id) {
                        return Err(Error::usage(format!("invalid record id {id:?}")));
                    }
                    if self.records.contains_key(&id) {
                        return Err(Error::usage(format!("record id {id} is already taken")));
                    }
                    id
                }
                None => self.fresh_id(),
            };
            self.clock += 1;
            let record = DepotRecord {
                id: id.clone(),
                digest: d,
                structure: item.structure,
                properties: item.properties,
                provenance: item.provenance,
                created: self.clock,
                updated: self.clock,
            };
            self.write_record(&record)?;
            self.index(record);
            ids.push(id);
        }
        self.write_index()?;
        Ok(ids)
    }

    /// Appends a property value to an existing record.
    pub fn add_property(&mut self, id: &str, value: PropertyValue) -> Result<()> {
        self.clock += 1;
        let clock = self.clock;
        let record = self.records.get_mut(id).ok_or_else(|| Error::usage(format!("no record {id}")))?;
        record.properties.push(value);
        record.updated = clock;
        let record = record.clone();
        self.write_record(&record)?;
        self.write_index()
    }

    /// Records matching `key`, ordered by id.
    pub fn search(&self, key: &SearchKey) -> Vec<&DepotRecord> {
        let mut ids: Vec<&String> = match key {
            SearchKey::Digest(d) => self.by_digest.get(d).into_iter().collect(),
            SearchKey::Composition(c) => self.by_formula.get(&c.reduced_formula()).into_iter().flatten().collect(),
        };
        ids.sort();
        ids.into_iter().filter_map(|id| self.records.get(id)).collect()
    }

    pub fn stats(&self) -> DepotStats {
        depot_stats(self.records.values().map(|r| &r.structure))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrystalSystem {
    Triclinic,
    Monoclinic,
    Orthorhombic,
    Tetragonal,
    Trigonal,
    Hexagonal,
    Cubic,
}

/// Classifies a cell from its lengths and angles alone. Lengths are
/// compared relative to their size and angles in degrees, both within `tol`.
pub fn crystal_system(lattice: &Lattice, tol: f64) -> CrystalSystem {
    let [a, b, c] = lattice.lengths();
    let [al, be, ga] = lattice.angles();
    let eq_len = |x: f64, y: f64| (x - y).abs() <= tol * x.max(y);
    let eq_ang = |x: f64, y: f64| (x - y).abs() <= tol;
    let right = [eq_ang(al, 90.0), eq_ang(be, 90.0), eq_ang(ga, 90.0)];
    let n_right = right.iter().filter(|&&r| r).count();
    let all_len = eq_len(a, b) && eq_len(b, c);
    if n_right == 3 {
        if all_len {
            CrystalSystem::Cubic
        } else if eq_len(a, b) || eq_len(b, c) || eq_len(a, c) {
            CrystalSystem::Tetragonal
        } else {
            CrystalSystem::Orthorhombic
        }
    } else if all_len && eq_ang(al, be) && eq_ang(be, ga) {
        CrystalSystem::Trigonal
    } else if n_right == 2 {
        // the odd angle sits between the two axes that may form a hexagonal plane
        let (x, y, odd) = if !right[2] {
            (a, b, ga)
        } else if !right[1] {
            (a, c, be)
        } else {
            (b, c, al)
        };
        if eq_len(x, y) && (eq_ang(odd, 120.0) || eq_ang(odd, 60.0)) {
            CrystalSystem::Hexagonal
        } else {
            CrystalSystem::Monoclinic
        }
    } else {
        CrystalSystem::Triclinic
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DepotStats {
    pub records: usize,
    /// Atoms per element symbol, summed over records.
    pub element_frequency: BTreeMap<String, usize>,
    /// Records per atom count.
    pub atom_counts: BTreeMap<usize, usize>,
    pub crystal_systems: BTreeMap<CrystalSystem, usize>,
}

impl DepotStats {
    pub fn system_fraction(&self, system: CrystalSystem) -> f64 {
        if self.records == 0 {
            return 0.0;
        }
        *self.crystal_systems.get(&system).unwrap_or(&0) as f64 / self.records as f64
    }
}

pub fn depot_stats<'a>(structures: impl Iterator<Item = &'a CrystalStructure>) -> DepotStats {
    let mut stats = DepotStats::default();
    for s in structures {
        stats.records += 1;
        for el in s.species() {
            *stats.element_frequency.entry(el.symbol().to_string()).or_default() += 1;
        }
        *stats.atom_counts.entry(s.num_atoms()).or_default() += 1;
        *stats.crystal_systems.entry(crystal_system(s.lattice(), CRYSTAL_SYSTEM_TOL)).or_default() += 1;
    }
    stats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub structure_id: String,
    pub value: PropertyValue,
}

/// Oracle-labelled samples waiting to be used for fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneBuffer {
    pending: Vec<BufferEntry>,
    flush_threshold: usize,
}

impl FineTuneBuffer {
    pub fn new(flush_threshold: usize) -> Result<Self> {
        if flush_threshold == 0 {
            return Err(Error::usage("flush threshold must be at least 1"));
        }
        Ok(FineTuneBuffer { pending: Vec::new(), flush_threshold })
    }

    pub fn flush_threshold(&self) -> usize {
        self.flush_threshold
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn pending(&self) -> &[BufferEntry] {
        &self.pending
    }

    /// Appends an oracle-sourced entry and returns true once the buffer has
    /// reached its flush threshold.
    pub fn push(&mut self, entry: BufferEntry) -> Result<bool> {
        if entry.value.source != ValueSource::Oracle {
            return Err(Error::usage("only oracle-sourced values may enter the fine-tune buffer"));
        }
        self.pending.push(entry);
        Ok(self.should_flush())
    }

    pub fn should_flush(&self) -> bool {
        self.pending.len() >= self.flush_threshold
    }

    pub fn flush(&mut self) -> Vec<BufferEntry> {
        std::mem::take(&mut self.pending)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{ElementId, PropertyKind};

    fn el(s: &str) -> ElementId {
        ElementId::from_symbol(s).unwrap()
    }

    fn fe2o3(shift: f64) -> CrystalStructure {
        CrystalStructure::new(
            Lattice::orthorhombic(5.0, 5.1, 5.2).unwrap(),
            vec![el("Fe"), el("Fe"), el("O"), el("O"), el("O")],
            vec![[0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [0.25 + shift, 0.0, 0.5], [0.75, 0.5, 0.0], [0.0, 0.25, 0.75]],
        )
        .unwrap()
    }

    fn oracle_value(v: f64) -> PropertyValue {
        PropertyValue::new(PropertyKind::FormationEnergy, v, ValueSource::Oracle).unwrap()
    }

    #[test]
    fn ingest_is_idempotent_and_persistent() {
        let dir = tempfile::tempdir().unwrap();
        let mut depot = Depot::open(dir.path()).unwrap();
        assert!(depot.ingest(vec![]).unwrap().is_empty());
        let a = depot.ingest(vec![NewRecord::new(fe2o3(0.0), Provenance::Corpus)]).unwrap();
        let b = depot.ingest(vec![NewRecord::new(fe2o3(0.0), Provenance::Oracle)]).unwrap();
        assert_eq!(a, vec!["mat_000001".to_string()]);
        assert_eq!(a, b);
        let named = depot.ingest(vec![NewRecord::new(fe2o3(0.1), Provenance::Corpus).with_id("mat_81324")]).unwrap();
        assert_eq!(named, vec!["mat_81324".to_string()]);
        depot.add_property("mat_000001", oracle_value(-1.5)).unwrap();
        drop(depot);

        let depot = Depot::open(dir.path()).unwrap();
        assert_eq!(depot.len(), 2);
        assert_eq!(depot.get("mat_000001").unwrap().properties.len(), 1);
        let hits = depot.search(&SearchKey::Composition("Fe4O6".parse().unwrap()));
        assert_eq!(hits.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), vec!["mat_000001", "mat_81324"]);
        assert!(depot.search(&SearchKey::Digest("00".into())).is_empty());
        // the next generated id continues past the highest stored one
        let mut depot = depot;
        let next = depot.ingest(vec![NewRecord::new(fe2o3(0.2), Provenance::Generated)]).unwrap();
        assert_eq!(next, vec!["mat_081325".to_string()]);
    }

    #[test]
    fn corrupt_record_is_a_storage_error() {
        let dir = tempfile::tempdir().unwrap();
        Depot::open(dir.path()).unwrap();
        fs::write(dir.path().join("records/mat_000009.json"), b"{not json").unwrap();
        assert!(matches!(Depot::open(dir.path()), Err(Error::Storage(_))));
    }

    #[test]
    fn buffer_signals_at_threshold() {
        let mut buf = FineTuneBuffer::new(5).unwrap();
        assert!(buf.flush().is_empty());
        let entry = |i: usize| BufferEntry { structure_id: format!("s{i}"), value: oracle_value(i as f64) };
        for i in 0..4 {
            assert!(!buf.push(entry(i)).unwrap());
        }
        assert!(buf.push(entry(4)).unwrap());
        assert_eq!(buf.flush().len(), 5);
        assert!(buf.is_empty());
        let surrogate = PropertyValue::new(PropertyKind::FormationEnergy, 0.0, ValueSource::Surrogate).unwrap();
        assert!(buf.push(BufferEntry { structure_id: "x".into(), value: surrogate }).is_err());
    }

    #[test]
    fn crystal_systems() {
        let p = |a, b, c, al, be, ga| crystal_system(&Lattice::from_parameters(a, b, c, al, be, ga).unwrap(), 1e-3);
        assert_eq!(p(4.0, 4.0, 4.0, 90.0, 90.0, 90.0), CrystalSystem::Cubic);
        assert_eq!(p(4.0, 4.0, 6.0, 90.0, 90.0, 90.0), CrystalSystem::Tetragonal);
        assert_eq!(p(4.0, 5.0, 6.0, 90.0, 90.0, 90.0), CrystalSystem::Orthorhombic);
        assert_eq!(p(3.0, 3.0, 5.0, 90.0, 90.0, 120.0), CrystalSystem::Hexagonal);
        assert_eq!(p(4.0, 4.0, 4.0, 75.0, 75.0, 75.0), CrystalSystem::Trigonal);
        assert_eq!(p(4.0, 5.0, 6.0, 90.0, 100.0, 90.0), CrystalSystem::Monoclinic);
        assert_eq!(p(4.0, 5.0, 6.0, 80.0, 100.0, 110.0), CrystalSystem::Triclinic);
    }
}
