use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tandem_core::depot::{digest, Depot, NewRecord, Provenance, SearchKey};
use tandem_core::screen::{check_neutrality, dedup, rmsd, OxidationTable, ScreenConfig, Screener};
use tandem_core::surrogate::{featurize, GraphParams, ModelShape, SurrogateModel, KHOT_WIDTH};
use tandem_core::toy::{neutral_compositions, random_structure};
use tandem_core::{Composition, CrystalStructure, ElementId, Lattice};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn toy_structure(r: &mut ChaCha8Rng) -> CrystalStructure {
    let comps = neutral_compositions();
    let comp = comps.choose(r).unwrap();
    random_structure(r, comp).unwrap()
}

fn shuffled(s: &CrystalStructure, r: &mut ChaCha8Rng) -> CrystalStructure {
    let mut order: Vec<usize> = (0..s.num_atoms()).collect();
    order.shuffle(r);
    s.permuted(&order).unwrap()
}

/// Unit vector drawn uniformly from the sphere.
fn direction(r: &mut ChaCha8Rng) -> nalgebra::Vector3<f64> {
    loop {
        let v = nalgebra::Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Supercell doubled along the first lattice vector.
fn doubled(s: &CrystalStructure) -> CrystalStructure {
    let mut rows = s.lattice().rows();
    rows[0] = rows[0].map(|x| 2.0 * x);
    let mut species = Vec::new();
    let mut coords = Vec::new();
    for half in [0.0, 0.5] {
        for (el, f) in s.species().iter().zip(s.frac_coords()) {
            species.push(*el);
            coords.push([f[0] / 2.0 + half, f[1], f[2]]);
        }
    }
    CrystalStructure::new(Lattice::new(rows).unwrap(), species, coords).unwrap()
}

/// Exhaustive check over every assignment of one state per element.
fn brute_force_neutral(comp: &Composition, table: &OxidationTable) -> bool {
    fn go(parts: &[(i64, &[i32])], sum: i64) -> bool {
        match parts.split_first() {
            None => sum == 0,
            Some(((count, states), rest)) => states.iter().any(|&q| go(rest, sum + count * q as i64)),
        }
    }
    let parts: Vec<(i64, &[i32])> = comp.iter().map(|(el, c)| (c as i64, table.states(el).unwrap())).collect();
    go(&parts, 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rmsd_is_zero_on_itself_and_symmetric(seed: u64) {
        let mut r = rng(seed);
        let a = toy_structure(&mut r);
        let b = random_structure(&mut r, &a.composition()).unwrap();
        prop_assert!(rmsd(&a, &a).unwrap() < 1e-9);
        let (ab, ba) = (rmsd(&a, &b).unwrap(), rmsd(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() < 1e-12, "{ab} vs {ba}");
    }

    #[test]
    fn rmsd_ignores_lattice_translations_and_atom_order(seed: u64, shift in prop::array::uniform3(-3i32..=3)) {
        let mut r = rng(seed);
        let a = toy_structure(&mut r);
        let moved = shuffled(&a.translated(shift.map(f64::from)), &mut r);
        prop_assert!(rmsd(&a, &moved).unwrap() < 1e-9);
    }

    #[test]
    fn one_displaced_atom_gives_delta_over_root_n(seed: u64, delta in 0.005f64..0.1) {
        let mut r = rng(seed);
        let a = toy_structure(&mut r);
        let i = r.random_range(0..a.num_atoms());
        let df = a.lattice().to_fractional(&(direction(&mut r) * delta));
        let mut coords = a.frac_coords().to_vec();
        coords[i] = [coords[i][0] + df[0], coords[i][1] + df[1], coords[i][2] + df[2]];
        let b = a.with_frac_coords(coords).unwrap();
        let expected = delta / (a.num_atoms() as f64).sqrt();
        let got = rmsd(&a, &b).unwrap();
        prop_assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn neutrality_agrees_with_enumeration(
        picks in prop::collection::vec((1u8..=83, 1u32..=6), 1..=4),
    ) {
        let table = OxidationTable::default();
        let mut counts = std::collections::BTreeMap::new();
        for (z, c) in picks {
            let el = ElementId::from_atomic_number(z).unwrap();
            if table.states(el).is_some() {
                *counts.entry(el).or_insert(0) += c;
            }
        }
        prop_assume!(!counts.is_empty());
        let comp = Composition::new(counts).unwrap();
        prop_assert_eq!(check_neutrality(&comp, &table).unwrap(), brute_force_neutral(&comp, &table));
    }

    #[test]
    fn dedup_count_ignores_multiplicity(seed: u64, copies in prop::collection::vec(1usize..=4, 6)) {
        let mut r = rng(seed);
        let pool: Vec<CrystalStructure> = (0..6).map(|_| toy_structure(&mut r)).collect();
        let distinct: Vec<CrystalStructure> =
            dedup(&pool, 0.3).unwrap().into_iter().map(|i| pool[i].clone()).collect();
        let mut repeated = Vec::new();
        for (s, &n) in distinct.iter().zip(&copies) {
            for k in 0..n {
                repeated.push(shuffled(&s.translated([k as f64, 0.0, -(k as f64)]), &mut r));
            }
        }
        repeated.shuffle(&mut r);
        prop_assert_eq!(dedup(&repeated, 0.3).unwrap().len(), distinct.len());
    }

    #[test]
    fn screening_a_batch_again_never_raises_the_valid_rate(seed: u64) {
        let mut r = rng(seed);
        let batch: Vec<(String, CrystalStructure)> =
            (0..12).map(|i| (format!("s{i}"), toy_structure(&mut r))).collect();
        let mut screener = Screener::new(OxidationTable::default(), ScreenConfig::default()).unwrap();
        let first = screener.screen(&batch).unwrap().valid_rate;
        let second = screener.screen(&batch).unwrap().valid_rate;
        prop_assert!(second <= first);
    }

    #[test]
    fn attention_is_normalised_and_predictions_ignore_atom_order(seed: u64) {
        let mut r = rng(seed);
        let s = toy_structure(&mut r);
        let shape = ModelShape { h: KHOT_WIDTH, m: 8, graph: GraphParams::default() };
        let model = SurrogateModel::init(shape, seed, 0.3, 1.7);
        let graph = featurize(&s, shape.graph).unwrap();
        let att = model.attention(&graph).unwrap();
        for i in 0..graph.num_nodes() {
            let total: f64 = att[graph.neighbours(i)].iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12, "node {i}: {total}");
        }
        let p = model.predict(&graph).unwrap();
        let q = model.predict_structure(&shuffled(&s, &mut r)).unwrap();
        prop_assert!((p - q).abs() < 1e-10, "{p} vs {q}");
    }

    #[test]
    fn depot_finds_records_by_digest_and_reduced_formula(seed: u64) {
        let mut r = rng(seed);
        let s = toy_structure(&mut r);
        let dir = tempfile::tempdir().unwrap();
        let mut depot = Depot::open(dir.path()).unwrap();
        let id = depot.ingest(vec![NewRecord::new(s.clone(), Provenance::Generated)]).unwrap().remove(0);

        let by_digest = depot.search(&SearchKey::Digest(digest(&shuffled(&s, &mut r))));
        prop_assert_eq!(by_digest.len(), 1);
        prop_assert_eq!(&by_digest[0].structure, &s);

        let big = doubled(&s);
        let hits = depot.search(&SearchKey::Composition(big.composition()));
        prop_assert!(hits.iter().any(|rec| rec.id == id));

        let reopened = Depot::open(dir.path()).unwrap();
        prop_assert_eq!(reopened.get(&id).map(|rec| &rec.structure), Some(&s));
    }
}
