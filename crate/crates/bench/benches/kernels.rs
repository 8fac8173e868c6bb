use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use tandem_core::diffgen::{cosine_schedule, DEFAULT_COSINE_OFFSET};
use tandem_core::oracle::{formation_energy_value, OracleConfig};
use tandem_core::screen::{rmsd, OxidationTable, ScreenConfig, Screener};
use tandem_core::surrogate::{featurize, GraphParams, ModelShape, SurrogateModel, KHOT_WIDTH};
use tandem_core::toy::{random_corpus, random_structure};
use tandem_core::Composition;

fn kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let comp = Composition::parse("MgAl2O4").unwrap();
    let a = random_structure(&mut rng, &comp).unwrap();
    let b = random_structure(&mut rng, &comp).unwrap();
    let oracle = OracleConfig::default();
    let shape = ModelShape { h: KHOT_WIDTH, m: 16, graph: GraphParams::default() };
    let model = SurrogateModel::init(shape, 0, 0.0, 1.0);
    let graph = featurize(&a, shape.graph).unwrap();
    let batch: Vec<_> =
        random_corpus(&mut rng, 100, 8).unwrap().into_iter().enumerate().map(|(i, s)| (format!("s{i}"), s)).collect();

    c.bench_function("rmsd MgAl2O4", |bench| bench.iter(|| rmsd(black_box(&a), black_box(&b)).unwrap()));
    c.bench_function("oracle formation energy", |bench| {
        bench.iter(|| formation_energy_value(black_box(&a), &oracle).unwrap())
    });
    c.bench_function("featurize", |bench| bench.iter(|| featurize(black_box(&a), shape.graph).unwrap()));
    c.bench_function("surrogate predict", |bench| bench.iter(|| model.predict(black_box(&graph)).unwrap()));
    c.bench_function("cosine schedule T=1000", |bench| {
        bench.iter(|| cosine_schedule(black_box(1000), DEFAULT_COSINE_OFFSET).unwrap())
    });
    c.bench_function("screen 100 structures", |bench| {
        bench.iter(|| {
            let mut screener = Screener::new(OxidationTable::default(), ScreenConfig::default()).unwrap();
            screener.screen(black_box(&batch)).unwrap()
        })
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
