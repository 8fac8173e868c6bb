use tandem_core::coupler::{
    build_coordinate_models, run_coordinate_pattern, CoordinateModels, CoordinateQuery, CoordinateSettings,
    CoordinateSetup, CoordinateTools, FineTuneMode, GeneratorSource, PatternRunReport, PatternSummary, RulePlanner,
    SimOracle, TraceEvent,
};
use tandem_core::depot::{Depot, Provenance};
use tandem_core::diffgen::{MemorizingGenerator, SizePolicy};
use tandem_core::matcore::Composition;
use tandem_core::oracle::OracleConfig;

fn models(query: &CoordinateQuery, seed: u64) -> CoordinateModels {
    let setup = CoordinateSetup { corpus_size: 60, ..CoordinateSetup::default() };
    build_coordinate_models(&query.composition, query.property.kind, &setup, &OracleConfig::default(), seed).unwrap()
}

fn run(
    query: &CoordinateQuery,
    settings: &CoordinateSettings,
    models: &CoordinateModels,
    seed: u64,
) -> (PatternRunReport, Depot, tempfile::TempDir) {
    let generator = MemorizingGenerator::new(models.corpus.clone(), 8, SizePolicy::Empirical).unwrap();
    let mut source = GeneratorSource { generator: &generator, seed };
    let mut oracle = SimOracle { config: OracleConfig::default(), relax: Default::default() };
    let tools = CoordinateTools {
        source: &mut source,
        scorer: &models.discriminator,
        model: models.model.clone(),
        oracle: &mut oracle,
    };
    let dir = tempfile::tempdir().unwrap();
    let mut depot = Depot::open(dir.path().join("depot")).unwrap();
    let (report, _) =
        run_coordinate_pattern(query, settings, seed, tools, &mut depot, &RulePlanner, models.calibration).unwrap();
    (report, depot, dir)
}

fn query() -> CoordinateQuery {
    let mut q = CoordinateQuery::new(Composition::parse("Fe2O3").unwrap());
    q.max_iterations = 20;
    q.buffer_flush_threshold = 2;
    q
}

#[test]
fn calibration_meets_error_bound_on_validation() {
    let q = query();
    let cal = models(&q, 4).calibration.unwrap();
    assert!(cal.accepted_mae <= 0.12, "{cal:?}");
    assert!(cal.tau > 0.0);
}

#[test]
fn model_backed_run_accounts_for_every_call() {
    let mut q = query();
    let m = models(&q, 4);
    q.tau_pred = m.calibration.unwrap().tau;
    let (report, depot, _dir) = run(&q, &CoordinateSettings::default(), &m, 4);
    let PatternSummary::Coordinate(summary) = &report.summary else { panic!("wrong summary") };
    let proposals = summary.iterations - summary.generation_failures - summary.duplicates;
    assert_eq!(report.ai_calls + report.oracle_calls, proposals);
    assert_eq!(report.buffered, report.oracle_calls);
    assert_eq!(report.fine_tunes, report.oracle_calls / q.buffer_flush_threshold);
    assert_eq!(depot.len(), report.oracle_calls);
    assert!(depot.records().all(|r| r.provenance == Provenance::Oracle));
    let fine_tune_events = report.trace.iter().filter(|e| e.event == TraceEvent::FineTune).count();
    assert_eq!(fine_tune_events, report.fine_tunes);
}

#[test]
fn model_backed_run_is_deterministic_across_fine_tune_modes() {
    let q = query();
    let m = models(&q, 8);
    let sync = CoordinateSettings::default();
    let asynchronous = CoordinateSettings { fine_tune_mode: FineTuneMode::Asynchronous, ..sync };
    let a = serde_json::to_string(&run(&q, &sync, &m, 8).0).unwrap();
    let b = serde_json::to_string(&run(&q, &sync, &m, 8).0).unwrap();
    assert_eq!(a, b);
    let c = serde_json::to_string(&run(&q, &asynchronous, &m, 8).0).unwrap();
    let d = serde_json::to_string(&run(&q, &asynchronous, &m, 8).0).unwrap();
    assert_eq!(c, d);
}
