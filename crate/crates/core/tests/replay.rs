use std::path::PathBuf;

use tandem_core::coupler::{run_replay, run_replay_with, PatternSummary, ReplayMode, ReplayTrace, Route, TraceEvent};
use tandem_core::depot::Depot;
use tandem_core::Error;

fn fixture() -> ReplayTrace {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/fe2o3_trace.json");
    ReplayTrace::load(&path).unwrap()
}

#[test]
fn fe2o3_counters() {
    let dir = tempfile::tempdir().unwrap();
    let mut depot = Depot::open(dir.path()).unwrap();
    let report = run_replay(&fixture(), ReplayMode::Strict, &mut depot).unwrap();
    assert_eq!((report.ai_calls, report.oracle_calls), (9, 5));
    assert_eq!((report.buffered, report.fine_tunes), (5, 1));
    let PatternSummary::Coordinate(summary) = &report.summary else { panic!("wrong summary") };
    assert_eq!(summary.iterations, 50);
    assert_eq!(summary.unique_survivors, 14);
    assert_eq!(summary.depot_hits, vec!["mat_81324", "mat_88226"]);
    assert_eq!((summary.duplicates, summary.generation_failures), (30, 6));
    // avoided work: nine oracle calls at 1470 units each
    assert_eq!(summary.avoided_cost_units, 9.0 * 1470.0);
    assert_eq!(report.total_cost_units, 5.0 * 1470.0 + 9.0);
    assert_eq!(report.speedup, report.cost_if_all_oracle / report.total_cost_units);
    // hits come before any generation
    assert!(report.trace[..2].iter().all(|e| e.event == TraceEvent::DepotHit));
    // conservation: every property value in the trace is one AI or oracle call
    let valued = report.trace.iter().filter(|e| matches!(e.event, TraceEvent::AcceptedAi | TraceEvent::Oracle)).count();
    assert_eq!(valued, report.ai_calls + report.oracle_calls);
    // oracle results were stored
    assert_eq!(depot.len(), 2 + 5);
}

#[test]
fn strict_mode_detects_changed_thresholds() {
    let trace = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut depot = Depot::open(dir.path()).unwrap();
    let mut query = trace.query.clone();
    query.tau_gen = 0.5;
    let err = run_replay_with(&trace, &query, ReplayMode::Strict, &mut depot).unwrap_err();
    assert!(matches!(err, Error::ReplayMismatch { .. }));
}

#[test]
fn infinite_tau_pred_never_falls_back_on_prediction() {
    let trace = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut depot = Depot::open(dir.path()).unwrap();
    let mut query = trace.query.clone();
    query.tau_pred = f64::INFINITY;
    let report = run_replay_with(&trace, &query, ReplayMode::Sweep, &mut depot).unwrap();
    let prediction_fallbacks =
        report.trace.iter().filter(|e| e.prediction.is_some_and(|d| d.route == Route::FallbackOracle)).count();
    assert_eq!(prediction_fallbacks, 0);
}

fn sweep(tau_pred: f64, tau_gen: f64) -> tandem_core::coupler::PatternRunReport {
    let trace = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut depot = Depot::open(dir.path()).unwrap();
    let mut query = trace.query.clone();
    query.tau_pred = tau_pred;
    query.tau_gen = tau_gen;
    run_replay_with(&trace, &query, ReplayMode::Sweep, &mut depot).unwrap()
}

fn ties_go_to_oracle(report: &tandem_core::coupler::PatternRunReport) -> bool {
    report
        .trace
        .iter()
        .flat_map(|e| [e.generation, e.prediction])
        .flatten()
        .filter(|d| d.confidence == d.threshold)
        .all(|d| d.route == Route::FallbackOracle)
}

// grid points include every recorded variance and match probability so that
// each one is hit exactly at least once
const TAU_PRED_GRID: [f64; 10] = [1e-4, 0.001, 0.003, 0.006, 0.011, 0.0144, 0.031, 0.05, 0.2, f64::INFINITY];
const TAU_GEN_GRID: [f64; 8] = [0.3, 0.4, 0.62, 0.9, 0.93, 0.95, 0.97, 0.99];

#[test]
fn oracle_calls_fall_as_tau_pred_rises() {
    let calls: Vec<usize> = TAU_PRED_GRID
        .iter()
        .map(|&t| {
            let report = sweep(t, 0.9);
            assert!(ties_go_to_oracle(&report));
            assert_eq!(report.ai_calls + report.oracle_calls, 14);
            report.oracle_calls
        })
        .collect();
    assert!(calls.windows(2).all(|w| w[1] <= w[0]), "{calls:?}");
    assert!(calls[0] > calls[calls.len() - 1]);
}

#[test]
fn oracle_calls_rise_with_tau_gen() {
    let calls: Vec<usize> = TAU_GEN_GRID
        .iter()
        .map(|&t| {
            let report = sweep(0.0144, t);
            assert!(ties_go_to_oracle(&report));
            report.oracle_calls
        })
        .collect();
    assert!(calls.windows(2).all(|w| w[1] >= w[0]), "{calls:?}");
}
