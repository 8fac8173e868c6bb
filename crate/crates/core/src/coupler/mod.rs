//! Workflow patterns: surrogate, directive and coordinate runs with
//! confidence gating, oracle scheduling and cost accounting.

mod coordinate;
mod directive;
mod gate;
mod planner;
mod replay;
mod report;
mod schedule;
mod setup;
mod surrogate_pattern;
mod tools;

pub use coordinate::{
    run_coordinate_pattern, CandidateSource, CoordinateQuery, CoordinateSettings, CoordinateTools, FineTuneMode,
    MatchScorer, OracleTool, PropertyBound, PropertyModel,
};
pub use directive::{run_directive_pattern, DirectiveConfig};
pub use gate::{calibrate_tau, decide, Calibration, GateKind, Route, RouteDecision};
pub use planner::{validate_plan, EndpointPlanner, PlanStep, Planner, RulePlanner};
pub use replay::{
    run_replay, run_replay_with, ReplayMode, ReplayTrace, SeedRecord, StepOutcome, TraceStep, TRACE_SCHEMA_VERSION,
};
pub use report::{
    CoordinateSummary, DirectiveSummary, IterationScreen, Pattern, PatternRunReport, PatternSummary, RankedCandidate,
    SurrogateSummary, Survivor, Throughput, TraceEntry, TraceEvent, REPORT_SCHEMA_VERSION,
};
pub use schedule::{run_job, schedule, JobKind, JobOutput, JobResult, OracleJob, RelaxSettings, ScheduleOutcome};
pub use setup::{build_coordinate_models, displace, CoordinateModels, CoordinateSetup};
pub use surrogate_pattern::{run_surrogate_pattern, SurrogatePatternConfig};
pub use tools::{EnsembleModel, GeneratorSource, SimOracle};

/// Independent 64-bit seed for sub-stream `stream` of a run seeded with
/// `seed` (SplitMix64 finaliser over the pair).
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
