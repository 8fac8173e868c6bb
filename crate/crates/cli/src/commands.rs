use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tandem_core::checkpoint;
use tandem_core::coupler::{
    build_coordinate_models, run_coordinate_pattern, run_directive_pattern, run_replay, run_surrogate_pattern,
    sub_seed, CoordinateTools, EndpointPlanner, GeneratorSource, Planner, ReplayMode, ReplayTrace, RulePlanner,
    SimOracle,
};
use tandem_core::depot::{Depot, NewRecord, Provenance, SearchKey};
use tandem_core::diffgen::{
    train_denoiser, DenoiserModel, DiffusionGenerator, Generator, MemorizingGenerator, SampleMode,
};
use tandem_core::matcore::io::{read_poscar, read_structure_json};
use tandem_core::screen::Screener;
use tandem_core::toy::random_centrosymmetric_corpus;
use tandem_core::{Composition, CrystalStructure};

use crate::config::{self, ConfigError, GeneratorKind, GlobalConfig};
use crate::{Cli, Command, DepotAction, RunPattern};

const SURROGATE_KIND: &str = "surrogate";
const DENOISER_KIND: &str = "denoiser";

// sub-stream ids of the global seed
const CORPUS_STREAM: u64 = 201;
const DENOISER_STREAM: u64 = 202;
const SOURCE_STREAM: u64 = 301;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => std::io::stdout().write_all(text.as_bytes()).context("writing to stdout"),
    }
}

fn required_out(out: Option<&Path>) -> anyhow::Result<&Path> {
    out.ok_or_else(|| usage("--out is required for this command"))
}

/// The persistent depot when one is configured, otherwise a fresh
/// temporary one that lives as long as the returned guard.
fn open_depot(cfg: &GlobalConfig) -> anyhow::Result<(Depot, Option<tempfile::TempDir>)> {
    match &cfg.depot.path {
        Some(path) => Ok((Depot::open(path)?, None)),
        None => {
            let dir = tempfile::tempdir().context("creating a temporary depot")?;
            Ok((Depot::open(dir.path())?, Some(dir)))
        }
    }
}

fn toy_corpus(cfg: &GlobalConfig, seed: u64) -> anyhow::Result<Vec<CrystalStructure>> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, CORPUS_STREAM));
    Ok(random_centrosymmetric_corpus(&mut rng, cfg.diffgen.corpus_size, cfg.diffgen.denoiser.max_n)?)
}

/// The configured generator; a memorizing one replays `corpus`.
fn generator(cfg: &GlobalConfig, corpus: Vec<CrystalStructure>) -> anyhow::Result<Box<dyn Generator>> {
    Ok(match cfg.diffgen.generator {
        GeneratorKind::Memorizing => {
            Box::new(MemorizingGenerator::new(corpus, cfg.diffgen.denoiser.max_n, cfg.diffgen.policy)?)
        }
        GeneratorKind::Diffusion => {
            let path = cfg.diffgen.checkpoint.as_deref().ok_or_else(|| usage("diffgen.checkpoint is not set"))?;
            let model: DenoiserModel = checkpoint::load(path, DENOISER_KIND)?;
            Box::new(DiffusionGenerator { model, policy: cfg.diffgen.policy })
        }
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StructureInput {
    One(CrystalStructure),
    Many(Vec<CrystalStructure>),
}

fn read_structures(path: &Path) -> anyhow::Result<Vec<CrystalStructure>> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if name.contains("POSCAR") || name.ends_with(".vasp") {
        return Ok(vec![read_poscar(path)?]);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str::<StructureInput>(&text) {
        Ok(StructureInput::One(s)) => Ok(vec![s]),
        Ok(StructureInput::Many(v)) => Ok(v),
        // re-read through the single-structure reader for its error message
        Err(_) => Ok(vec![read_structure_json(path)?]),
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    let mut cfg = config::load(g.config.as_deref(), &config::env_overrides())?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = g.workers {
        if workers == 0 {
            return Err(usage("--workers must be at least 1"));
        }
        cfg.workers = workers;
    }
    if let Some(ms) = g.real_latency {
        if !(ms >= 0.0) {
            return Err(usage("--real-latency must be non-negative"));
        }
        cfg.oracle.real_latency_ms_per_unit = ms;
    }
    eprintln!("config {} seed {}", cfg.digest(), cfg.seed);
    let out = g.out.as_deref();

    match &cli.command {
        Command::TrainSurrogate => {
            let path = required_out(out)?;
            let (report, model) = run_surrogate_pattern(&cfg.surrogate, &cfg.oracle, cfg.seed, cfg.workers)?;
            checkpoint::save(path, SURROGATE_KIND, &model)?;
            write_json(None, &report.summary)
        }
        Command::TrainDenoiser => {
            let path = required_out(out)?;
            let corpus = toy_corpus(&cfg, cfg.seed)?;
            let denoiser_cfg = tandem_core::diffgen::DenoiserConfig {
                seed: sub_seed(cfg.seed, DENOISER_STREAM),
                ..cfg.diffgen.denoiser.clone()
            };
            let trained = train_denoiser(&corpus, &denoiser_cfg)?;
            checkpoint::save(path, DENOISER_KIND, &trained.model)?;
            write_json(None, &trained.model.meta)
        }
        Command::Generate { count, composition, batch_index } => {
            let mode = match composition {
                Some(f) => SampleMode::Csp(Composition::parse(f).map_err(|e| usage(format!("--composition: {e}")))?),
                None => SampleMode::AbInitio,
            };
            let count = count.unwrap_or(cfg.coupler.directive.batch);
            let generator = generator(&cfg, toy_corpus(&cfg, cfg.seed)?)?;
            let batch = generator.generate(&mode, count, cfg.seed, *batch_index);
            if batch.failures() > 0 {
                eprintln!("{} of {count} samples failed to decode", batch.failures());
            }
            write_json(out, &batch.structures())
        }
        Command::Screen { input } => {
            let structures = read_structures(input)?;
            let batch: Vec<(String, CrystalStructure)> =
                structures.into_iter().enumerate().map(|(i, s)| (format!("s_{i:04}"), s)).collect();
            let mut screener = Screener::new(cfg.screen.table()?, cfg.screen.config())?;
            write_json(out, &screener.screen(&batch)?)
        }
        Command::Depot { action } => depot_command(&cfg, action, out),
        Command::Run { pattern } => run_pattern(&cfg, *pattern, out),
        Command::Replay { trace, sweep } => {
            let trace = ReplayTrace::load(trace)?;
            let (mut depot, _guard) = open_depot(&cfg)?;
            let mode = if *sweep { ReplayMode::Sweep } else { ReplayMode::Strict };
            write_json(out, &run_replay(&trace, mode, &mut depot)?)
        }
    }
}

fn depot_command(cfg: &GlobalConfig, action: &DepotAction, out: Option<&Path>) -> anyhow::Result<()> {
    let path: &PathBuf = cfg.depot.path.as_ref().ok_or_else(|| usage("depot.path must be set for depot commands"))?;
    let mut depot = Depot::open(path)?;
    match action {
        DepotAction::Ingest { files } => {
            let mut records = Vec::new();
            for file in files {
                records.extend(read_structures(file)?.into_iter().map(|s| NewRecord::new(s, Provenance::Corpus)));
            }
            write_json(out, &depot.ingest(records)?)
        }
        DepotAction::Search { digest, formula } => {
            let key = match (digest, formula) {
                (Some(d), _) => SearchKey::Digest(d.clone()),
                (None, Some(f)) => {
                    SearchKey::Composition(Composition::parse(f).map_err(|e| usage(format!("--formula: {e}")))?)
                }
                (None, None) => bail!(usage("give --digest or --formula")),
            };
            write_json(out, &depot.search(&key))
        }
        DepotAction::Stats => write_json(out, &depot.stats()),
    }
}

fn run_pattern(cfg: &GlobalConfig, pattern: RunPattern, out: Option<&Path>) -> anyhow::Result<()> {
    let report = match pattern {
        RunPattern::Surrogate => run_surrogate_pattern(&cfg.surrogate, &cfg.oracle, cfg.seed, cfg.workers)?.0,
        RunPattern::Directive => {
            let generator = generator(cfg, toy_corpus(cfg, cfg.seed)?)?;
            let screener = Screener::new(cfg.screen.table()?, cfg.screen.config())?;
            let mut depot = match &cfg.depot.path {
                Some(path) => Some(Depot::open(path)?),
                None => None,
            };
            run_directive_pattern(
                &cfg.coupler.directive,
                generator.as_ref(),
                &cfg.oracle,
                screener,
                depot.as_mut(),
                cfg.seed,
                cfg.workers,
            )?
        }
        RunPattern::Coordinate => {
            let mut query = cfg.query()?;
            let setup = &cfg.coupler.coordinate.setup;
            let models =
                build_coordinate_models(&query.composition, query.property.kind, setup, &cfg.oracle, cfg.seed)?;
            if let Some(cal) = &models.calibration {
                query.tau_pred = cal.tau;
            }
            let generator = generator(cfg, models.corpus.clone())?;
            let mut source = GeneratorSource { generator: generator.as_ref(), seed: sub_seed(cfg.seed, SOURCE_STREAM) };
            let mut oracle = SimOracle { config: cfg.oracle.clone(), relax: cfg.coupler.directive.relax };
            let planner: Box<dyn Planner> = match &cfg.coupler.planner_endpoint {
                Some(url) => Box::new(EndpointPlanner {
                    url: url.clone(),
                    timeout: Duration::from_millis(cfg.coupler.planner_timeout_ms),
                }),
                None => Box::new(RulePlanner),
            };
            let (mut depot, _guard) = open_depot(cfg)?;
            let tools = CoordinateTools {
                source: &mut source,
                scorer: &models.discriminator,
                model: models.model.clone(),
                oracle: &mut oracle,
            };
            run_coordinate_pattern(
                &query,
                &cfg.coordinate_settings(),
                cfg.seed,
                tools,
                &mut depot,
                planner.as_ref(),
                models.calibration,
            )?
            .0
        }
    };
    write_json(out, &report)
}
