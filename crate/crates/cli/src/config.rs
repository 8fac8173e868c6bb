//! Global configuration: one TOML (or JSON) file, environment overrides,
//! strict validation and a content digest.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tandem_core::coupler::{
    CoordinateQuery, CoordinateSettings, CoordinateSetup, DirectiveConfig, FineTuneMode, PropertyBound,
    SurrogatePatternConfig,
};
use tandem_core::diffgen::{DenoiserConfig, SizePolicy};
use tandem_core::oracle::OracleConfig;
use tandem_core::screen::{OxidationTable, ScreenConfig, DEFAULT_DEDUP_THRESHOLD, DEFAULT_SYMMETRY_TOL};
use tandem_core::Composition;

/// Prefix of environment variables that override config keys, e.g.
/// `TANDEM_COUPLER__DIRECTIVE__BATCH=32`.
pub const ENV_PREFIX: &str = "TANDEM_";

/// Invalid configuration or usage; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub seed: u64,
    pub workers: usize,
    pub oracle: OracleConfig,
    pub surrogate: SurrogatePatternConfig,
    pub diffgen: DiffgenSection,
    pub screen: ScreenSection,
    pub coupler: CouplerSection,
    pub depot: DepotSection,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            seed: 0,
            workers: 1,
            oracle: OracleConfig::default(),
            surrogate: SurrogatePatternConfig::default(),
            diffgen: DiffgenSection::default(),
            screen: ScreenSection::default(),
            coupler: CouplerSection::default(),
            depot: DepotSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    /// Replays entries of the toy training corpus.
    #[default]
    Memorizing,
    /// Samples a trained denoiser checkpoint.
    Diffusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffgenSection {
    pub generator: GeneratorKind,
    /// Denoiser checkpoint written by `train-denoiser`.
    pub checkpoint: Option<PathBuf>,
    pub policy: SizePolicy,
    /// Size of the toy corpus the denoiser and memorizing generator see.
    pub corpus_size: usize,
    pub denoiser: DenoiserConfig,
}

impl Default for DiffgenSection {
    fn default() -> Self {
        DiffgenSection {
            generator: GeneratorKind::Memorizing,
            checkpoint: None,
            policy: SizePolicy::Empirical,
            corpus_size: 200,
            denoiser: DenoiserConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenSection {
    pub symmetry_tol: f64,
    pub dedup_threshold: f64,
    /// JSON object of oxidation-state overrides, e.g. `{"Fe": [2, 3]}`.
    pub oxidation_states: Option<PathBuf>,
}

impl Default for ScreenSection {
    fn default() -> Self {
        ScreenSection {
            symmetry_tol: DEFAULT_SYMMETRY_TOL,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            oxidation_states: None,
        }
    }
}

impl ScreenSection {
    pub fn config(&self) -> ScreenConfig {
        ScreenConfig { symmetry_tol: self.symmetry_tol, dedup_threshold: self.dedup_threshold }
    }

    pub fn table(&self) -> tandem_core::Result<OxidationTable> {
        match &self.oxidation_states {
            Some(path) => OxidationTable::with_overrides(path),
            None => Ok(OxidationTable::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplerSection {
    pub surrogate_latency_units: f64,
    pub fine_tune_mode: FineTuneMode,
    pub flush_every_iterations: Option<usize>,
    /// HTTP endpoint returning a coordinate plan; the rule planner is used
    /// when absent or when the endpoint fails.
    pub planner_endpoint: Option<String>,
    pub planner_timeout_ms: u64,
    pub directive: DirectiveConfig,
    pub coordinate: CoordinateSection,
}

impl Default for CouplerSection {
    fn default() -> Self {
        CouplerSection {
            surrogate_latency_units: 1.0,
            fine_tune_mode: FineTuneMode::Synchronous,
            flush_every_iterations: None,
            planner_endpoint: None,
            planner_timeout_ms: 2000,
            directive: DirectiveConfig::default(),
            coordinate: CoordinateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinateSection {
    /// Target composition; required by `run coordinate`.
    pub composition: Option<Composition>,
    pub property: PropertyBound,
    pub max_iterations: usize,
    /// Used as given when `setup.error_bound` is absent; otherwise replaced
    /// by the calibrated threshold.
    pub tau_pred: f64,
    pub tau_gen: f64,
    pub buffer_flush_threshold: usize,
    pub setup: CoordinateSetup,
}

impl Default for CoordinateSection {
    fn default() -> Self {
        let q = CoordinateQuery::new(Composition::parse("Fe2O3").expect("valid formula"));
        CoordinateSection {
            composition: None,
            property: q.property,
            max_iterations: q.max_iterations,
            tau_pred: q.tau_pred,
            tau_gen: q.tau_gen,
            buffer_flush_threshold: q.buffer_flush_threshold,
            setup: CoordinateSetup::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepotSection {
    /// Persistent depot directory. Runs use a fresh temporary depot when
    /// absent, so repeated runs do not see each other's records.
    pub path: Option<PathBuf>,
}

impl GlobalConfig {
    pub fn query(&self) -> anyhow::Result<CoordinateQuery> {
        let c = &self.coupler.coordinate;
        let composition =
            c.composition.clone().ok_or_else(|| config_err("coupler.coordinate.composition is required"))?;
        let query = CoordinateQuery {
            composition,
            property: c.property,
            max_iterations: c.max_iterations,
            tau_pred: c.tau_pred,
            tau_gen: c.tau_gen,
            buffer_flush_threshold: c.buffer_flush_threshold,
        };
        query.validate().map_err(|e| config_err(format!("coupler.coordinate: {e}")))?;
        Ok(query)
    }

    pub fn coordinate_settings(&self) -> CoordinateSettings {
        CoordinateSettings {
            dedup_threshold: self.screen.dedup_threshold,
            symmetry_tol: self.screen.symmetry_tol,
            fine_tune_mode: self.coupler.fine_tune_mode,
            flush_every_iterations: self.coupler.flush_every_iterations,
            surrogate_latency_units: self.coupler.surrogate_latency_units,
            oracle_latency_units: self.oracle.latency_units_per_call,
        }
    }

    /// SHA-256 over the canonical JSON form of the effective config.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn validate(&self) -> anyhow::Result<()> {
        let section = |name: &str, r: tandem_core::Result<()>| r.map_err(|e| config_err(format!("{name}: {e}")));
        if self.workers == 0 {
            return Err(config_err("workers must be at least 1"));
        }
        section("oracle", self.oracle.validate())?;
        section("surrogate", self.surrogate.validate())?;
        section("diffgen.denoiser", self.diffgen.denoiser.validate())?;
        section("screen", self.screen.config().validate())?;
        section("coupler.directive", self.coupler.directive.validate())?;
        section("coupler.coordinate.setup", self.coupler.coordinate.setup.validate())?;
        if !(self.coupler.surrogate_latency_units > 0.0) {
            return Err(config_err("coupler.surrogate_latency_units must be positive"));
        }
        if self.coupler.flush_every_iterations == Some(0) {
            return Err(config_err("coupler.flush_every_iterations must be at least 1"));
        }
        if self.diffgen.corpus_size == 0 {
            return Err(config_err("diffgen.corpus_size must be at least 1"));
        }
        if self.diffgen.generator == GeneratorKind::Diffusion && self.diffgen.checkpoint.is_none() {
            return Err(config_err("diffgen.checkpoint is required by the diffusion generator"));
        }
        for (key, path) in [
            ("diffgen.checkpoint", &self.diffgen.checkpoint),
            ("screen.oxidation_states", &self.screen.oxidation_states),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(config_err(format!("{key}: {} does not exist", p.display())));
                }
            }
        }
        self.screen.table().map_err(|e| config_err(format!("screen.oxidation_states: {e}")))?;
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.diffgen.checkpoint, &mut self.screen.oxidation_states, &mut self.depot.path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Parses `text` as JSON when `path` ends in `.json`, TOML otherwise.
fn parse_tree(path: &Path, text: &str) -> anyhow::Result<Value> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| config_err(format!("{}: {e}", path.display())))
}

/// Applies `TANDEM_A__B=value` as `a.b = value`. Values are read as JSON
/// when they parse, as plain strings otherwise.
fn apply_env(tree: &mut Value, vars: &[(String, String)]) -> anyhow::Result<()> {
    for (name, raw) in vars {
        let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
        let path: Vec<String> = key.split("__").map(str::to_ascii_lowercase).collect();
        if path.iter().any(String::is_empty) {
            return Err(config_err(format!("malformed override variable {name}")));
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
        let (last, parents) = path.split_last().expect("split yields at least one part");
        let mut node = &mut *tree;
        for part in parents {
            node = node
                .as_object_mut()
                .ok_or_else(|| config_err(format!("{name}: `{part}` has a non-table parent")))?
                .entry(part.clone())
                .or_insert_with(|| Value::Object(Default::default()));
        }
        node.as_object_mut()
            .ok_or_else(|| config_err(format!("{name}: `{}` is not a table", parents.join("."))))?
            .insert(last.clone(), value);
    }
    Ok(())
}

/// Loads the effective config: file (if any), then `TANDEM_` variables,
/// then validation. Unknown keys are rejected with their dotted path.
pub fn load(path: Option<&Path>, vars: &[(String, String)]) -> anyhow::Result<GlobalConfig> {
    let mut tree = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            parse_tree(p, &text)?
        }
        None => Value::Object(Default::default()),
    };
    if !tree.is_object() {
        return Err(config_err("the config must be a table"));
    }
    apply_env(&mut tree, vars)?;
    let mut cfg: GlobalConfig = serde_path_to_error::deserialize(tree).map_err(|e| {
        let key = e.path().to_string();
        config_err(format!("at `{key}`: {}", e.into_inner()))
    })?;
    if let Some(p) = path {
        cfg.resolve_paths(p.parent().unwrap_or(Path::new(".")));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `TANDEM_` variables of the process environment in name order, leaving
/// out the ones that configure logging.
pub fn env_overrides() -> Vec<(String, String)> {
    let mut vars: Vec<(String, String)> =
        std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX) && k != "TANDEM_LOG").collect();
    vars.sort();
    vars
}
