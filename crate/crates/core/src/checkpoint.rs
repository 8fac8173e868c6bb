//! Versioned JSON checkpoint container shared by trained models.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    kind: String,
    payload: T,
}

pub fn save<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    let env = Envelope { schema_version: CHECKPOINT_SCHEMA_VERSION, kind: kind.to_string(), payload };
    fs::write(path, serde_json::to_string(&env)? + "\n")?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let parse = |detail: String| Error::Parse { path: path.to_path_buf(), detail };
    let env: Envelope<serde_json::Value> = serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?;
    if env.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(parse(format!("unsupported checkpoint schema version {}", env.schema_version)));
    }
    if env.kind != kind {
        return Err(parse(format!("expected a {kind} checkpoint, found {}", env.kind)));
    }
    serde_json::from_value(env.payload).map_err(|e| parse(e.to_string()))
}
