//! Run configuration: a JSON file of [`TrainConfig`] fields, then the
//! `ADVAUG_SEED` environment variable, then command-line flags, each
//! overriding the last.

use std::path::Path;

use advaug::trainer::TrainConfig;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "ADVAUG_SEED";

pub fn read_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(path) = path else {
        return Ok(TrainConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Seed from the environment, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Usage(format!("{SEED_ENV}: {e}"))),
    }
}

/// Loads the file and applies the environment and flag seeds.
pub fn effective_config(path: Option<&Path>, flag_seed: Option<u64>) -> Result<TrainConfig> {
    let env = env_seed()?;
    let mut cfg = read_config(path)?;
    if let Some(s) = flag_seed.or(env) {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// SHA-256 of the configuration's JSON form.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}
