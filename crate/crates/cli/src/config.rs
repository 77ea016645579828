use std::path::Path;

use anyhow::{bail, Context, Result};
use kickopt_core::imitation::{RetSchedule, RewardWeights};
use kickopt_core::solver::SolverOptions;
use kickopt_core::transcription::ProblemConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Prefix of environment variables that override config keys. Nested keys
/// are joined with `__`, e.g. `KICKOPT_SOLVER__MAX_OUTER=20`.
pub const ENV_PREFIX: &str = "KICKOPT_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub problem: ProblemConfig,
    pub solver: SolverOptions,
    pub rewards: RewardWeights,
    pub ret: RetSchedule,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            problem: ProblemConfig::default(),
            solver: SolverOptions::default(),
            rewards: RewardWeights::default(),
            ret: RetSchedule::experiment(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the config file, then environment overrides.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let base = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                serde_path_to_error::deserialize::<_, RunConfig>(de)
                    .with_context(|| format!("invalid config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        let mut doc = serde_json::to_value(&base)?;
        let mut overrides: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        overrides.sort();
        for (key, raw) in overrides {
            let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
            set_path(&mut doc, &path, parse_value(&raw)).with_context(|| format!("bad override {key}"))?;
        }
        serde_path_to_error::deserialize::<_, RunConfig>(doc).context("invalid config after environment overrides")
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate().context("solver options")?;
        self.rewards.validate().context("reward weights")?;
        self.ret.validate().context("ret schedule")?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("plain data");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// JSON if it parses, a string otherwise.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(doc: &mut Value, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty key");
    let mut node = doc;
    for key in parents {
        node = node
            .get_mut(key)
            .filter(|v| v.is_object())
            .with_context(|| format!("no config section `{key}`"))?;
    }
    match node.as_object_mut() {
        Some(map) if map.contains_key(last) => {
            map.insert(last.clone(), value);
            Ok(())
        }
        _ => bail!("no config key `{}`", path.join(".")),
    }
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
