//! Run configuration: a JSON document holding every `AwrConfig` field plus a
//! few keys that only matter to the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use awr::algorithm::AwrConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::Usage;

/// Keys read by the command line itself rather than the trainer.
pub const RUN_KEYS: [&str; 4] = ["env", "out_dir", "checkpoint_every", "log_level"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunKeys {
    #[serde(default)]
    pub env: Option<String>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Write numbered checkpoints every this many iterations; 0 keeps only the latest.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default = "default_log_level")]
    pub log_level: String,
}

fn default_checkpoint_every() -> usize {
    10
}

fn default_log_level() -> String {
    "info".into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run: RunKeys,
    pub awr: AwrConfig,
}

impl RunConfig {
    /// Reads `path`, then applies `AWR_SEED` (if `env_seed` is set) and the
    /// `--set` overrides, in that order.
    pub fn load(path: &Path, env_seed: Option<&str>, overrides: &[String]) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Usage::from)?;
        let doc: Value = serde_json::from_str(&text)
            .map_err(|e| Usage::msg(format!("config {}: {e}", path.display())))?;
        Self::from_value(doc, env_seed, overrides)
    }

    pub fn from_value(mut doc: Value, env_seed: Option<&str>, overrides: &[String]) -> anyhow::Result<Self> {
        if !doc.is_object() {
            return Err(Usage::msg("config must be a JSON object").into());
        }
        if let Some(seed) = env_seed {
            let seed: u64 = seed
                .trim()
                .parse()
                .map_err(|_| Usage::msg(format!("AWR_SEED must be an unsigned integer, got {seed:?}")))?;
            doc["seed"] = seed.into();
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let Value::Object(mut fields) = doc else { unreachable!() };
        let mut run = Map::new();
        for key in RUN_KEYS {
            if let Some(v) = fields.remove(key) {
                run.insert(key.into(), v);
            }
        }
        let run: RunKeys = serde_json::from_value(Value::Object(run)).map_err(|e| Usage::msg(format!("config: {e}")))?;
        let awr: AwrConfig =
            serde_json::from_value(Value::Object(fields)).map_err(|e| Usage::msg(format!("config: {e}")))?;
        awr.validate().map_err(|e| Usage::msg(e.to_string()))?;
        if run.log_level.parse::<log::LevelFilter>().is_err() {
            return Err(Usage::msg(format!("config: unknown log_level {:?}", run.log_level)).into());
        }
        Ok(Self { run, awr })
    }

    /// Every setting, defaults included, as one JSON object.
    pub fn echo(&self) -> Value {
        let mut doc = serde_json::to_value(&self.awr).expect("config serializes");
        let run = serde_json::to_value(&self.run).expect("config serializes");
        let (Value::Object(doc_fields), Value::Object(run_fields)) = (&mut doc, run) else {
            unreachable!("both are structs")
        };
        for (k, v) in run_fields {
            doc_fields.insert(k, v);
        }
        doc
    }

    pub fn env_name(&self) -> anyhow::Result<&str> {
        match &self.run.env {
            Some(e) => Ok(e),
            None => Err(Usage::msg("config: missing field `env`").into()),
        }
    }

    pub fn out_dir(&self) -> anyhow::Result<PathBuf> {
        match &self.run.out_dir {
            Some(d) => Ok(d.clone()),
            None => Ok(PathBuf::from("runs").join(format!("{}-seed{}", self.env_name()?, self.awr.seed))),
        }
    }
}

/// Applies one `dotted.path=value` override. The value is parsed as JSON when
/// it can be, and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, text: &str) -> anyhow::Result<()> {
    let Some((path, raw)) = text.split_once('=') else {
        bail!(Usage::msg(format!("override {text:?} is not key=value")));
    };
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!(Usage::msg(format!("override {text:?} has an empty key")));
    }
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Usage::msg(format!("override {path}: {key} is inside a non-object")))?;
        node = obj.entry(*key).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Usage::msg(format!("override {path}: parent is not an object")))?;
    obj.insert(keys[keys.len() - 1].to_owned(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_fill_missing_keys() {
        let c = RunConfig::from_value(json!({"env": "chain5"}), None, &[]).unwrap();
        assert_eq!(c.awr, AwrConfig::default());
        assert_eq!(c.run.checkpoint_every, 10);
    }

    #[test]
    fn precedence_is_set_then_env_then_file() {
        let doc = json!({"env": "chain5", "seed": 1});
        let file = RunConfig::from_value(doc.clone(), None, &[]).unwrap();
        let env = RunConfig::from_value(doc.clone(), Some("2"), &[]).unwrap();
        let set = RunConfig::from_value(doc, Some("2"), &["seed=3".into()]).unwrap();
        assert_eq!((file.awr.seed, env.awr.seed, set.awr.seed), (1, 2, 3));
    }

    #[test]
    fn dotted_overrides_reach_nested_fields() {
        let c = RunConfig::from_value(
            json!({"env": "chain5"}),
            None,
            &["returns.beta=0.5".into(), "mode=rwr".into()],
        )
        .unwrap();
        assert_eq!(c.awr.returns.beta, 0.5);
        assert_eq!(c.awr.mode, awr::algorithm::Mode::Rwr);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_value(json!({"env": "chain5", "learning_rate": 1}), None, &[]).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        let err = RunConfig::from_value(json!({"env": "chain5"}), None, &["returns.lamda=0.9".into()]).unwrap_err();
        assert!(err.to_string().contains("lamda"), "{err}");
    }

    #[test]
    fn echo_reparses_to_the_same_config() {
        let c = RunConfig::from_value(json!({"env": "gridworld", "max_iters": 3}), None, &[]).unwrap();
        let back = RunConfig::from_value(c.echo(), None, &[]).unwrap();
        assert_eq!(back, c);
    }
}
