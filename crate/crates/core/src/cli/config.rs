//! Run configuration: a JSON object with flat `section.field` keys, merged
//! with command-line overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{AugmentConfig, Partition};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{GradCheckOptions, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub root: Option<PathBuf>,
    /// Split manifest; defaults to `split.csv` in the output directory.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub partition: Partition,
    pub exclude_empty_classes: bool,
    /// Defaults to `checkpoint_best.fcn` in the output directory.
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            partition: Partition::Test,
            exclude_empty_classes: false,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSection {
    pub samples: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Probe resolution; the layer plan is taken from `model.*`.
    pub input_size: usize,
    pub batch: usize,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        let o = GradCheckOptions::default();
        GradCheckSection {
            samples: o.samples,
            epsilon: o.epsilon,
            tolerance: o.tolerance,
            input_size: 16,
            batch: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub out_dir: PathBuf,
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            out_dir: PathBuf::from("fourcropnet-out"),
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub data: DataSection,
    pub eval: EvalSection,
    pub gradcheck: GradCheckSection,
    pub run: RunSection,
}

/// Flat key/value pairs as given by the user, before defaults are applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatConfig(pub BTreeMap<String, Value>);

impl FlatConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let Value::Object(map) = value else {
            return Err(Error::Config(format!("{}: expected a JSON object of dotted keys", path.display())));
        };
        Ok(FlatConfig(map.into_iter().collect()))
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.0.insert(key.to_string(), value);
    }

    /// Parses `key=value`; the value is read as JSON, falling back to a string.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        self.set(key.trim(), value);
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    /// Applies defaults and validates every section.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut sections: BTreeMap<&str, Map<String, Value>> = BTreeMap::new();
        for (key, value) in &self.0 {
            let (section, field) = key
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("config key `{key}` must have the form section.field")))?;
            sections.entry(section).or_default().insert(field.to_string(), value.clone());
        }
        fn section<T: DeserializeOwned + Default>(
            sections: &mut BTreeMap<&str, Map<String, Value>>,
            name: &str,
        ) -> Result<T> {
            match sections.remove(name) {
                None => Ok(T::default()),
                Some(map) => serde_json::from_value(Value::Object(map))
                    .map_err(|e| Error::Config(format!("section `{name}`: {e}"))),
            }
        }
        let cfg = RunConfig {
            model: section(&mut sections, "model")?,
            train: section(&mut sections, "train")?,
            augment: section(&mut sections, "augment")?,
            data: section(&mut sections, "data")?,
            eval: section(&mut sections, "eval")?,
            gradcheck: section(&mut sections, "gradcheck")?,
            run: section(&mut sections, "run")?,
        };
        if let Some(unknown) = sections.keys().next() {
            return Err(Error::Config(format!(
                "unknown config section `{unknown}` (model, train, augment, data, eval, gradcheck, run)"
            )));
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        cfg.augment.validate()?;
        if cfg.run.threads == 0 {
            return Err(Error::Config("run.threads must be >= 1".into()));
        }
        Ok(cfg)
    }
}

impl RunConfig {
    /// Every setting as flat `section.field` keys, sorted.
    pub fn to_flat_json(&self) -> Result<String> {
        let Value::Object(nested) = serde_json::to_value(self)? else {
            unreachable!("structs serialize to objects")
        };
        let mut flat = Map::new();
        for (section, fields) in nested {
            let Value::Object(fields) = fields else { unreachable!() };
            for (field, v) in fields {
                flat.insert(format!("{section}.{field}"), v);
            }
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(flat))?;
        text.push('\n');
        Ok(text)
    }

    pub fn gradcheck_options(&self) -> GradCheckOptions {
        GradCheckOptions {
            samples: self.gradcheck.samples,
            epsilon: self.gradcheck.epsilon,
            tolerance: self.gradcheck.tolerance,
            seed: self.train.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_keys_override_defaults() {
        let mut flat = FlatConfig::default();
        flat.set("model.num_classes", Value::from(4));
        flat.set_override("train.epochs=3").unwrap();
        flat.set_override("augment.rotation_degrees=0").unwrap();
        flat.set_override("data.root=/tmp/x").unwrap();
        let cfg = flat.resolve().unwrap();
        assert_eq!(cfg.model.num_classes, 4);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.augment.rotation_degrees, 0.0);
        assert_eq!(cfg.data.root, Some(PathBuf::from("/tmp/x")));
        assert_eq!(cfg.train.batch_size, 32);
    }

    #[test]
    fn effective_config_round_trips() {
        let mut flat = FlatConfig::default();
        flat.set_override("train.epochs=7").unwrap();
        let cfg = flat.resolve().unwrap();
        let text = cfg.to_flat_json().unwrap();
        assert!(text.contains("\"model.num_classes\": 15"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, &text).unwrap();
        assert_eq!(FlatConfig::from_file(&path).unwrap().resolve().unwrap(), cfg);
    }

    #[test]
    fn bad_keys_and_values_are_config_errors() {
        for assignment in ["model.bogus=1", "nosection=1", "widget.x=1", "train.epochs=0", "model.head=\"ring\""] {
            let mut flat = FlatConfig::default();
            flat.set_override(assignment).unwrap();
            assert!(matches!(flat.resolve(), Err(Error::Config(_))), "{assignment}");
        }
        assert!(FlatConfig::default().set_override("no_equals").is_err());
    }
}
