//! Run configuration: one JSON document with a section per module.

use std::path::{Path, PathBuf};

use ampforge::dataprep::DataprepConfig;
use ampforge::eval::EvalConfig;
use ampforge::mic::MicConfig;
use ampforge::physchem::ScaleTable;
use ampforge::policy::{PolicyConfig, SamplingConfig, SftConfig};
use ampforge::ppo::PpoConfig;
use ampforge::reward::RewardConfig;
use ampforge::screening::{LibraryConfig, ScreenConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub output_dir: PathBuf,
    /// Defaults to the output directory.
    pub checkpoint_dir: Option<PathBuf>,
    /// Optional `key = value` overrides for the hydropathy and pKa tables.
    pub scale_overrides: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            checkpoint_dir: None,
            scale_overrides: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub count: usize,
    pub sampling: SamplingConfig,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            count: 100,
            sampling: SamplingConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub policy: PolicyConfig,
    pub sft: SftConfig,
    pub sample: SampleSection,
    pub mic: MicConfig,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    pub dataprep: DataprepConfig,
    pub screen: ScreenConfig,
    pub library: LibraryConfig,
    pub eval: EvalConfig,
}

/// Problems that make a configuration unusable, all reported together.
#[derive(Debug)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Dotted paths present in `given` but absent from the schema `known`.
/// Objects are compared key by key; anything else is a leaf.
fn unknown_keys(given: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(g), Value::Object(k)) = (given, known) {
        for (key, v) in g {
            let path = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            match k.get(key) {
                Some(kv) => unknown_keys(v, kv, &path, out),
                None => out.push(format!("unknown key '{path}'")),
            }
        }
    }
}

/// Sets `a.b.c` in a JSON object, creating intermediate objects.
fn set_path(root: &mut Value, dotted: &str, value: Value) -> Result<(), String> {
    let mut cur = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(format!("malformed key '{dotted}'"));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| format!("'{}' is not a section", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

/// `key=value`; the value is parsed as JSON when possible, else taken as a string.
pub fn parse_override(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("override '{s}' is not key=value"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Layers defaults, the optional file and `overrides` (in that order) and
/// validates the result, collecting every problem before failing.
pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig, ConfigErrors> {
    let mut errors = Vec::new();
    let defaults = serde_json::to_value(RunConfig::default()).expect("defaults serialise");
    let mut merged = match file {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match serde_json::from_str::<Value>(&text) {
                Ok(v @ Value::Object(_)) => v,
                Ok(_) => return Err(ConfigErrors(vec![format!("{} must hold a JSON object", path.display())])),
                Err(e) => return Err(ConfigErrors(vec![format!("{}: {e}", path.display())])),
            },
            Err(e) => return Err(ConfigErrors(vec![format!("cannot read {}: {e}", path.display())])),
        },
        None => Value::Object(Default::default()),
    };
    for (k, v) in overrides {
        if let Err(e) = set_path(&mut merged, k, v.clone()) {
            errors.push(e);
        }
    }
    unknown_keys(&merged, &defaults, "", &mut errors);
    if !errors.is_empty() {
        return Err(ConfigErrors(errors));
    }
    // Sections are decoded one at a time so type errors in several of them
    // surface together.
    let mut full = defaults.clone();
    if let (Value::Object(dst), Value::Object(src)) = (&mut full, &merged) {
        for (k, v) in src {
            dst.insert(k.clone(), v.clone());
        }
    }
    if let Value::Object(sections) = &full {
        for (name, v) in sections {
            let probe = serde_json::json!({ name.clone(): v });
            if let Err(e) = serde_json::from_value::<RunConfig>(probe) {
                errors.push(format!("{name}: {e}"));
            }
        }
    }
    if !errors.is_empty() {
        return Err(ConfigErrors(errors));
    }
    let cfg: RunConfig = serde_json::from_value(full).map_err(|e| ConfigErrors(vec![e.to_string()]))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let checks: [(&str, ampforge::Result<()>); 9] = [
            ("policy", self.policy.validate()),
            ("sample.sampling", self.sample.sampling.validate()),
            ("mic", self.mic.validate()),
            ("reward", self.reward.validate()),
            ("ppo", self.ppo.validate()),
            ("dataprep", self.dataprep.validate()),
            ("screen", self.screen.validate()),
            ("library.sampling", self.library.sampling.validate()),
            ("eval", self.eval.validate()),
        ];
        let errors: Vec<String> = checks
            .into_iter()
            .filter_map(|(name, r)| r.err().map(|e| format!("{name}: {e}")))
            .collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(errors))
        }
    }

    pub fn checkpoint_dir(&self) -> &Path {
        self.paths.checkpoint_dir.as_deref().unwrap_or(&self.paths.output_dir)
    }

    pub fn scale_table(&self) -> anyhow::Result<ScaleTable> {
        let base = ScaleTable::default();
        Ok(match &self.paths.scale_overrides {
            Some(p) => base.with_overrides(&std::fs::read_to_string(p)?)?,
            None => base,
        })
    }
}
