//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};

use ckgr_core::graph::IdOrder;
use ckgr_core::ingest::SynthConfig;
use ckgr_core::model::Hyperparams;
use ckgr_core::{Error, Result};

pub const SEED_ENV: &str = "CKGR_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatChoice {
    Auto,
    Tsv,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hyper: Hyperparams,
    pub interactions: Option<PathBuf>,
    pub user_attributes: Option<PathBuf>,
    pub item_attributes: Option<PathBuf>,
    pub alignment: Option<PathBuf>,
    pub dataset_manifest: Option<PathBuf>,
    pub format: FormatChoice,
    pub strict: bool,
    /// `None` keeps every numeric rating.
    pub implicit_threshold: Option<f64>,
    pub min_interactions: usize,
    pub split: [f64; 3],
    pub id_order: IdOrder,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hyper: Hyperparams::default(),
            interactions: None,
            user_attributes: None,
            item_attributes: None,
            alignment: None,
            dataset_manifest: None,
            format: FormatChoice::Auto,
            strict: false,
            implicit_threshold: None,
            min_interactions: 5,
            split: [0.8, 0.1, 0.1],
            id_order: IdOrder::FirstSeen,
            synth: SynthConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    match value {
        "" | "none" => None,
        v => Some(PathBuf::from(v)),
    }
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into())
}

/// Keys written by [`crate::manifest`] that a config file may carry and
/// that are ignored on load.
fn is_metadata_key(key: &str) -> bool {
    key.starts_with("run.") || key.starts_with("input.") || key.starts_with("output.")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if self.hyper.set(key, value)? {
            return Ok(());
        }
        match key {
            "interactions" => self.interactions = opt_path(value),
            "user_attributes" => self.user_attributes = opt_path(value),
            "item_attributes" => self.item_attributes = opt_path(value),
            "alignment" => self.alignment = opt_path(value),
            "dataset_manifest" => self.dataset_manifest = opt_path(value),
            "format" => {
                self.format = match value {
                    "auto" => FormatChoice::Auto,
                    "tsv" => FormatChoice::Tsv,
                    "csv" => FormatChoice::Csv,
                    _ => return Err(Error::Config(format!("format must be auto, tsv or csv, got '{value}'"))),
                }
            }
            "strict" => self.strict = parse(key, value)?,
            "implicit_threshold" => {
                self.implicit_threshold = match value {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "min_interactions" => self.min_interactions = parse(key, value)?,
            "split.train" => self.split[0] = parse(key, value)?,
            "split.validation" => self.split[1] = parse(key, value)?,
            "split.test" => self.split[2] = parse(key, value)?,
            "id_order" => {
                self.id_order = match value {
                    "first_seen" => IdOrder::FirstSeen,
                    "sorted" => IdOrder::Sorted,
                    _ => return Err(Error::Config(format!("id_order must be first_seen or sorted, got '{value}'"))),
                }
            }
            "synth.users" => self.synth.n_users = parse(key, value)?,
            "synth.items" => self.synth.n_items = parse(key, value)?,
            "synth.factors" => self.synth.latent_dim = parse(key, value)?,
            "synth.per_user" => self.synth.interactions_per_user = parse(key, value)?,
            "synth.attr_entities" => self.synth.attr_entities_per_factor = parse(key, value)?,
            "synth.noise" => self.synth.noise = parse(key, value)?,
            k if is_metadata_key(k) => {}
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies settings in order, except that `layer_dims` always goes
    /// before `layers` so an explicit depth wins regardless of line order.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let rank = |k: &str| match k {
            "layer_dims" => 0,
            "layers" => 2,
            _ => 1,
        };
        let mut ordered: Vec<&(String, String)> = pairs.iter().collect();
        ordered.sort_by_key(|(k, _)| rank(k));
        for (k, v) in ordered {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Defaults, then `CKGR_SEED`, then the file, then `overrides`.
    pub fn resolve(file: Option<&Path>, env_seed: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(seed) = env_seed {
            cfg.set("seed", seed)
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got '{seed}'")))?;
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply(&parse_config_text(&text, &path.display().to_string())?)?;
        }
        cfg.apply(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|r| !(*r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be positive and sum to 1, got {:?}",
                self.split
            )));
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.hyper.seed,
            ..self.synth
        }
    }

    /// Every setting as `key = value` pairs in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .hyper
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        out.extend(self.data_pairs());
        out
    }

    /// The settings that are not model hyperparameters.
    pub fn data_pairs(&self) -> Vec<(String, String)> {
        let s = &self.synth;
        [
            ("interactions", show_path(&self.interactions)),
            ("user_attributes", show_path(&self.user_attributes)),
            ("item_attributes", show_path(&self.item_attributes)),
            ("alignment", show_path(&self.alignment)),
            ("dataset_manifest", show_path(&self.dataset_manifest)),
            (
                "format",
                match self.format {
                    FormatChoice::Auto => "auto",
                    FormatChoice::Tsv => "tsv",
                    FormatChoice::Csv => "csv",
                }
                .into(),
            ),
            ("strict", self.strict.to_string()),
            (
                "implicit_threshold",
                self.implicit_threshold.map(|t| t.to_string()).unwrap_or_else(|| "none".into()),
            ),
            ("min_interactions", self.min_interactions.to_string()),
            ("split.train", self.split[0].to_string()),
            ("split.validation", self.split[1].to_string()),
            ("split.test", self.split[2].to_string()),
            (
                "id_order",
                match self.id_order {
                    IdOrder::FirstSeen => "first_seen",
                    IdOrder::Sorted => "sorted",
                }
                .into(),
            ),
            ("synth.users", s.n_users.to_string()),
            ("synth.items", s.n_items.to_string()),
            ("synth.factors", s.latent_dim.to_string()),
            ("synth.per_user", s.interactions_per_user.to_string()),
            ("synth.attr_entities", s.attr_entities_per_factor.to_string()),
            ("synth.noise", s.noise.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Splits a config file into `(key, value)` pairs. `#` starts a comment
/// at the beginning of a line or after whitespace.
pub fn parse_config_text(text: &str, source_name: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = match raw.find(" #").or_else(|| raw.find("\t#")) {
            Some(i) => &raw[..i],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Format {
                source_name: source_name.to_string(),
                line: n + 1,
                message: format!("expected 'key = value', got '{line}'"),
            });
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses `key=value` command-line overrides.
pub fn parse_override(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got '{s}'"))
}
