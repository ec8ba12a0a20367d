//! Flat `key=value` run configuration: built-in defaults, then an optional
//! config file, then command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::decode::{DecodeConfig, Strategy};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{Scale, Variant};
use crate::train::TrainConfig;

/// Every recognised key with its default. `None` marks keys that have no
/// default (mostly paths).
const KEYS: &[(&str, Option<&str>)] = &[
    ("seed", Some("0")),
    ("variant", Some("bert")),
    ("scale", Some("toy")),
    ("out", Some("run")),
    ("parallel", Some("true")),
    ("train_src", None),
    ("train_tgt", None),
    ("valid", None),
    ("vocab", None),
    ("vocab_max_size", Some("10000")),
    ("vocab_min_freq", Some("1")),
    ("dropout", None),
    ("epochs", Some("20")),
    ("batch_size", Some("8")),
    ("base_lr", Some("0.0001")),
    ("max_lr", Some("0.001")),
    ("final_lr", Some("0.000001")),
    ("warmup_fraction", Some("0.1")),
    ("weight_decay", Some("0.01")),
    ("beta1", Some("0.9")),
    ("beta2", Some("0.999")),
    ("eps_adam", Some("0.00000001")),
    ("patience", Some("3")),
    ("clip_norm", Some("1")),
    ("strategy", Some("greedy")),
    ("beam_width", Some("4")),
    ("length_penalty", Some("0")),
    ("decode_max_len", Some("80")),
    ("checkpoint", None),
    ("input", None),
    ("output", None),
    ("system", None),
    ("eval", None),
    ("label", None),
    ("histogram_bins", Some("20")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown config key {key:?}")))
    }
}

/// Parses `key=value` lines. Blank lines and lines starting with `#` are
/// skipped.
pub fn parse_kv_text(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Corpus {
            path: origin.to_string(),
            line: i + 1,
            message: format!("expected key=value, found {line:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Merges defaults, the optional config file, and `overrides` (applied in
    /// order, so later entries win).
    pub fn resolve(config_file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut values: BTreeMap<String, String> = KEYS
            .iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v.to_string())))
            .collect();
        let mut layers = Vec::new();
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            layers.extend(parse_kv_text(&text, &path.display().to_string())?);
        }
        layers.extend(overrides.iter().cloned());
        for (k, v) in layers {
            known(&k)?;
            values.insert(k, v);
        }
        let mut rc = RunConfig { values };
        if !rc.values.contains_key("dropout") {
            let rate = match rc.scale()? {
                Scale::Paper => "0.1",
                Scale::Toy => "0",
            };
            rc.values.insert("dropout".into(), rate.into());
        }
        Ok(rc)
    }

    pub fn defaults() -> Self {
        Self::resolve(None, &[]).expect("built-in defaults are valid")
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> Result<()> {
        known(key)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// The effective configuration as sorted `key=value` lines.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("bad value {raw:?} for {key}")))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.require(key)? {
            "none" | "off" => Ok(None),
            _ => self.parse(key).map(Some),
        }
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::Config(format!("missing required setting {key}")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.require(key).map(PathBuf::from)
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn variant(&self) -> Result<Variant> {
        self.require("variant")?.parse()
    }

    pub fn scale(&self) -> Result<Scale> {
        self.require("scale")?.parse()
    }

    pub fn out(&self) -> Result<PathBuf> {
        self.path("out")
    }

    pub fn exec(&self) -> Result<Exec> {
        Ok(if self.parse::<bool>("parallel")? {
            Exec::Parallel
        } else {
            Exec::Sequential
        })
    }

    pub fn dropout(&self) -> Result<f64> {
        self.parse("dropout")
    }

    pub fn vocab_limits(&self) -> Result<(usize, usize)> {
        Ok((self.parse("vocab_max_size")?, self.parse("vocab_min_freq")?))
    }

    pub fn histogram_bins(&self) -> Result<usize> {
        self.parse("histogram_bins")
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            base_lr: self.parse("base_lr")?,
            max_lr: self.parse("max_lr")?,
            epochs: self.parse("epochs")?,
            batch_size: self.parse("batch_size")?,
            warmup_fraction: self.parse("warmup_fraction")?,
            final_lr: self.parse("final_lr")?,
            weight_decay: self.parse("weight_decay")?,
            beta1: self.parse("beta1")?,
            beta2: self.parse("beta2")?,
            eps_adam: self.parse("eps_adam")?,
            patience: self.optional("patience")?,
            clip_norm: self.optional("clip_norm")?,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn decode_config(&self) -> Result<DecodeConfig> {
        let cfg = DecodeConfig {
            max_len: self.parse("decode_max_len")?,
            strategy: self.require("strategy")?.parse::<Strategy>()?,
            beam_width: self.parse("beam_width")?,
            length_penalty: self.parse("length_penalty")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
