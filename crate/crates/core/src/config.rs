//! Flat key=value experiment configuration.
//!
//! One text file drives a whole run. Lines are `key = value`; `#` starts a
//! comment; unknown or duplicate keys are usage errors so typos fail loudly.
//! Every key has a default, so the empty file is a valid (synthetic,
//! all-features-on) experiment.

use crate::data::DataFormat;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::rng::stream_seed;
use crate::snn::{ExtractorSpec, LifConfig};
use std::collections::BTreeSet;
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Synthetic,
    File,
}

/// Everything an experiment needs; mirrors the documented config keys.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data_kind: DataKind,
    pub data_path: String,
    pub data_format: DataFormat,
    pub synthetic_classes: usize,
    pub synthetic_dim: usize,
    pub synthetic_samples_per_class: usize,
    pub synthetic_spread: f64,
    pub stream_steps: usize,
    pub stream_base_classes: usize,
    pub model_hidden: Vec<usize>,
    pub model_t_steps: usize,
    pub lif: LifConfig,
    pub loss: LossConfig,
    pub align_alpha: f64,
    pub align_beta: f64,
    /// Balanced-subset size per class; 0 derives it from the memory quota.
    pub align_per_class: usize,
    pub opt_lr: f64,
    pub opt_momentum: f64,
    pub opt_batch: usize,
    pub opt_repr_epochs: usize,
    pub opt_clf_epochs: usize,
    pub memory_budget: usize,
    /// Fixed exemplars per class; 0 splits the budget equally instead.
    pub memory_per_class: usize,
    pub toggle_alignment: bool,
    pub toggle_oton: bool,
    pub toggle_kd: bool,
    pub toggle_aux: bool,
    pub seed_master: u64,
    /// 0 derives the dataset seed from the master seed.
    pub seed_data: u64,
    /// 0 derives the class-order seed from the master seed.
    pub seed_order: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_kind: DataKind::Synthetic,
            data_path: String::new(),
            data_format: DataFormat::FlatBinary,
            synthetic_classes: 16,
            synthetic_dim: 32,
            synthetic_samples_per_class: 100,
            synthetic_spread: 0.25,
            stream_steps: 4,
            stream_base_classes: 0,
            model_hidden: vec![48, 32],
            model_t_steps: 4,
            lif: LifConfig::default(),
            loss: LossConfig::default(),
            align_alpha: 8.0,
            align_beta: 4.0,
            align_per_class: 0,
            opt_lr: 0.1,
            opt_momentum: 0.9,
            opt_batch: 32,
            opt_repr_epochs: 30,
            opt_clf_epochs: 60,
            memory_budget: 160,
            memory_per_class: 0,
            toggle_alignment: true,
            toggle_oton: true,
            toggle_kd: true,
            toggle_aux: true,
            seed_master: 1,
            seed_data: 0,
            seed_order: 0,
        }
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Usage(format!("config key {key}: '{v}' is not a non-negative integer")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::Usage(format!("config key {key}: '{v}' is not a non-negative integer")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| Error::Usage(format!("config key {key}: '{v}' is not a number")))?;
    if !x.is_finite() {
        return Err(Error::Usage(format!("config key {key}: value must be finite")));
    }
    Ok(x)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Usage(format!(
            "config key {key}: '{v}' is neither 'true' nor 'false'"
        ))),
    }
}

impl ExperimentConfig {
    /// Parse the flat key=value syntax; unset keys keep defaults.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Usage(format!("config line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Usage(format!("config key {key} set twice")));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_kv_text(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data.kind" => {
                self.data_kind = match v {
                    "synthetic" => DataKind::Synthetic,
                    "file" => DataKind::File,
                    _ => {
                        return Err(Error::Usage(format!(
                            "data.kind must be synthetic or file, got '{v}'"
                        )))
                    }
                }
            }
            "data.path" => self.data_path = v.to_string(),
            "data.format" => self.data_format = v.parse()?,
            "synthetic.classes" => self.synthetic_classes = parse_usize(key, v)?,
            "synthetic.dim" => self.synthetic_dim = parse_usize(key, v)?,
            "synthetic.samples_per_class" => {
                self.synthetic_samples_per_class = parse_usize(key, v)?
            }
            "synthetic.spread" => self.synthetic_spread = parse_f64(key, v)?,
            "stream.steps" => self.stream_steps = parse_usize(key, v)?,
            "stream.base_classes" => self.stream_base_classes = parse_usize(key, v)?,
            "model.hidden" => {
                let widths: Result<Vec<usize>> = v
                    .split(',')
                    .map(|w| parse_usize(key, w.trim()))
                    .collect();
                let widths = widths?;
                if widths.is_empty() || widths.contains(&0) {
                    return Err(Error::Usage("model.hidden needs positive widths".into()));
                }
                self.model_hidden = widths;
            }
            "model.t_steps" => self.model_t_steps = parse_usize(key, v)?,
            "lif.tau" => self.lif.tau = parse_f64(key, v)?,
            "lif.v_th" => self.lif.v_th = parse_f64(key, v)?,
            "lif.sg_width" => self.lif.sg_width = parse_f64(key, v)?,
            "loss.lambda_tet" => self.loss.lambda_tet = parse_f64(key, v)?,
            "loss.phi" => self.loss.phi = parse_f64(key, v)?,
            "loss.kd_temperature" => self.loss.kd_temperature = parse_f64(key, v)?,
            "loss.kd_weight" => self.loss.kd_weight = parse_f64(key, v)?,
            "align.alpha" => self.align_alpha = parse_f64(key, v)?,
            "align.beta" => self.align_beta = parse_f64(key, v)?,
            "align.per_class" => self.align_per_class = parse_usize(key, v)?,
            "opt.lr" => self.opt_lr = parse_f64(key, v)?,
            "opt.momentum" => self.opt_momentum = parse_f64(key, v)?,
            "opt.batch" => self.opt_batch = parse_usize(key, v)?,
            "opt.repr_epochs" => self.opt_repr_epochs = parse_usize(key, v)?,
            "opt.clf_epochs" => self.opt_clf_epochs = parse_usize(key, v)?,
            "memory.budget" => self.memory_budget = parse_usize(key, v)?,
            "memory.per_class" => self.memory_per_class = parse_usize(key, v)?,
            "toggle.alignment" => self.toggle_alignment = parse_bool(key, v)?,
            "toggle.oton" => self.toggle_oton = parse_bool(key, v)?,
            "toggle.kd" => self.toggle_kd = parse_bool(key, v)?,
            "toggle.aux" => self.toggle_aux = parse_bool(key, v)?,
            "seed.master" => self.seed_master = parse_u64(key, v)?,
            "seed.data" => self.seed_data = parse_u64(key, v)?,
            "seed.order" => self.seed_order = parse_u64(key, v)?,
            other => {
                return Err(Error::Usage(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Canonical serialization: every key, fixed order, parseable back.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let kind = match self.data_kind {
            DataKind::Synthetic => "synthetic",
            DataKind::File => "file",
        };
        let format = match self.data_format {
            DataFormat::FlatBinary => "flat-binary",
            DataFormat::Csv => "csv",
        };
        let hidden = self
            .model_hidden
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(s, "data.kind = {kind}");
        let _ = writeln!(s, "data.path = {}", self.data_path);
        let _ = writeln!(s, "data.format = {format}");
        let _ = writeln!(s, "synthetic.classes = {}", self.synthetic_classes);
        let _ = writeln!(s, "synthetic.dim = {}", self.synthetic_dim);
        let _ = writeln!(
            s,
            "synthetic.samples_per_class = {}",
            self.synthetic_samples_per_class
        );
        let _ = writeln!(s, "synthetic.spread = {}", self.synthetic_spread);
        let _ = writeln!(s, "stream.steps = {}", self.stream_steps);
        let _ = writeln!(s, "stream.base_classes = {}", self.stream_base_classes);
        let _ = writeln!(s, "model.hidden = {hidden}");
        let _ = writeln!(s, "model.t_steps = {}", self.model_t_steps);
        let _ = writeln!(s, "lif.tau = {}", self.lif.tau);
        let _ = writeln!(s, "lif.v_th = {}", self.lif.v_th);
        let _ = writeln!(s, "lif.sg_width = {}", self.lif.sg_width);
        let _ = writeln!(s, "loss.lambda_tet = {}", self.loss.lambda_tet);
        let _ = writeln!(s, "loss.phi = {}", self.loss.phi);
        let _ = writeln!(s, "loss.kd_temperature = {}", self.loss.kd_temperature);
        let _ = writeln!(s, "loss.kd_weight = {}", self.loss.kd_weight);
        let _ = writeln!(s, "align.alpha = {}", self.align_alpha);
        let _ = writeln!(s, "align.beta = {}", self.align_beta);
        let _ = writeln!(s, "align.per_class = {}", self.align_per_class);
        let _ = writeln!(s, "opt.lr = {}", self.opt_lr);
        let _ = writeln!(s, "opt.momentum = {}", self.opt_momentum);
        let _ = writeln!(s, "opt.batch = {}", self.opt_batch);
        let _ = writeln!(s, "opt.repr_epochs = {}", self.opt_repr_epochs);
        let _ = writeln!(s, "opt.clf_epochs = {}", self.opt_clf_epochs);
        let _ = writeln!(s, "memory.budget = {}", self.memory_budget);
        let _ = writeln!(s, "memory.per_class = {}", self.memory_per_class);
        let _ = writeln!(s, "toggle.alignment = {}", self.toggle_alignment);
        let _ = writeln!(s, "toggle.oton = {}", self.toggle_oton);
        let _ = writeln!(s, "toggle.kd = {}", self.toggle_kd);
        let _ = writeln!(s, "toggle.aux = {}", self.toggle_aux);
        let _ = writeln!(s, "seed.master = {}", self.seed_master);
        let _ = writeln!(s, "seed.data = {}", self.seed_data);
        let _ = writeln!(s, "seed.order = {}", self.seed_order);
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lif.tau > 0.0 && self.lif.tau < 1.0) {
            return Err(Error::Usage(format!("lif.tau {} outside (0,1)", self.lif.tau)));
        }
        if self.lif.v_th <= 0.0 || self.lif.sg_width <= 0.0 {
            return Err(Error::Usage("lif.v_th and lif.sg_width must be positive".into()));
        }
        if self.model_t_steps == 0 {
            return Err(Error::Usage("model.t_steps must be >= 1".into()));
        }
        if self.align_alpha <= 0.0 || self.align_beta <= 0.0 {
            return Err(Error::Usage("align.alpha and align.beta must be positive".into()));
        }
        if self.opt_lr <= 0.0 {
            return Err(Error::Usage("opt.lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.opt_momentum) {
            return Err(Error::Usage(format!(
                "opt.momentum {} outside [0,1)",
                self.opt_momentum
            )));
        }
        if self.opt_batch == 0 || self.opt_repr_epochs == 0 || self.opt_clf_epochs == 0 {
            return Err(Error::Usage(
                "opt.batch and epoch counts must be >= 1".into(),
            ));
        }
        if self.stream_steps == 0 {
            return Err(Error::Usage("stream.steps must be >= 1".into()));
        }
        if self.memory_budget == 0 && self.memory_per_class == 0 {
            return Err(Error::Usage("memory budget or per-class count required".into()));
        }
        if self.data_kind == DataKind::File && self.data_path.is_empty() {
            return Err(Error::Usage("data.kind=file requires data.path".into()));
        }
        Ok(())
    }

    /// FNV-1a over the canonical serialization; stored in checkpoints so a
    /// resume against a different configuration is rejected.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.to_kv_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    pub fn effective_data_seed(&self) -> u64 {
        if self.seed_data != 0 {
            self.seed_data
        } else {
            stream_seed(self.seed_master, "seed.data", 0)
        }
    }

    pub fn effective_order_seed(&self) -> u64 {
        if self.seed_order != 0 {
            self.seed_order
        } else {
            stream_seed(self.seed_master, "seed.order", 0)
        }
    }

    pub fn extractor_spec(&self, input_dim: usize) -> ExtractorSpec {
        ExtractorSpec {
            input_dim,
            layer_widths: self.model_hidden.clone(),
            lif: self.lif,
            t_steps: self.model_t_steps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_serialization() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_kv_text();
        let back = ExperimentConfig::from_kv_text(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.fingerprint(), back.fingerprint());
    }

    #[test]
    fn empty_text_is_the_default_config() {
        let cfg = ExperimentConfig::from_kv_text("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn comments_whitespace_and_overrides() {
        let text = "# experiment\n  stream.steps = 2  # two steps\n\nopt.lr=0.05\ntoggle.kd = false\n";
        let cfg = ExperimentConfig::from_kv_text(text).unwrap();
        assert_eq!(cfg.stream_steps, 2);
        assert_eq!(cfg.opt_lr, 0.05);
        assert!(!cfg.toggle_kd);
        assert!(cfg.toggle_aux);
    }

    #[test]
    fn unknown_duplicate_and_malformed_keys_fail() {
        assert!(matches!(
            ExperimentConfig::from_kv_text("opt.learning = 1"),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_kv_text("opt.lr = 0.1\nopt.lr = 0.2"),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_kv_text("just words"),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_kv_text("opt.batch = many"),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn derived_seeds_differ_from_master_and_each_other() {
        let cfg = ExperimentConfig::default();
        let d = cfg.effective_data_seed();
        let o = cfg.effective_order_seed();
        assert_ne!(d, o);
        assert_ne!(d, cfg.seed_master);
        let mut explicit = cfg.clone();
        explicit.seed_data = 99;
        assert_eq!(explicit.effective_data_seed(), 99);
    }

    #[test]
    fn fingerprint_tracks_any_field_change() {
        let base = ExperimentConfig::default();
        let mut other = base.clone();
        other.seed_master = 2;
        assert_ne!(base.fingerprint(), other.fingerprint());
        let mut toggles = base.clone();
        toggles.toggle_oton = false;
        assert_ne!(base.fingerprint(), toggles.fingerprint());
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut cfg = ExperimentConfig::default();
        cfg.lif.tau = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.opt_momentum = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.loss.lambda_tet = 2.0;
        assert!(cfg.validate().is_err());
    }
}
