//! Pipeline configuration: a flat `key = value` file whose keys are the
//! field names below. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cross_modal::FusionGate;
use crate::data::MAX_TOKENS;
use crate::error::{Error, Result};
use crate::relevance::RelevanceMode;
use crate::tensor::nn::NormPlacement;
use crate::tensor::Activation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub d: usize,
    pub heads: usize,
    pub text_layers: usize,
    pub vit_layers: usize,
    pub rgcn_layers: usize,
    pub interaction_rounds: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_train: usize,
    pub batch_eval: usize,
    pub epochs: usize,
    pub max_len: usize,
    pub seed: u64,
    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub meta_path: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Feed-forward hidden width as a multiple of `d`.
    pub ffn_mult: usize,
    pub rgcn_activation: String,
    pub fusion_gate: String,
    pub relevance_mode: String,
    pub text_positional: bool,
    pub norm: String,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub bio2_constraints: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            d: 768,
            heads: 12,
            text_layers: 1,
            vit_layers: 4,
            rgcn_layers: 2,
            interaction_rounds: 3,
            dropout: 0.1,
            learning_rate: 3e-5,
            batch_train: 32,
            batch_eval: 16,
            epochs: 60,
            max_len: MAX_TOKENS,
            seed: 0,
            train_path: None,
            val_path: None,
            test_path: None,
            meta_path: None,
            checkpoint_dir: None,
            ffn_mult: 4,
            rgcn_activation: "relu".into(),
            fusion_gate: "sigmoid".into(),
            relevance_mode: "vector".into(),
            text_positional: true,
            norm: "post".into(),
            clip_norm: 0.0,
            patience: 10,
            bio2_constraints: false,
        }
    }
}

/// Every recognised key, in file order.
pub const KEYS: &[&str] = &[
    "d",
    "heads",
    "text_layers",
    "vit_layers",
    "rgcn_layers",
    "interaction_rounds",
    "dropout",
    "learning_rate",
    "batch_train",
    "batch_eval",
    "epochs",
    "max_len",
    "seed",
    "train_path",
    "val_path",
    "test_path",
    "meta_path",
    "checkpoint_dir",
    "ffn_mult",
    "rgcn_activation",
    "fusion_gate",
    "relevance_mode",
    "text_positional",
    "norm",
    "clip_norm",
    "patience",
    "bio2_constraints",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl PipelineConfig {
    /// Desk-scale settings used by the sample configuration and tests.
    pub fn small() -> Self {
        Self {
            d: 32,
            heads: 4,
            vit_layers: 1,
            rgcn_layers: 1,
            interaction_rounds: 1,
            dropout: 0.0,
            learning_rate: 3e-3,
            batch_train: 8,
            batch_eval: 16,
            epochs: 200,
            ffn_mult: 2,
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "d" => self.d = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "text_layers" => self.text_layers = parse(key, v)?,
            "vit_layers" => self.vit_layers = parse(key, v)?,
            "rgcn_layers" => self.rgcn_layers = parse(key, v)?,
            "interaction_rounds" => self.interaction_rounds = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_train" => self.batch_train = parse(key, v)?,
            "batch_eval" => self.batch_eval = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "train_path" => self.train_path = path(v),
            "val_path" => self.val_path = path(v),
            "test_path" => self.test_path = path(v),
            "meta_path" => self.meta_path = path(v),
            "checkpoint_dir" => self.checkpoint_dir = path(v),
            "ffn_mult" => self.ffn_mult = parse(key, v)?,
            "rgcn_activation" => self.rgcn_activation = v.to_string(),
            "fusion_gate" => self.fusion_gate = v.to_string(),
            "relevance_mode" => self.relevance_mode = v.to_string(),
            "text_positional" => self.text_positional = parse_bool(key, v)?,
            "norm" => self.norm = v.to_string(),
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "bio2_constraints" => self.bio2_constraints = parse_bool(key, v)?,
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a flat config on top of the defaults. Relative paths are
    /// resolved against `base` when given.
    pub fn parse_str(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    i + 1
                )));
            };
            cfg.set(key.trim(), value)
                .map_err(|e| Error::config(format!("line {}: {e}", i + 1)))?;
        }
        if let Some(base) = base {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse_str(&text, Some(base))
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.train_path,
            &mut self.val_path,
            &mut self.test_path,
            &mut self.meta_path,
            &mut self.checkpoint_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Flat-file rendering; parsing it back yields an equal config.
    pub fn to_flat(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for key in KEYS {
            let v = match &value[*key] {
                serde_json::Value::Null => String::new(),
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let _ = writeln!(out, "{key} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("d must be positive"));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::config(format!(
                "heads ({}) must divide d ({})",
                self.heads, self.d
            )));
        }
        if self.max_len == 0 || self.max_len > MAX_TOKENS {
            return Err(Error::config(format!("max_len must lie in 1..={MAX_TOKENS}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_train == 0 || self.batch_eval == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        if self.ffn_mult == 0 {
            return Err(Error::config("ffn_mult must be positive"));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::config("clip_norm must be nonnegative"));
        }
        self.activation()?;
        self.gate()?;
        self.relevance()?;
        self.norm_placement()?;
        Ok(())
    }

    pub fn activation(&self) -> Result<Activation> {
        Activation::parse(&self.rgcn_activation)
            .ok_or_else(|| Error::config(format!("unknown rgcn_activation {:?}", self.rgcn_activation)))
    }

    pub fn gate(&self) -> Result<FusionGate> {
        FusionGate::parse(&self.fusion_gate)
            .ok_or_else(|| Error::config(format!("unknown fusion_gate {:?}", self.fusion_gate)))
    }

    pub fn relevance(&self) -> Result<RelevanceMode> {
        RelevanceMode::parse(&self.relevance_mode)
            .ok_or_else(|| Error::config(format!("unknown relevance_mode {:?}", self.relevance_mode)))
    }

    pub fn norm_placement(&self) -> Result<NormPlacement> {
        NormPlacement::parse(&self.norm).ok_or_else(|| Error::config(format!("unknown norm {:?}", self.norm)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::default();
        assert_eq!((c.d, c.heads, c.interaction_rounds, c.epochs), (768, 12, 3, 60));
        c.validate().unwrap();
        PipelineConfig::small().validate().unwrap();
    }

    #[test]
    fn parses_comments_and_paths() {
        let text = "# sample\nd = 16\nheads=2 # trailing\n\ntrain_path = data/train.jsonl\n";
        let c = PipelineConfig::parse_str(text, Some(Path::new("/cfg"))).unwrap();
        assert_eq!(c.d, 16);
        assert_eq!(c.heads, 2);
        assert_eq!(c.train_path, Some(PathBuf::from("/cfg/data/train.jsonl")));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let e = PipelineConfig::parse_str("depth = 3\n", None).unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("line 1")), "{e}");
    }

    #[test]
    fn heads_must_divide_width() {
        let c = PipelineConfig {
            d: 10,
            heads: 4,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn flat_rendering_round_trips() {
        let mut c = PipelineConfig::small();
        c.train_path = Some("/x/train.jsonl".into());
        c.bio2_constraints = true;
        assert_eq!(PipelineConfig::parse_str(&c.to_flat(), None).unwrap(), c);
    }
}
