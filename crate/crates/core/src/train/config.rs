use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Mode, ModelConfig};

/// Training recipe. Deserializes from JSON with every field optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub plateau_patience_epochs: usize,
    pub plateau_factor: f64,
    pub plateau_min_delta: f64,
    /// Dropout on random-feature attention (learnt mode).
    pub dropout: f64,
    pub seed: u64,
    pub mode: Mode,
    pub eval_fraction: f64,
    pub model: ModelOverrides,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 20480,
            initial_lr: 0.01,
            plateau_patience_epochs: 2,
            plateau_factor: 0.1,
            plateau_min_delta: 1e-5,
            dropout: 0.2,
            seed: 0,
            mode: Mode::Given,
            eval_fraction: 0.2,
            model: ModelOverrides::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} outside (0, 1]")))
            }
        };
        unit("initial_lr", self.initial_lr)?;
        unit("plateau_factor", self.plateau_factor)?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout = {} outside [0, 1)", self.dropout)));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::Config(format!("eval_fraction = {} outside (0, 1)", self.eval_fraction)));
        }
        if self.plateau_patience_epochs == 0 {
            return Err(Error::Config("plateau_patience_epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.plateau_min_delta.is_nan() || self.plateau_min_delta < 0.0 {
            return Err(Error::Config("plateau_min_delta must be non-negative".into()));
        }
        Ok(())
    }

    /// Architecture for `self.mode`: mode defaults, then overrides, then dropout.
    pub fn model_config(&self) -> ModelConfig {
        let mut c = self.model.apply(ModelConfig::for_mode(self.mode));
        c.dropout = self.dropout;
        c
    }
}

/// Optional replacements for individual [`ModelConfig`] fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gene_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub performer_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_features: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learnt_uses_given_edges: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_edge_weights: Option<bool>,
}

impl ModelOverrides {
    pub fn apply(&self, mut c: ModelConfig) -> ModelConfig {
        if let Some(v) = self.gene_dim {
            c.gene_dim = v;
        }
        if let Some(v) = self.variant_dim {
            c.variant_dim = v;
        }
        if let Some(v) = self.heads {
            c.heads = v;
        }
        if let Some(v) = self.performer_layers {
            c.performer_layers = v;
        }
        if let Some(v) = self.random_features {
            c.random_features = v;
        }
        if let Some(v) = self.rounds {
            c.rounds = v;
        }
        if let Some(v) = self.learnt_uses_given_edges {
            c.learnt_uses_given_edges = v;
        }
        if let Some(v) = self.use_edge_weights {
            c.use_edge_weights = v;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "mode": "learnt", "model": {"random_features": 64}}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.batch_size, 20480);
        let m = c.model_config();
        assert_eq!((m.gene_dim, m.variant_dim, m.random_features), (32, 32, 64));
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_and_bad_rates_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
        let c = TrainConfig {
            initial_lr: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(c.validate().unwrap_err().class(), "config");
        let c = TrainConfig {
            plateau_patience_epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(c.validate().unwrap_err().class(), "config");
    }
}
