//! Run configuration: file format, command-line overrides, and the resolved
//! digest that ties artifacts to the exact settings that produced them.

use serde::{Deserialize, Serialize};

use crate::diffnet::checkpoint::{config_digest, digest_hex};
use crate::model::{AblationConfig, LossWeights, ModelConfig};

use super::{Result, TrainError};

/// Everything a training run needs beyond the data itself. Serialized as
/// TOML with one section per nested struct; unknown keys are rejected so a
/// typo cannot silently fall back to a default.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Optional hard cap on optimizer steps; stops mid-epoch when reached.
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Train/validation/test fractions at sequence granularity.
    pub split: [f64; 3],
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub ablation: AblationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 128,
            max_epochs: 100,
            max_steps: None,
            seed: 0,
            split: [0.6, 0.2, 0.2],
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainError::Config {
                detail: format!("learning_rate must be positive, got {}", self.learning_rate),
            });
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config { detail: "batch_size must be at least 1".into() });
        }
        if self.max_epochs < 1 {
            return Err(TrainError::Config { detail: "max_epochs must be at least 1".into() });
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (sum - 1.0).abs() > 1e-9 {
            return Err(TrainError::Config {
                detail: format!("split ratios must lie in [0,1] and sum to 1, got {:?}", self.split),
            });
        }
        self.model.validate()?;
        self.loss.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text)
            .map_err(|e| TrainError::Config { detail: format!("config parse: {e}") })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io {
            context: format!("reading config {}", path.display()),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    /// Hex digest of the resolved configuration; printed by every run and
    /// embedded in checkpoints so artifacts can be traced to settings.
    pub fn digest(&self) -> String {
        digest_hex(&config_digest(&self.to_toml()))
    }

    /// Applies one `key.path=value` override. The key must name an existing
    /// field (dotted for nested sections); the value uses the config file's
    /// literal syntax, with bare words accepted as strings.
    pub fn with_override(&self, key: &str, raw: &str) -> Result<Self> {
        let mut root = toml::Table::try_from(self)
            .map_err(|e| TrainError::Config { detail: format!("config serialize: {e}") })?;
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(TrainError::Config { detail: format!("malformed override key '{key}'") });
        }
        let mut cur = &mut root;
        for p in &parts[..parts.len() - 1] {
            cur = cur
                .get_mut(*p)
                .and_then(|v| v.as_table_mut())
                .ok_or_else(|| TrainError::Config {
                    detail: format!("override key '{key}': no section named '{p}'"),
                })?;
        }
        let leaf = *parts.last().expect("nonempty key");
        let old = cur.get(leaf).ok_or_else(|| TrainError::Config {
            detail: format!("override key '{key}': no field named '{leaf}'"),
        })?;
        let parsed: toml::Value = raw
            .parse()
            .unwrap_or_else(|_| toml::Value::String(raw.to_string()));
        // Integer literals must still land in float fields.
        let parsed = match (old, &parsed) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(*i as f64),
            _ => parsed,
        };
        cur.insert(leaf.to_string(), parsed);
        let cfg: TrainConfig = root
            .try_into()
            .map_err(|e| TrainError::Config { detail: format!("override '{key}={raw}': {e}") })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_preserves_the_config() {
        let cfg = TrainConfig::default();
        let text = cfg.to_toml();
        let back = TrainConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.digest(), back.digest());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = TrainConfig::from_toml("learning_rte = 0.1").unwrap_err();
        assert!(err.to_string().contains("learning_rte"), "{err}");
        // Nested sections enforce the same rule.
        assert!(TrainConfig::from_toml("[model]\nwidth = 3").is_err());
    }

    #[test]
    fn overrides_reach_nested_fields_and_reject_unknown_ones() {
        let cfg = TrainConfig::default();
        let c1 = cfg.with_override("ablation.contrast_fe", "false").unwrap();
        assert!(!c1.ablation.contrast_fe);
        let c2 = cfg.with_override("learning_rate", "0.001").unwrap();
        assert!((c2.learning_rate - 0.001).abs() < 1e-15);
        // Integer literal into a float field.
        let c3 = cfg.with_override("loss.lambda_con", "1").unwrap();
        assert!((c3.loss.lambda_con - 1.0).abs() < 1e-15);
        let c4 = cfg.with_override("split", "[0.5, 0.25, 0.25]").unwrap();
        assert_eq!(c4.split, [0.5, 0.25, 0.25]);
        assert!(cfg.with_override("no_such_key", "1").is_err());
        assert!(cfg.with_override("model.no_such_field", "1").is_err());
        // Type mismatch is an error, not silent coercion.
        assert!(cfg.with_override("batch_size", "0.5").is_err());
        // Values must still pass validation.
        assert!(cfg.with_override("batch_size", "0").is_err());
    }

    #[test]
    fn digest_tracks_content_not_identity() {
        let a = TrainConfig::default();
        let b = a.with_override("seed", "7").unwrap();
        assert_ne!(a.digest(), b.digest());
        let c = b.with_override("seed", "0").unwrap();
        assert_eq!(a.digest(), c.digest());
    }

    #[test]
    fn bad_ratio_sums_are_rejected() {
        let cfg = TrainConfig { split: [0.6, 0.2, 0.1], ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
