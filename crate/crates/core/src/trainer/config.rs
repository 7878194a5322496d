use std::fmt::Write as _;

use crate::corpus::SimilarityTable;
use crate::error::{Error, Result};
use crate::model::{parse_value, Family, ModelConfig};
use crate::numerics::{AdamConfig, LrSchedule};
use crate::objective::{AlphaKind, NegativeSampling, WeightingRule};

/// Everything that determines a training run besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    /// `None` picks the family default (3000 for fpmc, 300 for upmc).
    pub negatives: Option<usize>,
    pub epochs: u32,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub alpha: AlphaKind,
    pub wups_lambda: f64,
    pub wups_exact_weight: f64,
    /// Required when `alpha` is wups; loaded by the caller.
    pub similarity: Option<SimilarityTable>,
    pub negative_sampling: NegativeSampling,
    pub seed: u64,
    /// Record real elapsed seconds in the log instead of 0, at the cost of
    /// byte-identical logs across runs.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 128,
            negatives: None,
            epochs: 50,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            alpha: AlphaKind::OneHot,
            wups_lambda: WeightingRule::DEFAULT_LAMBDA,
            wups_exact_weight: WeightingRule::DEFAULT_EXACT_MATCH_WEIGHT,
            similarity: None,
            negative_sampling: NegativeSampling::Uniform,
            seed: 0,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn family(&self) -> Family {
        self.model.family
    }

    pub fn effective_negatives(&self) -> usize {
        self.negatives.unwrap_or(match self.model.family {
            Family::Upmc => 300,
            _ => 3000,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.schedule.decay_epochs == 0 {
            return Err(Error::Config("lr_decay_epochs must be positive".into()));
        }
        if !(self.schedule.initial > 0.0 && self.schedule.initial.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        self.weighting_rule().map(|_| ())
    }

    pub fn weighting_rule(&self) -> Result<WeightingRule> {
        match self.alpha {
            AlphaKind::Wups => {
                let table = self.similarity.clone().ok_or_else(|| {
                    Error::Config("alpha = wups needs `similarity = <path>`".into())
                })?;
                WeightingRule::wups(table, self.wups_lambda, self.wups_exact_weight)
            }
            kind => WeightingRule::new(kind),
        }
    }

    /// Applies one setting; `Ok(false)` means the key is not a training key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        if self.model.set(key, value)? {
            return Ok(true);
        }
        match key {
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "negatives" => {
                self.negatives = match value {
                    "default" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "epochs" => self.epochs = parse_value(key, value)?,
            "lr" => self.schedule.initial = parse_value(key, value)?,
            "lr_decay_epochs" => self.schedule.decay_epochs = parse_value(key, value)?,
            "adam_beta1" => self.adam.beta1 = parse_value(key, value)?,
            "adam_beta2" => self.adam.beta2 = parse_value(key, value)?,
            "adam_epsilon" => self.adam.epsilon = parse_value(key, value)?,
            "alpha" => self.alpha = value.parse()?,
            "wups_lambda" => self.wups_lambda = parse_value(key, value)?,
            "wups_exact_weight" => self.wups_exact_weight = parse_value(key, value)?,
            "negative_sampling" => self.negative_sampling = value.parse()?,
            "seed" => self.seed = parse_value(key, value)?,
            "log_wall_time" => self.log_wall_time = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Settings as `key = value` lines that [`TrainConfig::set`] reads back.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .model
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let negatives = self
            .negatives
            .map_or_else(|| "default".to_string(), |m| m.to_string());
        for (k, v) in [
            ("batch_size", self.batch_size.to_string()),
            ("negatives", negatives),
            ("epochs", self.epochs.to_string()),
            ("lr", format!("{:e}", self.schedule.initial)),
            ("lr_decay_epochs", self.schedule.decay_epochs.to_string()),
            ("adam_beta1", format!("{:e}", self.adam.beta1)),
            ("adam_beta2", format!("{:e}", self.adam.beta2)),
            ("adam_epsilon", format!("{:e}", self.adam.epsilon)),
            ("alpha", self.alpha.to_string()),
            ("wups_lambda", format!("{:e}", self.wups_lambda)),
            ("wups_exact_weight", format!("{:e}", self.wups_exact_weight)),
            ("negative_sampling", self.negative_sampling.to_string()),
            ("seed", self.seed.to_string()),
            ("log_wall_time", self.log_wall_time.to_string()),
        ] {
            out.push((k.to_string(), v));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// One `key = value` entry of a config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits config text into entries. `#` starts a comment; blank lines are
/// ignored; a repeated key is an error.
pub fn parse_config_entries(text: &str) -> Result<Vec<ConfigEntry>> {
    let mut out: Vec<ConfigEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (key, value) = (k.trim(), v.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config(format!("line {}: empty key or value", i + 1)));
        }
        if out.iter().any(|e| e.key == key) {
            return Err(Error::Config(format!("line {}: `{key}` set twice", i + 1)));
        }
        out.push(ConfigEntry {
            line: i + 1,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

/// Parses a config holding only training keys.
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    for e in parse_config_entries(text)? {
        if !config
            .set(&e.key, &e.value)
            .map_err(|err| Error::Config(format!("line {}: {err}", e.line)))?
        {
            return Err(Error::Config(format!("line {}: unknown key `{}`", e.line, e.key)));
        }
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut c = TrainConfig::default();
        c.model.family = Family::Upmc;
        c.negatives = Some(17);
        c.schedule.initial = 0.0123;
        c.alpha = AlphaKind::Soft;
        let back = parse_train_config(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_and_blanks() {
        let c = parse_train_config("# header\n\nepochs = 3  # short\nalpha=multi_hot\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.alpha, AlphaKind::MultiHot);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for text in [
            "alpha = bogus",
            "nonsense = 1",
            "epochs",
            "epochs = x",
            "epochs = 1\nepochs = 2",
            "family = svm",
        ] {
            let err = parse_train_config(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
    }

    #[test]
    fn family_default_negatives() {
        let mut c = TrainConfig::default();
        assert_eq!(c.effective_negatives(), 3000);
        c.model.family = Family::Upmc;
        assert_eq!(c.effective_negatives(), 300);
        c.negatives = Some(0);
        assert_eq!(c.effective_negatives(), 0);
    }

    #[test]
    fn wups_needs_table() {
        let c = TrainConfig {
            alpha: AlphaKind::Wups,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = TrainConfig {
            similarity: Some(SimilarityTable::default()),
            ..c
        };
        c.validate().unwrap();
    }

    #[test]
    fn zero_batch_rejected() {
        let c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
