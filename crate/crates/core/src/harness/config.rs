use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::biasgen::{GeneratorConfig, Scenario};
use crate::cobum::CoBumParams;
use crate::model::{Architecture, Head, TrainConfig};
use crate::unlearn::{Strategy, StrategyConfig};

use super::{HarnessError, Result};

/// Offsets added to the master seed for each role. Strategy seeds add the
/// strategy's position in [`Strategy::ALL`] to [`seeds::STRATEGY`].
pub mod seeds {
    pub const DATA: u64 = 0;
    pub const COUNTERFACTUAL: u64 = 1;
    pub const BASELINE_INIT: u64 = 2;
    pub const BASELINE_SHUFFLE: u64 = 3;
    pub const GOLD_INIT: u64 = 4;
    pub const GOLD_SHUFFLE: u64 = 5;
    pub const STRATEGY: u64 = 10;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub head: Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingMode {
    /// Time column derived from counted floating-point work, so reports
    /// are reproducible byte for byte.
    Cost,
    /// Measured wall-clock seconds.
    Wall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    pub mode: TimingMode,
    /// Conversion rate from counted operations to nominal seconds.
    pub flops_per_second: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardSection {
    /// Retraining epochs for the gold model; the other training settings
    /// come from `[train]`.
    pub epochs: usize,
}

/// A complete experiment. Seeds inside `train` and `strategies` are
/// ignored: every sub-seed derives from `seed` (see [`seeds`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelSection,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub hard: HardSection,
    pub strategies: Vec<StrategyConfig>,
    pub cobum: CoBumParams,
    pub timing: TimingSection,
}

fn strategy_defaults(scenario: Scenario) -> Vec<StrategyConfig> {
    let ga_eta = match scenario {
        Scenario::Attribute => 2e-2,
        _ => 2e-3,
    };
    let mut list = vec![
        StrategyConfig {
            eta: ga_eta,
            ..StrategyConfig::new(Strategy::GradientAscent)
        },
        StrategyConfig {
            rank: if scenario == Scenario::Attribute { 4 } else { 8 },
            ..StrategyConfig::new(Strategy::Lora)
        },
        StrategyConfig::new(Strategy::Scrub),
    ];
    if scenario != Scenario::Attribute {
        list.push(StrategyConfig {
            damping: 1.0,
            ..StrategyConfig::new(Strategy::Fmd)
        });
    }
    list
}

impl ExperimentConfig {
    /// Shipped defaults for a scenario.
    pub fn default_for(scenario: Scenario) -> Self {
        let (head, baseline_epochs) = match scenario {
            Scenario::Attribute => (Head::Sigmoid, 5),
            _ => (Head::Softmax, 10),
        };
        Self {
            scenario,
            seed: 1,
            output_dir: PathBuf::from(format!("runs/{scenario}")),
            model: ModelSection { hidden: vec![64], head },
            generator: GeneratorConfig::default_for(scenario),
            train: TrainConfig {
                learning_rate: 1e-3,
                epochs: baseline_epochs,
                batch_size: 64,
                ..TrainConfig::default()
            },
            hard: HardSection { epochs: 10 },
            strategies: strategy_defaults(scenario),
            cobum: CoBumParams::default(),
            timing: TimingSection {
                mode: TimingMode::Cost,
                flops_per_second: 1e8,
            },
        }
    }

    /// Parses TOML, filling every omitted key from the scenario defaults.
    /// Each `[[strategies]]` entry is completed from the default entry of
    /// the same strategy.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        let scenario: Scenario = match user.get("scenario") {
            Some(toml::Value::String(s)) => s.parse().map_err(HarnessError::Config)?,
            Some(_) => return Err(HarnessError::Config("`scenario` must be a string".into())),
            None => return Err(HarnessError::Config("missing `scenario`".into())),
        };
        let defaults = Self::default_for(scenario);
        let mut base = to_table(&defaults)?;
        let mut user = user;
        if let Some(toml::Value::Array(entries)) = user.remove("strategies") {
            let mut merged = Vec::with_capacity(entries.len());
            for entry in entries {
                let toml::Value::Table(entry) = entry else {
                    return Err(HarnessError::Config("each [[strategies]] entry must be a table".into()));
                };
                let name: Strategy = match entry.get("strategy") {
                    Some(toml::Value::String(s)) => s.parse().map_err(HarnessError::Config)?,
                    _ => return Err(HarnessError::Config("[[strategies]] entry lacks `strategy`".into())),
                };
                let template = defaults
                    .strategies
                    .iter()
                    .find(|s| s.strategy == name)
                    .cloned()
                    .unwrap_or_else(|| StrategyConfig::new(name));
                let mut t = to_table(&template)?;
                merge(&mut t, entry);
                merged.push(toml::Value::Table(t));
            }
            base.insert("strategies".into(), toml::Value::Array(merged));
        }
        // The generator table is tagged by the top-level scenario.
        if let Some(toml::Value::Table(g)) = user.get_mut("generator") {
            g.insert("scenario".into(), toml::Value::String(scenario.to_string()));
        }
        merge(&mut base, user);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml_string()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.generator.scenario() != self.scenario {
            return bad(format!(
                "generator is for `{}` but scenario is `{}`",
                self.generator.scenario(),
                self.scenario
            ));
        }
        if self.model.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer widths must be positive".into());
        }
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        for s in &self.strategies {
            s.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            if s.strategy == Strategy::Hard {
                return bad("`hard` always runs as the gold model; do not list it under strategies".into());
            }
            if s.strategy == Strategy::Fmd && self.scenario == Scenario::Attribute {
                return bad("FMD needs counterfactuals, which the attribute scenario does not define".into());
            }
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].iter().any(|o| o.strategy == s.strategy) {
                return bad(format!("strategy `{}` listed twice", s.strategy));
            }
        }
        self.cobum.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.timing.flops_per_second > 0.0) {
            return bad("timing.flops_per_second must be positive".into());
        }
        Ok(())
    }

    pub fn architecture(&self, input_width: usize, num_classes: usize) -> Architecture {
        let out = match self.model.head {
            Head::Softmax => num_classes,
            Head::Sigmoid => 1,
        };
        let mut sizes = vec![input_width];
        sizes.extend(&self.model.hidden);
        sizes.push(out);
        Architecture::new(sizes, self.model.head)
    }

    pub fn baseline_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed + seeds::BASELINE_SHUFFLE,
            ..self.train.clone()
        }
    }

    pub fn gold_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed + seeds::GOLD_SHUFFLE,
            epochs: self.hard.epochs,
            ..self.train.clone()
        }
    }

    /// The strategy config with its derived seed.
    pub fn seeded_strategy(&self, s: &StrategyConfig) -> StrategyConfig {
        let pos = Strategy::ALL.iter().position(|&x| x == s.strategy).unwrap_or(0) as u64;
        StrategyConfig {
            seed: self.seed + seeds::STRATEGY + pos,
            ..s.clone()
        }
    }

    /// Seconds reported in tables for a stage with the given work and
    /// measured wall time.
    pub fn reported_seconds(&self, flops: u64, wall: f64) -> f64 {
        match self.timing.mode {
            TimingMode::Cost => flops as f64 / self.timing.flops_per_second,
            TimingMode::Wall => wall,
        }
    }
}

fn to_table<T: Serialize>(value: &T) -> Result<toml::Table> {
    match toml::Value::try_from(value).map_err(|e| HarnessError::Config(e.to_string()))? {
        toml::Value::Table(t) => Ok(t),
        _ => Err(HarnessError::Config("expected a table".into())),
    }
}

/// Recursive overlay: tables merge key by key, everything else replaces.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_scenario_defaults() {
        let cfg = ExperimentConfig::from_toml_str("scenario = \"attribute\"\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default_for(Scenario::Attribute));
    }

    #[test]
    fn overrides_merge_into_defaults() {
        let text = r#"
scenario = "patch"
seed = 7

[generator]
n_per_class = 200

[train]
epochs = 3

[[strategies]]
strategy = "lora"
steps = 5
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        let GeneratorConfig::Patch(p) = &cfg.generator else { panic!() };
        assert_eq!(p.n_per_class, 200);
        assert_eq!(p.num_classes, 10);
        assert_eq!(cfg.strategies.len(), 1);
        assert_eq!(cfg.strategies[0].steps, 5);
        assert_eq!(cfg.strategies[0].rank, 8);
    }

    #[test]
    fn round_trip_through_toml() {
        for s in [Scenario::Patch, Scenario::Attribute, Scenario::Pose] {
            let cfg = ExperimentConfig::default_for(s);
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn rejections() {
        for text in [
            "seed = 1",
            "scenario = \"faces\"",
            "scenario = \"patch\"\nbogus = 1",
            "scenario = \"patch\"\n[train]\nlearning_rate = -1.0",
            "scenario = \"attribute\"\n[[strategies]]\nstrategy = \"fmd\"",
            "scenario = \"patch\"\n[[strategies]]\nstrategy = \"hard\"",
            "scenario = \"patch\"\n[[strategies]]\nstrategy = \"lora\"\n[[strategies]]\nstrategy = \"lora\"",
            "scenario = \"patch\"\n[generator]\nfraction = 2.0\nunknown_key = 3",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "accepted: {text}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default_for(Scenario::Patch);
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 2;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn sub_seeds_are_distinct() {
        let cfg = ExperimentConfig::default_for(Scenario::Pose);
        let mut all = vec![cfg.baseline_train().seed, cfg.gold_train().seed];
        all.extend(cfg.strategies.iter().map(|s| cfg.seeded_strategy(s).seed));
        let mut dedup = all.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), all.len());
    }
}
