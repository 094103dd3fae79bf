//! Synthetic datasets with an explicit semantic block `s` and bias block `b`.
//!
//! Every sample's input is the concatenation `[s, b]`. Three generators
//! cover the three bias topologies:
//!
//! - [`gen_patch_bias`]: a constant marker on the whole `b` block of a
//!   fraction of one class's training samples (a localized shortcut).
//! - [`gen_attribute_bias`]: a binary label whose positive cell is
//!   over-represented in one sensitive group, with `b` encoding the group.
//! - [`gen_pose_bias`]: a continuous scale scalar in `b`, tercile bins, and
//!   a class distribution skewed inside the far bin.
//!
//! Splits follow 70/10/20 (train/val/test) and the training split is
//! partitioned into a retain set and a forget set.

mod attribute;
mod counterfactual;
mod io;
mod patch;
mod pose;

pub use attribute::{gen_attribute_bias, AttributeConfig};
pub use counterfactual::{build_counterfactual, CounterfactualMode};
pub use io::{load_bundle, read_samples_csv, save_bundle, write_samples_csv, BundleMeta};
pub use patch::{gen_patch_bias, PatchConfig};
pub use pose::{gen_pose_bias, PoseConfig};

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dataset, ModelError};

#[derive(Debug, Error)]
pub enum BiasgenError {
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
    #[error("n = {requested} cannot realize the requested group ratio in every split; minimum feasible n is {minimum}")]
    InsufficientSamples { requested: usize, minimum: usize },
    #[error("counterfactual mode {mode} does not apply to the {scenario} scenario")]
    IncompatibleMode { mode: CounterfactualMode, scenario: Scenario },
    #[error("empty counterfactual set")]
    EmptyCounterfactual,
    #[error("bundle file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = BiasgenError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Patch,
    Attribute,
    Pose,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Patch => "patch",
            Scenario::Attribute => "attribute",
            Scenario::Pose => "pose",
        })
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "patch" => Ok(Scenario::Patch),
            "attribute" => Ok(Scenario::Attribute),
            "pose" => Ok(Scenario::Pose),
            other => Err(format!("unknown scenario `{other}` (expected patch, attribute or pose)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "lowercase")]
pub enum GeneratorConfig {
    Patch(PatchConfig),
    Attribute(AttributeConfig),
    Pose(PoseConfig),
}

impl GeneratorConfig {
    pub fn scenario(&self) -> Scenario {
        match self {
            GeneratorConfig::Patch(_) => Scenario::Patch,
            GeneratorConfig::Attribute(_) => Scenario::Attribute,
            GeneratorConfig::Pose(_) => Scenario::Pose,
        }
    }

    pub fn default_for(scenario: Scenario) -> Self {
        match scenario {
            Scenario::Patch => GeneratorConfig::Patch(PatchConfig::default()),
            Scenario::Attribute => GeneratorConfig::Attribute(AttributeConfig::default()),
            Scenario::Pose => GeneratorConfig::Pose(PoseConfig::default()),
        }
    }

    pub fn generate(&self, seed: u64) -> Result<DataBundle> {
        match self {
            GeneratorConfig::Patch(c) => gen_patch_bias(c, seed),
            GeneratorConfig::Attribute(c) => gen_attribute_bias(c, seed),
            GeneratorConfig::Pose(c) => gen_pose_bias(c, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub s: Vec<f64>,
    pub b: Vec<f64>,
    pub label: usize,
    /// Sensitive attribute: the bias flag (patch), the demographic group
    /// (attribute) or the pose bin 0/1/2 (pose).
    pub group: usize,
    pub bias_flag: bool,
}

impl Sample {
    pub fn features(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.s.len() + self.b.len());
        x.extend_from_slice(&self.s);
        x.extend_from_slice(&self.b);
        x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Counterfactual,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Counterfactual => "counterfactual",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataBundle {
    pub config: GeneratorConfig,
    pub seed: u64,
    pub num_classes: usize,
    pub d_s: usize,
    pub d_b: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Indices into `train`.
    pub retain: Vec<usize>,
    /// Indices into `train`.
    pub forget: Vec<usize>,
    pub counterfactual: Option<Vec<Sample>>,
}

impl DataBundle {
    pub fn scenario(&self) -> Scenario {
        self.config.scenario()
    }

    pub fn width(&self) -> usize {
        self.d_s + self.d_b
    }

    /// Class treated as "positive" by the binary fairness metrics.
    pub fn positive_class(&self) -> usize {
        match &self.config {
            GeneratorConfig::Patch(c) => c.target_class,
            GeneratorConfig::Attribute(_) => 1,
            GeneratorConfig::Pose(_) => 0,
        }
    }

    /// Binary sensitive group used by the fairness metrics. Pose samples are
    /// grouped by membership in the far (forget) bin.
    pub fn fairness_group(&self, sample: &Sample) -> usize {
        match self.scenario() {
            Scenario::Pose => usize::from(sample.group == 2),
            _ => sample.group,
        }
    }

    pub fn dataset(&self, samples: &[Sample]) -> Dataset {
        let width = self.width();
        let mut features = Vec::with_capacity(samples.len() * width);
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            features.extend_from_slice(&s.s);
            features.extend_from_slice(&s.b);
            labels.push(s.label);
        }
        Dataset::new(width, features, labels).unwrap_or_else(|_| Dataset::empty(width))
    }

    pub fn retain_samples(&self) -> Vec<Sample> {
        self.retain.iter().map(|&i| self.train[i].clone()).collect()
    }

    pub fn forget_samples(&self) -> Vec<Sample> {
        self.forget.iter().map(|&i| self.train[i].clone()).collect()
    }

    pub fn train_set(&self) -> Dataset {
        self.dataset(&self.train)
    }

    pub fn retain_set(&self) -> Dataset {
        self.dataset(&self.retain_samples())
    }

    pub fn forget_set(&self) -> Dataset {
        self.dataset(&self.forget_samples())
    }

    pub fn val_set(&self) -> Dataset {
        self.dataset(&self.val)
    }

    pub fn test_set(&self) -> Dataset {
        self.dataset(&self.test)
    }

    pub fn counterfactual_set(&self) -> Option<Dataset> {
        self.counterfactual.as_ref().map(|c| self.dataset(c))
    }
}

/// Rounded 70/10/20 split of `n`; each part is within one sample of its
/// exact share.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = (0.7 * n as f64).round() as usize;
    let val = ((0.1 * n as f64).round() as usize).min(n - train);
    (train, val, n - train - val)
}

pub(crate) fn normal_vec<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub(crate) fn unit_vec<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v = normal_vec(rng, d);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Plug-in mutual information (nats) of a contingency table.
pub fn mutual_information(table: &[Vec<usize>]) -> f64 {
    let total: usize = table.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let cols = table.first().map_or(0, Vec::len);
    let col_sums: Vec<f64> = (0..cols)
        .map(|j| table.iter().map(|r| r[j]).sum::<usize>() as f64)
        .collect();
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p * n * n / (rows[i] * col_sums[j])).ln();
            }
        }
    }
    mi
}
