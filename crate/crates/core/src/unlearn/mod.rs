//! Unlearning strategies. Each maps a baseline model plus the retain,
//! forget and (optionally) counterfactual data to a new model, a per-step
//! loss log and the time the strategy itself consumed.
//!
//! Every strategy treats its input model as immutable and returns a fresh
//! parameter set.

mod fmd;
mod ga;
mod influence;
mod lora;
mod scrub;

pub use fmd::{fmd_newton_step, fmd_unlearn, NewtonOutcome};
pub use ga::gradient_ascent;
pub use influence::{influence, InfluenceEstimate, InfluenceSolver};
pub use lora::{lora_unlearn, lora_target_layer};
pub use scrub::scrub_unlearn;

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{flop_count, AutodiffError, Graph, Tensor};
use crate::biasgen::DataBundle;
use crate::model::{train, Architecture, Dataset, ModelError, ModelParams, ParamId, TrainConfig};

#[derive(Debug, Error)]
pub enum UnlearnError {
    #[error("the retain set is empty")]
    EmptyRetain,
    #[error("the forget set is empty")]
    EmptyForget,
    #[error("the counterfactual set is empty or missing")]
    EmptyCounterfactual,
    #[error("invalid strategy config: {0}")]
    InvalidConfig(String),
    #[error("teacher and student architectures differ: {teacher:?} vs {student:?}")]
    ArchitectureMismatch { teacher: Vec<usize>, student: Vec<usize> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = UnlearnError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Hard,
    GradientAscent,
    Lora,
    Scrub,
    Fmd,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Hard,
        Strategy::GradientAscent,
        Strategy::Lora,
        Strategy::Scrub,
        Strategy::Fmd,
    ];

    /// Row label used in result tables.
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Hard => "Hard",
            Strategy::GradientAscent => "GA",
            Strategy::Lora => "LoRA",
            Strategy::Scrub => "SCRUB",
            Strategy::Fmd => "FMD",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Hard => "hard",
            Strategy::GradientAscent => "gradient_ascent",
            Strategy::Lora => "lora",
            Strategy::Scrub => "scrub",
            Strategy::Fmd => "fmd",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.to_string() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected hard, gradient_ascent, lora, scrub or fmd)"))
    }
}

/// Which parameters the FMD Newton step touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianScope {
    Head,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// Step size: plain ascent rate for GA, Adam learning rate for LoRA,
    /// SCRUB and the FMD head fine-tune.
    pub eta: f64,
    /// Retain-loss weight in GA.
    pub alpha: f64,
    /// Forget-loss weight in LoRA.
    pub beta: f64,
    pub rank: usize,
    pub steps: usize,
    /// Tikhonov damping added to the Hessian (FMD, influence).
    pub damping: f64,
    pub seed: u64,
    /// Retain minibatch size for LoRA and SCRUB.
    pub batch_size: usize,
    /// LoRA: use the whole retain set every step instead of a minibatch.
    pub full_batch: bool,
    /// LoRA adapter layer; defaults to the last hidden layer.
    pub lora_layer: Option<usize>,
    /// SCRUB: per-batch cap on the forget KL term.
    pub kl_clip: f64,
    pub hessian_scope: HessianScope,
    pub cg_max_iter: usize,
    pub cg_tol: f64,
    /// FMD: Adam steps on the counterfactual set after the Newton step.
    pub finetune_steps: usize,
    /// FMD: weight of the embedding-distance term (full scope only).
    pub contrastive_weight: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::GradientAscent,
            eta: 1e-3,
            alpha: 1.0,
            beta: 1.0,
            rank: 8,
            steps: 50,
            damping: 1e-2,
            seed: 0,
            batch_size: 64,
            full_batch: false,
            lora_layer: None,
            kl_clip: 10.0,
            hessian_scope: HessianScope::Head,
            cg_max_iter: 200,
            cg_tol: 1e-10,
            finetune_steps: 0,
            contrastive_weight: 1.0,
        }
    }
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(UnlearnError::InvalidConfig(m.to_string()));
        let uses_eta = matches!(
            self.strategy,
            Strategy::GradientAscent | Strategy::Lora | Strategy::Scrub
        ) || (self.strategy == Strategy::Fmd && self.finetune_steps > 0);
        if uses_eta && !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive and finite");
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return bad("alpha and beta must be non-negative");
        }
        if !(self.damping >= 0.0) || !self.damping.is_finite() {
            return bad("damping must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.kl_clip > 0.0) {
            return bad("kl_clip must be positive");
        }
        Ok(())
    }
}

/// Per-step record: the loss on the forget and retain data before the
/// step's update, plus strategy-specific columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub forget_loss: f64,
    pub retain_loss: f64,
    pub extra: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub extra_columns: Vec<String>,
    pub records: Vec<StepRecord>,
}

impl StepLog {
    pub fn with_columns(columns: &[&str]) -> Self {
        Self {
            extra_columns: columns.iter().map(|c| c.to_string()).collect(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, forget_loss: f64, retain_loss: f64, extra: Vec<f64>) {
        debug_assert_eq!(extra.len(), self.extra_columns.len());
        let step = self.records.len();
        self.records.push(StepRecord {
            step,
            forget_loss,
            retain_loss,
            extra,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.extra_columns.iter().position(|c| c == name)?;
        Some(self.records.iter().map(|r| r.extra[k]).collect())
    }

    /// Comma-separated table with a header line.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "step,forget_loss,retain_loss")?;
        for c in &self.extra_columns {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
        for r in &self.records {
            write!(out, "{},{},{}", r.step, r.forget_loss, r.retain_loss)?;
            for v in &r.extra {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
    /// The Krylov solve failed and a `gradient / damping` step was used.
    pub fallback: bool,
    pub step_norm: f64,
}

#[derive(Clone, Debug)]
pub struct UnlearnResult {
    pub model: ModelParams,
    pub wall_time_seconds: f64,
    /// Floating-point work spent inside the strategy.
    pub flops: u64,
    pub step_log: StepLog,
    /// The divergence guard stopped the run early.
    pub truncated: bool,
    pub solver: Option<SolverReport>,
}

/// Retain, forget and counterfactual data in model-ready form.
#[derive(Clone, Debug)]
pub struct UnlearnData {
    pub retain: Dataset,
    pub forget: Dataset,
    pub counterfactual: Option<Dataset>,
    /// Originals matching the counterfactual rows one to one, when such a
    /// pairing exists (masked patches).
    pub counterfactual_sources: Option<Dataset>,
}

impl UnlearnData {
    pub fn from_bundle(bundle: &DataBundle) -> Self {
        let counterfactual = bundle.counterfactual_set();
        let sources = match &bundle.counterfactual {
            Some(c) if c.len() == bundle.forget.len() && bundle.scenario() == crate::biasgen::Scenario::Patch => {
                Some(bundle.forget_set())
            }
            _ => None,
        };
        Self {
            retain: bundle.retain_set(),
            forget: bundle.forget_set(),
            counterfactual,
            counterfactual_sources: sources,
        }
    }
}

/// Measures wall time and graph work for a strategy body.
pub(crate) struct Meter {
    start: Instant,
    flops: u64,
}

impl Meter {
    pub(crate) fn start() -> Self {
        Self {
            start: Instant::now(),
            flops: flop_count(),
        }
    }

    pub(crate) fn finish(
        self,
        model: ModelParams,
        step_log: StepLog,
        truncated: bool,
        solver: Option<SolverReport>,
    ) -> UnlearnResult {
        UnlearnResult {
            model,
            wall_time_seconds: self.start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE),
            flops: flop_count() - self.flops,
            step_log,
            truncated,
            solver,
        }
    }
}

/// Mean cross-entropy on `data` and its gradient for `ids`.
pub(crate) fn loss_and_grad(model: &ModelParams, ids: &[ParamId], data: &Dataset) -> Result<(f64, Vec<Tensor>)> {
    let x = data.features()?;
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let xv = g.leaf(x);
    let loss = model.loss_graph(&mut g, &bound, xv, data.labels())?;
    let value = g.value(loss).item();
    let grads = g.backward(loss, &bound.vars_for(ids))?;
    Ok((value, grads))
}

pub(crate) fn mean_loss(model: &ModelParams, data: &Dataset) -> Result<f64> {
    Ok(model.loss(&data.features()?, data.labels())?)
}

/// `k` distinct rows of `data` chosen by `rng` (all rows when `k >= len`).
pub(crate) fn sample_rows<R: Rng>(data: &Dataset, k: usize, rng: &mut R) -> Dataset {
    if k >= data.len() {
        return data.clone();
    }
    let mut idx = index::sample(rng, data.len(), k).into_vec();
    idx.sort_unstable();
    data.subset(&idx)
}

/// Exact unlearning: a freshly initialized model trained on the retain set.
pub fn hard_unlearn(
    architecture: &Architecture,
    init_seed: u64,
    data: &UnlearnData,
    config: &TrainConfig,
) -> Result<UnlearnResult> {
    if data.retain.is_empty() {
        return Err(UnlearnError::EmptyRetain);
    }
    let meter = Meter::start();
    let init = architecture.init(init_seed)?;
    let out = train(&init, &data.retain, config)?;
    // One row per epoch with the mean training loss. The forget loss is
    // only evaluated for the final weights (NaN on earlier rows).
    let final_forget = if data.forget.is_empty() {
        f64::NAN
    } else {
        mean_loss(&out.model, &data.forget)?
    };
    let mut log = StepLog::with_columns(&[]);
    let last = out.epoch_losses.len().saturating_sub(1);
    for (e, l) in out.epoch_losses.iter().enumerate() {
        log.push(if e == last { final_forget } else { f64::NAN }, *l, Vec::new());
    }
    Ok(meter.finish(out.model, log, false, None))
}

/// Inputs a strategy may need beyond the baseline and its config.
pub struct StrategyInputs<'a> {
    pub baseline: &'a ModelParams,
    pub data: &'a UnlearnData,
    /// Gold model, the SCRUB teacher.
    pub gold: Option<&'a ModelParams>,
    /// Training recipe for hard unlearning.
    pub train_config: &'a TrainConfig,
    /// Initialization seed for hard unlearning.
    pub init_seed: u64,
}

pub fn run_strategy(config: &StrategyConfig, inputs: &StrategyInputs<'_>) -> Result<UnlearnResult> {
    config.validate()?;
    match config.strategy {
        Strategy::Hard => hard_unlearn(
            &inputs.baseline.architecture(),
            inputs.init_seed,
            inputs.data,
            inputs.train_config,
        ),
        Strategy::GradientAscent => gradient_ascent(inputs.baseline, inputs.data, config),
        Strategy::Lora => lora_unlearn(inputs.baseline, inputs.data, config),
        Strategy::Scrub => {
            let teacher = inputs
                .gold
                .ok_or_else(|| UnlearnError::InvalidConfig("SCRUB needs a teacher model".into()))?;
            scrub_unlearn(inputs.baseline, teacher, inputs.data, config)
        }
        Strategy::Fmd => fmd_unlearn(inputs.baseline, inputs.data, config),
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn hard_unlearn_is_deterministic() {
        let (base, data) = setup();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 3,
            batch_size: 16,
            ..Default::default()
        };
        let a = hard_unlearn(&base.architecture(), 1, &data, &cfg).unwrap();
        let b = hard_unlearn(&base.architecture(), 1, &data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.wall_time_seconds > 0.0);
        assert_eq!(a.step_log.len(), 3);
    }

    #[test]
    fn hard_unlearn_rejects_empty_retain() {
        let (base, mut data) = setup();
        data.retain = Dataset::empty(3);
        let err = hard_unlearn(&base.architecture(), 1, &data, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, UnlearnError::EmptyRetain));
    }

    #[test]
    fn step_log_table_layout() {
        let mut log = StepLog::with_columns(&["objective"]);
        log.push(1.5, 0.25, vec![-1.25]);
        let mut buf = Vec::new();
        log.write_table(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,forget_loss,retain_loss,objective\n0,1.5,0.25,-1.25\n"
        );
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
    }

    #[test]
    fn zero_eta_rejected_for_ascent() {
        let cfg = StrategyConfig {
            eta: 0.0,
            ..StrategyConfig::new(Strategy::GradientAscent)
        };
        assert!(cfg.validate().is_err());
    }
}
