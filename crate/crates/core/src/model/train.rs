use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{flop_count, Graph, Tensor};

use super::{Dataset, ModelError, ModelParams, ParamId, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 10,
            batch_size: 64,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(ModelError::InvalidConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(ModelError::InvalidConfig("Adam betas must lie in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(lr: f64, model: &ModelParams, ids: &[ParamId]) -> Self {
        let sizes: Vec<usize> = ids.iter().map(|&id| model.param(id).len()).collect();
        Self::new(lr, 0.9, 0.999, 1e-8, &sizes)
    }

    /// One descent step on the listed parameters.
    pub fn step(&mut self, model: &mut ModelParams, ids: &[ParamId], grads: &[Tensor]) {
        debug_assert_eq!(ids.len(), grads.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (&id, g)) in ids.iter().zip(grads).enumerate() {
            let p = model.param_mut(id).data_mut();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub wall_time_seconds: f64,
    /// Floating-point operations spent, as counted by the graph primitives.
    pub flops: u64,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Minibatch Adam on mean cross-entropy.
///
/// Each epoch shuffles the rows with its own ChaCha8 stream derived from
/// `config.seed`, then walks consecutive batches (the last one may be short).
/// Only [`ModelParams::trainable_ids`] are updated.
pub fn train(model: &ModelParams, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if data.width() != model.input_width() {
        return Err(ModelError::WidthMismatch {
            expected: model.input_width(),
            actual: data.width(),
        });
    }
    model.check_labels(data.labels())?;

    let start = Instant::now();
    let flops0 = flop_count();
    let mut model = model.clone();
    let ids = model.trainable_ids();
    let sizes: Vec<usize> = ids.iter().map(|&id| model.param(id).len()).collect();
    let mut adam = Adam::new(config.learning_rate, config.beta1, config.beta2, config.eps, &sizes);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut epoch_rng(config.seed, epoch));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = data.batch(chunk)?;
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let xv = g.leaf(x);
            let loss = model.loss_graph(&mut g, &bound, xv, &y)?;
            total += g.value(loss).item();
            batches += 1;
            let grads = g.backward(loss, &bound.vars_for(&ids))?;
            adam.step(&mut model, &ids, &grads);
        }
        epoch_losses.push(total / batches as f64);
    }

    Ok(TrainOutcome {
        model,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        flops: flop_count() - flops0,
        epoch_losses,
    })
}
