use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{ModelParams, ParamId};

use super::{loss_and_grad, mean_loss, sample_rows, Meter, Result, StepLog, StrategyConfig, UnlearnData, UnlearnError, UnlearnResult};

/// Forget losses above this stop the run.
const DIVERGENCE_LOSS: f64 = 50.0;

/// Signed-gradient ascent `θ <- θ + η ∇(L_f - α L_r)`.
///
/// Every step uses the whole forget set and a fresh retain minibatch of the
/// same size. If the forget loss exceeds 50 or a parameter turns
/// non-finite, the run stops and returns the last state before that update
/// with `truncated` set.
pub fn gradient_ascent(model: &ModelParams, data: &UnlearnData, cfg: &StrategyConfig) -> Result<UnlearnResult> {
    cfg.validate()?;
    if data.forget.is_empty() {
        return Err(UnlearnError::EmptyForget);
    }
    if data.retain.is_empty() && cfg.alpha > 0.0 {
        return Err(UnlearnError::EmptyRetain);
    }
    let meter = Meter::start();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ids: Vec<ParamId> = model.trainable_ids();
    let mut current = model.clone();
    let mut log = StepLog::with_columns(&[]);
    let mut truncated = false;

    for _ in 0..cfg.steps {
        let (lf, gf) = loss_and_grad(&current, &ids, &data.forget)?;
        let (lr, gr) = if cfg.alpha > 0.0 {
            let batch = sample_rows(&data.retain, data.forget.len(), &mut rng);
            loss_and_grad(&current, &ids, &batch)?
        } else {
            (f64::NAN, Vec::new())
        };
        let mut next = current.clone();
        for (k, &id) in ids.iter().enumerate() {
            let p = next.param_mut(id).data_mut();
            for (i, v) in p.iter_mut().enumerate() {
                let retain = if cfg.alpha > 0.0 { gr[k].data()[i] } else { 0.0 };
                *v += cfg.eta * (gf[k].data()[i] - cfg.alpha * retain);
            }
        }
        log.push(lf, lr, Vec::new());
        let diverged = !next.all_finite() || {
            let after = mean_loss(&next, &data.forget);
            !matches!(after, Ok(l) if l <= DIVERGENCE_LOSS)
        };
        if diverged {
            truncated = true;
            break;
        }
        current = next;
    }
    Ok(meter.finish(current, log, truncated, None))
}
