use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::model::{Adam, ModelParams};

use super::{sample_rows, Meter, Result, StepLog, StrategyConfig, UnlearnData, UnlearnError, UnlearnResult};

/// Default adapter site: the last hidden layer, or the only layer of a
/// linear model.
pub fn lora_target_layer(model: &ModelParams) -> usize {
    model.layers().len().saturating_sub(2)
}

/// Optimizes rank-`r` adapters on a frozen base to minimize
/// `L_r - β L_f` with Adam (learning rate `eta`).
///
/// The returned model keeps its adapters attached; use
/// [`ModelParams::merge_lora`] for a dense view.
pub fn lora_unlearn(model: &ModelParams, data: &UnlearnData, cfg: &StrategyConfig) -> Result<UnlearnResult> {
    cfg.validate()?;
    if data.retain.is_empty() {
        return Err(UnlearnError::EmptyRetain);
    }
    let meter = Meter::start();
    let layer = cfg.lora_layer.unwrap_or_else(|| lora_target_layer(model));
    let mut current = model.detach_lora().attach_lora(&[layer], cfg.rank, cfg.seed)?;
    let ids = current.trainable_ids();
    let mut adam = Adam::for_params(cfg.eta, &current, &ids);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut log = StepLog::with_columns(&["objective"]);
    let use_forget = !data.forget.is_empty() && cfg.beta > 0.0;

    for _ in 0..cfg.steps {
        let retain = if cfg.full_batch {
            data.retain.clone()
        } else {
            sample_rows(&data.retain, cfg.batch_size, &mut rng)
        };
        let mut g = Graph::new();
        let bound = current.bind(&mut g);
        let xr = g.leaf(retain.features()?);
        let lr = current.loss_graph(&mut g, &bound, xr, retain.labels())?;
        let (objective, lf_value) = if use_forget {
            let xf = g.leaf(data.forget.features()?);
            let lf = current.loss_graph(&mut g, &bound, xf, data.forget.labels())?;
            let scaled = g.scale(lf, cfg.beta)?;
            (g.sub(lr, scaled)?, g.value(lf).item())
        } else {
            (lr, f64::NAN)
        };
        let lr_value = g.value(lr).item();
        let obj_value = g.value(objective).item();
        let grads = g.backward(objective, &bound.vars_for(&ids))?;
        log.push(lf_value, lr_value, vec![obj_value]);
        adam.step(&mut current, &ids, &grads);
    }
    Ok(meter.finish(current, log, false, None))
}
