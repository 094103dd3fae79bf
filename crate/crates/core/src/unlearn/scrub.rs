use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::model::{Adam, BoundModel, Dataset, ModelParams};

use super::{sample_rows, Meter, Result, StepLog, StrategyConfig, UnlearnData, UnlearnError, UnlearnResult};

/// Mean `KL(teacher || student)` over the rows of `x`, differentiable in
/// the student.
fn kl_graph(g: &mut Graph, student: &ModelParams, bound: &BoundModel, teacher: &ModelParams, data: &Dataset) -> Result<Var> {
    let x = data.features()?;
    let t_lp = teacher.log_probs(&x)?;
    let t_p = Tensor::new(t_lp.shape(), t_lp.data().iter().map(|v| v.exp()).collect())?;
    // Entropy part sum p log p is a constant in the student.
    let neg_entropy: f64 = t_p.data().iter().zip(t_lp.data()).map(|(p, l)| p * l).sum();
    let xv = g.leaf(x);
    let logits = student.logits_graph(g, bound, xv)?;
    let s_lp = student.log_probs_graph(g, logits)?;
    let pv = g.leaf(t_p);
    let cross = g.dot(pv, s_lp)?;
    let n = data.len() as f64;
    let kl = g.scale(cross, -1.0 / n)?;
    let c = g.leaf(Tensor::scalar(neg_entropy / n));
    Ok(g.add(kl, c)?)
}

/// Single-phase teacher-student unlearning.
///
/// The student starts from `baseline`. Each step minimizes
/// `KL_r + CE_r - min(KL_f, kl_clip)` with Adam, where the KL terms compare
/// the teacher's and student's predictive distributions on a retain batch
/// and a forget batch. When the forget KL reaches the clip it contributes a
/// constant and no gradient.
///
/// Logged extra columns: `kl_retain`, `kl_forget`, `objective`; the forget
/// and retain loss columns hold the student's cross-entropy.
pub fn scrub_unlearn(
    baseline: &ModelParams,
    teacher: &ModelParams,
    data: &UnlearnData,
    cfg: &StrategyConfig,
) -> Result<UnlearnResult> {
    cfg.validate()?;
    if !baseline.same_architecture(teacher) {
        return Err(UnlearnError::ArchitectureMismatch {
            teacher: teacher.layer_sizes(),
            student: baseline.layer_sizes(),
        });
    }
    if data.retain.is_empty() {
        return Err(UnlearnError::EmptyRetain);
    }
    let meter = Meter::start();
    let mut student = baseline.clone();
    let ids = student.trainable_ids();
    let mut adam = Adam::for_params(cfg.eta, &student, &ids);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = StepLog::with_columns(&["kl_retain", "kl_forget", "objective"]);

    for _ in 0..cfg.steps {
        let retain = sample_rows(&data.retain, cfg.batch_size, &mut rng);
        let forget = if data.forget.is_empty() {
            None
        } else {
            Some(sample_rows(&data.forget, cfg.batch_size, &mut rng))
        };

        let mut g = Graph::new();
        let bound = student.bind(&mut g);
        let kl_r = kl_graph(&mut g, &student, &bound, teacher, &retain)?;
        let xr = g.leaf(retain.features()?);
        let ce_r = student.loss_graph(&mut g, &bound, xr, retain.labels())?;
        let mut objective = g.add(kl_r, ce_r)?;
        let (kl_f_value, ce_f_value) = match &forget {
            Some(f) => {
                let kl_f = kl_graph(&mut g, &student, &bound, teacher, f)?;
                let value = g.value(kl_f).item();
                let xf = g.leaf(f.features()?);
                let ce_f = student.loss_graph(&mut g, &bound, xf, f.labels())?;
                let ce_value = g.value(ce_f).item();
                objective = if value < cfg.kl_clip {
                    g.sub(objective, kl_f)?
                } else {
                    let clip = g.leaf(Tensor::scalar(cfg.kl_clip));
                    g.sub(objective, clip)?
                };
                (value, ce_value)
            }
            None => (0.0, f64::NAN),
        };
        let kl_r_value = g.value(kl_r).item();
        let ce_r_value = g.value(ce_r).item();
        let obj_value = g.value(objective).item();
        let grads = g.backward(objective, &bound.vars_for(&ids))?;
        log.push(ce_f_value, ce_r_value, vec![kl_r_value, kl_f_value, obj_value]);
        adam.step(&mut student, &ids, &grads);
    }
    Ok(meter.finish(student, log, false, None))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::setup;
    use super::super::Strategy;
    use super::*;
    use crate::model::{init_model, Head};

    fn cfg(steps: usize) -> StrategyConfig {
        StrategyConfig {
            steps,
            eta: 1e-2,
            batch_size: 32,
            ..StrategyConfig::new(Strategy::Scrub)
        }
    }

    #[test]
    fn student_equal_to_teacher_starts_at_zero_kl() {
        let (base, data) = setup();
        let out = scrub_unlearn(&base, &base, &data, &cfg(1)).unwrap();
        let r = &out.step_log.records[0];
        assert!(r.extra[0].abs() < 1e-12);
        assert!(r.extra[1].abs() < 1e-12);
    }

    #[test]
    fn logged_objective_decomposes() {
        let (base, data) = setup();
        let teacher = init_model(&[3, 8, 3], Head::Softmax, 99).unwrap();
        let out = scrub_unlearn(&base, &teacher, &data, &cfg(8)).unwrap();
        for r in &out.step_log.records {
            let total = r.extra[0] + r.retain_loss - r.extra[1].min(10.0);
            assert!((total - r.extra[2]).abs() <= 1e-10);
        }
    }

    #[test]
    fn architecture_mismatch_rejected() {
        let (base, data) = setup();
        let teacher = init_model(&[3, 5, 3], Head::Softmax, 0).unwrap();
        assert!(matches!(
            scrub_unlearn(&base, &teacher, &data, &cfg(1)),
            Err(UnlearnError::ArchitectureMismatch { .. })
        ));
    }
}
