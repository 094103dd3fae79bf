//! Generator, model and strategy behavior checked against independent
//! oracles on small fixed-seed problems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use biaslab::autodiff::{Graph, Tensor};
use biaslab::biasgen::{
    gen_attribute_bias, gen_pose_bias, mutual_information, AttributeConfig, PoseConfig, Sample, Scenario,
};
use biaslab::eval::{accuracy, b_block_mass, demographic_parity_gap, saliency_batch};
use biaslab::harness::{prepare_bundle, train_baseline, ExperimentConfig};
use biaslab::model::{init_model, train, Adam, Dataset, Head, ParamId, TrainConfig};
use biaslab::unlearn::{
    fmd_unlearn, gradient_ascent, lora_unlearn, scrub_unlearn, Strategy, StrategyConfig, UnlearnData,
};

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Two Gaussian blobs per class on a circle; labels `0..k`.
fn blobs(k: usize, per_class: usize, radius: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for c in 0..k {
        let angle = std::f64::consts::TAU * c as f64 / k as f64;
        for _ in 0..per_class {
            x.push(radius * angle.cos() + 0.5 * gaussian(&mut rng));
            x.push(radius * angle.sin() + 0.5 * gaussian(&mut rng));
            y.push(c);
        }
    }
    Dataset::new(2, x, y).unwrap()
}

fn class_bin_table(samples: &[Sample], k: usize) -> Vec<Vec<usize>> {
    let mut t = vec![vec![0; 3]; k];
    for s in samples {
        t[s.label][s.group] += 1;
    }
    t
}

fn patch_setup(seed: u64) -> (ExperimentConfig, biaslab::biasgen::DataBundle, biaslab::model::ModelParams) {
    let mut cfg = ExperimentConfig::default_for(Scenario::Patch);
    cfg.seed = seed;
    let bundle = prepare_bundle(&cfg).unwrap();
    let base = train_baseline(&cfg, &bundle).unwrap().model;
    (cfg, bundle, base)
}

#[test]
fn separable_blobs_are_fit() {
    let data = blobs(2, 100, 4.0, 3);
    // Perceptron oracle: the two blobs are linearly separable.
    let mut w = [0.0f64; 3];
    let mut clean_pass = false;
    for _ in 0..1000 {
        let mut mistakes = 0;
        for i in 0..data.len() {
            let r = data.row(i);
            let t = if data.labels()[i] == 1 { 1.0 } else { -1.0 };
            if t * (w[0] * r[0] + w[1] * r[1] + w[2]) <= 0.0 {
                w = [w[0] + t * r[0], w[1] + t * r[1], w[2] + t];
                mistakes += 1;
            }
        }
        if mistakes == 0 {
            clean_pass = true;
            break;
        }
    }
    assert!(clean_pass, "blob data should be separable");

    let model = init_model(&[2, 16, 2], Head::Softmax, 1).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 100,
        batch_size: 32,
        seed: 1,
        ..Default::default()
    };
    let out = train(&model, &data, &cfg).unwrap();
    assert!(accuracy(&out.model, &data).unwrap() >= 0.99);
}

#[test]
fn convex_training_loss_is_monotone() {
    let data = blobs(3, 40, 1.0, 5);
    let model = init_model(&[2, 3], Head::Softmax, 2).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 30,
        batch_size: data.len(),
        seed: 0,
        ..Default::default()
    };
    let losses = train(&model, &data, &cfg).unwrap().epoch_losses;
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{losses:?}");
    }
}

#[test]
fn full_rank_adapter_fits_any_update() {
    let (d, k) = (4, 6);
    let base = init_model(&[k, d], Head::Softmax, 3).unwrap();
    let mut model = base.attach_lora(&[0], d.min(k), 4).unwrap();
    let ids = vec![ParamId::LoraA(0), ParamId::LoraB(0)];
    let shape = model.adapters()[&0].delta().shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let target = Tensor::new(&shape, (0..shape[0] * shape[1]).map(|_| gaussian(&mut rng)).collect()).unwrap();
    let mut adam = Adam::for_params(1e-2, &model, &ids);
    let mut err = f64::INFINITY;
    for step in 0..20_000 {
        if step == 10_000 {
            adam = Adam::for_params(1e-3, &model, &ids);
        }
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let (a, b) = (bound.get(ids[0]), bound.get(ids[1]));
        let t = g.leaf(target.clone());
        let ab = g.matmul(a, b).unwrap();
        let diff = g.sub(ab, t).unwrap();
        let loss = g.sq_norm(diff).unwrap();
        err = g.value(loss).item().sqrt();
        if err <= 1e-4 {
            break;
        }
        let grads = g.backward(loss, &[a, b]).unwrap();
        adam.step(&mut model, &ids, &grads);
    }
    // Least-squares oracle: any d x k matrix factors exactly at rank min(d, k).
    assert!(err <= 1e-3, "Frobenius error {err}");
}

#[test]
fn attribute_cell_counts_follow_the_ratio() {
    let b = gen_attribute_bias(
        &AttributeConfig {
            n: 2000,
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let pos: Vec<&Sample> = b.train.iter().filter(|s| s.label == 1).collect();
    assert_eq!(pos.len(), 700);
    assert_eq!(pos.iter().filter(|s| s.group == 0).count(), 600);
    assert_eq!(pos.iter().filter(|s| s.group == 1).count(), 100);
    let mut all: Vec<usize> = b.retain.iter().chain(&b.forget).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..b.train.len()).collect::<Vec<_>>());
}

#[test]
fn balanced_attribute_bundle_has_parity_under_the_bayes_rule() {
    let b = gen_attribute_bias(
        &AttributeConfig {
            n: 20_000,
            corr_ratio: 1.0,
            ..Default::default()
        },
        2,
    )
    .unwrap();
    // Plug-in Bayes rule for equal-covariance Gaussians: project `s` on the
    // difference of the label-conditional means.
    let d = b.d_s;
    let mean = |label: usize| {
        let rows: Vec<&Sample> = b.train.iter().filter(|s| s.label == label).collect();
        (0..d)
            .map(|j| rows.iter().map(|s| s.s[j]).sum::<f64>() / rows.len() as f64)
            .collect::<Vec<_>>()
    };
    let (m0, m1) = (mean(0), mean(1));
    let mid: Vec<f64> = m0.iter().zip(&m1).map(|(a, b)| (a + b) / 2.0).collect();
    let pred: Vec<bool> = b
        .test
        .iter()
        .map(|s| (0..d).map(|j| (s.s[j] - mid[j]) * (m1[j] - m0[j])).sum::<f64>() > 0.0)
        .collect();
    let groups: Vec<bool> = b.test.iter().map(|s| s.group == 1).collect();
    let gap = demographic_parity_gap(&pred, &groups).unwrap();
    assert!(gap <= 0.05, "DP gap {gap}");
}

#[test]
fn pose_skew_controls_class_bin_information() {
    let uniform = gen_pose_bias(
        &PoseConfig {
            skew: 0.0,
            num_classes: 4,
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let skewed = gen_pose_bias(
        &PoseConfig {
            skew: 0.8,
            num_classes: 4,
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let all = |b: &biaslab::biasgen::DataBundle| -> Vec<Sample> {
        b.train.iter().chain(&b.val).chain(&b.test).cloned().collect()
    };
    let mi0 = mutual_information(&class_bin_table(&all(&uniform), 4));
    let mi8 = mutual_information(&class_bin_table(&all(&skewed), 4));
    assert!(mi0 <= 0.02, "skew 0: {mi0}");
    assert!(mi8 > 0.1, "skew 0.8: {mi8}");
}

#[test]
fn patch_marker_is_a_working_shortcut() {
    let (cfg, bundle, base) = patch_setup(2);
    let data = UnlearnData::from_bundle(&bundle);
    let retain_only = train(
        &cfg.architecture(bundle.width(), bundle.num_classes).init(7).unwrap(),
        &data.retain,
        &cfg.baseline_train(),
    )
    .unwrap()
    .model;
    let fa_base = accuracy(&base, &data.forget).unwrap();
    let fa_retain = accuracy(&retain_only, &data.forget).unwrap();
    assert!(fa_base >= 0.95, "baseline FA {fa_base}");
    assert!(fa_retain <= 0.95, "retain-only FA {fa_retain}");
}

#[test]
fn bias_free_oracle_ignores_the_bias_block() {
    let (cfg, bundle, _) = patch_setup(3);
    let zero_b = |samples: &[Sample]| {
        let mut d = bundle.dataset(samples);
        let mut x = d.features().unwrap().into_data();
        let w = bundle.width();
        for row in x.chunks_mut(w) {
            row[bundle.d_s..].iter_mut().for_each(|v| *v = 0.0);
        }
        d = Dataset::new(w, x, d.labels().to_vec()).unwrap();
        d
    };
    let init = cfg.architecture(bundle.width(), bundle.num_classes).init(11).unwrap();
    let mut oracle = train(&init, &zero_b(&bundle.train), &cfg.baseline_train()).unwrap().model;
    // The b-block inputs were always zero, so their first-layer weights are
    // untouched initial noise; a bias-free oracle does not read them.
    let w = oracle.param_mut(ParamId::Weight(0));
    let cols = w.cols();
    for (k, v) in w.data_mut().iter_mut().enumerate() {
        if k % cols >= bundle.d_s {
            *v = 0.0;
        }
    }
    let test = bundle.test_set();
    let a = oracle.predict(&test.features().unwrap()).unwrap();
    let b = oracle.predict(&zero_b(&bundle.test).features().unwrap()).unwrap();
    let changed = a.iter().zip(&b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64;
    assert!(changed <= 0.01, "{changed}");
    assert!(accuracy(&oracle, &test).unwrap() > 0.5);
}

/// Convex multinomial logistic model on three separated blobs.
fn convex_problem() -> (biaslab::model::ModelParams, UnlearnData) {
    let data = blobs(3, 40, 2.0, 21);
    let model = train(
        &init_model(&[2, 3], Head::Softmax, 1).unwrap(),
        &data,
        &TrainConfig {
            learning_rate: 5e-2,
            epochs: 50,
            batch_size: 30,
            seed: 1,
            ..Default::default()
        },
    )
    .unwrap()
    .model;
    let forget: Vec<usize> = (0..data.len()).filter(|&i| data.labels()[i] == 0).collect();
    let retain: Vec<usize> = (0..data.len()).filter(|&i| data.labels()[i] != 0).collect();
    let unlearn = UnlearnData {
        retain: data.subset(&retain),
        forget: data.subset(&forget),
        counterfactual: None,
        counterfactual_sources: None,
    };
    (model, unlearn)
}

#[test]
fn gradient_ascent_raises_forget_loss() {
    let (model, data) = convex_problem();
    let cfg = StrategyConfig {
        alpha: 0.0,
        eta: 1e-3,
        steps: 11,
        ..StrategyConfig::new(Strategy::GradientAscent)
    };
    let out = gradient_ascent(&model, &data, &cfg).unwrap();
    let trace: Vec<f64> = out.step_log.records.iter().map(|r| r.forget_loss).collect();
    for w in trace.windows(2) {
        assert!(w[1] > w[0], "{trace:?}");
    }
}

#[test]
fn lora_without_forget_term_only_fine_tunes() {
    let (model, data) = convex_problem();
    let cfg = StrategyConfig {
        beta: 0.0,
        eta: 1e-3,
        steps: 11,
        rank: 2,
        full_batch: true,
        ..StrategyConfig::new(Strategy::Lora)
    };
    let out = lora_unlearn(&model, &data, &cfg).unwrap();
    let trace: Vec<f64> = out.step_log.records.iter().map(|r| r.retain_loss).collect();
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{trace:?}");
    }
}

#[test]
fn scrub_separates_forget_and_retain_divergence() {
    let (cfg, bundle, base) = patch_setup(1);
    let data = UnlearnData::from_bundle(&bundle);
    let gold = biaslab::harness::train_gold(&cfg, &bundle, &data).unwrap().model;
    let s = cfg.seeded_strategy(cfg.strategies.iter().find(|s| s.strategy == Strategy::Scrub).unwrap());
    let out = scrub_unlearn(&base, &gold, &data, &s).unwrap();
    let last = |c: &str| *out.step_log.column(c).unwrap().last().unwrap();
    assert!(last("kl_forget") > last("kl_retain"));
}

#[test]
fn scrub_with_empty_forget_set_is_distillation() {
    let (model, mut data) = convex_problem();
    let teacher = model.clone();
    let student = init_model(&[2, 3], Head::Softmax, 99).unwrap();
    data.forget = Dataset::empty(2);
    let cfg = StrategyConfig {
        eta: 1e-2,
        steps: 400,
        seed: 3,
        ..StrategyConfig::new(Strategy::Scrub)
    };
    let out = scrub_unlearn(&student, &teacher, &data, &cfg).unwrap();
    let got = accuracy(&out.model, &data.retain).unwrap();
    let want = accuracy(&teacher, &data.retain).unwrap();
    assert!((got - want).abs() <= 0.02, "student {got} teacher {want}");
}

#[test]
fn fmd_step_helps_on_held_out_masked_probes() {
    let (cfg, bundle, base) = patch_setup(1);
    let data = UnlearnData::from_bundle(&bundle);
    // Held-out masked copies: flagged test samples with fresh background noise.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let probes: Vec<Sample> = bundle
        .test
        .iter()
        .filter(|s| s.bias_flag && s.label == bundle.positive_class())
        .map(|s| Sample {
            b: (0..s.b.len()).map(|_| rng.sample(StandardNormal)).collect(),
            ..s.clone()
        })
        .collect();
    let probes = bundle.dataset(&probes);
    let s = cfg.seeded_strategy(cfg.strategies.iter().find(|s| s.strategy == Strategy::Fmd).unwrap());
    let out = fmd_unlearn(&base, &data, &s).unwrap();
    let before = accuracy(&base, &probes).unwrap();
    let after = accuracy(&out.model, &probes).unwrap();
    assert!(after > before, "before {before} after {after}");
}

#[test]
fn baseline_saliency_leans_on_the_bias_block_more_than_gold() {
    let (cfg, bundle, base) = patch_setup(1);
    let data = UnlearnData::from_bundle(&bundle);
    let gold = biaslab::harness::train_gold(&cfg, &bundle, &data).unwrap().model;
    // Probe on marked target-class test images, where the shortcut applies.
    let flagged: Vec<Sample> = bundle
        .test
        .iter()
        .filter(|s| s.bias_flag && s.label == bundle.positive_class())
        .cloned()
        .collect();
    let probes = bundle.dataset(&flagged);
    let mass = |m: &biaslab::model::ModelParams| {
        let sal = saliency_batch(m, &probes).unwrap();
        sal.iter().map(|s| b_block_mass(s, bundle.d_s)).sum::<f64>() / sal.len() as f64
    };
    let (b, g) = (mass(&base), mass(&gold));
    assert!(b > 2.0 * g, "baseline {b} gold {g}");
}
