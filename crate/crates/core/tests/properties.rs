use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use biaslab::autodiff::{cg_solve, gradient, hessian_vector_product, AutodiffError, Graph, Tensor, Var};
use biaslab::biasgen::{split_counts, GeneratorConfig, Scenario};
use biaslab::cobum::{composite, CoBumParams};
use biaslab::eval::{auc_from_scores, demographic_parity_gap, equalized_odds_gap, fairness_drop_pct};
use biaslab::model::{init_model, Dataset, Head, ModelParams};

fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn logistic_loss<'a>(model: &'a ModelParams, data: &'a Dataset) -> impl Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError> + 'a {
    let ids = model.param_ids();
    move |g, vars| {
        let bound = model.bind_with(g, &ids, vars);
        let x = g.leaf(data.features().unwrap());
        model
            .loss_graph(g, &bound, x, data.labels())
            .map_err(|e| AutodiffError::InvalidArgument(e.to_string()))
    }
}

fn cobum_scores() -> impl Strategy<Value = [f64; 5]> {
    prop::array::uniform5(0.01f64..=1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cg_residual_never_increases(seed in 0u64..10_000, n in 2usize..16, damping in 0.0f64..1.0) {
        let m = normals(seed, n * n);
        // A = M Mᵀ + I is symmetric positive definite.
        let a: Vec<f64> = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                (0..n).map(|t| m[i * n + t] * m[j * n + t]).sum::<f64>() + if i == j { 1.0 } else { 0.0 }
            })
            .collect();
        let rhs = normals(seed + 1, n);
        let sol = cg_solve(
            |v| Ok((0..n).map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum()).collect()),
            &rhs,
            damping,
            4 * n,
            1e-12,
        )
        .unwrap();
        for w in sol.residual_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12, "{:?}", sol.residual_history);
        }
    }

    #[test]
    fn hvp_is_symmetric(seed in 0u64..10_000) {
        let d = 4;
        let model = init_model(&[d, 1], Head::Sigmoid, seed).unwrap();
        let x = normals(seed, 30 * d);
        let y: Vec<usize> = (0..30).map(|i| usize::from(x[i * d] > 0.0)).collect();
        let data = Dataset::new(d, x, y).unwrap();
        let params = model.params_for(&model.param_ids());
        let u = normals(seed + 1, d + 1);
        let v = normals(seed + 2, d + 1);
        let hu = hessian_vector_product(logistic_loss(&model, &data), &params, &u).unwrap();
        let hv = hessian_vector_product(logistic_loss(&model, &data), &params, &v).unwrap();
        let vhu: f64 = v.iter().zip(&hu).map(|(a, b)| a * b).sum();
        let uhv: f64 = u.iter().zip(&hv).map(|(a, b)| a * b).sum();
        prop_assert!((vhu - uhv).abs() <= 1e-8);
    }

    #[test]
    fn gradients_are_bit_reproducible(seed in 0u64..10_000) {
        let model = init_model(&[3, 5, 3], Head::Softmax, seed).unwrap();
        let x = normals(seed, 12);
        let data = Dataset::new(3, x, vec![0, 1, 2, 1]).unwrap();
        let params = model.params_for(&model.param_ids());
        let a = gradient(logistic_loss(&model, &data), &params).unwrap();
        let b = gradient(logistic_loss(&model, &data), &params).unwrap();
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        prop_assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn cross_entropy_is_non_negative(seed in 0u64..10_000, head_sigmoid in any::<bool>()) {
        let (head, out) = if head_sigmoid { (Head::Sigmoid, 1) } else { (Head::Softmax, 4) };
        let classes = if head_sigmoid { 2 } else { 4 };
        let model = init_model(&[3, 6, out], head, seed).unwrap();
        let x = Tensor::new(&[5, 3], normals(seed, 15).into_iter().map(|v| 5.0 * v).collect()).unwrap();
        let labels: Vec<usize> = (0..5).map(|i| i % classes).collect();
        prop_assert!(model.per_sample_loss(&x, &labels).unwrap().iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn fairness_gaps_ignore_group_relabeling(
        rows in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 4..120)
    ) {
        let mut rows = rows;
        // Populate every (group, label) cell so both gaps are defined.
        for (i, (g, l)) in [(false, false), (false, true), (true, false), (true, true)].into_iter().enumerate() {
            rows[i].1 = l;
            rows[i].2 = g;
        }
        let pred: Vec<bool> = rows.iter().map(|r| r.0).collect();
        let lab: Vec<bool> = rows.iter().map(|r| r.1).collect();
        let grp: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let flipped: Vec<bool> = grp.iter().map(|g| !g).collect();
        prop_assert_eq!(demographic_parity_gap(&pred, &grp).unwrap(), demographic_parity_gap(&pred, &flipped).unwrap());
        prop_assert_eq!(equalized_odds_gap(&pred, &lab, &grp).unwrap(), equalized_odds_gap(&pred, &lab, &flipped).unwrap());
    }

    #[test]
    fn degenerate_flag_construction_equates_dp_and_tpr_gap(flags in prop::collection::vec(any::<bool>(), 4..80), preds in prop::collection::vec(any::<bool>(), 80)) {
        let mut flags = flags;
        flags[0] = true;
        flags[1] = false;
        let pred = &preds[..flags.len()];
        // group == label == flag: the DP gap and the TPR gap coincide
        // (each group holds a single label), so EO reduces to DP.
        let dp = demographic_parity_gap(pred, &flags).unwrap();
        let pos_rate = |g: bool| {
            let idx: Vec<usize> = (0..flags.len()).filter(|&i| flags[i] == g).collect();
            idx.iter().filter(|&&i| pred[i]).count() as f64 / idx.len() as f64
        };
        prop_assert!((dp - (pos_rate(true) - pos_rate(false)).abs()).abs() < 1e-15);
    }

    #[test]
    fn auc_is_antisymmetric(
        members in prop::collection::vec(-10.0f64..10.0, 1..40),
        nonmembers in prop::collection::vec(-10.0f64..10.0, 1..40),
    ) {
        let a = auc_from_scores(&members, &nonmembers).unwrap();
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let b = auc_from_scores(&neg(&members), &neg(&nonmembers)).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn drop_pct_inverts_scaling(g in 1e-3f64..10.0, x in -100.0f64..=100.0) {
        let got = fairness_drop_pct(g, g * (1.0 - x / 100.0)).unwrap();
        prop_assert!((got - x).abs() < 1e-9);
    }

    #[test]
    fn cobum_is_bounded(s in cobum_scores(), kappa in 0.1f64..3.0) {
        let p = CoBumParams { kappa, ..CoBumParams::default() };
        let c = composite(&s, &p).unwrap();
        prop_assert!(c > 0.0 && c <= kappa * (1.0 + 1e-12));
    }

    #[test]
    fn cobum_strictly_monotone(s in cobum_scores(), k in 0usize..5, bump in 1e-4f64..0.5) {
        let p = CoBumParams::default();
        prop_assume!(s[k] < 1.0);
        let mut up = s;
        up[k] = (s[k] + bump).min(1.0);
        prop_assert!(composite(&up, &p).unwrap() > composite(&s, &p).unwrap());
    }

    #[test]
    fn cobum_below_weighted_arithmetic_mean(s in cobum_scores()) {
        let p = CoBumParams::default();
        let a = p.alphas();
        let mean = a.iter().zip(&s).map(|(a, s)| a * s).sum::<f64>() / a.iter().sum::<f64>();
        prop_assert!(composite(&s, &p).unwrap() <= p.kappa * mean + 1e-12);
    }

    #[test]
    fn cobum_single_weight_picks_that_score(s in cobum_scores(), k in 0usize..5, kappa in 0.1f64..3.0) {
        let mut alphas = [0.0; 5];
        alphas[k] = 1.0;
        let p = CoBumParams {
            alpha_u: alphas[0],
            alpha_f: alphas[1],
            alpha_q: alphas[2],
            alpha_p: alphas[3],
            alpha_e: alphas[4],
            kappa,
            ..CoBumParams::default()
        };
        prop_assert!((composite(&s, &p).unwrap() - kappa * s[k]).abs() < 1e-12);
    }

    #[test]
    fn split_arithmetic(n in 1usize..100_000) {
        let (train, val, test) = split_counts(n);
        prop_assert_eq!(train + val + test, n);
        let n = n as f64;
        prop_assert!((train as f64 - 0.7 * n).abs() <= 1.0);
        prop_assert!((val as f64 - 0.1 * n).abs() <= 1.0);
        prop_assert!((test as f64 - 0.2 * n).abs() <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn bundles_are_reproducible(seed in 0u64..1_000, which in 0usize..3) {
        let scenario = [Scenario::Patch, Scenario::Attribute, Scenario::Pose][which];
        let cfg = GeneratorConfig::default_for(scenario);
        let a = cfg.generate(seed).unwrap();
        let b = cfg.generate(seed).unwrap();
        prop_assert!(a == b);
        let dir = tempfile::tempdir().unwrap();
        biaslab::biasgen::save_bundle(&a, &dir.path().join("a")).unwrap();
        biaslab::biasgen::save_bundle(&b, &dir.path().join("b")).unwrap();
        for f in std::fs::read_dir(dir.path().join("a")).unwrap() {
            let name = f.unwrap().file_name();
            let x = std::fs::read(dir.path().join("a").join(&name)).unwrap();
            let y = std::fs::read(dir.path().join("b").join(&name)).unwrap();
            prop_assert!(x == y);
        }
    }

    #[test]
    fn lora_forward_matches_merged_weights(seed in 0u64..1_000, rank in 1usize..4) {
        let base = init_model(&[5, 7, 3], Head::Softmax, seed).unwrap();
        let mut adapted = base.attach_lora(&[0, 1], rank, seed + 1).unwrap();
        // Random nonzero B so the adapter actually contributes.
        let ids: Vec<_> = adapted.param_ids().into_iter().filter(|id| id.is_adapter()).collect();
        let flat = normals(seed + 2, adapted.flat(&ids).len());
        adapted.set_flat(&ids, &flat);
        let merged = adapted.merge_lora();
        let x = Tensor::new(&[4, 5], normals(seed + 3, 20)).unwrap();
        let a = adapted.forward(&x).unwrap();
        let b = merged.forward(&x).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }
}
