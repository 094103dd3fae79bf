use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{normal_vec, split_counts, BiasgenError, DataBundle, GeneratorConfig, Result, Sample};

/// Continuous nuisance scale with a class distribution that is skewed
/// inside the far (smallest-scale) tercile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseConfig {
    pub n: usize,
    pub num_classes: usize,
    /// Probability that a far-bin sample is drawn from the favored classes
    /// rather than uniformly.
    pub skew: f64,
    pub d_s: usize,
    /// Noise coordinates in `b`; the scale scalar is appended after them.
    pub d_b: usize,
    pub class_sep: f64,
    /// Semantic noise standard deviation inside the far bin.
    pub far_noise: f64,
    /// Log-scale standard deviation.
    pub scale_sigma: f64,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            n: 3000,
            num_classes: 8,
            skew: 0.8,
            d_s: 8,
            d_b: 3,
            class_sep: 1.0,
            far_noise: 1.5,
            scale_sigma: 0.5,
        }
    }
}

impl PoseConfig {
    /// Classes `0..k` receive the far-bin skew.
    pub fn favored_classes(&self) -> usize {
        (self.num_classes / 4).max(1)
    }
}

/// Tercile sizes of `m`, larger parts first.
fn tercile_sizes(m: usize) -> [usize; 3] {
    let base = m / 3;
    let extra = m % 3;
    [0, 1, 2].map(|i| base + usize::from(i < extra))
}

pub fn gen_pose_bias(config: &PoseConfig, seed: u64) -> Result<DataBundle> {
    let c = config;
    let bad = |m: String| Err(BiasgenError::InvalidParameter(m));
    if c.num_classes < 2 {
        return bad(format!("need at least 2 classes, got {}", c.num_classes));
    }
    if !(0.0..=1.0).contains(&c.skew) {
        return bad(format!("skew must lie in [0, 1], got {}", c.skew));
    }
    if c.d_s == 0 || c.n == 0 {
        return bad("d_s and n must be positive".into());
    }
    if !(c.far_noise > 0.0) || !(c.scale_sigma > 0.0) || !c.class_sep.is_finite() {
        return bad("far_noise and scale_sigma must be positive, class_sep finite".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..c.num_classes)
        .map(|_| normal_vec(&mut rng, c.d_s).into_iter().map(|v| v * c.class_sep).collect())
        .collect();
    let favored = c.favored_classes();

    let (n_tr, n_va, n_te) = split_counts(c.n);
    let mut splits: [Vec<Sample>; 3] = Default::default();
    for (split, &m) in [n_tr, n_va, n_te].iter().enumerate() {
        let mut scales: Vec<f64> = (0..m)
            .map(|_| (c.scale_sigma * rng.sample::<f64, _>(StandardNormal)).exp())
            .collect();
        // Bin 0 holds the largest scales (close-up), bin 2 the smallest.
        scales.sort_by(|a, b| b.total_cmp(a));
        let sizes = tercile_sizes(m);
        let mut pos = 0;
        for (bin, &size) in sizes.iter().enumerate() {
            for &scale in &scales[pos..pos + size] {
                let label = if bin == 2 && rng.random_bool(c.skew) {
                    rng.random_range(0..favored)
                } else {
                    rng.random_range(0..c.num_classes)
                };
                let sd = if bin == 2 { c.far_noise } else { 1.0 };
                let s = means[label]
                    .iter()
                    .zip(normal_vec(&mut rng, c.d_s))
                    .map(|(mu, e)| mu + sd * e)
                    .collect();
                let mut b = normal_vec(&mut rng, c.d_b);
                b.push(scale);
                splits[split].push(Sample {
                    s,
                    b,
                    label,
                    group: bin,
                    bias_flag: bin == 2,
                });
            }
            pos += size;
        }
        splits[split].shuffle(&mut rng);
    }
    let [train, val, test] = splits;
    let (forget, retain): (Vec<usize>, Vec<usize>) = (0..train.len()).partition(|&i| train[i].group == 2);

    Ok(DataBundle {
        config: GeneratorConfig::Pose(c.clone()),
        seed,
        num_classes: c.num_classes,
        d_s: c.d_s,
        d_b: c.d_b + 1,
        train,
        val,
        test,
        retain,
        forget,
        counterfactual: None,
    })
}
