use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normal_vec, split_counts, unit_vec, BiasgenError, DataBundle, GeneratorConfig, Result, Sample};

/// Localized shortcut: a constant marker over the whole bias block on a
/// fraction of one class's training samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    /// Samples per class before the 70/10/20 split.
    pub n_per_class: usize,
    pub num_classes: usize,
    pub target_class: usize,
    /// Fraction of target-class training samples that carry the marker.
    pub fraction: f64,
    pub marker_value: f64,
    pub d_s: usize,
    pub d_b: usize,
    /// Standard deviation of the class means around the origin.
    pub class_sep: f64,
    /// Distance of the target-class mean from its confuser class's mean.
    /// Small values make the target class hard to learn from `s` alone, so
    /// a model that never saw the marker cannot separate it reliably.
    pub confuser_offset: f64,
    /// Fraction of non-target val/test samples that also carry the marker,
    /// so both fairness groups contain positives and negatives.
    pub offclass_flag_fraction: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            n_per_class: 1000,
            num_classes: 10,
            target_class: 2,
            fraction: 0.5,
            marker_value: 1.0,
            d_s: 16,
            d_b: 8,
            class_sep: 1.0,
            confuser_offset: 0.25,
            offclass_flag_fraction: 0.1,
        }
    }
}

impl PatchConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BiasgenError::InvalidParameter(m));
        if !(0.0..=1.0).contains(&self.fraction) {
            return bad(format!("fraction must lie in [0, 1], got {}", self.fraction));
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.target_class >= self.num_classes {
            return bad(format!(
                "target_class {} out of range for {} classes",
                self.target_class, self.num_classes
            ));
        }
        if self.d_s == 0 || self.d_b == 0 {
            return bad("d_s and d_b must be positive".into());
        }
        if self.n_per_class == 0 {
            return bad("n_per_class must be positive".into());
        }
        if !self.marker_value.is_finite() || !(self.class_sep >= 0.0) || !(self.confuser_offset >= 0.0) {
            return bad("marker_value, class_sep and confuser_offset must be finite and non-negative spreads".into());
        }
        if !(0.0..=1.0).contains(&self.offclass_flag_fraction) {
            return bad(format!(
                "offclass_flag_fraction must lie in [0, 1], got {}",
                self.offclass_flag_fraction
            ));
        }
        Ok(())
    }
}

pub fn gen_patch_bias(config: &PatchConfig, seed: u64) -> Result<DataBundle> {
    config.validate()?;
    let c = config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut means: Vec<Vec<f64>> = (0..c.num_classes)
        .map(|_| normal_vec(&mut rng, c.d_s).into_iter().map(|v| v * c.class_sep).collect())
        .collect();
    let confuser = (c.target_class + 1) % c.num_classes;
    let dir = unit_vec(&mut rng, c.d_s);
    means[c.target_class] = means[confuser]
        .iter()
        .zip(&dir)
        .map(|(m, d)| m + c.confuser_offset * d)
        .collect();

    let (n_tr, n_va, n_te) = split_counts(c.n_per_class);
    let mut splits: [Vec<Sample>; 3] = Default::default();
    for (split, &n) in [n_tr, n_va, n_te].iter().enumerate() {
        for k in 0..c.num_classes {
            let flagged = match (split, k == c.target_class) {
                (0, true) => (c.fraction * n as f64).floor() as usize,
                (0, false) => 0,
                (_, true) => n / 2,
                (_, false) => (c.offclass_flag_fraction * n as f64).round() as usize,
            };
            for i in 0..n {
                let noise = normal_vec(&mut rng, c.d_s);
                let s = means[k].iter().zip(noise).map(|(m, e)| m + e).collect();
                let flag = i < flagged;
                let b = if flag {
                    vec![c.marker_value; c.d_b]
                } else {
                    normal_vec(&mut rng, c.d_b)
                };
                splits[split].push(Sample {
                    s,
                    b,
                    label: k,
                    group: usize::from(flag),
                    bias_flag: flag,
                });
            }
        }
        splits[split].shuffle(&mut rng);
    }
    let [train, val, test] = splits;
    let (forget, retain): (Vec<usize>, Vec<usize>) = (0..train.len()).partition(|&i| train[i].bias_flag);

    Ok(DataBundle {
        config: GeneratorConfig::Patch(c.clone()),
        seed,
        num_classes: c.num_classes,
        d_s: c.d_s,
        d_b: c.d_b,
        train,
        val,
        test,
        retain,
        forget,
        counterfactual: None,
    })
}
