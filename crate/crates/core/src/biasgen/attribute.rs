use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normal_vec, split_counts, unit_vec, BiasgenError, DataBundle, GeneratorConfig, Result, Sample};

/// Group-label imbalance: positives are `corr_ratio` times more common in
/// group 0 than in group 1, negatives mirror that toward group 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeConfig {
    pub n: usize,
    pub corr_ratio: f64,
    pub d_s: usize,
    pub d_b: usize,
    /// Distance between the two label-conditional means of `s`.
    pub label_sep: f64,
    /// Per-coordinate offset of `b` (+shift for group 0, -shift for group 1).
    pub group_shift: f64,
}

impl Default for AttributeConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            corr_ratio: 6.0,
            d_s: 8,
            d_b: 4,
            label_sep: 2.0,
            group_shift: 1.0,
        }
    }
}

/// Cell sizes `[[g0 neg, g0 pos], [g1 neg, g1 pos]]` for a split of `m`.
fn cells(m: usize, ratio: f64) -> [[usize; 2]; 2] {
    let pos = m / 2;
    let neg = m - pos;
    let major = |k: usize| (k as f64 * ratio / (1.0 + ratio)).round() as usize;
    let g0_pos = major(pos);
    let g1_neg = major(neg);
    [[neg - g1_neg, g0_pos], [g1_neg, pos - g0_pos]]
}

fn feasible(n: usize, ratio: f64) -> bool {
    let (a, b, c) = split_counts(n);
    [a, b, c]
        .iter()
        .all(|&m| cells(m, ratio).iter().flatten().all(|&k| k > 0))
}

/// Smallest `n` whose every split realizes all four cells.
pub(crate) fn minimum_feasible_n(ratio: f64) -> usize {
    let mut n = 4;
    while !feasible(n, ratio) {
        n += 1;
    }
    n
}

pub fn gen_attribute_bias(config: &AttributeConfig, seed: u64) -> Result<DataBundle> {
    let c = config;
    if !(c.corr_ratio >= 1.0) || !c.corr_ratio.is_finite() {
        return Err(BiasgenError::InvalidParameter(format!(
            "corr_ratio must be a finite value >= 1, got {}",
            c.corr_ratio
        )));
    }
    if c.d_s == 0 || c.d_b == 0 {
        return Err(BiasgenError::InvalidParameter("d_s and d_b must be positive".into()));
    }
    if !c.label_sep.is_finite() || !c.group_shift.is_finite() {
        return Err(BiasgenError::InvalidParameter("label_sep and group_shift must be finite".into()));
    }
    if !feasible(c.n, c.corr_ratio) {
        return Err(BiasgenError::InsufficientSamples {
            requested: c.n,
            minimum: minimum_feasible_n(c.corr_ratio),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = unit_vec(&mut rng, c.d_s);
    let half = c.label_sep / 2.0;

    let (n_tr, n_va, n_te) = split_counts(c.n);
    let mut splits: [Vec<Sample>; 3] = Default::default();
    for (split, &m) in [n_tr, n_va, n_te].iter().enumerate() {
        let table = cells(m, c.corr_ratio);
        for (group, row) in table.iter().enumerate() {
            for (label, &count) in row.iter().enumerate() {
                let sign = if label == 1 { 1.0 } else { -1.0 };
                let shift = if group == 0 { c.group_shift } else { -c.group_shift };
                for _ in 0..count {
                    let s = normal_vec(&mut rng, c.d_s)
                        .into_iter()
                        .zip(&dir)
                        .map(|(e, d)| e + sign * half * d)
                        .collect();
                    let b = normal_vec(&mut rng, c.d_b).into_iter().map(|e| e + shift).collect();
                    splits[split].push(Sample {
                        s,
                        b,
                        label,
                        group,
                        bias_flag: group == 0 && label == 1,
                    });
                }
            }
        }
        splits[split].shuffle(&mut rng);
    }
    let [train, val, test] = splits;
    let (forget, retain): (Vec<usize>, Vec<usize>) = (0..train.len()).partition(|&i| train[i].bias_flag);

    Ok(DataBundle {
        config: GeneratorConfig::Attribute(c.clone()),
        seed,
        num_classes: 2,
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_to_one_positive_split() {
        assert_eq!(cells(1400, 6.0), [[100, 600], [600, 100]]);
        let b = gen_attribute_bias(&AttributeConfig::default(), 4).unwrap();
        let count = |g: usize, y: usize| b.train.iter().filter(|s| s.group == g && s.label == y).count();
        assert_eq!((count(0, 1), count(1, 1)), (600, 100));
        assert_eq!(b.forget.len(), 600);
    }

    #[test]
    fn tiny_n_reports_minimum() {
        let c = AttributeConfig {
            n: 20,
            ..Default::default()
        };
        match gen_attribute_bias(&c, 0).unwrap_err() {
            BiasgenError::InsufficientSamples { requested, minimum } => {
                assert_eq!(requested, 20);
                assert!(minimum > 20);
                let ok = AttributeConfig { n: minimum, ..c.clone() };
                assert!(gen_attribute_bias(&ok, 0).is_ok());
                let short = AttributeConfig { n: minimum - 1, ..c };
                assert!(gen_attribute_bias(&short, 0).is_err());
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn ratio_below_one_rejected() {
        let c = AttributeConfig {
            corr_ratio: 0.5,
            ..Default::default()
        };
        assert!(matches!(gen_attribute_bias(&c, 0), Err(BiasgenError::InvalidParameter(_))));
    }

    #[test]
    fn b_block_tracks_group() {
        let b = gen_attribute_bias(&AttributeConfig::default(), 4).unwrap();
        let mean_b = |g: usize| {
            let rows: Vec<_> = b.train.iter().filter(|s| s.group == g).collect();
            rows.iter().map(|s| s.b.iter().sum::<f64>() / s.b.len() as f64).sum::<f64>() / rows.len() as f64
        };
        assert!(mean_b(0) > 0.8 && mean_b(1) < -0.8);
    }
}
