use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normal_vec, BiasgenError, DataBundle, Result, Sample, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterfactualMode {
    /// Forget-set copies with the bias block replaced by background noise.
    MaskPatch,
    /// Per-class resampling so every pose bin is equally represented.
    RebalanceBins,
}

impl CounterfactualMode {
    pub fn for_scenario(scenario: Scenario) -> Option<Self> {
        match scenario {
            Scenario::Patch => Some(CounterfactualMode::MaskPatch),
            Scenario::Pose => Some(CounterfactualMode::RebalanceBins),
            Scenario::Attribute => None,
        }
    }
}

impl fmt::Display for CounterfactualMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CounterfactualMode::MaskPatch => "mask_patch",
            CounterfactualMode::RebalanceBins => "rebalance_bins",
        })
    }
}

/// Builds the counterfactual set `D_c`.
///
/// `mask_patch` keeps the order of `bundle.forget`, so row `i` of the
/// result is the masked twin of `bundle.train[bundle.forget[i]]`.
pub fn build_counterfactual(bundle: &DataBundle, mode: CounterfactualMode, seed: u64) -> Result<Vec<Sample>> {
    let scenario = bundle.scenario();
    if CounterfactualMode::for_scenario(scenario) != Some(mode) {
        return Err(BiasgenError::IncompatibleMode { mode, scenario });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = match mode {
        CounterfactualMode::MaskPatch => bundle
            .forget
            .iter()
            .map(|&i| {
                let src = &bundle.train[i];
                Sample {
                    s: src.s.clone(),
                    b: normal_vec(&mut rng, src.b.len()),
                    label: src.label,
                    group: 0,
                    bias_flag: false,
                }
            })
            .collect(),
        CounterfactualMode::RebalanceBins => {
            let mut out = Vec::new();
            for class in 0..bundle.num_classes {
                let mut bins: [Vec<&Sample>; 3] = Default::default();
                for s in bundle.train.iter().filter(|s| s.label == class) {
                    bins[s.group].push(s);
                }
                let take = bins.iter().map(Vec::len).min().unwrap_or(0);
                for bin in &mut bins {
                    bin.shuffle(&mut rng);
                    out.extend(bin[..take].iter().map(|&s| s.clone()));
                }
            }
            out
        }
    };
    if out.is_empty() {
        return Err(BiasgenError::EmptyCounterfactual);
    }
    Ok(out)
}

impl DataBundle {
    /// Attaches the scenario's counterfactual set, if it has one.
    pub fn with_counterfactual(mut self, seed: u64) -> Result<Self> {
        if let Some(mode) = CounterfactualMode::for_scenario(self.scenario()) {
            self.counterfactual = Some(build_counterfactual(&self, mode, seed)?);
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biasgen::{gen_attribute_bias, gen_patch_bias, gen_pose_bias, AttributeConfig, PatchConfig, PoseConfig};

    #[test]
    fn masking_removes_marker_and_keeps_semantics() {
        let b = gen_patch_bias(&PatchConfig::default(), 2).unwrap();
        let dc = build_counterfactual(&b, CounterfactualMode::MaskPatch, 5).unwrap();
        assert_eq!(dc.len(), b.forget.len());
        for (c, &i) in dc.iter().zip(&b.forget) {
            assert_eq!(c.s, b.train[i].s);
            assert_eq!(c.label, b.train[i].label);
            assert!(c.b.iter().all(|&v| v != 1.0));
        }
    }

    #[test]
    fn rebalanced_bins_are_uniform() {
        let b = gen_pose_bias(&PoseConfig::default(), 2).unwrap();
        let dc = build_counterfactual(&b, CounterfactualMode::RebalanceBins, 5).unwrap();
        for bin in 0..3 {
            let k = dc.iter().filter(|s| s.group == bin).count();
            assert!((k as f64 - dc.len() as f64 / 3.0).abs() <= 1.0);
        }
        assert!(dc.iter().all(|c| b.train.contains(c)));
    }

    #[test]
    fn incompatible_modes_rejected() {
        let p = gen_patch_bias(&PatchConfig::default(), 2).unwrap();
        assert!(matches!(
            build_counterfactual(&p, CounterfactualMode::RebalanceBins, 0),
            Err(BiasgenError::IncompatibleMode { .. })
        ));
        let a = gen_attribute_bias(&AttributeConfig::default(), 2).unwrap();
        assert!(build_counterfactual(&a, CounterfactualMode::MaskPatch, 0).is_err());
    }
}
