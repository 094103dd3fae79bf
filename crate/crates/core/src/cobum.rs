//! Co-BUM: a weighted harmonic mean of utility (U), fairness (F), quality
//! (Q), privacy (P) and efficiency (E) scores, each measured for an
//! unlearned model against the gold (retrained) and baseline models.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalReport;

#[derive(Debug, Error, PartialEq)]
pub enum CoBumError {
    #[error("gold and baseline agree on {0}; normalization is degenerate")]
    Degenerate(&'static str),
    #[error("gold model {0} is zero")]
    ZeroGold(&'static str),
    #[error("invalid Co-BUM parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T, E = CoBumError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoBumParams {
    pub alpha_u: f64,
    pub alpha_f: f64,
    pub alpha_q: f64,
    pub alpha_p: f64,
    pub alpha_e: f64,
    /// Slope applied to regressions beyond the baseline.
    pub gamma: f64,
    pub kappa: f64,
    /// Lower clamp for component scores.
    pub epsilon: f64,
    /// Runtimes (seconds) below this are raised to it before taking logs.
    pub time_floor: f64,
}

impl Default for CoBumParams {
    fn default() -> Self {
        Self {
            alpha_u: 0.25,
            alpha_f: 0.25,
            alpha_q: 1.0,
            alpha_p: 1.0,
            alpha_e: 1.0,
            gamma: 0.5,
            kappa: 1.0,
            epsilon: 0.01,
            time_floor: 2.0,
        }
    }
}

impl CoBumParams {
    pub fn alphas(&self) -> [f64; 5] {
        [self.alpha_u, self.alpha_f, self.alpha_q, self.alpha_p, self.alpha_e]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.alphas();
        if a.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || a.iter().all(|&x| x == 0.0) {
            return Err(CoBumError::InvalidParams(
                "alphas must be finite, non-negative and not all zero".into(),
            ));
        }
        if !(self.gamma >= 0.0) || !(self.kappa > 0.0) {
            return Err(CoBumError::InvalidParams("gamma must be >= 0 and kappa > 0".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(CoBumError::InvalidParams("epsilon must lie in (0, 1)".into()));
        }
        if !(self.time_floor > 1.0) {
            return Err(CoBumError::InvalidParams("time_floor must exceed 1 second".into()));
        }
        Ok(())
    }
}

/// Position of `metric_u` on the gold (0) to baseline (1) scale. Values past
/// the baseline are damped by `gamma`; values past gold clip to 0.
pub fn normalize(metric_u: f64, metric_gold: f64, metric_base: f64, gamma: f64) -> Result<f64> {
    normalize_field(metric_u, metric_gold, metric_base, gamma, "metric")
}

fn normalize_field(u: f64, gold: f64, base: f64, gamma: f64, field: &'static str) -> Result<f64> {
    if base == gold {
        return Err(CoBumError::Degenerate(field));
    }
    let n = (u - gold) / (base - gold);
    Ok(if n < 0.0 {
        0.0
    } else if n > 1.0 {
        1.0 + gamma * (n - 1.0)
    } else {
        n
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoBumScores {
    pub u: f64,
    pub f: f64,
    pub q: f64,
    pub p: f64,
    pub e: f64,
    pub u_clamped: f64,
    pub f_clamped: f64,
    pub q_clamped: f64,
    pub p_clamped: f64,
    pub e_clamped: f64,
    pub composite: f64,
}

impl CoBumScores {
    pub fn clamped(&self) -> [f64; 5] {
        [self.u_clamped, self.f_clamped, self.q_clamped, self.p_clamped, self.e_clamped]
    }
}

/// Raw and clamped component scores plus the composite.
pub fn component_scores(
    unlearned: &EvalReport,
    gold: &EvalReport,
    baseline: &EvalReport,
    params: &CoBumParams,
) -> Result<CoBumScores> {
    params.validate()?;
    for (v, name) in [(gold.ra, "RA"), (gold.ta, "TA"), (gold.fa, "FA")] {
        if v == 0.0 {
            return Err(CoBumError::ZeroGold(name));
        }
    }
    let g = params.gamma;
    let u = 0.5 * (unlearned.ra / gold.ra + unlearned.ta / gold.ta);
    let n_dp = normalize_field(unlearned.dp_gap, gold.dp_gap, baseline.dp_gap, g, "DP gap")?;
    let n_eo = normalize_field(unlearned.eo_gap, gold.eo_gap, baseline.eo_gap, g, "EO gap")?;
    let n_mia = normalize_field(unlearned.mia_auc, gold.mia_auc, baseline.mia_auc, g, "MIA AUC")?;
    let f = 1.0 - 0.5 * (n_dp + n_eo);
    let p = 1.0 - n_mia;
    let q = 1.0 - unlearned.fa / gold.fa;
    let floor = params.time_floor;
    let e = gold.wall_time_seconds.max(floor).ln() / unlearned.wall_time_seconds.max(floor).ln();
    let clamp = |s: f64| s.clamp(params.epsilon, 1.0);
    let mut scores = CoBumScores {
        u,
        f,
        q,
        p,
        e,
        u_clamped: clamp(u),
        f_clamped: clamp(f),
        q_clamped: clamp(q),
        p_clamped: clamp(p),
        e_clamped: clamp(e),
        composite: 0.0,
    };
    scores.composite = cobum(&scores, params)?;
    Ok(scores)
}

/// `κ Σα / Σ(α / s)` over the clamped scores.
pub fn cobum(scores: &CoBumScores, params: &CoBumParams) -> Result<f64> {
    params.validate()?;
    composite(&scores.clamped(), params)
}

/// The weighted harmonic mean on an explicit score vector `(U, F, Q, P, E)`.
pub fn composite(clamped: &[f64; 5], params: &CoBumParams) -> Result<f64> {
    let alphas = params.alphas();
    assert!(clamped.iter().all(|&s| s > 0.0), "clamped scores must be positive");
    let num: f64 = alphas.iter().sum();
    let den: f64 = alphas.iter().zip(clamped).map(|(a, s)| a / s).sum();
    Ok(params.kappa * num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(fa: f64, ra: f64, ta: f64, dp: f64, eo: f64, mia: f64, t: f64) -> EvalReport {
        EvalReport {
            fa,
            ra,
            ta,
            dp_gap: dp,
            eo_gap: eo,
            dp_drop_pct: None,
            eo_drop_pct: None,
            mia_auc: mia,
            wall_time_seconds: t,
        }
    }

    #[test]
    fn normalize_anchors() {
        assert_eq!(normalize(0.2, 0.2, 0.6, 0.5).unwrap(), 0.0);
        assert_eq!(normalize(0.6, 0.2, 0.6, 0.5).unwrap(), 1.0);
        assert!((normalize(0.8, 0.2, 0.6, 0.5).unwrap() - 1.25).abs() < 1e-12);
        assert_eq!(normalize(0.1, 0.2, 0.6, 0.5).unwrap(), 0.0);
        assert!(normalize(0.3, 0.4, 0.4, 0.5).is_err());
    }

    #[test]
    fn worked_harmonic_mean() {
        let c = composite(&[1.0, 1.0, 0.5, 1.0, 1.0], &CoBumParams::default()).unwrap();
        assert!((c - 3.5 / 4.5).abs() < 1e-12);
        assert!((c - 0.7778).abs() < 1e-4);
    }

    #[test]
    fn identical_reports_hit_the_anchors() {
        let gold = report(0.5, 0.9, 0.85, 0.1, 0.2, 0.55, 30.0);
        let base = report(1.0, 0.92, 0.86, 0.4, 0.5, 0.7, 90.0);
        let s = component_scores(&gold, &gold, &base, &CoBumParams::default()).unwrap();
        assert_eq!((s.u, s.f, s.p, s.e), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(s.q, 0.0);
        assert_eq!(s.q_clamped, 0.01);
    }

    #[test]
    fn table_arithmetic() {
        let u: f64 = 0.5 * (74.67 / 72.33 + 64.41 / 63.03);
        assert!((u - 1.027).abs() < 1e-3);
        let gold = report(0.1767, 0.7233, 0.6303, 0.1, 0.1, 0.5, 222.0);
        let base = report(0.9, 0.8, 0.7, 0.3, 0.3, 0.6, 1.0);
        let ga = report(0.37, 0.7467, 0.6441, 0.2, 0.2, 0.55, 299.0);
        let s = component_scores(&ga, &gold, &base, &CoBumParams::default()).unwrap();
        assert!((s.u - u).abs() < 1e-12);
        assert_eq!(s.u_clamped, 1.0);
        assert!((s.e - 0.947).abs() < 1e-3);
        assert!((s.q - (1.0 - 0.37 / 0.1767)).abs() < 1e-12);
    }

    #[test]
    fn short_runtimes_are_floored() {
        let gold = report(0.5, 0.9, 0.85, 0.1, 0.2, 0.55, 0.01);
        let base = report(1.0, 0.92, 0.86, 0.4, 0.5, 0.7, 0.5);
        let s = component_scores(&gold, &gold, &base, &CoBumParams::default()).unwrap();
        assert_eq!(s.e, 1.0);
    }

    #[test]
    fn zero_gold_accuracy_named() {
        let gold = report(0.0, 0.9, 0.85, 0.1, 0.2, 0.55, 3.0);
        let base = report(1.0, 0.92, 0.86, 0.4, 0.5, 0.7, 3.0);
        assert_eq!(
            component_scores(&gold, &gold, &base, &CoBumParams::default()).unwrap_err(),
            CoBumError::ZeroGold("FA")
        );
    }
}
