//! Evaluation metrics: split accuracies, group fairness gaps, membership
//! inference AUC, the bias-gradient ratio and input saliency.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Tensor};
use crate::biasgen::{DataBundle, Sample};
use crate::model::{argmax, Dataset, ModelError, ModelParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot evaluate on an empty {0}")]
    Empty(&'static str),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("only one group is present; the parity gap is undefined")]
    SingleGroup,
    #[error("group {group} has no samples with label {class}; equalized odds is undefined")]
    MissingCell { group: u8, class: u8 },
    #[error("baseline gap is zero; a relative drop is undefined")]
    ZeroBaseline,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Fraction of rows whose predicted class equals the label.
pub fn accuracy(model: &ModelParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(EvalError::Empty("sample set"));
    }
    let pred = model.predict(&data.features()?)?;
    let hits = pred.iter().zip(data.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / data.len() as f64)
}

fn rate(pred: &[bool], mask: impl Fn(usize) -> bool) -> Option<f64> {
    let (mut n, mut pos) = (0usize, 0usize);
    for (i, &p) in pred.iter().enumerate() {
        if mask(i) {
            n += 1;
            pos += usize::from(p);
        }
    }
    (n > 0).then(|| pos as f64 / n as f64)
}

/// `|P(ŷ = 1 | g = 0) - P(ŷ = 1 | g = 1)|`.
pub fn demographic_parity_gap(predictions: &[bool], groups: &[bool]) -> Result<f64> {
    if predictions.len() != groups.len() {
        return Err(EvalError::LengthMismatch(format!(
            "{} predictions, {} group ids",
            predictions.len(),
            groups.len()
        )));
    }
    let r0 = rate(predictions, |i| !groups[i]).ok_or(EvalError::SingleGroup)?;
    let r1 = rate(predictions, |i| groups[i]).ok_or(EvalError::SingleGroup)?;
    Ok((r0 - r1).abs())
}

/// `max(|TPR_0 - TPR_1|, |FPR_0 - FPR_1|)`.
pub fn equalized_odds_gap(predictions: &[bool], labels: &[bool], groups: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.len() != groups.len() {
        return Err(EvalError::LengthMismatch(format!(
            "{} predictions, {} labels, {} group ids",
            predictions.len(),
            labels.len(),
            groups.len()
        )));
    }
    let cell = |g: bool, y: bool| {
        rate(predictions, |i| groups[i] == g && labels[i] == y).ok_or(EvalError::MissingCell {
            group: u8::from(g),
            class: u8::from(y),
        })
    };
    let tpr = (cell(false, true)? - cell(true, true)?).abs();
    let fpr = (cell(false, false)? - cell(true, false)?).abs();
    Ok(tpr.max(fpr))
}

/// Relative reduction of a fairness gap, in percent. Negative when the gap
/// widened.
pub fn fairness_drop_pct(baseline_gap: f64, unlearned_gap: f64) -> Result<f64> {
    if baseline_gap == 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    Ok(100.0 * (1.0 - unlearned_gap / baseline_gap))
}

/// Probability that a random member outscores a random nonmember, ties
/// counting one half (the Mann-Whitney form of the ROC AUC).
pub fn auc_from_scores(members: &[f64], nonmembers: &[f64]) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(EvalError::Empty("member or nonmember set"));
    }
    if members.iter().chain(nonmembers).any(|s| s.is_nan()) {
        return Err(EvalError::NonFinite("attack scores"));
    }
    // Rank-sum with midranks for ties.
    let mut all: Vec<(f64, bool)> = members
        .iter()
        .map(|&s| (s, true))
        .chain(nonmembers.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += all[i..=j].iter().filter(|e| e.1).count() as f64 * midrank;
        i = j + 1;
    }
    let (m, n) = (members.len() as f64, nonmembers.len() as f64);
    Ok((rank_sum - m * (m + 1.0) / 2.0) / (m * n))
}

/// Loss-threshold membership attack: each sample is scored by its negative
/// loss, and the AUC measures how well that separates members from
/// nonmembers. 0.5 means no leakage.
pub fn mia_auc(model: &ModelParams, members: &Dataset, nonmembers: &Dataset) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(EvalError::Empty("member or nonmember set"));
    }
    let score = |d: &Dataset| -> Result<Vec<f64>> {
        Ok(model
            .per_sample_loss(&d.features()?, d.labels())?
            .into_iter()
            .map(|l| -l)
            .collect())
    };
    auc_from_scores(&score(members)?, &score(nonmembers)?)
}

/// Gradient of each row's largest raw logit with respect to its input row.
pub fn max_logit_input_gradients(model: &ModelParams, data: &Dataset) -> Result<Tensor> {
    if data.is_empty() {
        return Err(EvalError::Empty("sample set"));
    }
    let x = data.features()?;
    let logits = model.forward(&x)?;
    let k = logits.cols();
    let mut mask = vec![0.0; logits.len()];
    for i in 0..logits.rows() {
        mask[i * k + argmax(logits.row(i))] = 1.0;
    }
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let xv = g.leaf(x);
    let out = model.logits_graph(&mut g, &bound, xv).map_err(EvalError::Model)?;
    let mv = g.leaf(Tensor::new(logits.shape(), mask).map_err(ModelError::from)?);
    // Rows are independent, so the gradient of the summed picks is the
    // stack of per-row gradients.
    let picked = g.dot(out, mv).map_err(ModelError::from)?;
    let mut grads = g.backward(picked, &[xv]).map_err(ModelError::from)?;
    let grad = grads.pop().expect("one input");
    if !grad.is_finite() {
        return Err(EvalError::NonFinite("input gradient"));
    }
    Ok(grad)
}

/// Mean over rows of `||∂f/∂b|| / (||∂f/∂s|| + 1e-12)` where `f` is the max
/// logit, `s` the first `d_s` input columns and `b` the rest.
pub fn bias_gradient_ratio(model: &ModelParams, data: &Dataset, d_s: usize) -> Result<f64> {
    let grad = max_logit_input_gradients(model, data)?;
    let mut total = 0.0;
    for i in 0..grad.rows() {
        let row = grad.row(i);
        let ns = row[..d_s].iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = row[d_s..].iter().map(|v| v * v).sum::<f64>().sqrt();
        total += nb / (ns + 1e-12);
    }
    Ok(total / grad.rows() as f64)
}

/// `|∂(max logit)/∂x|` scaled to unit maximum (all zeros stay zeros).
pub fn saliency(model: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    let one = Dataset::from_rows(x.len(), [(x, 0usize)])?;
    let grad = max_logit_input_gradients(model, &one)?;
    Ok(normalize_unit_max(grad.data()))
}

/// Saliency for every row.
pub fn saliency_batch(model: &ModelParams, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let grad = max_logit_input_gradients(model, data)?;
    Ok((0..grad.rows()).map(|i| normalize_unit_max(grad.row(i))).collect())
}

fn normalize_unit_max(g: &[f64]) -> Vec<f64> {
    let abs: Vec<f64> = g.iter().map(|v| v.abs()).collect();
    let m = abs.iter().cloned().fold(0.0, f64::max);
    if m == 0.0 {
        abs
    } else {
        abs.into_iter().map(|v| v / m).collect()
    }
}

/// Share of total saliency that falls on columns `d_s..`.
pub fn b_block_mass(saliency: &[f64], d_s: usize) -> f64 {
    let total: f64 = saliency.iter().sum();
    if total == 0.0 {
        0.0
    } else {
        saliency[d_s..].iter().sum::<f64>() / total
    }
}

/// Metrics for one model on one bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fa: f64,
    pub ra: f64,
    pub ta: f64,
    pub dp_gap: f64,
    pub eo_gap: f64,
    pub dp_drop_pct: Option<f64>,
    pub eo_drop_pct: Option<f64>,
    pub mia_auc: f64,
    pub wall_time_seconds: f64,
}

impl EvalReport {
    /// Fills the drop percentages relative to `baseline`; they stay `None`
    /// where the baseline gap is zero.
    pub fn attach_baseline(&mut self, baseline: &EvalReport) {
        self.dp_drop_pct = fairness_drop_pct(baseline.dp_gap, self.dp_gap).ok();
        self.eo_drop_pct = fairness_drop_pct(baseline.eo_gap, self.eo_gap).ok();
    }
}

/// Binary views `(prediction is positive, label is positive, group)` of a
/// sample list under the bundle's fairness definition.
pub fn fairness_vectors(
    model: &ModelParams,
    bundle: &DataBundle,
    samples: &[Sample],
) -> Result<(Vec<bool>, Vec<bool>, Vec<bool>)> {
    let data = bundle.dataset(samples);
    if data.is_empty() {
        return Err(EvalError::Empty("fairness split"));
    }
    let positive = bundle.positive_class();
    let pred = model.predict(&data.features()?)?;
    Ok((
        pred.iter().map(|&p| p == positive).collect(),
        samples.iter().map(|s| s.label == positive).collect(),
        samples.iter().map(|s| bundle.fairness_group(s) == 1).collect(),
    ))
}

/// FA on the forget set (the retain set when the forget set is empty), RA
/// on the retain set, TA and both fairness gaps on the test split, and the
/// membership AUC of forget-set members against test nonmembers.
pub fn evaluate(model: &ModelParams, bundle: &DataBundle, wall_time_seconds: f64) -> Result<EvalReport> {
    let retain = bundle.retain_set();
    let forget = bundle.forget_set();
    let test = bundle.test_set();
    let members = if forget.is_empty() { &retain } else { &forget };
    let (pred, labels, groups) = fairness_vectors(model, bundle, &bundle.test)?;
    Ok(EvalReport {
        fa: accuracy(model, members)?,
        ra: accuracy(model, &retain)?,
        ta: accuracy(model, &test)?,
        dp_gap: demographic_parity_gap(&pred, &groups)?,
        eo_gap: equalized_odds_gap(&pred, &labels, &groups)?,
        dp_drop_pct: None,
        eo_drop_pct: None,
        mia_auc: mia_auc(model, members, &test)?,
        wall_time_seconds,
    })
}
