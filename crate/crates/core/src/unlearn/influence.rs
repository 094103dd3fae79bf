use crate::autodiff::{cg_solve, AutodiffError, Graph, HessianOperator, Var};
use crate::model::{BoundModel, Dataset, ModelParams, ParamId};

use super::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InfluenceEstimate {
    pub value: f64,
    pub converged: bool,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Precomputes `s = (H + λI)^{-1} ∇B` once so that the influence of any
/// number of samples costs one gradient each: `I(x) = -∇ℓ(x)ᵀ s`.
///
/// `H` is the Hessian of the mean loss over `train` with respect to `ids`.
pub struct InfluenceSolver {
    model: ModelParams,
    ids: Vec<ParamId>,
    direction: Vec<f64>,
    converged: bool,
    residual_norm: f64,
    iterations: usize,
}

impl InfluenceSolver {
    pub fn new<B>(
        model: &ModelParams,
        ids: &[ParamId],
        train: &Dataset,
        bias: B,
        damping: f64,
        max_iter: usize,
        tol: f64,
    ) -> Result<Self>
    where
        B: FnOnce(&mut Graph, &BoundModel) -> crate::model::Result<Var>,
    {
        let bias_grad = {
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let out = bias(&mut g, &bound)?;
            let grads = g.backward(out, &bound.vars_for(ids))?;
            grads.into_iter().flat_map(|t| t.into_data()).collect::<Vec<_>>()
        };
        let x = train.features()?;
        let labels = train.labels().to_vec();
        let mut op = HessianOperator::new(
            |g, vars| {
                let bound = model.bind_with(g, ids, vars);
                let xv = g.leaf(x);
                model
                    .loss_graph(g, &bound, xv, &labels)
                    .map_err(|e| AutodiffError::InvalidArgument(e.to_string()))
            },
            &model.params_for(ids),
        )?;
        let sol = cg_solve(|v| op.apply(v), &bias_grad, damping, max_iter, tol)?;
        Ok(Self {
            model: model.clone(),
            ids: ids.to_vec(),
            direction: sol.x,
            converged: sol.converged,
            residual_norm: sol.residual_norm,
            iterations: sol.iterations,
        })
    }

    /// `(H + λI)^{-1} ∇B`, flattened over the solver's parameters.
    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn influence(&self, x: &[f64], label: usize) -> Result<InfluenceEstimate> {
        let one = Dataset::from_rows(self.model.input_width(), [(x, label)])?;
        let (_, grads) = super::loss_and_grad(&self.model, &self.ids, &one)?;
        let dot: f64 = grads
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .zip(&self.direction)
            .map(|(a, b)| a * b)
            .sum();
        Ok(InfluenceEstimate {
            value: -dot,
            converged: self.converged,
            residual_norm: self.residual_norm,
            iterations: self.iterations,
        })
    }
}

/// Influence of one training sample on the bias measure `B`:
/// `-∇ℓ(x, y)ᵀ (H + λI)^{-1} ∇B(θ)`.
#[allow(clippy::too_many_arguments)]
pub fn influence<B>(
    model: &ModelParams,
    ids: &[ParamId],
    train: &Dataset,
    sample: (&[f64], usize),
    bias: B,
    damping: f64,
    max_iter: usize,
    tol: f64,
) -> Result<InfluenceEstimate>
where
    B: FnOnce(&mut Graph, &BoundModel) -> crate::model::Result<Var>,
{
    InfluenceSolver::new(model, ids, train, bias, damping, max_iter, tol)?.influence(sample.0, sample.1)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::setup;
    use super::*;

    fn probe_loss(model: &ModelParams, probe: Dataset, scale: f64) -> impl FnOnce(&mut Graph, &BoundModel) -> crate::model::Result<Var> + '_ {
        move |g, bound| {
            let x = g.leaf(probe.features()?);
            let l = model.loss_graph(g, bound, x, probe.labels())?;
            Ok(g.scale(l, scale)?)
        }
    }

    #[test]
    fn scaling_the_bias_measure_scales_influence() {
        let (m, data) = setup();
        let ids = m.head_ids();
        let probe = data.forget.clone();
        let s1 = InfluenceSolver::new(&m, &ids, &data.retain, probe_loss(&m, probe.clone(), 1.0), 1e-2, 200, 1e-12).unwrap();
        let s3 = InfluenceSolver::new(&m, &ids, &data.retain, probe_loss(&m, probe, 3.0), 1e-2, 200, 1e-12).unwrap();
        let x = data.retain.row(5);
        let y = data.retain.labels()[5];
        let a = s1.influence(x, y).unwrap().value;
        let b = s3.influence(x, y).unwrap().value;
        assert!((b - 3.0 * a).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn zero_bias_gradient_gives_zero_influence() {
        let (m, data) = setup();
        let ids = m.head_ids();
        let est = influence(
            &m,
            &ids,
            &data.retain,
            (data.retain.row(0), data.retain.labels()[0]),
            |g, bound| {
                let total = g.sum(bound.get(ParamId::Weight(1)))?;
                Ok(g.scale(total, 0.0)?)
            },
            1e-2,
            50,
            1e-12,
        )
        .unwrap();
        assert_eq!(est.value, 0.0);
    }
}
