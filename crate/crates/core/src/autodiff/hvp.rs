use super::{AutodiffError, Graph, Tensor, Var};

fn total_len(params: &[Tensor]) -> usize {
    params.iter().map(Tensor::len).sum()
}

fn flatten(tensors: &[Tensor]) -> Vec<f64> {
    tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Value and flattened gradient of `loss` at `params`.
pub fn gradient<F>(loss: F, params: &[Tensor]) -> Result<(f64, Vec<f64>), AutodiffError>
where
    F: FnOnce(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let out = loss(&mut g, &vars)?;
    let value = g.value(out).item();
    let grads = g.backward(out, &vars)?;
    Ok((value, flatten(&grads)))
}

/// Hessian of a scalar loss at fixed parameters, applied to vectors without
/// ever materializing the matrix.
///
/// The forward pass and the symbolic gradient are recorded once; each
/// [`HessianOperator::apply`] appends the inner product `<grad, v>` and
/// differentiates it a second time, then discards those nodes.
pub struct HessianOperator {
    graph: Graph,
    params: Vec<Var>,
    grads: Vec<Var>,
    shapes: Vec<Vec<usize>>,
    dim: usize,
    loss_value: f64,
}

impl HessianOperator {
    pub fn new<F>(loss: F, params: &[Tensor]) -> Result<Self, AutodiffError>
    where
        F: FnOnce(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
    {
        let mut graph = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| graph.leaf(p.clone())).collect();
        let out = loss(&mut graph, &vars)?;
        let loss_value = graph.value(out).item();
        let grads = graph.grad(out, &vars)?;
        Ok(Self {
            graph,
            params: vars,
            grads,
            shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
            dim: total_len(params),
            loss_value,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn loss_value(&self) -> f64 {
        self.loss_value
    }

    /// Flattened gradient at the recorded point.
    pub fn gradient(&self) -> Vec<f64> {
        self.grads
            .iter()
            .flat_map(|&g| self.graph.value(g).data().iter().copied())
            .collect()
    }

    pub fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>, AutodiffError> {
        if v.len() != self.dim {
            return Err(AutodiffError::LengthMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        let mark = self.graph.mark();
        let result = self.apply_inner(v);
        self.graph.rewind(mark);
        result
    }

    fn apply_inner(&mut self, v: &[f64]) -> Result<Vec<f64>, AutodiffError> {
        let mut offset = 0;
        let mut inner: Option<Var> = None;
        for (i, shape) in self.shapes.iter().enumerate() {
            let n: usize = shape.iter().product();
            let vi = self.graph.leaf(Tensor::new(shape, v[offset..offset + n].to_vec())?);
            offset += n;
            let term = self.graph.dot(self.grads[i], vi)?;
            inner = Some(match inner {
                None => term,
                Some(acc) => self.graph.add(acc, term)?,
            });
        }
        let inner = inner.expect("at least one parameter tensor");
        let hv = self.graph.backward(inner, &self.params)?;
        Ok(flatten(&hv))
    }
}

/// `H v` for the Hessian of `loss` at `params`, by double reverse sweep.
pub fn hessian_vector_product<F>(loss: F, params: &[Tensor], v: &[f64]) -> Result<Vec<f64>, AutodiffError>
where
    F: FnOnce(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    let dim = total_len(params);
    if v.len() != dim {
        return Err(AutodiffError::LengthMismatch {
            expected: dim,
            actual: v.len(),
        });
    }
    HessianOperator::new(loss, params)?.apply(v)
}
