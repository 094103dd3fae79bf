//! Small differentiable classifiers.
//!
//! A model is a stack of affine layers with ReLU between them and either a
//! K-way softmax head or a single-logit sigmoid head. Low-rank adapters can
//! be attached per layer; the effective weight of an adapted layer is
//! `W + A B`.

mod checkpoint;
mod data;
mod lora;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use data::Dataset;
pub use lora::LoraAdapter;
pub use train::{train, Adam, TrainConfig, TrainOutcome};

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("feature width {actual} does not match model input width {expected}")]
    WidthMismatch { expected: usize, actual: usize },
    #[error("label {label} out of range for a {classes}-class head")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("layer index {index} out of range for a {layers}-layer model")]
    InvalidLayer { index: usize, layers: usize },
    #[error("adapter rank {rank} invalid for a {rows}x{cols} weight (must be 1..={max})", max = rows.min(cols))]
    InvalidRank { rank: usize, rows: usize, cols: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// K-way softmax over the final layer's outputs.
    Softmax,
    /// One logit, class 1 when the sigmoid exceeds one half.
    Sigmoid,
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Softmax => "softmax",
            Head::Sigmoid => "sigmoid",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub layer_sizes: Vec<usize>,
    pub head: Head,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, head: Head) -> Self {
        Self { layer_sizes, head }
    }

    pub fn init(&self, seed: u64) -> Result<ModelParams> {
        init_model(&self.layer_sizes, self.head, seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `d_out x d_in`
    pub weight: Tensor,
    /// length `d_out`
    pub bias: Tensor,
}

impl Layer {
    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }
}

/// Identifies one parameter tensor of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    Weight(usize),
    Bias(usize),
    LoraA(usize),
    LoraB(usize),
}

impl ParamId {
    pub fn name(&self) -> String {
        match self {
            ParamId::Weight(i) => format!("layer{i}.weight"),
            ParamId::Bias(i) => format!("layer{i}.bias"),
            ParamId::LoraA(i) => format!("layer{i}.lora_a"),
            ParamId::LoraB(i) => format!("layer{i}.lora_b"),
        }
    }

    pub fn is_adapter(&self) -> bool {
        matches!(self, ParamId::LoraA(_) | ParamId::LoraB(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
    head: Head,
    adapters: BTreeMap<usize, LoraAdapter>,
    seed: u64,
}

/// Graph handles for every parameter of a model, in [`ModelParams::param_ids`] order.
#[derive(Clone, Debug)]
pub struct BoundModel {
    vars: Vec<(ParamId, Var)>,
}

impl BoundModel {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("parameter {id:?} not bound"))
    }

    pub fn vars_for(&self, ids: &[ParamId]) -> Vec<Var> {
        ids.iter().map(|&id| self.get(id)).collect()
    }
}

/// Builds a model with weights uniform in `±sqrt(6 / (d_in + d_out))` and
/// zero biases, drawn from a ChaCha8 stream seeded with `seed`.
pub fn init_model(layer_sizes: &[usize], head: Head, seed: u64) -> Result<ModelParams> {
    if layer_sizes.len() < 2 {
        return Err(ModelError::InvalidArchitecture(format!(
            "need at least an input and an output size, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(ModelError::InvalidArchitecture(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    if head == Head::Sigmoid && *layer_sizes.last().unwrap() != 1 {
        return Err(ModelError::InvalidArchitecture(
            "a sigmoid head needs exactly one output".into(),
        ));
    }
    if head == Head::Softmax && *layer_sizes.last().unwrap() < 2 {
        return Err(ModelError::InvalidArchitecture(
            "a softmax head needs at least two outputs".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (d_in, d_out) = (w[0], w[1]);
            let limit = (6.0 / (d_in + d_out) as f64).sqrt();
            let data = (0..d_in * d_out).map(|_| rng.random_range(-limit..limit)).collect();
            Layer {
                weight: Tensor::new(&[d_out, d_in], data).expect("positive dims"),
                bias: Tensor::zeros(&[d_out]),
            }
        })
        .collect();
    Ok(ModelParams {
        layers,
        head,
        adapters: BTreeMap::new(),
        seed,
    })
}

impl ModelParams {
    pub(crate) fn from_parts(
        layers: Vec<Layer>,
        head: Head,
        adapters: BTreeMap<usize, LoraAdapter>,
        seed: u64,
    ) -> Result<Self> {
        let model = Self {
            layers,
            head,
            adapters,
            seed,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(ModelError::InvalidArchitecture("no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[1].d_in() != pair[0].d_out() {
                return Err(ModelError::InvalidArchitecture(format!(
                    "layer {} expects width {} but layer {i} produces {}",
                    i + 1,
                    pair[1].d_in(),
                    pair[0].d_out()
                )));
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.shape() != [layer.d_out()] {
                return Err(ModelError::InvalidArchitecture(format!("layer {i} bias shape")));
            }
        }
        for (&i, ad) in &self.adapters {
            let layer = self.layers.get(i).ok_or(ModelError::InvalidLayer {
                index: i,
                layers: self.layers.len(),
            })?;
            ad.check_against(layer)?;
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn adapters(&self) -> &BTreeMap<usize, LoraAdapter> {
        &self.adapters
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn num_classes(&self) -> usize {
        match self.head {
            Head::Softmax => self.layers.last().unwrap().d_out(),
            Head::Sigmoid => 2,
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_width()];
        sizes.extend(self.layers.iter().map(Layer::d_out));
        sizes
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::new(self.layer_sizes(), self.head)
    }

    pub fn same_architecture(&self, other: &ModelParams) -> bool {
        self.head == other.head && self.layer_sizes() == other.layer_sizes()
    }

    /// Every parameter tensor in canonical order: per layer weight, bias,
    /// then adapter factors if attached.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for i in 0..self.layers.len() {
            ids.push(ParamId::Weight(i));
            ids.push(ParamId::Bias(i));
            if self.adapters.contains_key(&i) {
                ids.push(ParamId::LoraA(i));
                ids.push(ParamId::LoraB(i));
            }
        }
        ids
    }

    /// Parameters an optimizer may update. A frozen base leaves only the
    /// adapter factors trainable.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        let frozen = self.adapters.values().any(|a| a.frozen_base);
        self.param_ids()
            .into_iter()
            .filter(|id| !frozen || id.is_adapter())
            .collect()
    }

    /// Weight and bias of the output layer.
    pub fn head_ids(&self) -> Vec<ParamId> {
        let last = self.layers.len() - 1;
        vec![ParamId::Weight(last), ParamId::Bias(last)]
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        match id {
            ParamId::Weight(i) => &self.layers[i].weight,
            ParamId::Bias(i) => &self.layers[i].bias,
            ParamId::LoraA(i) => &self.adapters[&i].a,
            ParamId::LoraB(i) => &self.adapters[&i].b,
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        match id {
            ParamId::Weight(i) => &mut self.layers[i].weight,
            ParamId::Bias(i) => &mut self.layers[i].bias,
            ParamId::LoraA(i) => &mut self.adapters.get_mut(&i).expect("adapter").a,
            ParamId::LoraB(i) => &mut self.adapters.get_mut(&i).expect("adapter").b,
        }
    }

    pub fn params_for(&self, ids: &[ParamId]) -> Vec<Tensor> {
        ids.iter().map(|&id| self.param(id).clone()).collect()
    }

    /// Writes flat values back into the listed parameters.
    pub fn set_flat(&mut self, ids: &[ParamId], values: &[f64]) {
        let mut offset = 0;
        for &id in ids {
            let t = self.param_mut(id);
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        debug_assert_eq!(offset, values.len());
    }

    pub fn flat(&self, ids: &[ParamId]) -> Vec<f64> {
        ids.iter()
            .flat_map(|&id| self.param(id).data().iter().copied())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.param_ids().into_iter().all(|id| self.param(id).is_finite())
    }

    /// Adds one leaf per parameter.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        let vars = self
            .param_ids()
            .into_iter()
            .map(|id| (id, g.leaf(self.param(id).clone())))
            .collect();
        BoundModel { vars }
    }

    /// Like [`bind`](Self::bind), but parameters listed in `ids` take the
    /// given graph handles instead of fresh leaves.
    pub fn bind_with(&self, g: &mut Graph, ids: &[ParamId], vars: &[Var]) -> BoundModel {
        let bound = self
            .param_ids()
            .into_iter()
            .map(|id| match ids.iter().position(|&x| x == id) {
                Some(k) => (id, vars[k]),
                None => (id, g.leaf(self.param(id).clone())),
            })
            .collect();
        BoundModel { vars: bound }
    }

    fn check_width(&self, g: &Graph, x: Var) -> Result<()> {
        let shape = g.shape(x);
        let actual = if shape.len() == 2 { shape[1] } else { 0 };
        if actual != self.input_width() || shape.len() != 2 {
            return Err(ModelError::WidthMismatch {
                expected: self.input_width(),
                actual,
            });
        }
        Ok(())
    }

    fn layer_affine(&self, g: &mut Graph, bound: &BoundModel, i: usize, h: Var) -> Result<Var> {
        let mut w = bound.get(ParamId::Weight(i));
        if self.adapters.contains_key(&i) {
            let ab = g.matmul(bound.get(ParamId::LoraA(i)), bound.get(ParamId::LoraB(i)))?;
            w = g.add(w, ab)?;
        }
        let wt = g.transpose(w)?;
        let z = g.matmul(h, wt)?;
        Ok(g.add_row(z, bound.get(ParamId::Bias(i)))?)
    }

    /// Activations feeding the output layer (the input itself for a single
    /// linear layer).
    pub fn embedding_graph(&self, g: &mut Graph, bound: &BoundModel, x: Var) -> Result<Var> {
        self.check_width(g, x)?;
        let mut h = x;
        for i in 0..self.layers.len() - 1 {
            let z = self.layer_affine(g, bound, i, h)?;
            h = g.relu(z)?;
        }
        Ok(h)
    }

    pub fn logits_graph(&self, g: &mut Graph, bound: &BoundModel, x: Var) -> Result<Var> {
        let h = self.embedding_graph(g, bound, x)?;
        self.layer_affine(g, bound, self.layers.len() - 1, h)
    }

    /// Per-class log-probabilities (`n x num_classes`). A sigmoid logit `z`
    /// becomes the pair `[0, z]` before the log-softmax, which yields
    /// `[log(1 - p), log p]`.
    pub fn log_probs_graph(&self, g: &mut Graph, logits: Var) -> Result<Var> {
        match self.head {
            Head::Softmax => Ok(g.log_softmax(logits)?),
            Head::Sigmoid => {
                let lift = g.leaf(Tensor::new(&[1, 2], vec![0.0, 1.0])?);
                let pair = g.matmul(logits, lift)?;
                Ok(g.log_softmax(pair)?)
            }
        }
    }

    pub fn check_labels(&self, labels: &[usize]) -> Result<()> {
        let classes = self.num_classes();
        match labels.iter().find(|&&l| l >= classes) {
            Some(&label) => Err(ModelError::LabelOutOfRange { label, classes }),
            None => Ok(()),
        }
    }

    /// One-hot label matrix used to pick `log p_y` out of a log-probability matrix.
    pub fn one_hot(&self, labels: &[usize]) -> Result<Tensor> {
        self.check_labels(labels)?;
        let k = self.num_classes();
        let mut data = vec![0.0; labels.len() * k];
        for (i, &l) in labels.iter().enumerate() {
            data[i * k + l] = 1.0;
        }
        Ok(Tensor::new(&[labels.len(), k], data)?)
    }

    /// Mean cross-entropy (binary cross-entropy for the sigmoid head).
    pub fn loss_graph(&self, g: &mut Graph, bound: &BoundModel, x: Var, labels: &[usize]) -> Result<Var> {
        let onehot = self.one_hot(labels)?;
        let logits = self.logits_graph(g, bound, x)?;
        let lp = self.log_probs_graph(g, logits)?;
        let mask = g.leaf(onehot);
        let picked = g.dot(lp, mask)?;
        Ok(g.scale(picked, -1.0 / labels.len() as f64)?)
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let x = g.leaf(batch.clone());
        let out = self.logits_graph(&mut g, &bound, x)?;
        Ok(g.value(out).clone())
    }

    pub fn log_probs(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let x = g.leaf(batch.clone());
        let logits = self.logits_graph(&mut g, &bound, x)?;
        let lp = self.log_probs_graph(&mut g, logits)?;
        Ok(g.value(lp).clone())
    }

    pub fn loss(&self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        if batch.rank() != 2 || batch.rows() != labels.len() {
            return Err(ModelError::InvalidConfig(format!(
                "{} labels for a batch of shape {:?}",
                labels.len(),
                batch.shape()
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let x = g.leaf(batch.clone());
        let l = self.loss_graph(&mut g, &bound, x, labels)?;
        Ok(g.value(l).item())
    }

    /// Argmax class per row; ties resolve to the lower class index, so a
    /// sigmoid output of exactly one half predicts class 0.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let lp = self.log_probs(batch)?;
        Ok((0..lp.rows()).map(|i| argmax(lp.row(i))).collect())
    }

    /// `-log p(y | x)` for every row.
    pub fn per_sample_loss(&self, batch: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        self.check_labels(labels)?;
        let lp = self.log_probs(batch)?;
        Ok(labels.iter().enumerate().map(|(i, &y)| -lp.at(i, y)).collect())
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}
