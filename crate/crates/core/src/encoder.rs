//! Tabular feature encoder: per-feature embeddings, flattening and a stack
//! of pre-normalized residual MLP blocks.
//!
//! Each numeric feature `x_i` becomes `Linear(ReLU(Linear(x_i)))` in
//! `R^D`; each categorical feature is a row of a learned table with one
//! extra trailing row for categories never seen during fitting. The `F`
//! embeddings are concatenated into `h0` of width `F*D` and passed through
//! `L` blocks `h + Drop(Linear(ReLU(Drop(Linear(BatchNorm(h))))))`.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

#[allow(unused_imports)] // float methods when built without std
use num_traits::Float;

use crate::error::{config_err, numeric, structural, Result};
use crate::graph::{Graph, Mode, NodeId, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum FeatureKind {
    Numeric,
    /// Known categories in index order. Index `categories.len()` is the
    /// reserved slot for anything else.
    Categorical {
        categories: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
}

impl Feature {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical { categories },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureSchema {
    features: Vec<Feature>,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        if features.is_empty() {
            return Err(structural!("a feature schema needs at least one feature"));
        }
        for (i, f) in features.iter().enumerate() {
            if features[..i].iter().any(|g| g.name == f.name) {
                return Err(structural!("duplicate feature name {:?}", f.name));
            }
            if let FeatureKind::Categorical { categories } = &f.kind {
                if categories.is_empty() {
                    return Err(structural!("categorical feature {:?} has no categories", f.name));
                }
            }
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn numeric_count(&self) -> usize {
        self.features.iter().filter(|f| f.kind == FeatureKind::Numeric).count()
    }

    pub fn categorical_count(&self) -> usize {
        self.len() - self.numeric_count()
    }

    /// Table index for `value` of categorical feature `feature`; unknown
    /// values map to the reserved trailing slot.
    pub fn category_index(&self, feature: usize, value: &str) -> Option<usize> {
        match &self.features.get(feature)?.kind {
            FeatureKind::Numeric => None,
            FeatureKind::Categorical { categories } => {
                Some(categories.iter().position(|c| c == value).unwrap_or(categories.len()))
            }
        }
    }
}

/// Column-major feature values for a set of rows. `numeric[j]` is the
/// j-th numeric feature in schema order, `categorical[j]` likewise.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub rows: usize,
    pub numeric: Vec<Vec<f64>>,
    pub categorical: Vec<Vec<usize>>,
}

impl Batch {
    /// Rows `index` of this batch, in the given order.
    pub fn select(&self, index: &[usize]) -> Batch {
        Batch {
            rows: index.len(),
            numeric: self
                .numeric
                .iter()
                .map(|c| index.iter().map(|&i| c[i]).collect())
                .collect(),
            categorical: self
                .categorical
                .iter()
                .map(|c| index.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }

    pub fn row(&self, i: usize) -> Batch {
        self.select(&[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum NumericEmbedding {
    /// `Linear(ReLU(Linear(x)))`, 1 -> D -> D.
    Mlp,
    /// A single `Linear(x)`, 1 -> D (ablation without numeric MLPs).
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderConfig {
    pub embedding_dim: usize,
    pub blocks: usize,
    /// Hidden width of each block as a multiple of `F*D`.
    pub hidden_multiplier: f64,
    pub dropout: f64,
    pub numeric_embedding: NumericEmbedding,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            blocks: 2,
            hidden_multiplier: 2.0,
            dropout: 0.1,
            numeric_embedding: NumericEmbedding::Mlp,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(config_err!("embedding width must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(self.hidden_multiplier > 0.0 && self.hidden_multiplier.is_finite()) {
            return Err(config_err!(
                "hidden multiplier must be positive, got {}",
                self.hidden_multiplier
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Fan-in scaled uniform initialization, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn init(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let k = 1.0 / (inputs as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| rng.uniform_range(-k, k)).collect();
        let b = (0..outputs).map(|_| rng.uniform_range(-k, k)).collect();
        Self {
            weight: store.add(
                format!("{name}.weight"),
                Tensor::matrix(inputs, outputs, w).expect("sized"),
            ),
            bias: store.add(format!("{name}.bias"), Tensor::matrix(1, outputs, b).expect("sized")),
        }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), Tensor::zeros(&[inputs, outputs])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, outputs])),
        }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight)?;
        let b = g.param(store, self.bias)?;
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum NumericEmbedder {
    Mlp { first: Linear, second: Linear },
    Linear(Linear),
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResBlock {
    pub norm_scale: ParamId,
    pub norm_shift: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub first: Linear,
    pub second: Linear,
}

/// Ids of the train-mode batch-norm nodes created by one [`Encoder::encode`].
#[derive(Clone, Debug, Default)]
pub struct EncodeTrace {
    pub norm_nodes: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Encoder {
    pub config: EncoderConfig,
    pub schema: FeatureSchema,
    pub numeric: Vec<NumericEmbedder>,
    pub tables: Vec<ParamId>,
    pub blocks: Vec<ResBlock>,
}

impl Encoder {
    pub fn new(schema: FeatureSchema, config: EncoderConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.embedding_dim;
        let width = schema.len() * d;
        let hidden = ((config.hidden_multiplier * width as f64).round() as usize).max(1);

        let mut numeric = Vec::new();
        let mut tables = Vec::new();
        for f in schema.features() {
            match &f.kind {
                FeatureKind::Numeric => {
                    let name = format!("embed.{}", f.name);
                    numeric.push(match config.numeric_embedding {
                        NumericEmbedding::Mlp => NumericEmbedder::Mlp {
                            first: Linear::init(store, &format!("{name}.0"), 1, d, rng),
                            second: Linear::init(store, &format!("{name}.1"), d, d, rng),
                        },
                        NumericEmbedding::Linear => NumericEmbedder::Linear(Linear::init(store, &name, 1, d, rng)),
                    });
                }
                FeatureKind::Categorical { categories } => {
                    let rows = categories.len() + 1;
                    let values = (0..rows * d).map(|_| rng.normal()).collect();
                    tables.push(store.add(format!("embed.{}.table", f.name), Tensor::matrix(rows, d, values)?));
                }
            }
        }

        let blocks = (0..config.blocks)
            .map(|l| ResBlock {
                norm_scale: store.add(format!("block{l}.norm.scale"), Tensor::full(&[1, width], 1.0)),
                norm_shift: store.add(format!("block{l}.norm.shift"), Tensor::zeros(&[1, width])),
                running_mean: vec![0.0; width],
                running_var: vec![1.0; width],
                first: Linear::init(store, &format!("block{l}.linear0"), width, hidden, rng),
                second: Linear::init(store, &format!("block{l}.linear1"), hidden, width, rng),
            })
            .collect();

        Ok(Self {
            config,
            schema,
            numeric,
            tables,
            blocks,
        })
    }

    /// Width of `h0` and of every block output, `F*D`.
    pub fn output_width(&self) -> usize {
        self.schema.len() * self.config.embedding_dim
    }

    pub fn embed_numeric(&self, g: &mut Graph, store: &ParamStore, feature: usize, values: &[f64]) -> Result<NodeId> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(numeric!("numeric feature {feature} has non-finite input {v}"));
        }
        let embedder = self
            .numeric
            .get(feature)
            .ok_or_else(|| structural!("no numeric feature {feature}"))?;
        let x = g.constant(Tensor::column(values.to_vec()))?;
        match embedder {
            NumericEmbedder::Mlp { first, second } => {
                let h = first.apply(g, store, x)?;
                let h = g.relu(h)?;
                second.apply(g, store, h)
            }
            NumericEmbedder::Linear(lin) => lin.apply(g, store, x),
        }
    }

    pub fn embed_categorical(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        feature: usize,
        index: &[usize],
    ) -> Result<NodeId> {
        let table = *self
            .tables
            .get(feature)
            .ok_or_else(|| structural!("no categorical feature {feature}"))?;
        let t = g.param(store, table)?;
        g.embedding(t, index.to_vec())
    }

    /// `h0`: the per-feature embeddings side by side in schema order.
    pub fn assemble_h0(&self, g: &mut Graph, embeddings: &[NodeId]) -> Result<NodeId> {
        if embeddings.len() != self.schema.len() {
            return Err(structural!(
                "expected {} embeddings, got {}",
                self.schema.len(),
                embeddings.len()
            ));
        }
        for &e in embeddings {
            if g.value(e).cols() != self.config.embedding_dim {
                return Err(structural!(
                    "embedding of width {} where {} was expected",
                    g.value(e).cols(),
                    self.config.embedding_dim
                ));
            }
        }
        g.concat_cols(embeddings)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn resnet_block(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        block: usize,
        h: NodeId,
        mode: Mode,
        rng: &mut Rng,
        trace: &mut EncodeTrace,
    ) -> Result<NodeId> {
        let b = &self.blocks[block];
        let normed = match mode {
            Mode::Train => {
                let n = g.batch_norm_train(h, BATCH_NORM_EPS)?;
                trace.norm_nodes.push(n);
                n
            }
            Mode::Eval => {
                let shift = g.constant(Tensor::vector(b.running_mean.iter().map(|m| -m).collect()))?;
                let scale = g.constant(Tensor::vector(
                    b.running_var
                        .iter()
                        .map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt())
                        .collect(),
                ))?;
                let centred = g.add_row(h, shift)?;
                g.mul_row(centred, scale)?
            }
        };
        let gamma = g.param(store, b.norm_scale)?;
        let beta = g.param(store, b.norm_shift)?;
        let x = g.mul_row(normed, gamma)?;
        let x = g.add_row(x, beta)?;
        let x = b.first.apply(g, store, x)?;
        let x = g.dropout(x, self.config.dropout, mode, rng)?;
        let x = g.relu(x)?;
        let x = b.second.apply(g, store, x)?;
        let x = g.dropout(x, self.config.dropout, mode, rng)?;
        g.add(h, x)
    }

    /// Full pipeline to `h^(L)`, a `rows x F*D` node.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &Batch,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(NodeId, EncodeTrace)> {
        if batch.numeric.len() != self.schema.numeric_count()
            || batch.categorical.len() != self.schema.categorical_count()
        {
            return Err(structural!(
                "batch has {} numeric / {} categorical columns, schema expects {} / {}",
                batch.numeric.len(),
                batch.categorical.len(),
                self.schema.numeric_count(),
                self.schema.categorical_count()
            ));
        }
        if mode == Mode::Train && batch.rows < 2 && !self.blocks.is_empty() {
            return Err(structural!(
                "train-mode encoding needs at least 2 rows for batch statistics"
            ));
        }
        let mut embeddings = Vec::with_capacity(self.schema.len());
        let (mut ni, mut ci) = (0, 0);
        for f in self.schema.features() {
            match &f.kind {
                FeatureKind::Numeric => {
                    let col = &batch.numeric[ni];
                    if col.len() != batch.rows {
                        return Err(structural!("numeric column {:?} has wrong length", f.name));
                    }
                    embeddings.push(self.embed_numeric(g, store, ni, col)?);
                    ni += 1;
                }
                FeatureKind::Categorical { .. } => {
                    let col = &batch.categorical[ci];
                    if col.len() != batch.rows {
                        return Err(structural!("categorical column {:?} has wrong length", f.name));
                    }
                    embeddings.push(self.embed_categorical(g, store, ci, col)?);
                    ci += 1;
                }
            }
        }
        let mut h = self.assemble_h0(g, &embeddings)?;
        let mut trace = EncodeTrace::default();
        for l in 0..self.blocks.len() {
            h = self.resnet_block(g, store, l, h, mode, rng, &mut trace)?;
        }
        Ok((h, trace))
    }

    /// Folds the batch statistics seen by a train-mode pass into the
    /// running estimates used in eval mode.
    pub fn update_running_stats(&mut self, g: &Graph, trace: &EncodeTrace) {
        for (block, &node) in self.blocks.iter_mut().zip(&trace.norm_nodes) {
            if let Some(stats) = g.batch_stats(node) {
                for j in 0..block.running_mean.len() {
                    block.running_mean[j] =
                        (1.0 - BATCH_NORM_MOMENTUM) * block.running_mean[j] + BATCH_NORM_MOMENTUM * stats.mean[j];
                    block.running_var[j] =
                        (1.0 - BATCH_NORM_MOMENTUM) * block.running_var[j] + BATCH_NORM_MOMENTUM * stats.var[j];
                }
            }
        }
    }
}
