//! GIN encoder with weighted message passing, layer concatenation, readout
//! and a projection head.
//!
//! Layer `l` computes, for every node `i`,
//!
//! ```text
//! a_i^(l) = MLP_l( (1 + eps_l) * a_i^(l-1) + sum_{(j -> i) in E} w_ji * a_j^(l-1) )
//! ```
//!
//! with `a^(0) = X`. Node representations of all layers are concatenated,
//! pooled per graph and passed through a two-layer projection head.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::graph::Graph;
use crate::nn::Mlp;
use crate::params::ParamSet;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Sum,
    Mean,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Sum => "sum",
            Pooling::Mean => "mean",
        }
    }
}

impl core::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Pooling::Sum),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::InvalidConfig(format!("unknown pooling `{other}`"))),
        }
    }
}

/// Architecture of a [`GinEncoder`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GinArch {
    pub feature_dim: usize,
    pub layers: usize,
    /// Hidden and output width of every GIN layer.
    pub hidden: usize,
    /// Hidden and output width of the projection head.
    pub proj_dim: usize,
    pub pooling: Pooling,
}

impl GinArch {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            layers: 3,
            hidden: 32,
            proj_dim: 96,
            pooling: Pooling::Sum,
        }
    }

    /// Width of the concatenated node representation.
    pub fn concat_dim(&self) -> usize {
        self.layers * self.hidden
    }

    pub fn layer_mlp(&self, l: usize) -> Mlp {
        let input = if l == 0 { self.feature_dim } else { self.hidden };
        Mlp::new(format!("gin.{l}.mlp"), input, self.hidden, self.hidden)
    }

    pub fn eps_name(l: usize) -> String {
        format!("gin.{l}.eps")
    }

    pub fn projection(&self) -> Mlp {
        Mlp::new("proj", self.concat_dim(), self.proj_dim, self.proj_dim)
    }

    fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.proj_dim == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidConfig("encoder dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// GIN encoder parameters (`gin.*` and `proj.*`) with their architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct GinEncoder {
    pub arch: GinArch,
    pub params: ParamSet,
}

impl GinEncoder {
    /// Random initialization: Glorot weights, zero biases, `eps = 0`.
    pub fn new<R: Rng + ?Sized>(arch: GinArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamSet::new();
        for l in 0..arch.layers {
            params.insert(GinArch::eps_name(l), Tensor::scalar(0.0));
            arch.layer_mlp(l).init(&mut params, rng);
        }
        arch.projection().init(&mut params, rng);
        Ok(Self { arch, params })
    }

    /// Builds an encoder from stored parameters, checking every expected
    /// tensor is present with the right shape.
    pub fn from_params(arch: GinArch, params: ParamSet) -> Result<Self> {
        arch.validate()?;
        let probe = Self::new(arch.clone(), &mut crate::seed::rng(0))?;
        for p in probe.params.iter() {
            let got = params.get(&p.name)?;
            if got.value.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "encoder parameter",
                    lhs: p.value.shape(),
                    rhs: got.value.shape(),
                });
            }
        }
        if params.len() != probe.params.len() {
            return Err(Error::InvalidConfig(format!(
                "encoder expects {} tensors, got {}",
                probe.params.len(),
                params.len()
            )));
        }
        Ok(Self { arch, params })
    }

    /// Marks every parameter frozen; later tapes treat them as constants.
    pub fn freeze(&mut self) {
        self.params.freeze_all();
    }

    pub fn is_frozen(&self) -> bool {
        self.params.all_frozen()
    }

    /// Per-layer and concatenated node representations of a batch.
    pub fn encode_nodes(&self, tape: &Tape, batch: &GraphBatch, weights: Option<Var>) -> Result<NodeReps> {
        if batch.feature_dim() != self.arch.feature_dim {
            return Err(Error::FeatureDim {
                expected: self.arch.feature_dim,
                got: batch.feature_dim(),
            });
        }
        if let Some(w) = weights {
            let shape = tape.shape(w);
            if shape != (batch.edge_count(), 1) {
                return Err(Error::WeightCount {
                    expected: batch.edge_count(),
                    got: shape.0 * shape.1,
                });
            }
        }
        let mut h = tape.constant(batch.features.clone());
        let mut layers = Vec::with_capacity(self.arch.layers);
        for l in 0..self.arch.layers {
            let eps = tape.param(self.params.get(&GinArch::eps_name(l))?);
            let one_plus = tape.add_scalar(eps, 1.0)?;
            let mut pre = tape.mul_scalar_var(h, one_plus)?;
            if batch.edge_count() > 0 {
                let mut msg = tape.gather_rows(h, batch.src.clone())?;
                if let Some(w) = weights {
                    msg = tape.scale_rows(msg, w)?;
                }
                let agg = tape.scatter_add_rows(msg, batch.dst.clone(), batch.node_count())?;
                pre = tape.add(pre, agg)?;
            }
            h = self.arch.layer_mlp(l).forward(tape, &self.params, pre)?;
            layers.push(h);
        }
        let mut concat = layers[0];
        for &layer in &layers[1..] {
            concat = tape.concat_cols(concat, layer)?;
        }
        Ok(NodeReps { layers, concat })
    }

    /// Pools concatenated node rows into one row per graph.
    pub fn readout(&self, tape: &Tape, reps: &NodeReps, batch: &GraphBatch) -> Result<Var> {
        let pooled = tape.scatter_add_rows(reps.concat, batch.node_graph.clone(), batch.graph_count())?;
        match self.arch.pooling {
            Pooling::Sum => Ok(pooled),
            Pooling::Mean => {
                let inv = batch
                    .sizes()
                    .map(|n| 1.0 / n as f64)
                    .collect::<Vec<_>>();
                let inv = tape.constant(Tensor::from_vec(batch.graph_count(), 1, inv)?);
                tape.scale_rows(pooled, inv)
            }
        }
    }

    pub fn project(&self, tape: &Tape, pooled: Var) -> Result<Var> {
        let width = tape.shape(pooled).1;
        if width != self.arch.concat_dim() {
            return Err(Error::ShapeMismatch {
                op: "project",
                lhs: (1, self.arch.concat_dim()),
                rhs: (1, width),
            });
        }
        self.arch.projection().forward(tape, &self.params, pooled)
    }

    /// Graph embeddings (`graph_count x proj_dim`) of a batch.
    pub fn encode_batch(&self, tape: &Tape, batch: &GraphBatch, weights: Option<Var>) -> Result<Var> {
        let reps = self.encode_nodes(tape, batch, weights)?;
        let pooled = self.readout(tape, &reps, batch)?;
        self.project(tape, pooled)
    }

    /// Embedding of one graph under the given per-edge weights (unit weights when `None`).
    pub fn encode_graph(&self, g: &Graph, weights: Option<&[f64]>) -> Result<Vec<f64>> {
        let batch = GraphBatch::new(&[g])?;
        let tape = Tape::new();
        let w = weights
            .map(|w| Tensor::from_vec(w.len(), 1, w.to_vec()).map(|t| tape.constant(t)))
            .transpose()?;
        let h = self.encode_batch(&tape, &batch, w)?;
        Ok(tape.value(h).into_data())
    }

    /// Unit-weight embeddings of many graphs, one row per graph.
    pub fn embed_all<'a>(&self, graphs: impl IntoIterator<Item = &'a Graph>, chunk: usize) -> Result<Vec<Vec<f64>>> {
        let graphs: Vec<&Graph> = graphs.into_iter().collect();
        let mut out = Vec::with_capacity(graphs.len());
        for part in graphs.chunks(chunk.max(1)) {
            let batch = GraphBatch::new(part)?;
            let tape = Tape::new();
            let h = tape.value(self.encode_batch(&tape, &batch, None)?);
            out.extend((0..h.rows()).map(|r| h.row(r).to_vec()));
        }
        Ok(out)
    }
}

/// Per-layer node representations and their column concatenation.
#[derive(Debug, Clone)]
pub struct NodeReps {
    pub layers: Vec<Var>,
    pub concat: Var,
}

/// Disjoint union of graphs with global node indices, the unit of batched
/// encoding.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub features: Tensor,
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    /// Graph index of every node.
    pub node_graph: Rc<[usize]>,
    /// Offsets of each graph's first node; one extra entry holds the total.
    pub node_offsets: Vec<usize>,
    /// Offsets of each graph's first edge; one extra entry holds the total.
    pub edge_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph]) -> Result<Self> {
        let dim = graphs.first().map_or(0, |g| g.feature_dim());
        let total_nodes: usize = graphs.iter().map(|g| g.node_count()).sum();
        let mut features = Vec::with_capacity(total_nodes * dim);
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut node_graph = Vec::with_capacity(total_nodes);
        let mut node_offsets = Vec::with_capacity(graphs.len() + 1);
        let mut edge_offsets = Vec::with_capacity(graphs.len() + 1);
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            if g.node_count() == 0 {
                return Err(Error::EmptyGraph);
            }
            if g.feature_dim() != dim {
                return Err(Error::FeatureDim {
                    expected: dim,
                    got: g.feature_dim(),
                });
            }
            node_offsets.push(offset);
            edge_offsets.push(src.len());
            features.extend_from_slice(g.features().data());
            for &(s, d) in g.edges() {
                src.push(s + offset);
                dst.push(d + offset);
            }
            node_graph.extend(core::iter::repeat_n(gi, g.node_count()));
            offset += g.node_count();
        }
        node_offsets.push(offset);
        edge_offsets.push(src.len());
        Ok(Self {
            features: Tensor::from_vec(total_nodes, dim, features)?,
            src: src.into(),
            dst: dst.into(),
            node_graph: node_graph.into(),
            node_offsets,
            edge_offsets,
        })
    }

    pub fn graph_count(&self) -> usize {
        self.node_offsets.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.features.rows()
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Node count of every graph in batch order.
    pub fn sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.node_offsets.windows(2).map(|w| w[1] - w[0])
    }
}
