//! Graph data model, degree featurization and ID/OOD splitting.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Tensor};

/// Default clamp for degree one-hot features.
pub const DEFAULT_MAX_DEGREE: usize = 32;

/// A graph with a directed edge list. Undirected inputs store both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
}

impl Graph {
    pub fn new(node_count: usize, edges: Vec<(usize, usize)>, features: Tensor) -> Result<Self> {
        if features.rows() != node_count {
            return Err(Error::ShapeMismatch {
                op: "graph features",
                lhs: (node_count, features.cols()),
                rhs: features.shape(),
            });
        }
        if let Some(&(s, d)) = edges.iter().find(|&&(s, d)| s >= node_count || d >= node_count) {
            return Err(Error::ShapeMismatch {
                op: "graph edge",
                lhs: (node_count, node_count),
                rhs: (s, d),
            });
        }
        Ok(Self {
            node_count,
            edges,
            features,
        })
    }

    /// Builds a graph from undirected pairs, storing `(i, j)` and `(j, i)`.
    pub fn from_undirected(node_count: usize, pairs: &[(usize, usize)], features: Tensor) -> Result<Self> {
        let mut edges = Vec::with_capacity(pairs.len() * 2);
        for &(i, j) in pairs {
            edges.push((i, j));
            if i != j {
                edges.push((j, i));
            }
        }
        Self::new(node_count, edges, features)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn set_features(&mut self, features: Tensor) -> Result<()> {
        if features.rows() != self.node_count {
            return Err(Error::ShapeMismatch {
                op: "set_features",
                lhs: (self.node_count, features.cols()),
                rhs: features.shape(),
            });
        }
        self.features = features;
        Ok(())
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut deg = alloc::vec![0; self.node_count];
        for &(s, _) in &self.edges {
            deg[s] += 1;
        }
        deg
    }

    /// Unique unordered pairs `(min, max)` in first-seen order, self-loops excluded.
    pub fn undirected_pairs(&self) -> Vec<(usize, usize)> {
        let mut seen = alloc::collections::BTreeSet::new();
        let mut out = Vec::new();
        for &(s, d) in &self.edges {
            if s == d {
                continue;
            }
            let key = (s.min(d), s.max(d));
            if seen.insert(key) {
                out.push(key);
            }
        }
        out
    }

    /// True when every `(i, j)` has a matching `(j, i)`.
    pub fn is_symmetric(&self) -> bool {
        let set: alloc::collections::BTreeSet<_> = self.edges.iter().copied().collect();
        self.edges.iter().all(|&(s, d)| set.contains(&(d, s)))
    }

    /// Relabels node `i` as `perm[i]`, permuting features and edges.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.node_count {
            return Err(Error::ShapeMismatch {
                op: "permute",
                lhs: (self.node_count, 1),
                rhs: (perm.len(), 1),
            });
        }
        let mut features = Tensor::zeros(self.node_count, self.feature_dim());
        for (old, &new) in perm.iter().enumerate() {
            features.row_mut(new).copy_from_slice(self.features.row(old));
        }
        let edges = self.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        Self::new(self.node_count, edges, features)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    pub graph: Graph,
    pub label: usize,
}

/// A named collection of labeled graphs with dense labels `0..class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<LabeledGraph>,
    pub class_count: usize,
    pub feature_dim: usize,
}

impl GraphDataset {
    pub fn new(name: impl Into<String>, graphs: Vec<LabeledGraph>, class_count: usize) -> Result<Self> {
        let feature_dim = graphs.first().map_or(0, |g| g.graph.feature_dim());
        for g in &graphs {
            if g.graph.feature_dim() != feature_dim {
                return Err(Error::FeatureDim {
                    expected: feature_dim,
                    got: g.graph.feature_dim(),
                });
            }
            if g.label >= class_count {
                return Err(Error::LabelOutOfRange {
                    label: g.label,
                    classes: class_count,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            graphs,
            class_count,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

/// One-hot `min(out_degree, max_degree)` node features of width `max_degree + 1`.
pub fn degree_one_hot(g: &Graph, max_degree: usize) -> Tensor {
    let dim = max_degree + 1;
    let mut x = Tensor::zeros(g.node_count(), dim);
    for (i, d) in g.out_degrees().into_iter().enumerate() {
        x.set(i, d.min(max_degree), 1.0);
    }
    x
}

/// Replaces every graph's features with clamped degree one-hots.
pub fn degree_features(mut ds: GraphDataset, max_degree: usize) -> Result<GraphDataset> {
    if max_degree == 0 {
        return Err(Error::InvalidConfig("max_degree must be at least 1".into()));
    }
    for lg in &mut ds.graphs {
        let x = degree_one_hot(&lg.graph, max_degree);
        lg.graph.set_features(x)?;
    }
    ds.feature_dim = max_degree + 1;
    Ok(ds)
}

/// Train/validation/test partition with OOD graphs for validation and test.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub train_id: Vec<LabeledGraph>,
    pub val_id: Vec<LabeledGraph>,
    pub val_ood: Vec<Graph>,
    pub test_id: Vec<LabeledGraph>,
    pub test_ood: Vec<Graph>,
    /// Dataset indices of each partition, in partition order.
    pub train_index: Vec<usize>,
    pub val_index: Vec<usize>,
    pub test_index: Vec<usize>,
    pub val_ood_index: Vec<usize>,
    pub test_ood_index: Vec<usize>,
}

/// Number of ID graphs in each of the validation and test partitions.
pub fn holdout_size(id_count: usize) -> usize {
    id_count / 10
}

/// Shuffles ID graphs into 80/10/10 (validation and test take the floor of
/// 10%, training the remainder) and draws matching OOD counts without
/// replacement.
pub fn make_split(id_ds: &GraphDataset, ood_ds: &GraphDataset, seed: u64) -> Result<SplitBundle> {
    let n = id_ds.len();
    let required = 2 * n.div_ceil(10);
    if ood_ds.len() < required {
        return Err(Error::OodPoolTooSmall {
            needed: required,
            available: ood_ds.len(),
        });
    }
    let hold = holdout_size(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut id_order: Vec<usize> = (0..n).collect();
    id_order.shuffle(&mut rng);
    let mut ood_order: Vec<usize> = (0..ood_ds.len()).collect();
    ood_order.shuffle(&mut rng);

    let val_index = id_order[..hold].to_vec();
    let test_index = id_order[hold..2 * hold].to_vec();
    let train_index = id_order[2 * hold..].to_vec();
    let val_ood_index = ood_order[..hold].to_vec();
    let test_ood_index = ood_order[hold..2 * hold].to_vec();

    let pick = |idx: &[usize]| idx.iter().map(|&i| id_ds.graphs[i].clone()).collect::<Vec<_>>();
    let pick_ood = |idx: &[usize]| idx.iter().map(|&i| ood_ds.graphs[i].graph.clone()).collect::<Vec<_>>();
    Ok(SplitBundle {
        train_id: pick(&train_index),
        val_id: pick(&val_index),
        val_ood: pick_ood(&val_ood_index),
        test_id: pick(&test_index),
        test_ood: pick_ood(&test_ood_index),
        train_index,
        val_index,
        test_index,
        val_ood_index,
        test_ood_index,
    })
}
