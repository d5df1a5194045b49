//! Contrastive pre-training of the GIN encoder.
//!
//! GraphCL-style training encodes two independently augmented views of every
//! graph; SimGRACE-style training encodes the same graph with the encoder and
//! with a Gaussian-perturbed copy of it. Both minimize NT-Xent over the batch.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::encoder::{GinArch, GinEncoder, GraphBatch};
use crate::graph::Graph;
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamSet;
use crate::seed::{derive_indexed, derive_seed, rng};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augmentation {
    /// Drops each node with the given probability.
    NodeDrop(f64),
    /// Removes each undirected edge with the given probability and adds as many random non-edges.
    EdgePerturb(f64),
    /// Zeroes each node's feature row with the given probability.
    AttrMask(f64),
    /// Keeps a random-walk subgraph with `ceil(ratio * n)` nodes.
    SubgraphSample(f64),
}

impl Augmentation {
    fn param(&self) -> f64 {
        match *self {
            Augmentation::NodeDrop(p)
            | Augmentation::EdgePerturb(p)
            | Augmentation::AttrMask(p)
            | Augmentation::SubgraphSample(p) => p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.param();
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("augmentation parameter {p} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn to_spec(&self) -> String {
        match *self {
            Augmentation::NodeDrop(p) => format!("nodedrop:{p}"),
            Augmentation::EdgePerturb(p) => format!("edgeperturb:{p}"),
            Augmentation::AttrMask(p) => format!("attrmask:{p}"),
            Augmentation::SubgraphSample(p) => format!("subgraph:{p}"),
        }
    }
}

impl core::str::FromStr for Augmentation {
    type Err = Error;

    /// Parses `kind:value`, e.g. `nodedrop:0.1`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidConfig(format!("augmentation `{s}` is not kind:value")))?;
        let p: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad augmentation value in `{s}`")))?;
        let aug = match kind.trim() {
            "nodedrop" => Augmentation::NodeDrop(p),
            "edgeperturb" => Augmentation::EdgePerturb(p),
            "attrmask" => Augmentation::AttrMask(p),
            "subgraph" => Augmentation::SubgraphSample(p),
            other => return Err(Error::InvalidConfig(format!("unknown augmentation `{other}`"))),
        };
        aug.validate()?;
        Ok(aug)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainMethod {
    GraphCl,
    SimGrace,
    /// No training; the randomly initialized encoder is returned as is.
    Random,
}

impl PretrainMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PretrainMethod::GraphCl => "graphcl",
            PretrainMethod::SimGrace => "simgrace",
            PretrainMethod::Random => "random",
        }
    }
}

impl core::str::FromStr for PretrainMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graphcl" | "gcl" => Ok(PretrainMethod::GraphCl),
            "simgrace" => Ok(PretrainMethod::SimGrace),
            "random" => Ok(PretrainMethod::Random),
            other => Err(Error::InvalidConfig(format!("unknown pre-training method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub method: PretrainMethod,
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// SimGRACE perturbation scale.
    pub eta: f64,
    /// GraphCL view augmentations.
    pub augmentations: (Augmentation, Augmentation),
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            method: PretrainMethod::GraphCl,
            temperature: 0.2,
            batch_size: 128,
            epochs: 20,
            lr: 0.01,
            eta: 1.0,
            augmentations: (Augmentation::NodeDrop(0.1), Augmentation::NodeDrop(0.1)),
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        if self.eta < 0.0 {
            return Err(Error::InvalidConfig("eta must be non-negative".into()));
        }
        self.augmentations.0.validate()?;
        self.augmentations.1.validate()
    }
}

/// Builds the induced subgraph on `keep` (sorted), reindexing densely.
fn induced(g: &Graph, keep: &[usize]) -> Result<Graph> {
    let mut map = alloc::vec![usize::MAX; g.node_count()];
    for (new, &old) in keep.iter().enumerate() {
        map[old] = new;
    }
    let edges = g
        .edges()
        .iter()
        .filter(|&&(s, d)| map[s] != usize::MAX && map[d] != usize::MAX)
        .map(|&(s, d)| (map[s], map[d]))
        .collect();
    let mut x = Tensor::zeros(keep.len(), g.feature_dim());
    for (new, &old) in keep.iter().enumerate() {
        x.row_mut(new).copy_from_slice(g.features().row(old));
    }
    Graph::new(keep.len(), edges, x)
}

/// Applies one random augmentation. A zero drop/perturb/mask probability
/// (or a subgraph ratio of one) returns the graph unchanged.
pub fn augment<R: Rng + ?Sized>(g: &Graph, kind: Augmentation, rng: &mut R) -> Result<Graph> {
    kind.validate()?;
    let n = g.node_count();
    match kind {
        Augmentation::NodeDrop(p) => {
            let mut keep: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() >= p).collect();
            if keep.is_empty() && n > 0 {
                keep.push(rng.random_range(0..n));
            }
            induced(g, &keep)
        }
        Augmentation::EdgePerturb(p) => {
            let pairs = g.undirected_pairs();
            let present: BTreeSet<(usize, usize)> = pairs.iter().copied().collect();
            let dropped: BTreeSet<(usize, usize)> = pairs.iter().copied().filter(|_| rng.random::<f64>() < p).collect();
            let mut edges: Vec<(usize, usize)> = g
                .edges()
                .iter()
                .copied()
                .filter(|&(s, d)| !dropped.contains(&(s.min(d), s.max(d))))
                .collect();
            if !dropped.is_empty() {
                let mut candidates: Vec<(usize, usize)> = (0..n)
                    .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                    .filter(|pair| !present.contains(pair))
                    .collect();
                candidates.shuffle(rng);
                for &(i, j) in candidates.iter().take(dropped.len()) {
                    edges.push((i, j));
                    edges.push((j, i));
                }
            }
            Graph::new(n, edges, g.features().clone())
        }
        Augmentation::AttrMask(p) => {
            let mut x = g.features().clone();
            for r in 0..n {
                if rng.random::<f64>() < p {
                    x.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                }
            }
            Graph::new(n, g.edges().to_vec(), x)
        }
        Augmentation::SubgraphSample(ratio) => {
            if n == 0 {
                return Ok(g.clone());
            }
            let target = libm::ceil(ratio * n as f64).clamp(1.0, n as f64) as usize;
            let mut adj = alloc::vec![Vec::new(); n];
            for &(s, d) in g.edges() {
                adj[s].push(d);
                adj[d].push(s);
            }
            let mut chosen = BTreeSet::new();
            chosen.insert(rng.random_range(0..n));
            while chosen.len() < target {
                let frontier: Vec<usize> = chosen
                    .iter()
                    .flat_map(|&v| adj[v].iter().copied())
                    .filter(|u| !chosen.contains(u))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let next = match frontier.choose(rng) {
                    Some(&u) => u,
                    None => {
                        let rest: Vec<usize> = (0..n).filter(|u| !chosen.contains(u)).collect();
                        *rest.choose(rng).expect("fewer chosen than n")
                    }
                };
                chosen.insert(next);
            }
            let keep: Vec<usize> = chosen.into_iter().collect();
            induced(g, &keep)
        }
    }
}

/// Population standard deviation of a tensor's entries.
fn entry_std(t: &Tensor) -> f64 {
    let n = t.len() as f64;
    let mean = t.data().iter().sum::<f64>() / n;
    libm::sqrt(t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

/// Frozen copy of `enc` where each tensor `t` gets `N(0, (eta * std(t))^2)` noise.
pub fn perturb_params<R: Rng + ?Sized>(enc: &GinEncoder, eta: f64, rng: &mut R) -> Result<GinEncoder> {
    if eta < 0.0 {
        return Err(Error::InvalidConfig("eta must be non-negative".into()));
    }
    let mut params = ParamSet::new();
    for p in enc.params.iter() {
        let sd = eta * entry_std(&p.value);
        let mut v = p.value.clone();
        for x in v.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x += sd * z;
        }
        params.insert(p.name.clone(), v);
    }
    params.freeze_all();
    Ok(GinEncoder {
        arch: enc.arch.clone(),
        params,
    })
}

/// NT-Xent on the tape. Rows of `z1` and `z2` are paired views; every
/// embedding is L2-normalized, the positive of anchor `i` is its counterpart
/// and the other `2B - 2` embeddings are negatives.
pub fn ntxent(tape: &Tape, z1: Var, z2: Var, temperature: f64) -> Result<Var> {
    let b = tape.shape(z1).0;
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let z = tape.concat_rows(z1, z2)?;
    let zn = tape.l2_normalize_rows(z)?;
    let sim = tape.matmul(zn, tape.transpose(zn)?)?;
    let sim = tape.scale(sim, 1.0 / temperature)?;
    let mut mask = Tensor::zeros(2 * b, 2 * b);
    let mut target = Tensor::zeros(2 * b, 2 * b);
    for i in 0..2 * b {
        // Excludes self-similarity; exp underflows to exactly zero.
        mask.set(i, i, -1e9);
        target.set(i, (i + b) % (2 * b), 1.0);
    }
    let masked = tape.add(sim, tape.constant(mask))?;
    let log_probs = tape.log_softmax_rows(masked)?;
    tape.cross_entropy(log_probs, target)
}

/// Value-only NT-Xent of two embedding batches.
pub fn ntxent_loss(z1: &Tensor, z2: &Tensor, temperature: f64) -> Result<f64> {
    z1.expect_same_shape(z2, "ntxent")?;
    let tape = Tape::new();
    let a = tape.constant(z1.clone());
    let b = tape.constant(z2.clone());
    let l = ntxent(&tape, a, b, temperature)?;
    tape.item(l)
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub encoder: GinEncoder,
    /// Mean batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains a fresh encoder on `graphs`. `on_epoch` sees `(epoch, mean loss)`
/// after every epoch, counting from 1.
pub fn pretrain(
    graphs: &[&Graph],
    arch: GinArch,
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if graphs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut init_rng = rng(derive_seed(cfg.seed, "encoder-init"));
    let mut encoder = GinEncoder::new(arch, &mut init_rng)?;
    if cfg.method == PretrainMethod::Random {
        return Ok(PretrainOutcome {
            encoder,
            epoch_losses: Vec::new(),
        });
    }
    if graphs.len() < 2 {
        return Err(Error::BatchTooSmall(graphs.len()));
    }
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng(derive_indexed(cfg.seed, "pretrain-shuffle", epoch as u64)));
        let mut total = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let batch_key = ((epoch as u64) << 32) | bi as u64;
            let tape = Tape::new();
            let (z1, z2) = match cfg.method {
                PretrainMethod::GraphCl => {
                    let mut v1 = Vec::with_capacity(chunk.len());
                    let mut v2 = Vec::with_capacity(chunk.len());
                    for &gi in chunk {
                        let key = ((epoch as u64) << 32) | gi as u64;
                        let mut r1 = rng(derive_indexed(cfg.seed, "view-1", key));
                        let mut r2 = rng(derive_indexed(cfg.seed, "view-2", key));
                        v1.push(augment(graphs[gi], cfg.augmentations.0, &mut r1)?);
                        v2.push(augment(graphs[gi], cfg.augmentations.1, &mut r2)?);
                    }
                    let b1 = GraphBatch::new(&v1.iter().collect::<Vec<_>>())?;
                    let b2 = GraphBatch::new(&v2.iter().collect::<Vec<_>>())?;
                    (encoder.encode_batch(&tape, &b1, None)?, encoder.encode_batch(&tape, &b2, None)?)
                }
                PretrainMethod::SimGrace => {
                    let views: Vec<&Graph> = chunk.iter().map(|&gi| graphs[gi]).collect();
                    let batch = GraphBatch::new(&views)?;
                    let mut pr = rng(derive_indexed(cfg.seed, "perturb", batch_key));
                    let perturbed = perturb_params(&encoder, cfg.eta, &mut pr)?;
                    (encoder.encode_batch(&tape, &batch, None)?, perturbed.encode_batch(&tape, &batch, None)?)
                }
                PretrainMethod::Random => unreachable!(),
            };
            let loss = ntxent(&tape, z1, z2, cfg.temperature)?;
            total += tape.item(loss)?;
            batches += 1;
            let grads = tape.backward(loss)?;
            encoder.params.accumulate(&grads)?;
            adam.step(&mut encoder.params);
        }
        let mean = if batches > 0 { total / batches as f64 } else { 0.0 };
        epoch_losses.push(mean);
        on_epoch(epoch + 1, mean);
    }
    Ok(PretrainOutcome {
        encoder,
        epoch_losses,
    })
}
