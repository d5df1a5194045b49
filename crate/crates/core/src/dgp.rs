//! Disentangled graph prompting.
//!
//! Two prompt generators reweight the existing edges of a graph. Each maps the
//! frozen encoder's unit-weight node representations of an edge's endpoints
//! to a weight in `(0, 1)`. The class-specific generator (`phi1`) is trained so
//! that a shared predictor (`psi`) recovers the graph label from the prompted
//! embedding; the class-agnostic generator (`phi2`) is trained so that the same
//! predictor outputs the uniform distribution. A reciprocal-Mahalanobis
//! distance loss regularizes both generators. At test time the predictor is
//! dropped and a graph scores `md1 + gamma * md2`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::encoder::{GinEncoder, GraphBatch};
use crate::graph::{Graph, LabeledGraph};
use crate::metrics::auc;
use crate::nn::Mlp;
use crate::optim::{Adam, AdamConfig};
use crate::params::{xavier_uniform, ParamSet};
use crate::scoring::{MahalanobisScorer, ScorerConfig};
use crate::seed::{derive_indexed, derive_seed, rng};
use crate::{Error, Result, Tensor};

pub const GENERATOR_HIDDEN: usize = 32;
pub const PREDICTOR_HIDDEN: usize = 32;
/// Final-layer bias of a fresh generator; every initial weight is `sigmoid(2)`.
pub const GENERATOR_INIT_BIAS: f64 = 2.0;
const CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Branch {
    ClassSpecific,
    ClassAgnostic,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::ClassSpecific, Branch::ClassAgnostic];

    pub fn prefix(self) -> &'static str {
        match self {
            Branch::ClassSpecific => "phi1",
            Branch::ClassAgnostic => "phi2",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Edge-weight generator: `w_ij = sigmoid(MLP([a_i, a_j]))` for every directed edge.
///
/// The first layer's weight is stored as its source half `w1_src` and
/// destination half `w1_dst`, so node rows are projected once and then
/// gathered per edge instead of multiplying every concatenated edge row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptGenerator {
    pub prefix: &'static str,
    /// Width of a node representation (half the MLP input).
    pub node_dim: usize,
}

impl PromptGenerator {
    pub fn new(branch: Branch, concat_dim: usize) -> Self {
        Self {
            prefix: branch.prefix(),
            node_dim: concat_dim,
        }
    }

    pub fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    /// Glorot first layer (over the full `2 * node_dim` input), zero final
    /// weights and a final bias of [`GENERATOR_INIT_BIAS`].
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        let w1 = xavier_uniform(rng, 2 * self.node_dim, GENERATOR_HIDDEN);
        let (top, bottom) = w1.data().split_at(self.node_dim * GENERATOR_HIDDEN);
        let half = |d: &[f64]| Tensor::from_vec(self.node_dim, GENERATOR_HIDDEN, d.to_vec()).expect("split shape");
        params.insert(self.name("w1_src"), half(top));
        params.insert(self.name("w1_dst"), half(bottom));
        params.insert(self.name("b1"), Tensor::zeros(1, GENERATOR_HIDDEN));
        params.insert(self.name("w2"), Tensor::zeros(GENERATOR_HIDDEN, 1));
        params.insert(self.name("b2"), Tensor::full(1, 1, GENERATOR_INIT_BIAS));
    }

    /// One weight per directed edge of `batch`, as an `E x 1` column.
    pub fn forward(&self, tape: &Tape, params: &ParamSet, node_reps: Var, batch: &GraphBatch) -> Result<Var> {
        let width = tape.shape(node_reps).1;
        if width != self.node_dim {
            return Err(Error::ShapeMismatch {
                op: "prompt generator",
                lhs: (1, self.node_dim),
                rhs: (1, width),
            });
        }
        if batch.edge_count() == 0 {
            return Ok(tape.constant(Tensor::zeros(0, 1)));
        }
        let p = |part: &str| -> Result<Var> { Ok(tape.param(params.get(&self.name(part))?)) };
        let from_src = tape.matmul(node_reps, p("w1_src")?)?;
        let from_dst = tape.matmul(node_reps, p("w1_dst")?)?;
        let hidden = tape.add(
            tape.gather_rows(from_src, batch.src.clone())?,
            tape.gather_rows(from_dst, batch.dst.clone())?,
        )?;
        let hidden = tape.relu(tape.add_bias(hidden, p("b1")?)?)?;
        let logits = tape.add_bias(tape.matmul(hidden, p("w2")?)?, p("b2")?)?;
        tape.sigmoid(logits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Full,
    /// Class-specific branch only.
    V0,
    /// Class-agnostic branch only.
    V1,
    /// Both branches without the distance loss.
    V2,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::V0, Variant::V1, Variant::V2, Variant::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::V0 => "v0",
            Variant::V1 => "v1",
            Variant::V2 => "v2",
        }
    }

    /// Effective loss and score weights under `cfg`.
    pub fn weights(self, cfg: &DgpConfig) -> LossWeights {
        let full = LossWeights {
            class_specific: 1.0,
            class_agnostic: cfg.lambda,
            alpha1: cfg.alpha1,
            alpha2: cfg.alpha2,
            score1: 1.0,
            score2: cfg.gamma,
        };
        match self {
            Variant::Full => full,
            Variant::V0 => LossWeights {
                class_agnostic: 0.0,
                alpha2: 0.0,
                score2: 0.0,
                ..full
            },
            Variant::V1 => LossWeights {
                class_specific: 0.0,
                class_agnostic: 1.0,
                alpha1: 0.0,
                score1: 0.0,
                score2: 1.0,
                ..full
            },
            Variant::V2 => LossWeights {
                alpha1: 0.0,
                alpha2: 0.0,
                ..full
            },
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "v0" => Ok(Variant::V0),
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            other => Err(Error::InvalidConfig(format!("unknown variant `{other}`"))),
        }
    }
}

/// Weights of the four loss terms and the two score terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub class_specific: f64,
    pub class_agnostic: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub score1: f64,
    pub score2: f64,
}

impl LossWeights {
    fn alpha(&self, b: Branch) -> f64 {
        match b {
            Branch::ClassSpecific => self.alpha1,
            Branch::ClassAgnostic => self.alpha2,
        }
    }
}

/// Which embeddings the distance-loss statistics are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceTarget {
    /// Each branch's own prompted training embeddings.
    #[default]
    Prompted,
    /// Unit-weight (unprompted) training embeddings, shared by both branches.
    Original,
}

impl DistanceTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceTarget::Prompted => "prompted",
            DistanceTarget::Original => "original",
        }
    }
}

impl core::str::FromStr for DistanceTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prompted" => Ok(DistanceTarget::Prompted),
            "original" => Ok(DistanceTarget::Original),
            other => Err(Error::InvalidConfig(format!("unknown distance target `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    pub scorer: ScorerConfig,
    pub distance_target: DistanceTarget,
    /// Early-stop after this many epochs without a validation AUC gain.
    pub patience: Option<usize>,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gamma: 1.0,
            alpha1: 1e2,
            alpha2: 1e2,
            lr: 1e-2,
            epochs: 100,
            batch_size: 128,
            seed: 0,
            variant: Variant::Full,
            scorer: ScorerConfig::default(),
            distance_target: DistanceTarget::Prompted,
            patience: None,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// A batch of graphs with the frozen encoder's unit-weight node
/// representations, the constant input of both generators.
#[derive(Debug, Clone)]
pub struct PromptBatch {
    pub batch: GraphBatch,
    pub node_reps: Tensor,
}

impl PromptBatch {
    /// Stacks cached per-graph representations in graph order.
    pub fn assemble(graphs: &[&Graph], reps: &[&Tensor]) -> Result<Self> {
        let batch = GraphBatch::new(graphs)?;
        let cols = reps.first().map_or(0, |r| r.cols());
        let mut data = Vec::with_capacity(batch.node_count() * cols);
        for r in reps {
            data.extend_from_slice(r.data());
        }
        let node_reps = Tensor::from_vec(batch.node_count(), cols, data)?;
        Ok(Self { batch, node_reps })
    }
}

/// Per-graph detection score and its two branch components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphScore {
    pub score: f64,
    pub md1: f64,
    pub md2: f64,
}

/// Prompt generators, predictor, frozen encoder and fitted branch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpModel {
    pub encoder: GinEncoder,
    /// `phi1.*`, `phi2.*` and `psi.*`.
    pub params: ParamSet,
    pub class_count: usize,
    pub weights: LossWeights,
    pub variant: Variant,
    pub scorer: ScorerConfig,
    /// Statistics of each branch, indexed class-specific then class-agnostic.
    pub stats: [Option<MahalanobisScorer>; 2],
}

impl DgpModel {
    /// Fresh generators and predictor around a frozen copy of `encoder`.
    pub fn new<R: Rng + ?Sized>(encoder: &GinEncoder, class_count: usize, cfg: &DgpConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if class_count == 0 {
            return Err(Error::InvalidConfig("class_count must be positive".into()));
        }
        let mut encoder = encoder.clone();
        encoder.freeze();
        let mut params = ParamSet::new();
        let concat = encoder.arch.concat_dim();
        for b in Branch::BOTH {
            PromptGenerator::new(b, concat).init(&mut params, rng);
        }
        Mlp::new("psi", encoder.arch.proj_dim, PREDICTOR_HIDDEN, class_count).init(&mut params, rng);
        Ok(Self {
            encoder,
            params,
            class_count,
            weights: cfg.variant.weights(cfg),
            variant: cfg.variant,
            scorer: cfg.scorer,
            stats: [None, None],
        })
    }

    pub fn gamma(&self) -> f64 {
        self.weights.score2
    }

    pub fn generator(&self, branch: Branch) -> PromptGenerator {
        PromptGenerator::new(branch, self.encoder.arch.concat_dim())
    }

    pub fn predictor(&self) -> Mlp {
        Mlp::new("psi", self.encoder.arch.proj_dim, PREDICTOR_HIDDEN, self.class_count)
    }

    /// Unit-weight concatenated node representations of each graph.
    pub fn node_reps(&self, graphs: &[&Graph]) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(graphs.len());
        for part in graphs.chunks(CHUNK) {
            let batch = GraphBatch::new(part)?;
            let tape = Tape::new();
            let reps = tape.value(self.encoder.encode_nodes(&tape, &batch, None)?.concat);
            for w in batch.node_offsets.windows(2) {
                let rows = w[1] - w[0];
                let data = reps.data()[w[0] * reps.cols()..w[1] * reps.cols()].to_vec();
                out.push(Tensor::from_vec(rows, reps.cols(), data)?);
            }
        }
        Ok(out)
    }

    pub fn prepare(&self, graphs: &[&Graph]) -> Result<PromptBatch> {
        let reps = self.node_reps(graphs)?;
        PromptBatch::assemble(graphs, &reps.iter().collect::<Vec<_>>())
    }

    /// Edge weights (`E x 1`) and prompted graph embeddings (`B x proj_dim`).
    pub fn branch_forward(&self, tape: &Tape, pb: &PromptBatch, branch: Branch) -> Result<(Var, Var)> {
        let reps = tape.constant(pb.node_reps.clone());
        let w = self.generator(branch).forward(tape, &self.params, reps, &pb.batch)?;
        let h = self.encoder.encode_batch(tape, &pb.batch, Some(w))?;
        Ok((w, h))
    }

    /// Predictor log-probabilities of each embedding row.
    pub fn log_probs(&self, tape: &Tape, h: Var) -> Result<Var> {
        let logits = self.predictor().forward(tape, &self.params, h)?;
        tape.log_softmax_rows(logits)
    }

    /// Mean cross-entropy between one-hot labels and the class-specific branch's prediction.
    pub fn class_specific_loss(&self, tape: &Tape, pb: &PromptBatch, labels: &[usize]) -> Result<Var> {
        if labels.len() != pb.batch.graph_count() {
            return Err(Error::ShapeMismatch {
                op: "class_specific_loss",
                lhs: (pb.batch.graph_count(), 1),
                rhs: (labels.len(), 1),
            });
        }
        let mut target = Tensor::zeros(labels.len(), self.class_count);
        for (r, &y) in labels.iter().enumerate() {
            if y >= self.class_count {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: self.class_count,
                });
            }
            target.set(r, y, 1.0);
        }
        let (_, h) = self.branch_forward(tape, pb, Branch::ClassSpecific)?;
        let lp = self.log_probs(tape, h)?;
        tape.cross_entropy(lp, target)
    }

    /// Mean cross-entropy between the uniform distribution and the class-agnostic branch's prediction.
    pub fn class_agnostic_loss(&self, tape: &Tape, pb: &PromptBatch) -> Result<Var> {
        let (_, h) = self.branch_forward(tape, pb, Branch::ClassAgnostic)?;
        let lp = self.log_probs(tape, h)?;
        let c = self.class_count;
        tape.cross_entropy(lp, Tensor::full(pb.batch.graph_count(), c, 1.0 / c as f64))
    }

    /// `class_specific + lambda * class_agnostic`.
    pub fn disentangle_loss(&self, tape: &Tape, pb: &PromptBatch, labels: &[usize], lambda: f64) -> Result<Var> {
        let cs = self.class_specific_loss(tape, pb, labels)?;
        let ca = self.class_agnostic_loss(tape, pb)?;
        tape.add(cs, tape.scale(ca, lambda)?)
    }

    /// Batch mean of the Mahalanobis score of a branch's prompted embeddings
    /// against that branch's fitted statistics, held constant.
    pub fn mean_md(&self, tape: &Tape, pb: &PromptBatch, branch: Branch) -> Result<Var> {
        let scorer = self.stats[branch.index()].as_ref().ok_or(Error::NotFitted)?;
        let (_, h) = self.branch_forward(tape, pb, branch)?;
        let md = md_on_tape(tape, h, scorer)?;
        tape.mean_rows(md)
    }

    /// `alpha1 / mean_md1 + alpha2 / mean_md2`; a branch with zero weight is skipped.
    pub fn distance_loss(&self, tape: &Tape, pb: &PromptBatch, alpha1: f64, alpha2: f64) -> Result<Var> {
        let mut total: Option<Var> = None;
        for (b, alpha) in [(Branch::ClassSpecific, alpha1), (Branch::ClassAgnostic, alpha2)] {
            if alpha == 0.0 {
                continue;
            }
            let term = tape.scale(tape.recip(self.mean_md(tape, pb, b)?)?, alpha)?;
            total = Some(match total {
                None => term,
                Some(t) => tape.add(t, term)?,
            });
        }
        Ok(total.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0))))
    }

    /// The variant's weighted disentangle objective, or `None` when both terms are off.
    fn phase_one(&self, tape: &Tape, pb: &PromptBatch, labels: &[usize]) -> Result<Option<Var>> {
        let w = self.weights;
        let mut total = None;
        if w.class_specific != 0.0 {
            total = Some(tape.scale(self.class_specific_loss(tape, pb, labels)?, w.class_specific)?);
        }
        if w.class_agnostic != 0.0 {
            let ca = tape.scale(self.class_agnostic_loss(tape, pb)?, w.class_agnostic)?;
            total = Some(match total {
                None => ca,
                Some(t) => tape.add(t, ca)?,
            });
        }
        Ok(total)
    }

    /// Edge weights of one graph for a branch, parallel to its edge list.
    pub fn edge_weights(&self, g: &Graph, branch: Branch) -> Result<Vec<f64>> {
        let pb = self.prepare(&[g])?;
        let tape = Tape::new();
        let reps = tape.constant(pb.node_reps.clone());
        let w = self.generator(branch).forward(&tape, &self.params, reps, &pb.batch)?;
        Ok(tape.value(w).into_data())
    }

    /// Prompted embeddings of a branch, one row per graph.
    pub fn prompted_embeddings(&self, graphs: &[&Graph], branch: Branch) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(graphs.len());
        for part in graphs.chunks(CHUNK) {
            let pb = self.prepare(part)?;
            out.extend(self.embed_prepared(&pb, branch)?);
        }
        Ok(out)
    }

    fn embed_prepared(&self, pb: &PromptBatch, branch: Branch) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::new();
        let (_, h) = self.branch_forward(&tape, pb, branch)?;
        let h = tape.value(h);
        Ok((0..h.rows()).map(|r| h.row(r).to_vec()).collect())
    }

    /// Refits both branches' statistics on their prompted embeddings of `graphs`.
    pub fn fit_stats(&mut self, graphs: &[&Graph], seed: u64) -> Result<()> {
        let reps = self.node_reps(graphs)?;
        self.fit_stats_cached(graphs, &reps, seed)
    }

    /// [`DgpModel::fit_stats`] with precomputed node representations.
    fn fit_stats_cached(&mut self, graphs: &[&Graph], reps: &[Tensor], seed: u64) -> Result<()> {
        let mut emb = [Vec::with_capacity(graphs.len()), Vec::with_capacity(graphs.len())];
        for (part, part_reps) in graphs.chunks(CHUNK).zip(reps.chunks(CHUNK)) {
            let pb = PromptBatch::assemble(part, &part_reps.iter().collect::<Vec<_>>())?;
            for b in Branch::BOTH {
                emb[b.index()].extend(self.embed_prepared(&pb, b)?);
            }
        }
        for b in Branch::BOTH {
            self.stats[b.index()] = Some(MahalanobisScorer::fit(&emb[b.index()], &self.scorer, seed)?);
        }
        Ok(())
    }

    /// `score1 * md1 + score2 * md2`; for the full model `md1 + gamma * md2`.
    pub fn combine(&self, md1: f64, md2: f64) -> f64 {
        self.weights.score1 * md1 + self.weights.score2 * md2
    }

    pub fn score(&self, g: &Graph) -> Result<GraphScore> {
        Ok(self.score_many(&[g])?[0])
    }

    /// Scores in input order; the predictor is not used.
    pub fn score_many(&self, graphs: &[&Graph]) -> Result<Vec<GraphScore>> {
        let s1 = self.stats[0].as_ref().ok_or(Error::NotFitted)?;
        let s2 = self.stats[1].as_ref().ok_or(Error::NotFitted)?;
        let mut out = Vec::with_capacity(graphs.len());
        for part in graphs.chunks(CHUNK) {
            let pb = self.prepare(part)?;
            let h1 = self.embed_prepared(&pb, Branch::ClassSpecific)?;
            let h2 = self.embed_prepared(&pb, Branch::ClassAgnostic)?;
            for (a, b) in h1.iter().zip(&h2) {
                let md1 = s1.md_score(a)?;
                let md2 = s2.md_score(b)?;
                out.push(GraphScore {
                    score: self.combine(md1, md2),
                    md1,
                    md2,
                });
            }
        }
        Ok(out)
    }

    /// Validation AUC of the current model (ID scores positive).
    pub fn auc_on(&self, id: &[&Graph], ood: &[&Graph]) -> Result<f64> {
        let sid: Vec<f64> = self.score_many(id)?.iter().map(|s| s.score).collect();
        let sood: Vec<f64> = self.score_many(ood)?.iter().map(|s| s.score).collect();
        auc(&sid, &sood)
    }
}

/// Mahalanobis score of every row of `h` (`B x 1`), differentiable in `h`.
pub fn md_on_tape(tape: &Tape, h: Var, scorer: &MahalanobisScorer) -> Result<Var> {
    let mut d2: Option<Var> = None;
    for s in &scorer.stats {
        let neg_mean = tape.constant(Tensor::row_vector(s.mean.iter().map(|m| -m).collect()));
        let diff = tape.add_bias(h, neg_mean)?;
        let proj = tape.matmul(diff, tape.constant(s.inv_cov.clone()))?;
        let q = tape.sum_cols(tape.mul(proj, diff)?)?;
        d2 = Some(match d2 {
            None => q,
            Some(prev) => tape.concat_cols(prev, q)?,
        });
    }
    let d2 = d2.ok_or(Error::NotFitted)?;
    let nearest = tape.min_cols(d2)?;
    tape.recip(tape.clamp_min(nearest, scorer.eps_d)?)
}

/// Held-out graphs for early stopping.
#[derive(Debug, Clone, Default)]
pub struct Validation<'a> {
    pub id: Vec<&'a Graph>,
    pub ood: Vec<&'a Graph>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted disentangle objective over the epoch's batches.
    pub disentangle: f64,
    /// Mean distance objective over the epoch's batches (0 when disabled).
    pub distance: f64,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DgpModel,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (the last one unless early stopping chose another).
    pub best_epoch: usize,
}

/// Two-phase prompt training around a frozen encoder.
///
/// Every epoch refits the branch statistics, then for each mini-batch takes
/// one Adam step on the disentangle objective over `phi1`, `phi2` and `psi`
/// followed by one step of a separate Adam on the distance objective over the
/// generators only. The returned model's statistics are refit on the full
/// training set.
pub fn train_dgp(
    train: &[LabeledGraph],
    encoder: &GinEncoder,
    class_count: usize,
    cfg: &DgpConfig,
    validation: Option<&Validation<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if let Some(bad) = train.iter().find(|g| g.label >= class_count) {
        return Err(Error::LabelOutOfRange {
            label: bad.label,
            classes: class_count,
        });
    }
    if train.iter().all(|g| g.label == train[0].label) {
        log::warn!("training set has a single class; the class-specific loss is degenerate");
    }
    let mut model = DgpModel::new(encoder, class_count, cfg, &mut rng(derive_seed(cfg.seed, "dgp-init")))?;
    let graphs: Vec<&Graph> = train.iter().map(|g| &g.graph).collect();
    let labels: Vec<usize> = train.iter().map(|g| g.label).collect();
    let reps = model.node_reps(&graphs)?;
    let kmeans_seed = derive_seed(cfg.seed, "kmeans");

    let original_stats = match cfg.distance_target {
        DistanceTarget::Original => {
            let emb = encoder.embed_all(graphs.iter().copied(), CHUNK)?;
            Some(MahalanobisScorer::fit(&emb, &cfg.scorer, kmeans_seed)?)
        }
        DistanceTarget::Prompted => None,
    };
    let distance_on = model.weights.alpha1 != 0.0 || model.weights.alpha2 != 0.0;

    let mut disentangle_opt = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut distance_opt = Adam::new(AdamConfig::with_lr(cfg.lr)).with_scope(["phi1.", "phi2."]);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamSet)> = None;

    for epoch in 1..=cfg.epochs {
        if distance_on {
            match &original_stats {
                Some(s) => model.stats = [Some(s.clone()), Some(s.clone())],
                None => model.fit_stats_cached(&graphs, &reps, kmeans_seed)?,
            }
        }
        order.shuffle(&mut rng(derive_indexed(cfg.seed, "dgp-shuffle", epoch as u64)));
        let (mut dis_sum, mut dist_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let part: Vec<&Graph> = chunk.iter().map(|&i| graphs[i]).collect();
            let part_reps: Vec<&Tensor> = chunk.iter().map(|&i| &reps[i]).collect();
            let part_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let pb = PromptBatch::assemble(&part, &part_reps)?;
            batches += 1;

            let tape = Tape::new();
            if let Some(loss) = model.phase_one(&tape, &pb, &part_labels)? {
                dis_sum += tape.item(loss)?;
                let grads = tape.backward(loss)?;
                model.params.accumulate(&grads)?;
                disentangle_opt.step(&mut model.params);
            }

            if distance_on {
                let tape = Tape::new();
                let w = model.weights;
                let loss = model.distance_loss(&tape, &pb, w.alpha(Branch::ClassSpecific), w.alpha(Branch::ClassAgnostic))?;
                dist_sum += tape.item(loss)?;
                let grads = tape.backward(loss)?;
                model.params.accumulate(&grads)?;
                distance_opt.step(&mut model.params);
            }
        }
        let mut record = EpochRecord {
            epoch,
            disentangle: dis_sum / batches as f64,
            distance: dist_sum / batches as f64,
            val_auc: None,
        };
        if let Some(val) = validation {
            model.fit_stats_cached(&graphs, &reps, kmeans_seed)?;
            let a = model.auc_on(&val.id, &val.ood)?;
            record.val_auc = Some(a);
            if best.as_ref().is_none_or(|(b, _, _)| a > *b) {
                best = Some((a, epoch, model.params.clone()));
            }
        }
        log::debug!(
            "dgp epoch {epoch}: disentangle {:.6} distance {:.6} val_auc {:?}",
            record.disentangle,
            record.distance,
            record.val_auc
        );
        history.push(record);
        if let (Some(patience), Some((_, best_epoch, _))) = (cfg.patience, best.as_ref()) {
            if epoch - best_epoch >= patience {
                break;
            }
        }
    }

    let mut best_epoch = history.last().map_or(0, |r| r.epoch);
    if cfg.patience.is_some() {
        if let Some((_, e, params)) = best {
            model.params = params;
            best_epoch = e;
        }
    }
    model.fit_stats_cached(&graphs, &reps, kmeans_seed)?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
