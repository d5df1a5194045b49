//! Pipeline stages shared by the subcommands. Every stage derives its
//! randomness from the master seed under a fixed label, so running stages
//! one at a time reproduces the end-to-end pipeline exactly.

use anyhow::{bail, ensure, Context, Result};

use dgp_core::dgp::{train_dgp, Branch, DgpConfig, DgpModel, TrainOutcome, Validation};
use dgp_core::encoder::GinArch;
use dgp_core::graph::{degree_features, make_split, Graph, GraphDataset, SplitBundle};
use dgp_core::pretrain::{pretrain, PretrainConfig};
use dgp_core::scoring::MahalanobisScorer;
use dgp_core::seed::derive_seed;
use dgp_core::synth::{synth_id, synth_ood};

use crate::checkpoint::{EncoderCheckpoint, PretrainMeta};
use crate::config::{ExperimentConfig, Featurizer, Source};
use crate::output::{Origin, ScoreTable};
use crate::tu::parse_tu_dataset;

pub const SEED_SYNTH_ID: &str = "synth-id";
pub const SEED_SYNTH_OOD: &str = "synth-ood";
pub const SEED_SPLIT: &str = "split";
pub const SEED_PRETRAIN: &str = "pretrain";
pub const SEED_TRAIN: &str = "train";

fn featurize(ds: GraphDataset, cfg: &ExperimentConfig) -> Result<GraphDataset> {
    Ok(match cfg.features {
        Featurizer::Degree => degree_features(ds, cfg.max_degree)?,
        Featurizer::Raw => ds,
    })
}

pub fn load_tu(dir: &std::path::Path, name: &str, cfg: &ExperimentConfig) -> Result<GraphDataset> {
    let ds = parse_tu_dataset(dir, name).with_context(|| format!("reading dataset {name}"))?;
    featurize(ds, cfg)
}

/// The ID and OOD datasets, generated or read according to `cfg`.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(GraphDataset, GraphDataset)> {
    let id = match &cfg.id {
        Source::Synthetic(spec) => synth_id(spec, derive_seed(cfg.seed, SEED_SYNTH_ID))?,
        Source::Tu { dir, name } => load_tu(dir, name, cfg)?,
    };
    let ood = match &cfg.ood {
        Source::Synthetic(spec) => synth_ood(spec, derive_seed(cfg.seed, SEED_SYNTH_OOD))?,
        Source::Tu { dir, name } => load_tu(dir, name, cfg)?,
    };
    ensure!(
        id.feature_dim == ood.feature_dim,
        "ID features have width {} but OOD features {}",
        id.feature_dim,
        ood.feature_dim
    );
    Ok((id, ood))
}

/// Datasets and their split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: GraphDataset,
    pub ood: GraphDataset,
    pub split: SplitBundle,
}

impl Prepared {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let (id, ood) = load_datasets(cfg)?;
        let split = make_split(&id, &ood, derive_seed(cfg.seed, SEED_SPLIT))?;
        Ok(Self { id, ood, split })
    }

    pub fn train_graphs(&self) -> Vec<&Graph> {
        self.split.train_id.iter().map(|g| &g.graph).collect()
    }

    pub fn test_id(&self) -> Vec<&Graph> {
        self.split.test_id.iter().map(|g| &g.graph).collect()
    }

    pub fn test_ood(&self) -> Vec<&Graph> {
        self.split.test_ood.iter().collect()
    }

    pub fn val_id(&self) -> Vec<&Graph> {
        self.split.val_id.iter().map(|g| &g.graph).collect()
    }

    pub fn val_ood(&self) -> Vec<&Graph> {
        self.split.val_ood.iter().collect()
    }
}

pub fn pretrain_config(cfg: &ExperimentConfig) -> PretrainConfig {
    PretrainConfig {
        seed: derive_seed(cfg.seed, SEED_PRETRAIN),
        ..cfg.pretrain.clone()
    }
}

pub fn dgp_config(cfg: &ExperimentConfig) -> DgpConfig {
    DgpConfig {
        seed: derive_seed(cfg.seed, SEED_TRAIN),
        ..cfg.dgp.clone()
    }
}

/// Contrastive pre-training on the training ID graphs (labels unused).
pub fn pretrain_encoder(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    on_epoch: impl FnMut(usize, f64),
) -> Result<EncoderCheckpoint> {
    let arch = GinArch {
        feature_dim: prepared.id.feature_dim,
        ..cfg.arch.clone()
    };
    let pcfg = pretrain_config(cfg);
    let outcome = pretrain(&prepared.train_graphs(), arch, &pcfg, on_epoch)?;
    Ok(EncoderCheckpoint {
        encoder: outcome.encoder,
        pretrain: PretrainMeta::of(&pcfg),
    })
}

/// A trained model and the encoder hash taken before and after training.
pub struct Trained {
    pub outcome: TrainOutcome,
    pub encoder_sha256: String,
}

/// Trains prompts on the training split and checks the encoder came back unchanged.
pub fn train_model(prepared: &Prepared, ckpt: &EncoderCheckpoint, dcfg: &DgpConfig) -> Result<Trained> {
    ckpt.expect_feature_dim(prepared.id.feature_dim)?;
    let before = ckpt.sha256()?;
    let (val_id, val_ood) = (prepared.val_id(), prepared.val_ood());
    let validation = Validation {
        id: val_id,
        ood: val_ood,
    };
    let validation = dcfg.patience.is_some().then_some(&validation);
    let outcome = train_dgp(
        &prepared.split.train_id,
        &ckpt.encoder,
        prepared.id.class_count,
        dcfg,
        validation,
    )?;
    let after = EncoderCheckpoint {
        encoder: outcome.model.encoder.clone(),
        pretrain: ckpt.pretrain.clone(),
    }
    .sha256()?;
    if after != before {
        bail!("encoder parameters changed during prompt training ({before} -> {after})");
    }
    Ok(Trained {
        outcome,
        encoder_sha256: before,
    })
}

/// Scores of the test split, ID rows first.
pub fn score_test(model: &DgpModel, prepared: &Prepared) -> Result<ScoreTable> {
    let mut table = ScoreTable::default();
    table.extend(Origin::Id, &prepared.split.test_index, &model.score_many(&prepared.test_id())?);
    table.extend(Origin::Ood, &prepared.split.test_ood_index, &model.score_many(&prepared.test_ood())?);
    Ok(table)
}

/// Scores every graph of one dataset under a single origin.
pub fn score_dataset(model: &DgpModel, ds: &GraphDataset, origin: Origin) -> Result<ScoreTable> {
    let graphs: Vec<&Graph> = ds.graphs.iter().map(|g| &g.graph).collect();
    let index: Vec<usize> = (0..graphs.len()).collect();
    let mut table = ScoreTable::default();
    table.extend(origin, &index, &model.score_many(&graphs)?);
    Ok(table)
}

/// Frozen-encoder baseline: Mahalanobis score of unprompted embeddings
/// against statistics of the training embeddings. `md1` carries the score
/// and `md2` is zero.
pub fn baseline_scores(ckpt: &EncoderCheckpoint, prepared: &Prepared, dcfg: &DgpConfig) -> Result<ScoreTable> {
    let enc = &ckpt.encoder;
    let train = enc.embed_all(prepared.train_graphs(), 128)?;
    let scorer = MahalanobisScorer::fit(&train, &dcfg.scorer, derive_seed(dcfg.seed, "kmeans"))?;
    let score = |graphs: Vec<&Graph>| -> Result<Vec<dgp_core::dgp::GraphScore>> {
        enc.embed_all(graphs, 128)?
            .iter()
            .map(|h| {
                let s = scorer.md_score(h)?;
                Ok(dgp_core::dgp::GraphScore {
                    score: s,
                    md1: s,
                    md2: 0.0,
                })
            })
            .collect()
    };
    let mut table = ScoreTable::default();
    table.extend(Origin::Id, &prepared.split.test_index, &score(prepared.test_id())?);
    table.extend(Origin::Ood, &prepared.split.test_ood_index, &score(prepared.test_ood())?);
    Ok(table)
}

/// One row per undirected edge with both branches' weights averaged over
/// the two directions.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PromptRow {
    pub graph_id: String,
    pub origin: Origin,
    pub src: usize,
    pub dst: usize,
    pub w1: f64,
    pub w2: f64,
}

pub fn prompt_rows(model: &DgpModel, g: &Graph, graph_id: &str, origin: Origin) -> Result<Vec<PromptRow>> {
    let w1 = model.edge_weights(g, Branch::ClassSpecific)?;
    let w2 = model.edge_weights(g, Branch::ClassAgnostic)?;
    let mut by_edge = std::collections::BTreeMap::new();
    for (k, &e) in g.edges().iter().enumerate() {
        by_edge.insert(e, k);
    }
    let avg = |w: &[f64], i: usize, j: usize| {
        let a = w[by_edge[&(i, j)]];
        match by_edge.get(&(j, i)) {
            Some(&k) => (a + w[k]) / 2.0,
            None => a,
        }
    };
    Ok(g.undirected_pairs()
        .into_iter()
        .map(|(i, j)| {
            let (i, j) = if by_edge.contains_key(&(i, j)) { (i, j) } else { (j, i) };
            PromptRow {
                graph_id: graph_id.to_owned(),
                origin,
                src: i.min(j),
                dst: i.max(j),
                w1: avg(&w1, i, j),
                w2: avg(&w2, i, j),
            }
        })
        .collect())
}
