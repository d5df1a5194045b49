//! The subcommands. Each reads everything it needs from the config, writes
//! its artifacts under the output directory and returns what it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dgp_core::dgp::{DgpConfig, DgpModel, Variant};
use dgp_core::grid::{run_grid, GridResult};
use dgp_core::seed::derive_seed;
use dgp_core::synth::{synth_id, synth_ood};

use crate::checkpoint::{EncoderCheckpoint, EncoderRef, ModelFile, TrainingMeta};
use crate::config::{ExperimentConfig, Source};
use crate::output::{write_records, write_text, MetricsDoc, Origin, ScoreTable};
use crate::run::{self, Prepared};
use crate::tu::write_tu_dataset;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Written synthetic datasets: `(directory, name)` per side.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthReport {
    pub written: Vec<(PathBuf, String)>,
}

pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<SynthReport> {
    let mut written = Vec::new();
    if let Source::Synthetic(spec) = &cfg.id {
        let ds = synth_id(spec, derive_seed(cfg.seed, run::SEED_SYNTH_ID))?;
        let dir = cfg.out.join("synth").join("id");
        write_tu_dataset(&ds, &dir)?;
        written.push((dir, ds.name));
    }
    if let Source::Synthetic(spec) = &cfg.ood {
        let ds = synth_ood(spec, derive_seed(cfg.seed, run::SEED_SYNTH_OOD))?;
        let dir = cfg.out.join("synth").join("ood");
        write_tu_dataset(&ds, &dir)?;
        written.push((dir, ds.name));
    }
    if written.is_empty() {
        bail!("both sides read TU datasets; nothing to synthesize");
    }
    Ok(SynthReport { written })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub path: PathBuf,
    pub sha256: String,
    pub epoch_losses: Vec<f64>,
}

/// Pre-trains an encoder and saves it to the configured encoder path.
/// `on_epoch` receives `(epoch, mean loss)` as training proceeds.
pub fn cmd_pretrain(cfg: &ExperimentConfig, mut on_epoch: impl FnMut(usize, f64)) -> Result<PretrainReport> {
    let prepared = Prepared::load(cfg)?;
    let mut epoch_losses = Vec::new();
    let ckpt = run::pretrain_encoder(cfg, &prepared, |e, l| {
        epoch_losses.push(l);
        on_epoch(e, l);
    })?;
    let path = cfg.encoder_file();
    let sha256 = ckpt.save(&path)?;
    Ok(PretrainReport {
        path,
        sha256,
        epoch_losses,
    })
}

/// Path of `target` as stored in a file written to `from`: just the file name
/// when both share a directory, otherwise absolute.
fn reference_path(target: &Path, from: &Path) -> Result<String> {
    let target = std::path::absolute(target)?;
    let from = std::path::absolute(from)?;
    if target.parent() == from.parent() {
        if let Some(name) = target.file_name() {
            return Ok(name.to_string_lossy().into_owned());
        }
    }
    Ok(target.display().to_string())
}

fn load_encoder(path: &Path) -> Result<EncoderCheckpoint> {
    EncoderCheckpoint::load(path).with_context(|| format!("loading encoder {}", path.display()))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub path: PathBuf,
    pub model_sha256: String,
    pub encoder_sha256: String,
    pub history: Vec<dgp_core::dgp::EpochRecord>,
}

fn train_and_save(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    ckpt: &EncoderCheckpoint,
    dcfg: &DgpConfig,
) -> Result<(ModelFile, TrainReport)> {
    let trained = run::train_model(prepared, ckpt, dcfg)?;
    let path = cfg.model_file();
    let file = ModelFile {
        model: trained.outcome.model,
        encoder: EncoderRef {
            path: reference_path(&cfg.encoder_file(), &path)?,
            sha256: trained.encoder_sha256.clone(),
        },
        training: TrainingMeta::of(dcfg),
    };
    let model_sha256 = file.save(&path)?;
    Ok((
        file,
        TrainReport {
            path,
            model_sha256,
            encoder_sha256: trained.encoder_sha256,
            history: trained.outcome.history,
        },
    ))
}

/// Trains prompts against the encoder at the configured path.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let prepared = Prepared::load(cfg)?;
    let ckpt = load_encoder(&cfg.encoder_file())?;
    Ok(train_and_save(cfg, &prepared, &ckpt, &run::dgp_config(cfg))?.1)
}

fn load_model(cfg: &ExperimentConfig) -> Result<DgpModel> {
    let path = cfg.model_file();
    Ok(ModelFile::load(&path)
        .with_context(|| format!("loading model {}", path.display()))?
        .model)
}

/// Scores the test split, or the `data.*` dataset when one is configured.
pub fn cmd_score(cfg: &ExperimentConfig) -> Result<ScoreTable> {
    let model = load_model(cfg)?;
    let table = match &cfg.data {
        Some((dir, name)) => run::score_dataset(&model, &run::load_tu(dir, name, cfg)?, cfg.data_origin)?,
        None => run::score_test(&model, &Prepared::load(cfg)?)?,
    };
    table.write_csv(&cfg.scores_file())?;
    Ok(table)
}

pub fn metrics_file(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join("metrics.json")
}

/// Metrics of the score CSV at the configured path.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<MetricsDoc> {
    let table = ScoreTable::read_csv(&cfg.scores_file())?;
    let metrics = MetricsDoc::from(table.metrics()?);
    metrics.write(&metrics_file(cfg))?;
    Ok(metrics)
}

/// Provenance of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub seed: u64,
    /// Effective configuration, key to value.
    pub config: BTreeMap<String, String>,
    pub hashes: BTreeMap<String, String>,
    pub stage_seconds: BTreeMap<String, f64>,
    pub metrics: MetricsDoc,
    /// Frozen encoder scored without prompts.
    pub baseline_metrics: MetricsDoc,
}

impl RunManifest {
    /// The configuration as config-file text.
    pub fn config_text(&self) -> String {
        self.config.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn manifest_file(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join("manifest.json")
}

/// Synthesize or load, split, pre-train, train, score and evaluate.
pub fn cmd_pipeline(cfg: &ExperimentConfig, on_epoch: impl FnMut(usize, f64)) -> Result<RunManifest> {
    let mut seconds = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |stage: &str, seconds: &mut BTreeMap<String, f64>| {
        seconds.insert(stage.to_owned(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let prepared = Prepared::load(cfg)?;
    lap("data", &mut seconds);
    let ckpt = run::pretrain_encoder(cfg, &prepared, on_epoch)?;
    let encoder_sha256 = ckpt.save(&cfg.encoder_file())?;
    lap("pretrain", &mut seconds);
    let dcfg = run::dgp_config(cfg);
    let (file, train) = train_and_save(cfg, &prepared, &ckpt, &dcfg)?;
    lap("train", &mut seconds);
    let table = run::score_test(&file.model, &prepared)?;
    table.write_csv(&cfg.scores_file())?;
    lap("score", &mut seconds);
    let metrics = MetricsDoc::from(table.metrics()?);
    metrics.write(&metrics_file(cfg))?;
    let baseline_metrics = MetricsDoc::from(run::baseline_scores(&ckpt, &prepared, &dcfg)?.metrics()?);
    lap("eval", &mut seconds);

    let manifest = RunManifest {
        toolkit_version: TOOLKIT_VERSION.to_owned(),
        seed: cfg.seed,
        config: cfg.effective().into_iter().map(|(k, v)| (k.to_owned(), v)).collect(),
        hashes: BTreeMap::from([
            ("encoder".to_owned(), encoder_sha256),
            ("encoder_after_train".to_owned(), train.encoder_sha256),
            ("model".to_owned(), train.model_sha256),
        ]),
        stage_seconds: seconds,
        metrics,
        baseline_metrics,
    };
    write_text(&manifest_file(cfg), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(manifest)
}

/// Loads the encoder at the configured path, pre-training and saving one
/// first when the file does not exist yet.
fn encoder_for(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<EncoderCheckpoint> {
    let path = cfg.encoder_file();
    if path.exists() {
        return load_encoder(&path);
    }
    log::info!("no encoder at {}; pre-training one", path.display());
    let ckpt = run::pretrain_encoder(cfg, prepared, |_, _| {})?;
    ckpt.save(&path)?;
    Ok(ckpt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub lambda: f64,
    pub gamma: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub lr: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub result: GridResult,
    /// The input config with the selected hyper-parameters.
    pub best: ExperimentConfig,
}

/// Sweeps the configured grid on the validation split, writing `sweep.csv`
/// and the selected configuration as `best.conf`.
pub fn cmd_grid(cfg: &ExperimentConfig) -> Result<GridReport> {
    let prepared = Prepared::load(cfg)?;
    let ckpt = encoder_for(cfg, &prepared)?;
    ckpt.expect_feature_dim(prepared.id.feature_dim)?;
    let result = run_grid(
        &prepared.split.train_id,
        &prepared.val_id(),
        &prepared.val_ood(),
        &ckpt.encoder,
        prepared.id.class_count,
        &run::dgp_config(cfg),
        &cfg.grid,
    )?;
    let records: Vec<SweepRecord> = result
        .rows
        .iter()
        .map(|r| SweepRecord {
            lambda: r.point.lambda,
            gamma: r.point.gamma,
            alpha1: r.point.alpha1,
            alpha2: r.point.alpha2,
            lr: r.point.lr,
            val_auc: r.val_auc,
        })
        .collect();
    write_records(&cfg.out.join("sweep.csv"), &records)?;
    let mut best = cfg.clone();
    best.dgp = result.best.apply(&cfg.dgp);
    write_text(&cfg.out.join("best.conf"), &best.render())?;
    Ok(GridReport { result, best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub auc: f64,
    pub aupr: f64,
    pub fpr95: f64,
    pub overlap: f64,
}

/// Trains V0, V1, V2 and the full model with identical data, encoder and
/// seeds, scoring each on the test split. Writes `ablation.csv`.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let prepared = Prepared::load(cfg)?;
    let ckpt = encoder_for(cfg, &prepared)?;
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let dcfg = DgpConfig {
            variant,
            ..run::dgp_config(cfg)
        };
        let trained = run::train_model(&prepared, &ckpt, &dcfg)?;
        let m = run::score_test(&trained.outcome.model, &prepared)?.metrics()?;
        log::info!("{}: auc {:.4}", variant.as_str(), m.auc);
        rows.push(AblationRow {
            variant: variant.as_str().to_owned(),
            auc: m.auc,
            aupr: m.aupr,
            fpr95: m.fpr95,
            overlap: m.overlap,
        });
    }
    write_records(&cfg.out.join("ablation.csv"), &rows)?;
    Ok(rows)
}

/// Per-edge prompt weights of the `data.*` dataset, or of the test split.
/// Writes `prompts.csv`.
pub fn cmd_dump_prompts(cfg: &ExperimentConfig) -> Result<Vec<run::PromptRow>> {
    let model = load_model(cfg)?;
    let mut rows = Vec::new();
    match &cfg.data {
        Some((dir, name)) => {
            let ds = run::load_tu(dir, name, cfg)?;
            for (i, lg) in ds.graphs.iter().enumerate() {
                let id = cfg.data_origin.graph_id(i);
                rows.extend(run::prompt_rows(&model, &lg.graph, &id, cfg.data_origin)?);
            }
        }
        None => {
            let prepared = Prepared::load(cfg)?;
            let id_side = prepared.split.test_index.iter().zip(prepared.test_id());
            for (&i, g) in id_side {
                rows.extend(run::prompt_rows(&model, g, &Origin::Id.graph_id(i), Origin::Id)?);
            }
            let ood_side = prepared.split.test_ood_index.iter().zip(prepared.test_ood());
            for (&i, g) in ood_side {
                rows.extend(run::prompt_rows(&model, g, &Origin::Ood.graph_id(i), Origin::Ood)?);
            }
        }
    }
    write_records(&cfg.out.join("prompts.csv"), &rows)?;
    Ok(rows)
}
