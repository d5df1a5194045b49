mod common;

use std::fs;

use dgp::checkpoint::ModelFile;
use dgp::commands::{cmd_ablate, cmd_dump_prompts, cmd_grid, cmd_pipeline, cmd_score, cmd_synth, RunManifest};
use dgp::output::{read_records, Origin};
use dgp::run::{PromptRow, Prepared};
use dgp::ExperimentConfig;
use dgp_core::dgp::Branch;

#[test]
fn manifest_config_reruns_to_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::tiny(tmp.path(), "dgp.gamma = 0.5\n");
    let first = cmd_pipeline(&cfg, |_, _| {}).unwrap();
    let text = fs::read_to_string(cfg.out.join("manifest.json")).unwrap();
    let manifest: RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(manifest, first);
    assert_eq!(manifest.config["dgp.gamma"], "0.5");

    let mut again = ExperimentConfig::parse(&manifest.config_text(), tmp.path()).unwrap();
    again.out = tmp.path().join("rerun");
    let second = cmd_pipeline(&again, |_, _| {}).unwrap();
    assert_eq!(second.metrics, first.metrics);
    assert_eq!(second.baseline_metrics, first.baseline_metrics);
    assert_eq!(second.hashes, first.hashes);
}

#[test]
fn prompt_dump_covers_every_test_edge() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::tiny(tmp.path(), "");
    cmd_pipeline(&cfg, |_, _| {}).unwrap();
    let rows = cmd_dump_prompts(&cfg).unwrap();
    let on_disk: Vec<PromptRow> = read_records(&cfg.out.join("prompts.csv")).unwrap();
    assert_eq!(rows, on_disk);

    let prepared = Prepared::load(&cfg).unwrap();
    let pairs: usize = prepared
        .test_id()
        .iter()
        .chain(prepared.test_ood().iter())
        .map(|g| g.undirected_pairs().len())
        .sum();
    assert_eq!(rows.len(), pairs);
    assert!(rows.iter().all(|r| r.src < r.dst && r.w1 > 0.0 && r.w1 < 1.0 && r.w2 > 0.0 && r.w2 < 1.0));

    let model = ModelFile::load(&cfg.model_file()).unwrap().model;
    let i = prepared.split.test_index[0];
    let g = prepared.test_id()[0];
    let w1 = model.edge_weights(g, Branch::ClassSpecific).unwrap();
    let first = rows.iter().find(|r| r.graph_id == Origin::Id.graph_id(i)).unwrap();
    let k_fwd = g.edges().iter().position(|&e| e == (first.src, first.dst)).unwrap();
    let k_back = g.edges().iter().position(|&e| e == (first.dst, first.src)).unwrap();
    assert!((first.w1 - (w1[k_fwd] + w1[k_back]) / 2.0).abs() < 1e-15);
}

#[test]
fn grid_writes_sweep_and_best_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::tiny(
        tmp.path(),
        "grid.lambda = 0.5, 1\ngrid.gamma = 0, 1\ngrid.alpha1 = 100\ngrid.alpha2 = 100\ngrid.lr = 0.01\n",
    );
    let report = cmd_grid(&cfg).unwrap();
    assert_eq!(report.result.rows.len(), 4);
    assert!(cfg.encoder_file().is_file(), "grid pre-trains a missing encoder");
    let sweep = fs::read_to_string(cfg.out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 5);
    assert!(sweep.starts_with("lambda,gamma,alpha1,alpha2,lr,val_auc\n"));
    let best = ExperimentConfig::load(&cfg.out.join("best.conf")).unwrap();
    let b = report.result.best;
    assert_eq!((best.dgp.lambda, best.dgp.gamma), (b.lambda, b.gamma));
    let top = report.result.rows.iter().map(|r| r.val_auc).fold(f64::MIN, f64::max);
    assert_eq!(report.result.best_auc, top);
}

#[test]
fn ablation_full_row_matches_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::tiny(tmp.path(), "");
    let manifest = cmd_pipeline(&cfg, |_, _| {}).unwrap();
    let rows = cmd_ablate(&cfg).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["v0", "v1", "v2", "full"]);
    assert_eq!(rows[3].auc, manifest.metrics.auc);
    let csv = fs::read_to_string(cfg.out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn tu_inputs_match_synthetic_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let synth_cfg = common::tiny(tmp.path(), "");
    cmd_synth(&synth_cfg).unwrap();
    let direct = cmd_pipeline(&synth_cfg, |_, _| {}).unwrap();

    let tu_text = common::TINY
        .lines()
        .filter(|l| !l.starts_with("id.") && !l.starts_with("ood."))
        .collect::<Vec<_>>()
        .join("\n")
        + "\nid.tu_dir = out/synth/id\nid.tu_name = synth-id\nood.tu_dir = out/synth/ood\nood.tu_name = synth-ood\nout = via-tu\n";
    let tu_cfg = ExperimentConfig::parse(&tu_text, tmp.path()).unwrap();
    let via_tu = cmd_pipeline(&tu_cfg, |_, _| {}).unwrap();
    assert_eq!(via_tu.metrics, direct.metrics);
}

#[test]
fn scoring_a_standalone_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::tiny(tmp.path(), "");
    cmd_pipeline(&cfg, |_, _| {}).unwrap();
    cmd_synth(&cfg).unwrap();
    let mut scoring = common::tiny(
        tmp.path(),
        "data.tu_dir = out/synth/ood\ndata.tu_name = synth-ood\ndata.origin = ood\nscores = ood-scores.csv\n",
    );
    scoring.out = cfg.out.clone();
    let table = cmd_score(&scoring).unwrap();
    assert_eq!(table.rows.len(), 40);
    assert!(table.rows.iter().all(|r| r.origin == Origin::Ood));
    assert_eq!(table.rows[7].graph_id, "ood-7");
    assert!(tmp.path().join("ood-scores.csv").is_file());
}
