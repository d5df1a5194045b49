//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. The optional real-data smoke run
//! needs BZR and COX2 in TU format under `$DGP_TU_ROOT`; without it that
//! criterion prints SKIP.

#[path = "../../core/tests/common/mod.rs"]
mod oracles;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dgp::checkpoint::{sha256_hex, ModelFile};
use dgp::commands::{cmd_ablate, cmd_pipeline, metrics_file, RunManifest};
use dgp::output::ScoreTable;
use dgp::run::{dgp_config, Prepared};
use dgp::ExperimentConfig;
use dgp_core::graph::Graph;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const RUN_LIMIT: Duration = Duration::from_secs(300);

struct Verdict {
    id: u8,
    title: &'static str,
    pass: Option<bool>,
    detail: String,
}

impl Verdict {
    fn print(&self) {
        let tag = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("{tag} [{:>2}] {}: {}", self.id, self.title, self.detail);
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn gradient_fidelity() -> Verdict {
    let start = Instant::now();
    let reports = oracles::fd_suite(11);
    let elapsed = start.elapsed();
    let mut detail = String::new();
    let mut pass = elapsed < Duration::from_secs(60);
    for (name, r) in &reports {
        pass &= r.coordinates > 0 && r.worst_rel_err < 1e-4;
        write!(detail, "{name} {:.1e} over {} coords; ", r.worst_rel_err, r.coordinates).unwrap();
    }
    write!(
        detail,
        "{} graphs of <= {} nodes, {:.1}s",
        oracles::FD_GRAPHS,
        oracles::FD_MAX_NODES,
        elapsed.as_secs_f64()
    )
    .unwrap();
    Verdict {
        id: 1,
        title: "gradient fidelity",
        pass: Some(pass),
        detail,
    }
}

fn metric_oracles() -> Verdict {
    let r = oracles::metric_suite(5, 100, 200);
    Verdict {
        id: 2,
        title: "metric oracles",
        pass: Some(r.auc_mismatches == 0 && r.fpr95_mismatches == 0 && r.worst_aupr_diff <= 1e-9),
        detail: format!(
            "{} sets: AUC mismatches {}, FPR95 mismatches {}, worst AUPR diff {:.1e}",
            r.sets, r.auc_mismatches, r.fpr95_mismatches, r.worst_aupr_diff
        ),
    }
}

fn mahalanobis() -> Verdict {
    let r = oracles::mahalanobis_suite(21);
    let pass = r.closed_form_err <= 1e-12 && r.score_err.iter().all(|e| *e <= 1e-10) && r.clusters_found == [1, 2, 3];
    Verdict {
        id: 3,
        title: "Mahalanobis correctness",
        pass: Some(pass),
        detail: format!(
            "single-cluster fit err {:.1e}; score err Q=1 {:.1e}, Q=2 {:.1e}, Q=3 {:.1e}",
            r.closed_form_err, r.score_err[0], r.score_err[1], r.score_err[2]
        ),
    }
}

/// One benchmark run and everything later criteria read from it.
struct SeedRun {
    seed: u64,
    cfg: ExperimentConfig,
    manifest: RunManifest,
    seconds: f64,
    invariants: oracles::InvariantReport,
    csv_decomposition_err: f64,
    encoder_file_hash: String,
}

fn bench_config(seed: u64, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(&format!("seed = {seed}\n"), out).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn run_seed(seed: u64, root: &Path) -> anyhow::Result<SeedRun> {
    let cfg = bench_config(seed, &root.join(format!("seed-{seed}")));
    let start = Instant::now();
    let manifest = cmd_pipeline(&cfg, |_, _| {})?;
    let seconds = start.elapsed().as_secs_f64();

    let model = ModelFile::load(&cfg.model_file())?.model;
    let prepared = Prepared::load(&cfg)?;
    let mut graphs: Vec<&Graph> = prepared.test_id();
    graphs.extend(prepared.test_ood());
    let invariants = oracles::invariant_suite(&model, &dgp_config(&cfg), &graphs, seed);

    let gamma = cfg.dgp.gamma;
    let table = ScoreTable::read_csv(&cfg.scores_file())?;
    let csv_decomposition_err = table
        .rows
        .iter()
        .map(|r| (r.score - (r.md1 + gamma * r.md2)).abs() / r.score.abs().max(1.0))
        .fold(0.0, f64::max);
    let encoder_file_hash = sha256_hex(&std::fs::read(cfg.encoder_file())?);
    Ok(SeedRun {
        seed,
        cfg,
        manifest,
        seconds,
        invariants,
        csv_decomposition_err,
        encoder_file_hash,
    })
}

fn structural(runs: &[SeedRun]) -> Verdict {
    let graphs: usize = runs.iter().map(|r| r.invariants.graphs).sum();
    let edges: usize = runs.iter().map(|r| r.invariants.edges).sum();
    let worst = |f: fn(&oracles::InvariantReport) -> f64| runs.iter().map(|r| f(&r.invariants)).fold(0.0, f64::max);
    let perm = worst(|r| r.permutation_err);
    let reweight = worst(|r| r.reweight_err);
    let zero = worst(|r| r.zero_weight_err);
    let count: usize = runs.iter().map(|r| r.invariants.weight_count_mismatches).sum();
    let range: usize = runs.iter().map(|r| r.invariants.weights_out_of_range).sum();
    let pass = !runs.is_empty() && perm <= 1e-9 && reweight <= 1e-12 && zero <= 1e-12 && count == 0 && range == 0;
    Verdict {
        id: 4,
        title: "structural invariants",
        pass: Some(pass),
        detail: format!(
            "{graphs} test graphs, {edges} directed edges: permutation err {perm:.1e}, weights per edge mismatches {count}, \
             outside (0,1) {range}, reweighting err {reweight:.1e}, zero-weight vs edgeless err {zero:.1e}"
        ),
    }
}

fn frozen_encoder(runs: &[SeedRun], ablation_runs: usize) -> Verdict {
    let mut pass = !runs.is_empty();
    for r in runs {
        let h = &r.manifest.hashes;
        pass &= h["encoder"] == h["encoder_after_train"] && h["encoder"] == r.encoder_file_hash;
    }
    Verdict {
        id: 5,
        title: "frozen-encoder contract",
        pass: Some(pass),
        detail: format!(
            "{} pipeline runs with identical hashes before/after training and on disk; \
             {ablation_runs} ablation trainings passed the same in-run check",
            runs.len()
        ),
    }
}

fn decomposition(runs: &[SeedRun]) -> Verdict {
    let model = runs.iter().map(|r| r.invariants.decomposition_err).fold(0.0, f64::max);
    let csv = runs.iter().map(|r| r.csv_decomposition_err).fold(0.0, f64::max);
    let zero = runs.iter().map(|r| r.invariants.gamma_zero_err).fold(0.0, f64::max);
    let pass = !runs.is_empty() && model <= f64::EPSILON && csv <= f64::EPSILON && zero == 0.0;
    Verdict {
        id: 6,
        title: "score decomposition",
        pass: Some(pass),
        detail: format!("S vs md1 + gamma*md2: model {model:.1e}, score files {csv:.1e}; gamma=0 vs class-specific score {zero:.1e}"),
    }
}

fn directional(runs: &[SeedRun]) -> Verdict {
    let dgp: Vec<f64> = runs.iter().map(|r| r.manifest.metrics.auc).collect();
    let base: Vec<f64> = runs.iter().map(|r| r.manifest.baseline_metrics.auc).collect();
    let slowest = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let (m_dgp, m_base) = (median(dgp.clone()), median(base.clone()));
    let pass = runs.len() == SEEDS.len()
        && m_dgp >= m_base + 0.03
        && m_dgp >= 0.85
        && slowest <= RUN_LIMIT.as_secs_f64();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("s{} {:.4}/{:.4}", r.seed, r.manifest.metrics.auc, r.manifest.baseline_metrics.auc))
        .collect();
    Verdict {
        id: 7,
        title: "directional reproduction",
        pass: Some(pass),
        detail: format!(
            "median AUC DGP {m_dgp:.4} vs frozen baseline {m_base:.4} (need >= {:.4} and >= 0.85); \
             slowest run {slowest:.1}s; DGP/baseline {}",
            m_base + 0.03,
            per_seed.join(", ")
        ),
    }
}

fn determinism(first: Option<&SeedRun>, root: &Path) -> Verdict {
    let verdict = |pass: bool, detail: String| Verdict {
        id: 8,
        title: "determinism",
        pass: Some(pass),
        detail,
    };
    let Some(first) = first else {
        return verdict(false, "no completed first run to compare".into());
    };
    let again = bench_config(first.seed, &root.join("repeat"));
    if let Err(e) = cmd_pipeline(&again, |_, _| {}) {
        return verdict(false, format!("second run failed: {e:#}"));
    }
    let a = std::fs::read(metrics_file(&first.cfg)).unwrap_or_default();
    let b = std::fs::read(metrics_file(&again)).unwrap_or_default();
    verdict(
        !a.is_empty() && a == b,
        format!("seed {} twice: metrics.json {} ({} bytes)", first.seed, if a == b { "bit-identical" } else { "differs" }, a.len()),
    )
}

fn ablation(runs: &[SeedRun]) -> (Verdict, usize) {
    let mut by_variant: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    let mut trainings = 0;
    let mut errors = Vec::new();
    for r in runs {
        match cmd_ablate(&r.cfg) {
            Ok(rows) => {
                for row in rows {
                    trainings += 1;
                    by_variant.entry(row.variant).or_default().push(row.auc);
                }
            }
            Err(e) => errors.push(format!("seed {}: {e:#}", r.seed)),
        }
    }
    let med = |k: &str| by_variant.get(k).map(|v| median(v.clone())).unwrap_or(f64::NAN);
    let (full, v0, v1, v2) = (med("full"), med("v0"), med("v1"), med("v2"));
    let best_ablated = v0.max(v1).max(v2);
    let complete = errors.is_empty() && by_variant.values().all(|v| v.len() == SEEDS.len()) && by_variant.len() == 4;
    let pass = complete && full >= best_ablated - 0.01;
    let mut detail = format!("median AUC full {full:.4}, V0 {v0:.4}, V1 {v1:.4}, V2 {v2:.4} (need full >= {:.4})", best_ablated - 0.01);
    if !errors.is_empty() {
        write!(detail, "; errors: {}", errors.join("; ")).unwrap();
    }
    (
        Verdict {
            id: 9,
            title: "ablation ordering",
            pass: Some(pass),
            detail,
        },
        trainings,
    )
}

fn real_data(root: &Path) -> Verdict {
    let verdict = |pass: Option<bool>, detail: String| Verdict {
        id: 10,
        title: "real-data smoke (BZR vs COX2)",
        pass,
        detail,
    };
    let Some(tu_root) = std::env::var_os("DGP_TU_ROOT").map(PathBuf::from) else {
        return verdict(None, "offline suite; set DGP_TU_ROOT to a directory holding BZR/ and COX2/ in TU format".into());
    };
    let text = format!(
        "seed = 0\nid.tu_dir = {}\nid.tu_name = BZR\nood.tu_dir = {}\nood.tu_name = COX2\n",
        tu_root.join("BZR").display(),
        tu_root.join("COX2").display()
    );
    let run = ExperimentConfig::parse(&text, &root.join("real"))
        .map_err(anyhow::Error::from)
        .and_then(|cfg| cmd_pipeline(&cfg, |_, _| {}));
    match run {
        Ok(m) => verdict(
            Some(m.metrics.auc >= m.baseline_metrics.auc),
            format!("AUC DGP {:.4} vs frozen baseline {:.4}", m.metrics.auc, m.baseline_metrics.auc),
        ),
        Err(e) => verdict(Some(false), format!("pipeline failed: {e:#}")),
    }
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path();
    let mut verdicts = Vec::new();
    let mut emit = |v: Verdict| {
        v.print();
        verdicts.push(v.pass);
    };

    emit(gradient_fidelity());
    emit(metric_oracles());
    emit(mahalanobis());

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for seed in SEEDS {
        match run_seed(seed, root) {
            Ok(r) => runs.push(r),
            Err(e) => failures.push(format!("seed {seed}: {e:#}")),
        }
    }
    for f in &failures {
        println!("benchmark run failed: {f}");
    }
    let (ablation_verdict, ablation_trainings) = ablation(&runs);

    emit(structural(&runs));
    emit(frozen_encoder(&runs, ablation_trainings));
    emit(decomposition(&runs));
    emit(directional(&runs));
    emit(determinism(runs.first(), root));
    emit(ablation_verdict);
    emit(real_data(root));

    let failed = verdicts.iter().filter(|p| **p == Some(false)).count() + usize::from(!failures.is_empty());
    println!(
        "acceptance: {} passed, {} failed, {} skipped",
        verdicts.iter().filter(|p| **p == Some(true)).count(),
        verdicts.iter().filter(|p| **p == Some(false)).count(),
        verdicts.iter().filter(|p| p.is_none()).count()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
