//! Helpers shared by the integration tests: small random graphs, a
//! central-difference gradient checker and brute-force metric oracles.

#![allow(dead_code)]

use dgp_core::autodiff::{Tape, Var};
use dgp_core::graph::Graph;
use dgp_core::params::ParamSet;
use dgp_core::seed::rng;
use dgp_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// An undirected graph with `2..=max_nodes` nodes, each pair joined with
/// probability one half, and uniform random features.
pub fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize, feature_dim: usize) -> Graph {
    let n = rng.random_range(2..=max_nodes);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.5) {
                pairs.push((i, j));
            }
        }
    }
    if pairs.is_empty() {
        pairs.push((0, 1));
    }
    Graph::from_undirected(n, &pairs, random_tensor(rng, n, feature_dim, 1.0)).unwrap()
}

pub fn random_graphs(seed: u64, count: usize, max_nodes: usize, feature_dim: usize) -> Vec<Graph> {
    let mut r = rng(seed);
    (0..count).map(|_| random_graph(&mut r, max_nodes, feature_dim)).collect()
}

/// Replaces every unfrozen tensor with uniform values in `[-scale, scale]`.
pub fn randomize(params: &mut ParamSet, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for p in params.iter_mut().filter(|p| !p.frozen) {
        let (rows, cols) = p.value.shape();
        p.value = random_tensor(&mut r, rows, cols, scale);
    }
}

/// Result of comparing tape gradients with central differences.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub worst_rel_err: f64,
    pub coordinates: usize,
}

/// `|fd - analytic| / max(|fd|, |analytic|, 1e-3)`, maximized over every
/// entry of every unfrozen tensor in `params`.
pub fn fd_check(params: &ParamSet, loss: impl Fn(&Tape, &ParamSet) -> Var) -> FdReport {
    let tape = Tape::new();
    let l = loss(&tape, params);
    let grads = tape.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for name in params.names() {
        if params.get(&name).unwrap().frozen {
            continue;
        }
        let n = params.get(&name).unwrap().value.len();
        for i in 0..n {
            let eval = |delta: f64| {
                let mut q = params.clone();
                q.get_mut(&name).unwrap().value.data_mut()[i] += delta;
                let t = Tape::new();
                let v = loss(&t, &q);
                t.item(v).unwrap()
            };
            let fd = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let an = grads.get(&name).map_or(0.0, |g| g.data()[i]);
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            worst = worst.max(err);
            coordinates += 1;
        }
    }
    FdReport {
        worst_rel_err: worst,
        coordinates,
    }
}

/// Pairwise AUC: a pair scores 1 when the ID score is higher, 1/2 on ties.
pub fn brute_auc(id: &[f64], ood: &[f64]) -> f64 {
    let mut halves: u64 = 0;
    for &a in id {
        for &b in ood {
            halves += match a.partial_cmp(&b).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    halves as f64 / (2.0 * id.len() as f64 * ood.len() as f64)
}

/// Tries every observed score as a threshold `s >= t` and keeps the largest
/// one that still accepts at least 95% of ID scores.
pub fn brute_fpr95(id: &[f64], ood: &[f64]) -> f64 {
    let mut best_t = f64::NEG_INFINITY;
    for &t in id.iter().chain(ood) {
        let accepted = id.iter().filter(|&&s| s >= t).count();
        if 100 * accepted >= 95 * id.len() && t > best_t {
            best_t = t;
        }
    }
    ood.iter().filter(|&&s| s >= best_t).count() as f64 / ood.len() as f64
}

/// Step-wise PR area with ID positive: every distinct score is a threshold,
/// and each recall gain is weighted by the precision at that threshold.
pub fn brute_aupr(id: &[f64], ood: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = id.iter().chain(ood).copied().collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = id.iter().filter(|&&s| s >= t).count() as f64;
        let fp = ood.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / id.len() as f64;
        if tp + fp > 0.0 {
            area += (recall - prev_recall) * tp / (tp + fp);
        }
        prev_recall = recall;
    }
    area
}

/// Random score sets: half draw from a few integer levels to force ties.
pub fn random_score_set(rng: &mut ChaCha8Rng, max_len: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rng.random_range(1..=max_len / 2);
    let m = rng.random_range(1..=max_len / 2);
    let tied = rng.random_bool(0.5);
    let shift = rng.random_range(0.0..1.5);
    let mut draw = |k: usize, shift: f64| -> Vec<f64> {
        (0..k)
            .map(|_| {
                if tied {
                    f64::from(rng.random_range(0..6u8)) + shift.round()
                } else {
                    rng.random_range(-1.0..1.0) + shift
                }
            })
            .collect()
    };
    (draw(n, shift), draw(m, 0.0))
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Tensor, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a.row(i).to_vec();
            row.push(b[i]);
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

/// Mean and population covariance of `rows`.
pub fn mean_cov(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let cov = (0..d)
        .map(|a| {
            (0..d)
                .map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / n)
                .collect()
        })
        .collect();
    (mean, cov)
}

/// Graphs, encoder and model for the gradient checks: a narrow encoder so
/// every coordinate can be perturbed, and random generator weights so the
/// prompt path carries gradient.
pub struct GradFixture {
    pub graphs: Vec<Graph>,
    pub views: Vec<Graph>,
    pub labels: Vec<usize>,
    pub encoder: dgp_core::encoder::GinEncoder,
    pub model: dgp_core::dgp::DgpModel,
}

pub const FD_GRAPHS: usize = 24;
pub const FD_MAX_NODES: usize = 6;

pub fn grad_fixture(seed: u64) -> GradFixture {
    use dgp_core::dgp::{DgpConfig, DgpModel};
    use dgp_core::encoder::{GinArch, GinEncoder};
    use dgp_core::pretrain::{augment, Augmentation};

    let feature_dim = 4;
    let graphs = random_graphs(seed, FD_GRAPHS, FD_MAX_NODES, feature_dim);
    let mut r = rng(seed ^ 0x5eed);
    let views = graphs
        .iter()
        .map(|g| augment(g, Augmentation::EdgePerturb(0.3), &mut r).unwrap())
        .collect();
    let labels = (0..graphs.len()).map(|_| r.random_range(0..2)).collect();
    let arch = GinArch {
        layers: 2,
        hidden: 6,
        proj_dim: 6,
        ..GinArch::new(feature_dim)
    };
    let mut encoder = GinEncoder::new(arch, &mut r).unwrap();
    randomize(&mut encoder.params, seed + 1, 0.6);
    let mut model = DgpModel::new(&encoder, 2, &DgpConfig::default(), &mut r).unwrap();
    randomize(&mut model.params, seed + 2, 0.4);
    let refs: Vec<&Graph> = graphs.iter().collect();
    model.fit_stats(&refs, seed).unwrap();
    GradFixture {
        graphs,
        views,
        labels,
        encoder,
        model,
    }
}

/// Finite-difference reports for the contrastive, class-specific,
/// class-agnostic and distance losses.
pub fn fd_suite(seed: u64) -> Vec<(&'static str, FdReport)> {
    use dgp_core::encoder::GraphBatch;
    use dgp_core::pretrain::ntxent;

    let fx = grad_fixture(seed);
    let refs: Vec<&Graph> = fx.graphs.iter().collect();
    let view_refs: Vec<&Graph> = fx.views.iter().collect();
    let b1 = GraphBatch::new(&refs).unwrap();
    let b2 = GraphBatch::new(&view_refs).unwrap();
    let contrastive = fd_check(&fx.encoder.params, |t, ps| {
        let enc = dgp_core::encoder::GinEncoder::from_params(fx.encoder.arch.clone(), ps.clone()).unwrap();
        let z1 = enc.encode_batch(t, &b1, None).unwrap();
        let z2 = enc.encode_batch(t, &b2, None).unwrap();
        ntxent(t, z1, z2, 0.5).unwrap()
    });

    let pb = fx.model.prepare(&refs).unwrap();
    let with = |ps: &ParamSet| {
        let mut m = fx.model.clone();
        m.params = ps.clone();
        m
    };
    let cs = fd_check(&fx.model.params, |t, ps| {
        with(ps).class_specific_loss(t, &pb, &fx.labels).unwrap()
    });
    let ca = fd_check(&fx.model.params, |t, ps| with(ps).class_agnostic_loss(t, &pb).unwrap());
    let distance = fd_check(&fx.model.params, |t, ps| with(ps).distance_loss(t, &pb, 1.0, 1.0).unwrap());
    vec![
        ("contrastive", contrastive),
        ("class-specific", cs),
        ("class-agnostic", ca),
        ("distance", distance),
    ]
}

/// Disagreements between the metric implementations and the brute-force
/// oracles over `sets` random score sets of size at most `max_len`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricReport {
    pub sets: usize,
    pub auc_mismatches: usize,
    pub fpr95_mismatches: usize,
    pub worst_aupr_diff: f64,
}

pub fn metric_suite(seed: u64, sets: usize, max_len: usize) -> MetricReport {
    use dgp_core::metrics::{aupr, auc, fpr95};
    let mut r = rng(seed);
    let mut report = MetricReport {
        sets,
        ..Default::default()
    };
    for _ in 0..sets {
        let (id, ood) = random_score_set(&mut r, max_len);
        if auc(&id, &ood).unwrap() != brute_auc(&id, &ood) {
            report.auc_mismatches += 1;
        }
        if fpr95(&id, &ood).unwrap() != brute_fpr95(&id, &ood) {
            report.fpr95_mismatches += 1;
        }
        let d = (aupr(&id, &ood).unwrap() - brute_aupr(&id, &ood)).abs();
        report.worst_aupr_diff = report.worst_aupr_diff.max(d);
    }
    report
}

/// `q` well separated Gaussian-ish blobs of `per` points in `dim` dimensions.
pub fn blobs(seed: u64, q: usize, per: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for c in 0..q {
        let centre: Vec<f64> = (0..dim).map(|j| if j == c % dim { 20.0 * (c + 1) as f64 } else { 0.0 }).collect();
        for _ in 0..per {
            out.push(centre.iter().map(|m| m + r.random_range(-1.0..1.0) * (1.0 + c as f64)).collect());
        }
    }
    out
}

/// Direct evaluation: regularize the covariance, solve against the offset
/// by elimination and keep the nearest cluster.
pub fn direct_md(stats: &[dgp_core::scoring::ClusterStats], eps_reg: f64, eps_d: f64, h: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for s in stats {
        let d = s.dim();
        let tr: f64 = (0..d).map(|i| s.cov.get(i, i)).sum();
        let ridge = eps_reg * if tr > 0.0 { tr / d as f64 } else { 1.0 };
        let mut m = s.cov.clone();
        for i in 0..d {
            m.set(i, i, m.get(i, i) + ridge);
        }
        let diff: Vec<f64> = h.iter().zip(&s.mean).map(|(a, b)| a - b).collect();
        let x = solve(&m, &diff);
        let q: f64 = diff.iter().zip(&x).map(|(a, b)| a * b).sum();
        best = best.min(q);
    }
    1.0 / best.max(eps_d)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MahalanobisReport {
    /// Largest deviation of the single-cluster mean and covariance from the closed form.
    pub closed_form_err: f64,
    /// Largest relative deviation of `md_score` from [`direct_md`], per cluster count 1, 2, 3.
    pub score_err: [f64; 3],
    pub clusters_found: [usize; 3],
}

pub fn mahalanobis_suite(seed: u64) -> MahalanobisReport {
    use dgp_core::scoring::{MahalanobisScorer, ScorerConfig};
    let mut report = MahalanobisReport::default();

    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..80).map(|_| (0..6).map(|_| r.random_range(-3.0..3.0)).collect()).collect();
    let fit = MahalanobisScorer::fit(&rows, &ScorerConfig::default(), seed).unwrap();
    let (mean, cov) = mean_cov(&rows);
    let s = &fit.stats[0];
    for (a, b) in s.mean.iter().zip(&mean) {
        report.closed_form_err = report.closed_form_err.max((a - b).abs());
    }
    for (i, row) in cov.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            report.closed_form_err = report.closed_form_err.max((s.cov.get(i, j) - v).abs());
        }
    }

    for q in 1..=3 {
        let data = blobs(seed + q as u64, q, 40, 4);
        let cfg = ScorerConfig {
            clusters: q,
            ..ScorerConfig::default()
        };
        let scorer = MahalanobisScorer::fit(&data, &cfg, seed).unwrap();
        report.clusters_found[q - 1] = scorer.clusters();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let base = &data[r.random_range(0..data.len())];
            let h: Vec<f64> = base.iter().map(|x| x + r.random_range(-4.0..4.0)).collect();
            let got = scorer.md_score(&h).unwrap();
            let want = direct_md(&scorer.stats, cfg.eps_reg, cfg.eps_d, &h);
            worst = worst.max((got - want).abs() / want.abs().max(1.0));
        }
        report.score_err[q - 1] = worst;
    }
    report
}

/// Largest violations of the structural and scoring invariants over a set
/// of graphs. Score errors are relative to `max(1, |S|)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct InvariantReport {
    pub graphs: usize,
    pub edges: usize,
    pub permutation_err: f64,
    /// Graphs whose weight vector is not one entry per existing edge.
    pub weight_count_mismatches: usize,
    /// Weights outside the open interval (0, 1).
    pub weights_out_of_range: usize,
    /// Prompted embedding against re-encoding with the same per-edge weights.
    pub reweight_err: f64,
    /// All-zero weights against the same graph with its edges removed.
    pub zero_weight_err: f64,
    /// `S` against `md1 + gamma * md2`.
    pub decomposition_err: f64,
    /// With gamma zero: `S` against an independently computed class-specific score.
    pub gamma_zero_err: f64,
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn invariant_suite(
    model: &dgp_core::dgp::DgpModel,
    cfg: &dgp_core::dgp::DgpConfig,
    graphs: &[&Graph],
    seed: u64,
) -> InvariantReport {
    use dgp_core::dgp::{Branch, DgpConfig};
    use rand::seq::SliceRandom;

    let mut r = rng(seed);
    let gamma = cfg.gamma;
    let mut zero_gamma = model.clone();
    zero_gamma.weights = model.variant.weights(&DgpConfig {
        gamma: 0.0,
        ..cfg.clone()
    });
    let scores = model.score_many(graphs).unwrap();
    let zero_scores = zero_gamma.score_many(graphs).unwrap();
    let cs_embeddings = model.prompted_embeddings(graphs, Branch::ClassSpecific).unwrap();
    let cs_stats = model.stats[0].as_ref().unwrap();

    let mut rep = InvariantReport {
        graphs: graphs.len(),
        ..Default::default()
    };
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    for (k, g) in graphs.iter().enumerate() {
        let s = scores[k];
        rep.decomposition_err = rep.decomposition_err.max(rel(s.score, s.md1 + gamma * s.md2));
        let cs = cs_stats.md_score(&cs_embeddings[k]).unwrap();
        rep.gamma_zero_err = rep
            .gamma_zero_err
            .max(rel(zero_scores[k].score, cs))
            .max(rel(zero_scores[k].score, s.md1));

        let mut perm: Vec<usize> = (0..g.node_count()).collect();
        perm.shuffle(&mut r);
        let moved = model.score(&g.permute(&perm).unwrap()).unwrap();
        rep.permutation_err = rep.permutation_err.max(rel(moved.score, s.score));

        rep.edges += g.edge_count();
        for b in Branch::BOTH {
            let w = model.edge_weights(g, b).unwrap();
            if w.len() != g.edge_count() {
                rep.weight_count_mismatches += 1;
                continue;
            }
            rep.weights_out_of_range += w.iter().filter(|&&x| !(x > 0.0 && x < 1.0)).count();
            let prompted = model.prompted_embeddings(&[*g], b).unwrap();
            let direct = model.encoder.encode_graph(g, Some(&w)).unwrap();
            rep.reweight_err = rep.reweight_err.max(max_abs(&prompted[0], &direct));
        }
        let zeros = vec![0.0; g.edge_count()];
        let bare = Graph::new(g.node_count(), Vec::new(), g.features().clone()).unwrap();
        let a = model.encoder.encode_graph(g, Some(&zeros)).unwrap();
        let b = model.encoder.encode_graph(&bare, None).unwrap();
        rep.zero_weight_err = rep.zero_weight_err.max(max_abs(&a, &b));
    }
    rep
}

impl InvariantReport {
    /// Every invariant within its tolerance.
    pub fn holds(&self) -> bool {
        self.permutation_err <= 1e-9
            && self.weight_count_mismatches == 0
            && self.weights_out_of_range == 0
            && self.reweight_err <= 1e-12
            && self.zero_weight_err <= 1e-12
            && self.decomposition_err <= f64::EPSILON
            && self.gamma_zero_err == 0.0
    }
}
