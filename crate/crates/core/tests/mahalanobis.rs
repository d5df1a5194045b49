mod common;

use common::{blobs, direct_md, mahalanobis_suite, mean_cov};
use dgp_core::scoring::{kmeans, MahalanobisScorer, ScorerConfig};

#[test]
fn fit_and_score_match_direct_evaluation() {
    let r = mahalanobis_suite(21);
    assert!(r.closed_form_err <= 1e-12, "{}", r.closed_form_err);
    for (q, err) in r.score_err.iter().enumerate() {
        assert!(*err <= 1e-10, "Q={}: {err}", q + 1);
    }
    assert_eq!(r.clusters_found, [1, 2, 3]);
}

#[test]
fn clusters_follow_kmeans_groups() {
    let data = blobs(8, 3, 30, 4);
    let cfg = ScorerConfig {
        clusters: 3,
        ..ScorerConfig::default()
    };
    let scorer = MahalanobisScorer::fit(&data, &cfg, 4).unwrap();
    let km = kmeans(&data, 3, 4);
    for c in 0..3 {
        let members: Vec<Vec<f64>> = data
            .iter()
            .zip(&km.assignment)
            .filter(|(_, &a)| a == c)
            .map(|(p, _)| p.clone())
            .collect();
        let (mean, cov) = mean_cov(&members);
        let stats = scorer
            .stats
            .iter()
            .find(|s| s.mean.iter().zip(&mean).all(|(a, b)| (a - b).abs() < 1e-9))
            .expect("cluster with matching mean");
        for (i, row) in cov.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((stats.cov.get(i, j) - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn nearer_cluster_decides() {
    let data = blobs(2, 2, 30, 3);
    let cfg = ScorerConfig {
        clusters: 2,
        ..ScorerConfig::default()
    };
    let scorer = MahalanobisScorer::fit(&data, &cfg, 0).unwrap();
    for s in &scorer.stats {
        let at_mean = scorer.md_score(&s.mean).unwrap();
        assert_eq!(at_mean, 1.0 / cfg.eps_d);
        let off: Vec<f64> = s.mean.iter().map(|m| m + 0.5).collect();
        assert!((scorer.md_score(&off).unwrap() - direct_md(&scorer.stats, cfg.eps_reg, cfg.eps_d, &off)).abs() < 1e-10);
    }
}
