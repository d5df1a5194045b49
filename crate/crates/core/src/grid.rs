//! Hyper-parameter grid search selected by validation AUC.

use alloc::collections::btree_map::{BTreeMap, Entry};
use alloc::vec;
use alloc::vec::Vec;

use crate::dgp::{train_dgp, DgpConfig, GraphScore};
use crate::encoder::GinEncoder;
use crate::graph::{Graph, LabeledGraph};
use crate::metrics::auc;
use crate::{Error, Result};

/// Values swept for each hyper-parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub lr: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        let mix = vec![0.1, 0.5, 1.0, 5.0, 10.0];
        let alpha = vec![1e2, 1e3, 1e4, 1e5];
        Self {
            lambda: mix.clone(),
            gamma: mix,
            alpha1: alpha.clone(),
            alpha2: alpha,
            lr: vec![1e-2],
        }
    }
}

impl GridSpec {
    /// A grid holding exactly the values of `cfg`.
    pub fn single(cfg: &DgpConfig) -> Self {
        Self {
            lambda: vec![cfg.lambda],
            gamma: vec![cfg.gamma],
            alpha1: vec![cfg.alpha1],
            alpha2: vec![cfg.alpha2],
            lr: vec![cfg.lr],
        }
    }

    pub fn cardinality(&self) -> usize {
        self.lambda.len() * self.gamma.len() * self.alpha1.len() * self.alpha2.len() * self.lr.len()
    }

    /// Cartesian product in lexicographic order of `(lambda, gamma, alpha1, alpha2, lr)`.
    pub fn points(&self) -> Vec<GridPoint> {
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let mut out = Vec::with_capacity(self.cardinality());
        for &lambda in &sorted(&self.lambda) {
            for &gamma in &sorted(&self.gamma) {
                for &alpha1 in &sorted(&self.alpha1) {
                    for &alpha2 in &sorted(&self.alpha2) {
                        for &lr in &sorted(&self.lr) {
                            out.push(GridPoint {
                                lambda,
                                gamma,
                                alpha1,
                                alpha2,
                                lr,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub lambda: f64,
    pub gamma: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub lr: f64,
}

impl GridPoint {
    pub fn tuple(&self) -> [f64; 5] {
        [self.lambda, self.gamma, self.alpha1, self.alpha2, self.lr]
    }

    /// Everything except `gamma`, which only affects scoring.
    fn training_key(&self) -> [u64; 4] {
        [self.lambda, self.alpha1, self.alpha2, self.lr].map(f64::to_bits)
    }

    pub fn apply(&self, base: &DgpConfig) -> DgpConfig {
        DgpConfig {
            lambda: self.lambda,
            gamma: self.gamma,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            lr: self.lr,
            ..base.clone()
        }
    }

    fn lex_less(&self, other: &Self) -> bool {
        self.tuple()
            .iter()
            .zip(other.tuple().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .is_some_and(|o| o.is_lt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub point: GridPoint,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: GridPoint,
    pub best_auc: f64,
    /// One row per grid point, in evaluation order.
    pub rows: Vec<SweepRow>,
}

/// Evaluates every point and keeps the highest validation AUC; equal AUCs
/// go to the lexicographically smaller tuple.
pub fn select_best(points: &[GridPoint], mut evaluate: impl FnMut(&GridPoint) -> Result<f64>) -> Result<GridResult> {
    if points.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    let mut rows = Vec::with_capacity(points.len());
    let mut best: Option<SweepRow> = None;
    for p in points {
        let val_auc = evaluate(p)?;
        let row = SweepRow { point: *p, val_auc };
        let better = match &best {
            None => true,
            Some(b) => val_auc > b.val_auc || (val_auc == b.val_auc && p.lex_less(&b.point)),
        };
        if better {
            best = Some(row);
        }
        rows.push(row);
    }
    let best = best.expect("non-empty grid");
    Ok(GridResult {
        best: best.point,
        best_auc: best.val_auc,
        rows,
    })
}

/// Full sweep: one training run per `(lambda, alpha1, alpha2, lr)`, reused
/// across every `gamma`.
pub fn run_grid(
    train: &[LabeledGraph],
    val_id: &[&Graph],
    val_ood: &[&Graph],
    encoder: &GinEncoder,
    class_count: usize,
    base: &DgpConfig,
    spec: &GridSpec,
) -> Result<GridResult> {
    let mut cache: BTreeMap<[u64; 4], (Vec<GraphScore>, Vec<GraphScore>)> = BTreeMap::new();
    select_best(&spec.points(), |p| {
        let key = p.training_key();
        let (id, ood) = match cache.entry(key) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => {
                let model = train_dgp(train, encoder, class_count, &p.apply(base), None)?.model;
                e.insert((model.score_many(val_id)?, model.score_many(val_ood)?))
            }
        };
        let mix = |s: &GraphScore| s.md1 + p.gamma * s.md2;
        let sid: Vec<f64> = id.iter().map(mix).collect();
        let sood: Vec<f64> = ood.iter().map(mix).collect();
        auc(&sid, &sood)
    })
}
