//! Planted-motif synthetic benchmark.
//!
//! In-distribution class `c` plants copies of the cycle of length `c + 3`
//! (class 0 triangles, class 1 four-cycles, ...) onto a sparse random
//! background whose edges are only accepted when they close no cycle of
//! length three or four, so the planted copies are the only short cycles.
//! Each copy hangs off the background by a single bridge edge.
//!
//! The OOD family replaces the cycles with small stars on a background of
//! `density_factor` times the ID edge probability with no cycle filter. The
//! default factor of 1 keeps the two families close; a factor of 2 gives the
//! easier doubled-density variant.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::graph::{degree_features, Graph, GraphDataset, LabeledGraph, DEFAULT_MAX_DEGREE};
use crate::seed::{derive_indexed, rng};
use crate::{Error, Result, Tensor};

/// Shape of the graphs shared by the ID and OOD generators.
#[derive(Debug, Clone, PartialEq)]
pub struct MotifSpec {
    /// Planted copies per graph.
    pub motifs_per_graph: usize,
    /// Inclusive range of background node counts.
    pub background_min: usize,
    pub background_max: usize,
}

impl Default for MotifSpec {
    fn default() -> Self {
        Self {
            motifs_per_graph: 2,
            background_min: 8,
            background_max: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthIdSpec {
    pub classes: usize,
    pub per_class: usize,
    pub motif: MotifSpec,
    /// Edge probability of the background.
    pub bg_density: f64,
    pub max_degree: usize,
}

impl Default for SynthIdSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            per_class: 150,
            motif: MotifSpec::default(),
            bg_density: 0.15,
            max_degree: DEFAULT_MAX_DEGREE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOodSpec {
    pub count: usize,
    pub motif: MotifSpec,
    /// Leaves per planted star.
    pub star_leaves: usize,
    /// ID background probability; the OOD background uses `density_factor` times this.
    pub bg_density: f64,
    pub density_factor: f64,
    pub max_degree: usize,
}

impl Default for SynthOodSpec {
    fn default() -> Self {
        Self {
            count: 100,
            motif: MotifSpec::default(),
            star_leaves: 2,
            bg_density: 0.15,
            density_factor: 1.0,
            max_degree: DEFAULT_MAX_DEGREE,
        }
    }
}

/// Label given to every OOD graph; OOD datasets have a single class.
pub const OOD_SENTINEL_LABEL: usize = 0;

fn check_prob(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("{what} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

fn check_motif(m: &MotifSpec) -> Result<()> {
    if m.background_min > m.background_max {
        return Err(Error::InvalidConfig("background_min exceeds background_max".into()));
    }
    if m.motifs_per_graph == 0 && m.background_max == 0 {
        return Err(Error::InvalidConfig("graphs would have no nodes".into()));
    }
    Ok(())
}

struct Builder {
    n: usize,
    adj: Vec<BTreeSet<usize>>,
    pairs: Vec<(usize, usize)>,
}

impl Builder {
    fn new() -> Self {
        Self {
            n: 0,
            adj: Vec::new(),
            pairs: Vec::new(),
        }
    }

    fn add_nodes(&mut self, k: usize) -> usize {
        let first = self.n;
        self.n += k;
        self.adj.resize_with(self.n, BTreeSet::new);
        first
    }

    fn connect(&mut self, a: usize, b: usize) {
        if a != b && self.adj[a].insert(b) {
            self.adj[b].insert(a);
            self.pairs.push((a.min(b), a.max(b)));
        }
    }

    /// True when some path of length at most 3 already joins `a` and `b`.
    fn within_three(&self, a: usize, b: usize) -> bool {
        if self.adj[a].contains(&b) {
            return true;
        }
        for &x in &self.adj[a] {
            if self.adj[x].contains(&b) {
                return true;
            }
            if self.adj[x].iter().any(|&y| self.adj[y].contains(&b)) {
                return true;
            }
        }
        false
    }

    fn background<R: Rng>(&mut self, rng: &mut R, nodes: usize, p: f64, high_girth: bool) {
        let first = self.add_nodes(nodes);
        for i in first..first + nodes {
            for j in i + 1..first + nodes {
                if rng.random::<f64>() < p && !(high_girth && self.within_three(i, j)) {
                    self.connect(i, j);
                }
            }
        }
    }

    fn cycle(&mut self, len: usize) -> usize {
        let first = self.add_nodes(len);
        for k in 0..len {
            self.connect(first + k, first + (k + 1) % len);
        }
        first
    }

    fn star(&mut self, leaves: usize) -> usize {
        let center = self.add_nodes(leaves + 1);
        for k in 1..=leaves {
            self.connect(center, center + k);
        }
        center
    }

    fn finish(self) -> Result<Graph> {
        let n = self.n;
        Graph::from_undirected(n, &self.pairs, Tensor::zeros(n, 1))
    }
}

/// Attaches a block of `size` nodes starting at `first` to what was built
/// before it with one bridge edge from a random block node.
fn bridge<R: Rng>(b: &mut Builder, rng: &mut R, first: usize, size: usize) {
    if first == 0 {
        return;
    }
    let inside = first + rng.random_range(0..size);
    let outside = rng.random_range(0..first);
    b.connect(inside, outside);
}

fn id_graph<R: Rng>(rng: &mut R, class: usize, spec: &SynthIdSpec) -> Result<Graph> {
    let mut b = Builder::new();
    let bg = rng.random_range(spec.motif.background_min..=spec.motif.background_max);
    b.background(rng, bg, spec.bg_density, true);
    let len = class + 3;
    for _ in 0..spec.motif.motifs_per_graph {
        let first = b.cycle(len);
        bridge(&mut b, rng, first, len);
    }
    b.finish()
}

fn ood_graph<R: Rng>(rng: &mut R, spec: &SynthOodSpec) -> Result<Graph> {
    let mut b = Builder::new();
    let bg = rng.random_range(spec.motif.background_min..=spec.motif.background_max);
    b.background(rng, bg, (spec.bg_density * spec.density_factor).min(1.0), false);
    for _ in 0..spec.motif.motifs_per_graph.max(1) {
        let center = b.star(spec.star_leaves);
        if center > 0 {
            let outside = rng.random_range(0..center);
            b.connect(center, outside);
        }
    }
    b.finish()
}

/// Generates `classes x per_class` planted-motif graphs with degree features.
pub fn synth_id(spec: &SynthIdSpec, seed: u64) -> Result<GraphDataset> {
    if spec.classes < 2 {
        return Err(Error::InvalidConfig("synthetic ID data needs at least 2 classes".into()));
    }
    check_prob(spec.bg_density, "bg_density")?;
    check_motif(&spec.motif)?;
    let mut graphs = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        for i in 0..spec.per_class {
            let mut r = rng(derive_indexed(seed, "synth-id", (class * spec.per_class + i) as u64));
            graphs.push(LabeledGraph {
                graph: id_graph(&mut r, class, spec)?,
                label: class,
            });
        }
    }
    let ds = GraphDataset::new("synth-id", graphs, spec.classes)?;
    degree_features(ds, spec.max_degree)
}

/// Generates `count` star-dominated OOD graphs with degree features.
pub fn synth_ood(spec: &SynthOodSpec, seed: u64) -> Result<GraphDataset> {
    check_prob(spec.bg_density, "bg_density")?;
    check_motif(&spec.motif)?;
    if spec.density_factor < 0.0 {
        return Err(Error::InvalidConfig("density_factor must be non-negative".into()));
    }
    let graphs = (0..spec.count)
        .map(|i| {
            let mut r = rng(derive_indexed(seed, "synth-ood", i as u64));
            Ok(LabeledGraph {
                graph: ood_graph(&mut r, spec)?,
                label: OOD_SENTINEL_LABEL,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = GraphDataset::new("synth-ood", graphs, 1)?;
    degree_features(ds, spec.max_degree)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adjacency(g: &Graph) -> Vec<BTreeSet<usize>> {
        let mut adj = alloc::vec![BTreeSet::new(); g.node_count()];
        for &(s, d) in g.edges() {
            adj[s].insert(d);
        }
        adj
    }

    /// Exhaustive triangle count over node triples.
    fn triangles(g: &Graph) -> usize {
        let adj = adjacency(g);
        let n = g.node_count();
        let mut count = 0;
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    if adj[a].contains(&b) && adj[b].contains(&c) && adj[a].contains(&c) {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    /// Exhaustive count of 4-cycles (as subgraphs, chords allowed) over node quadruples.
    fn four_cycles(g: &Graph) -> usize {
        let adj = adjacency(g);
        let n = g.node_count();
        let e = |x: usize, y: usize| adj[x].contains(&y);
        let mut count = 0;
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    for d in c + 1..n {
                        // The three distinct cyclic orders of four nodes.
                        count += usize::from(e(a, b) && e(b, c) && e(c, d) && e(d, a));
                        count += usize::from(e(a, b) && e(b, d) && e(d, c) && e(c, a));
                        count += usize::from(e(a, c) && e(c, b) && e(b, d) && e(d, a));
                    }
                }
            }
        }
        count
    }

    fn small_spec(motifs: usize, density: f64) -> SynthIdSpec {
        SynthIdSpec {
            classes: 2,
            per_class: 10,
            motif: MotifSpec {
                motifs_per_graph: motifs,
                background_min: 5,
                background_max: 10,
            },
            bg_density: density,
            max_degree: 8,
        }
    }

    #[test]
    fn zero_background_is_exactly_the_motif() {
        let spec = SynthIdSpec {
            per_class: 1,
            motif: MotifSpec {
                motifs_per_graph: 1,
                background_min: 0,
                background_max: 0,
            },
            bg_density: 0.0,
            ..small_spec(1, 0.0)
        };
        let ds = synth_id(&spec, 3).unwrap();
        let tri = &ds.graphs[0].graph;
        assert_eq!(tri.node_count(), 3);
        assert_eq!(tri.undirected_pairs(), alloc::vec![(0, 1), (1, 2), (0, 2)]);
        let sq = &ds.graphs[1].graph;
        assert_eq!(sq.node_count(), 4);
        assert_eq!(sq.edge_count(), 8);
        assert_eq!(four_cycles(sq), 1);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = small_spec(2, 0.3);
        assert_eq!(synth_id(&spec, 11).unwrap(), synth_id(&spec, 11).unwrap());
        assert_ne!(synth_id(&spec, 11).unwrap(), synth_id(&spec, 12).unwrap());
        let ood = SynthOodSpec {
            count: 5,
            ..SynthOodSpec::default()
        };
        assert_eq!(synth_ood(&ood, 4).unwrap(), synth_ood(&ood, 4).unwrap());
    }

    #[test]
    fn motif_census_matches_configuration() {
        for motifs in 1..=2 {
            let ds = synth_id(&small_spec(motifs, 0.35), 5).unwrap();
            for lg in &ds.graphs {
                let g = &lg.graph;
                assert!(g.node_count() <= 20);
                assert!(g.is_symmetric());
                match lg.label {
                    0 => {
                        assert_eq!(triangles(g), motifs);
                        assert_eq!(four_cycles(g), 0);
                    }
                    _ => {
                        assert_eq!(triangles(g), 0);
                        assert_eq!(four_cycles(g), motifs);
                    }
                }
            }
        }
    }

    #[test]
    fn degree_features_applied() {
        let ds = synth_id(&small_spec(1, 0.2), 1).unwrap();
        assert_eq!(ds.feature_dim, 9);
        for lg in &ds.graphs {
            let x = lg.graph.features();
            for r in 0..x.rows() {
                assert_eq!(x.row(r).iter().sum::<f64>(), 1.0);
            }
        }
    }

    #[test]
    fn ood_background_density_doubles() {
        let spec = SynthOodSpec {
            count: 100,
            bg_density: 0.15,
            density_factor: 2.0,
            ..SynthOodSpec::default()
        };
        let ds = synth_ood(&spec, 8).unwrap();
        let star_block = spec.motif.motifs_per_graph * (spec.star_leaves + 1);
        let (mut edges, mut possible) = (0usize, 0usize);
        for lg in &ds.graphs {
            let g = &lg.graph;
            let bg = g.node_count() - star_block;
            edges += g.undirected_pairs().iter().filter(|&&(a, b)| a < bg && b < bg).count();
            possible += bg * (bg - 1) / 2;
        }
        let density = edges as f64 / possible as f64;
        let target = 2.0 * spec.bg_density;
        assert!((density - target).abs() / target < 0.2, "density {density}");
    }

    #[test]
    fn every_ood_graph_has_a_star() {
        let spec = SynthOodSpec {
            count: 30,
            ..SynthOodSpec::default()
        };
        for lg in &synth_ood(&spec, 2).unwrap().graphs {
            let g = &lg.graph;
            let deg = g.out_degrees();
            let adj = adjacency(g);
            let has_star = (0..g.node_count()).any(|c| {
                adj[c].iter().filter(|&&l| deg[l] == 1).count() >= spec.star_leaves
            });
            assert!(has_star);
            assert_eq!(lg.label, OOD_SENTINEL_LABEL);
        }
    }

    #[test]
    fn rejects_single_class() {
        let spec = SynthIdSpec {
            classes: 1,
            ..SynthIdSpec::default()
        };
        assert!(synth_id(&spec, 0).is_err());
    }
}
