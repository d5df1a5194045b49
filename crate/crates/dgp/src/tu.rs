//! TU benchmark text format.
//!
//! A dataset `NAME` is a directory holding `NAME_A.txt` (one `i, j` line per
//! directed edge, 1-based global node ids), `NAME_graph_indicator.txt` (the
//! 1-based graph id of every node), `NAME_graph_labels.txt` (one label per
//! graph) and optionally `NAME_node_labels.txt` and `NAME_node_attributes.txt`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use dgp_core::graph::{Graph, GraphDataset, LabeledGraph};
use dgp_core::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TuError {
    #[error("missing required file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Inconsistent { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] dgp_core::Error),
}

type Result<T> = std::result::Result<T, TuError>;

pub fn file_path(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

/// Non-blank lines of a file with their 1-based line numbers.
struct Lines {
    path: PathBuf,
    rows: Vec<(usize, String)>,
}

impl Lines {
    fn read(path: PathBuf, required: bool) -> Result<Option<Self>> {
        if !path.exists() {
            return if required { Err(TuError::MissingFile(path)) } else { Ok(None) };
        }
        let text = fs::read_to_string(&path).map_err(|source| TuError::Io {
            path: path.clone(),
            source,
        })?;
        let rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l.trim().to_owned()))
            .collect();
        Ok(Some(Self { path, rows }))
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> TuError {
        TuError::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn tokens<'a>(&self, line: usize, text: &'a str) -> Result<Vec<&'a str>> {
        let toks: Vec<&str> = text.split([',', ' ', '\t']).filter(|t| !t.is_empty()).collect();
        if toks.is_empty() {
            return Err(self.err(line, "empty record"));
        }
        Ok(toks)
    }

    fn integers(&self) -> Result<Vec<i64>> {
        self.rows
            .iter()
            .map(|(line, text)| {
                let toks = self.tokens(*line, text)?;
                if toks.len() != 1 {
                    return Err(self.err(*line, format!("expected one value, found {}", toks.len())));
                }
                toks[0]
                    .parse::<i64>()
                    .map_err(|_| self.err(*line, format!("non-numeric token `{}`", toks[0])))
            })
            .collect()
    }
}

/// Dense `0..k` codes for the distinct values, in ascending value order.
fn dense_codes(values: &[i64]) -> (Vec<usize>, usize) {
    let distinct: BTreeSet<i64> = values.iter().copied().collect();
    let code: BTreeMap<i64, usize> = distinct.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    (values.iter().map(|v| code[v]).collect(), distinct.len())
}

/// Reads dataset `name` from `dir`.
///
/// Node labels become one-hot features over their distinct values and
/// attributes are appended after them. With neither file every node gets the
/// single feature `1.0`. Edges keep file order; a missing reverse direction
/// is appended so every graph is symmetric.
pub fn parse_tu_dataset(dir: &Path, name: &str) -> Result<GraphDataset> {
    let indicator_file = Lines::read(file_path(dir, name, "graph_indicator"), true)?.expect("required");
    let labels_file = Lines::read(file_path(dir, name, "graph_labels"), true)?.expect("required");
    let edges_file = Lines::read(file_path(dir, name, "A"), true)?.expect("required");

    let indicator = indicator_file.integers()?;
    let graph_labels = labels_file.integers()?;
    let graph_count = graph_labels.len();
    let mut node_graph = Vec::with_capacity(indicator.len());
    let mut local = Vec::with_capacity(indicator.len());
    let mut sizes = vec![0usize; graph_count];
    for (&(line, _), &g) in indicator_file.rows.iter().zip(&indicator) {
        if g < 1 || g as usize > graph_count {
            return Err(indicator_file.err(line, format!("graph id {g} outside 1..={graph_count}")));
        }
        let g = g as usize - 1;
        node_graph.push(g);
        local.push(sizes[g]);
        sizes[g] += 1;
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); graph_count];
    for (line, text) in &edges_file.rows {
        let toks = edges_file.tokens(*line, text)?;
        if toks.len() != 2 {
            return Err(edges_file.err(*line, format!("expected `i, j`, found {} values", toks.len())));
        }
        let mut ends = [0usize; 2];
        for (slot, tok) in ends.iter_mut().zip(&toks) {
            let v: usize = tok
                .parse()
                .map_err(|_| edges_file.err(*line, format!("non-numeric token `{tok}`")))?;
            if v == 0 || v > node_graph.len() {
                return Err(edges_file.err(*line, format!("node {v} outside 1..={}", node_graph.len())));
            }
            *slot = v - 1;
        }
        let (a, b) = (ends[0], ends[1]);
        if node_graph[a] != node_graph[b] {
            return Err(edges_file.err(
                *line,
                format!("edge joins graph {} and graph {}", node_graph[a] + 1, node_graph[b] + 1),
            ));
        }
        edges[node_graph[a]].push((local[a], local[b]));
    }

    let node_count = node_graph.len();
    let mut blocks: Vec<Tensor> = Vec::new();
    if let Some(f) = Lines::read(file_path(dir, name, "node_labels"), false)? {
        let raw = f.integers()?;
        if raw.len() != node_count {
            return Err(TuError::Inconsistent {
                path: f.path,
                msg: format!("{} node labels for {node_count} nodes", raw.len()),
            });
        }
        let (codes, width) = dense_codes(&raw);
        let mut x = Tensor::zeros(node_count, width);
        for (i, &c) in codes.iter().enumerate() {
            x.set(i, c, 1.0);
        }
        blocks.push(x);
    }
    if let Some(f) = Lines::read(file_path(dir, name, "node_attributes"), false)? {
        let mut rows = Vec::with_capacity(f.rows.len());
        for (line, text) in &f.rows {
            let row = f
                .tokens(*line, text)?
                .iter()
                .map(|t| t.parse::<f64>().map_err(|_| f.err(*line, format!("non-numeric token `{t}`"))))
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = rows.first().map(Vec::len) {
                if row.len() != first {
                    return Err(f.err(*line, format!("expected {first} attributes, found {}", row.len())));
                }
            }
            rows.push(row);
        }
        if rows.len() != node_count {
            return Err(TuError::Inconsistent {
                path: f.path,
                msg: format!("{} attribute rows for {node_count} nodes", rows.len()),
            });
        }
        blocks.push(Tensor::from_rows(&rows)?);
    }
    if blocks.is_empty() {
        blocks.push(Tensor::full(node_count, 1, 1.0));
    }
    let width: usize = blocks.iter().map(Tensor::cols).sum();

    let (labels, class_count) = dense_codes(&graph_labels);
    let mut per_graph_rows: Vec<Vec<usize>> = vec![Vec::new(); graph_count];
    for (node, &g) in node_graph.iter().enumerate() {
        per_graph_rows[g].push(node);
    }
    let mut graphs = Vec::with_capacity(graph_count);
    for g in 0..graph_count {
        let rows = &per_graph_rows[g];
        let mut x = Tensor::zeros(rows.len(), width);
        for (r, &node) in rows.iter().enumerate() {
            let mut c = 0;
            for b in &blocks {
                x.row_mut(r)[c..c + b.cols()].copy_from_slice(b.row(node));
                c += b.cols();
            }
        }
        graphs.push(LabeledGraph {
            graph: Graph::new(rows.len(), symmetrize(&edges[g]), x)?,
            label: labels[g],
        });
    }
    Ok(GraphDataset::new(name, graphs, class_count)?)
}

/// Drops repeated edges and appends each missing reverse direction.
fn symmetrize(edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut seen = BTreeSet::new();
    let mut out: Vec<(usize, usize)> = edges.iter().copied().filter(|e| seen.insert(*e)).collect();
    let forward = out.len();
    for k in 0..forward {
        let (s, d) = out[k];
        if seen.insert((d, s)) {
            out.push((d, s));
        }
    }
    out
}

/// Writes `ds` under `dir` using `ds.name` as the file prefix. Features go to
/// the attribute file and graph labels are written as their dense codes.
pub fn write_tu_dataset(ds: &GraphDataset, dir: &Path) -> Result<()> {
    let io = |path: PathBuf| move |source| TuError::Io { path, source };
    fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let mut a = String::new();
    let mut indicator = String::new();
    let mut labels = String::new();
    let mut attrs = String::new();
    let mut offset = 0usize;
    for (gi, lg) in ds.graphs.iter().enumerate() {
        let g = &lg.graph;
        for &(s, d) in g.edges() {
            a.push_str(&format!("{}, {}\n", offset + s + 1, offset + d + 1));
        }
        for r in 0..g.node_count() {
            indicator.push_str(&format!("{}\n", gi + 1));
            let row: Vec<String> = g.features().row(r).iter().map(f64::to_string).collect();
            attrs.push_str(&row.join(", "));
            attrs.push('\n');
        }
        labels.push_str(&format!("{}\n", lg.label));
        offset += g.node_count();
    }
    for (suffix, body) in [
        ("A", a),
        ("graph_indicator", indicator),
        ("graph_labels", labels),
        ("node_attributes", attrs),
    ] {
        let path = file_path(dir, &ds.name, suffix);
        fs::write(&path, body).map_err(io(path.clone()))?;
    }
    Ok(())
}
