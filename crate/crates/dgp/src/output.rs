//! Score tables, metrics JSON and the small CSV reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dgp_core::dgp::GraphScore;
use dgp_core::metrics::DetectionMetrics;

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] dgp_core::Error),
}

type Result<T> = std::result::Result<T, OutputError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Creates the parent directory of `path` when needed.
pub fn ensure_parent(path: &Path) -> std::io::Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Id => "ID",
            Origin::Ood => "OOD",
        }
    }

    /// Graph id of the `index`-th graph of this origin's dataset.
    pub fn graph_id(self, index: usize) -> String {
        match self {
            Origin::Id => format!("id-{index}"),
            Origin::Ood => format!("ood-{index}"),
        }
    }
}

impl std::str::FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "id" => Ok(Origin::Id),
            "ood" => Ok(Origin::Ood),
            other => Err(format!("unknown origin `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub graph_id: String,
    pub origin: Origin,
    pub score: f64,
    pub md1: f64,
    pub md2: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Appends one row per score; `index[k]` is the dataset index of `scores[k]`.
    pub fn extend(&mut self, origin: Origin, index: &[usize], scores: &[GraphScore]) {
        self.rows.extend(index.iter().zip(scores).map(|(&i, s)| ScoreRow {
            graph_id: origin.graph_id(i),
            origin,
            score: s.score,
            md1: s.md1,
            md2: s.md2,
        }));
    }

    /// Scores split by origin.
    pub fn by_origin(&self) -> (Vec<f64>, Vec<f64>) {
        let pick = |o: Origin| self.rows.iter().filter(|r| r.origin == o).map(|r| r.score).collect();
        (pick(Origin::Id), pick(Origin::Ood))
    }

    pub fn metrics(&self) -> Result<DetectionMetrics> {
        let (id, ood) = self.by_origin();
        Ok(DetectionMetrics::compute(&id, &ood)?)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.rows {
            if !seen.insert(r.graph_id.as_str()) {
                return Err(OutputError::Invalid(format!("duplicate graph_id `{}`", r.graph_id)));
            }
            if !(r.score.is_finite() && r.md1.is_finite() && r.md2.is_finite()) {
                return Err(OutputError::Invalid(format!("non-finite score for `{}`", r.graph_id)));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.validate()?;
        ensure_parent(path).map_err(io_err(path))?;
        let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
        for r in &self.rows {
            w.serialize(r).map_err(csv_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let headers = r.headers().map_err(csv_err(path))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["graph_id", "origin", "score", "md1", "md2"] {
            return Err(OutputError::Invalid(format!(
                "{}: expected header graph_id,origin,score,md1,md2",
                path.display()
            )));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ScoreRow>, _>>()
            .map_err(csv_err(path))?;
        let table = Self { rows };
        table.validate()?;
        Ok(table)
    }
}

/// The metrics JSON document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub auc: f64,
    pub aupr: f64,
    pub fpr95: f64,
    pub overlap: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

impl From<DetectionMetrics> for MetricsDoc {
    fn from(m: DetectionMetrics) -> Self {
        Self {
            auc: m.auc,
            aupr: m.aupr,
            fpr95: m.fpr95,
            overlap: m.overlap,
            n_id: m.n_id,
            n_ood: m.n_ood,
        }
    }
}

impl MetricsDoc {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path).map_err(io_err(path))?;
    fs::write(path, text).map_err(io_err(path))
}

/// Writes serializable records as CSV with a header row.
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    ensure_parent(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in records {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(csv_err(path))
}
