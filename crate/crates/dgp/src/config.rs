//! Experiment configuration: a flat UTF-8 `key = value` file, `#` starts a comment.
//!
//! Every key is optional. Relative paths are resolved against the directory
//! holding the config file. See [`KEYS`] for the full list.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dgp_core::dgp::DgpConfig;
use dgp_core::encoder::GinArch;
use dgp_core::graph::DEFAULT_MAX_DEGREE;
use dgp_core::grid::GridSpec;
use dgp_core::pretrain::PretrainConfig;
use dgp_core::synth::{MotifSpec, SynthIdSpec, SynthOodSpec};

use crate::output::Origin;
use crate::tu;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("key `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Every recognised key.
pub const KEYS: &[&str] = &[
    "seed",
    "out",
    "id.tu_dir",
    "id.tu_name",
    "id.classes",
    "id.per_class",
    "id.motifs_per_graph",
    "id.background_min",
    "id.background_max",
    "id.bg_density",
    "ood.tu_dir",
    "ood.tu_name",
    "ood.count",
    "ood.motifs_per_graph",
    "ood.background_min",
    "ood.background_max",
    "ood.bg_density",
    "ood.density_factor",
    "ood.star_leaves",
    "features",
    "max_degree",
    "encoder.layers",
    "encoder.hidden",
    "encoder.proj_dim",
    "encoder.pooling",
    "pretrain.method",
    "pretrain.temperature",
    "pretrain.batch_size",
    "pretrain.epochs",
    "pretrain.lr",
    "pretrain.eta",
    "pretrain.augment1",
    "pretrain.augment2",
    "dgp.lambda",
    "dgp.gamma",
    "dgp.alpha1",
    "dgp.alpha2",
    "dgp.lr",
    "dgp.epochs",
    "dgp.batch_size",
    "dgp.variant",
    "dgp.distance_target",
    "dgp.patience",
    "scorer.clusters",
    "scorer.eps_reg",
    "scorer.eps_d",
    "grid.lambda",
    "grid.gamma",
    "grid.alpha1",
    "grid.alpha2",
    "grid.lr",
    "encoder",
    "model",
    "scores",
    "data.tu_dir",
    "data.tu_name",
    "data.origin",
];

/// Where graphs come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source<S> {
    Synthetic(S),
    Tu { dir: PathBuf, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Featurizer {
    /// Clamped degree one-hots.
    Degree,
    /// Features as stored in the dataset files.
    Raw,
}

impl Featurizer {
    fn as_str(self) -> &'static str {
        match self {
            Featurizer::Degree => "degree",
            Featurizer::Raw => "raw",
        }
    }
}

impl FromStr for Featurizer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "degree" => Ok(Featurizer::Degree),
            "raw" => Ok(Featurizer::Raw),
            other => Err(format!("unknown featurizer `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub id: Source<SynthIdSpec>,
    pub ood: Source<SynthOodSpec>,
    pub features: Featurizer,
    pub max_degree: usize,
    /// Encoder shape; `feature_dim` is taken from the data.
    pub arch: GinArch,
    pub pretrain: PretrainConfig,
    pub dgp: DgpConfig,
    pub grid: GridSpec,
    pub encoder_path: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    pub scores_path: Option<PathBuf>,
    /// A dataset scored or dumped instead of the test split.
    pub data: Option<(PathBuf, String)>,
    /// Origin recorded for graphs of `data`.
    pub data_origin: Origin,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            id: Source::Synthetic(SynthIdSpec::default()),
            ood: Source::Synthetic(SynthOodSpec::default()),
            features: Featurizer::Degree,
            max_degree: DEFAULT_MAX_DEGREE,
            arch: GinArch::new(1),
            pretrain: PretrainConfig::default(),
            dgp: DgpConfig::default(),
            grid: GridSpec::default(),
            encoder_path: None,
            model_path: None,
            scores_path: None,
            data: None,
            data_origin: Origin::Id,
        }
    }
}

/// Raw `key = value` pairs with the line each came from.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            msg: format!("expected `key = value`, found `{body}`"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("unknown key `{k}`"),
            });
        }
        if out.insert(k.to_owned(), (line, v.to_owned())).is_some() {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("duplicate key `{k}`"),
            });
        }
    }
    Ok(out)
}

struct Reader {
    pairs: BTreeMap<String, (usize, String)>,
    base: PathBuf,
}

impl Reader {
    fn any_with_prefix(&self, prefix: &str, except: &[&str]) -> Option<&str> {
        self.pairs
            .keys()
            .find(|k| k.starts_with(prefix) && !except.contains(&k.as_str()))
            .map(String::as_str)
    }

    fn get<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some((_, v)) = self.pairs.get(key) {
            *slot = v.parse().map_err(|e: T::Err| ConfigError::Value {
                key: key.to_owned(),
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    fn list(&self, key: &str, slot: &mut Vec<f64>) -> Result<()> {
        if let Some((_, v)) = self.pairs.get(key) {
            let parsed = v
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| ConfigError::Value {
                    key: key.to_owned(),
                    msg: e.to_string(),
                })?;
            if parsed.is_empty() {
                return Err(ConfigError::Value {
                    key: key.to_owned(),
                    msg: "empty list".into(),
                });
            }
            *slot = parsed;
        }
        Ok(())
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.pairs.get(key).map(|(_, v)| self.base.join(v))
    }

    fn tu(&self, side: &str) -> Result<Option<(PathBuf, String)>> {
        let dir_key = format!("{side}.tu_dir");
        let name_key = format!("{side}.tu_name");
        match (self.path(&dir_key), self.pairs.get(&name_key)) {
            (None, None) => Ok(None),
            (Some(dir), Some((_, name))) => Ok(Some((dir, name.clone()))),
            _ => Err(ConfigError::Invalid(format!("`{dir_key}` and `{name_key}` must be given together"))),
        }
    }
}

fn motif(r: &Reader, side: &str, m: &mut MotifSpec) -> Result<()> {
    r.get(&format!("{side}.motifs_per_graph"), &mut m.motifs_per_graph)?;
    r.get(&format!("{side}.background_min"), &mut m.background_min)?;
    r.get(&format!("{side}.background_max"), &mut m.background_max)
}

fn check_tu(dir: &Path, name: &str) -> Result<()> {
    for suffix in ["A", "graph_indicator", "graph_labels"] {
        let p = tu::file_path(dir, name, suffix);
        if !p.is_file() {
            return Err(ConfigError::Invalid(format!("dataset file {} does not exist", p.display())));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let full = std::path::absolute(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = full.parent().unwrap_or(Path::new("/"));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let r = Reader {
            pairs: parse_pairs(text)?,
            base: base.to_path_buf(),
        };
        let mut c = ExperimentConfig::default();
        r.get("seed", &mut c.seed)?;
        c.out = r.path("out").unwrap_or_else(|| base.join("out"));
        r.get("features", &mut c.features)?;
        r.get("max_degree", &mut c.max_degree)?;

        let tu_keys = ["id.tu_dir", "id.tu_name"];
        c.id = match r.tu("id")? {
            Some((dir, name)) => {
                if let Some(k) = r.any_with_prefix("id.", &tu_keys) {
                    return Err(ConfigError::Invalid(format!("`{k}` conflicts with a TU dataset for the ID side")));
                }
                check_tu(&dir, &name)?;
                Source::Tu { dir, name }
            }
            None => {
                let mut s = SynthIdSpec {
                    max_degree: c.max_degree,
                    ..SynthIdSpec::default()
                };
                r.get("id.classes", &mut s.classes)?;
                r.get("id.per_class", &mut s.per_class)?;
                r.get("id.bg_density", &mut s.bg_density)?;
                motif(&r, "id", &mut s.motif)?;
                Source::Synthetic(s)
            }
        };
        let tu_keys = ["ood.tu_dir", "ood.tu_name"];
        c.ood = match r.tu("ood")? {
            Some((dir, name)) => {
                if let Some(k) = r.any_with_prefix("ood.", &tu_keys) {
                    return Err(ConfigError::Invalid(format!("`{k}` conflicts with a TU dataset for the OOD side")));
                }
                check_tu(&dir, &name)?;
                Source::Tu { dir, name }
            }
            None => {
                let mut s = SynthOodSpec {
                    max_degree: c.max_degree,
                    ..SynthOodSpec::default()
                };
                r.get("ood.count", &mut s.count)?;
                r.get("ood.bg_density", &mut s.bg_density)?;
                r.get("ood.density_factor", &mut s.density_factor)?;
                r.get("ood.star_leaves", &mut s.star_leaves)?;
                motif(&r, "ood", &mut s.motif)?;
                Source::Synthetic(s)
            }
        };
        let synthetic = matches!(c.id, Source::Synthetic(_)) || matches!(c.ood, Source::Synthetic(_));
        if synthetic && c.features == Featurizer::Raw {
            return Err(ConfigError::Invalid("synthetic graphs only carry degree features".into()));
        }

        r.get("encoder.layers", &mut c.arch.layers)?;
        r.get("encoder.hidden", &mut c.arch.hidden)?;
        r.get("encoder.proj_dim", &mut c.arch.proj_dim)?;
        r.get("encoder.pooling", &mut c.arch.pooling)?;

        let p = &mut c.pretrain;
        r.get("pretrain.method", &mut p.method)?;
        r.get("pretrain.temperature", &mut p.temperature)?;
        r.get("pretrain.batch_size", &mut p.batch_size)?;
        r.get("pretrain.epochs", &mut p.epochs)?;
        r.get("pretrain.lr", &mut p.lr)?;
        r.get("pretrain.eta", &mut p.eta)?;
        r.get("pretrain.augment1", &mut p.augmentations.0)?;
        r.get("pretrain.augment2", &mut p.augmentations.1)?;
        p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let d = &mut c.dgp;
        r.get("dgp.lambda", &mut d.lambda)?;
        r.get("dgp.gamma", &mut d.gamma)?;
        r.get("dgp.alpha1", &mut d.alpha1)?;
        r.get("dgp.alpha2", &mut d.alpha2)?;
        r.get("dgp.lr", &mut d.lr)?;
        r.get("dgp.epochs", &mut d.epochs)?;
        r.get("dgp.batch_size", &mut d.batch_size)?;
        r.get("dgp.variant", &mut d.variant)?;
        r.get("dgp.distance_target", &mut d.distance_target)?;
        let mut patience = 0usize;
        r.get("dgp.patience", &mut patience)?;
        d.patience = (patience > 0).then_some(patience);
        r.get("scorer.clusters", &mut d.scorer.clusters)?;
        r.get("scorer.eps_reg", &mut d.scorer.eps_reg)?;
        r.get("scorer.eps_d", &mut d.scorer.eps_d)?;
        d.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        r.list("grid.lambda", &mut c.grid.lambda)?;
        r.list("grid.gamma", &mut c.grid.gamma)?;
        r.list("grid.alpha1", &mut c.grid.alpha1)?;
        r.list("grid.alpha2", &mut c.grid.alpha2)?;
        r.list("grid.lr", &mut c.grid.lr)?;

        c.encoder_path = r.path("encoder");
        c.model_path = r.path("model");
        c.scores_path = r.path("scores");
        c.data = r.tu("data")?;
        if let Some((dir, name)) = &c.data {
            check_tu(dir, name)?;
        }
        r.get("data.origin", &mut c.data_origin)?;
        Ok(c)
    }

    pub fn encoder_file(&self) -> PathBuf {
        self.encoder_path.clone().unwrap_or_else(|| self.out.join("encoder.ckpt"))
    }

    pub fn model_file(&self) -> PathBuf {
        self.model_path.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    pub fn scores_file(&self) -> PathBuf {
        self.scores_path.clone().unwrap_or_else(|| self.out.join("scores.csv"))
    }

    /// Every key with its effective value, in [`KEYS`] order. Feeding the
    /// rendered text back through [`ExperimentConfig::parse`] reproduces `self`.
    pub fn effective(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let path = |p: &Path| p.display().to_string();
        let mut out: Vec<(&'static str, String)> = vec![("seed", self.seed.to_string()), ("out", path(&self.out))];
        match &self.id {
            Source::Tu { dir, name } => {
                out.push(("id.tu_dir", path(dir)));
                out.push(("id.tu_name", name.clone()));
            }
            Source::Synthetic(s) => {
                out.push(("id.classes", s.classes.to_string()));
                out.push(("id.per_class", s.per_class.to_string()));
                out.push(("id.motifs_per_graph", s.motif.motifs_per_graph.to_string()));
                out.push(("id.background_min", s.motif.background_min.to_string()));
                out.push(("id.background_max", s.motif.background_max.to_string()));
                out.push(("id.bg_density", s.bg_density.to_string()));
            }
        }
        match &self.ood {
            Source::Tu { dir, name } => {
                out.push(("ood.tu_dir", path(dir)));
                out.push(("ood.tu_name", name.clone()));
            }
            Source::Synthetic(s) => {
                out.push(("ood.count", s.count.to_string()));
                out.push(("ood.motifs_per_graph", s.motif.motifs_per_graph.to_string()));
                out.push(("ood.background_min", s.motif.background_min.to_string()));
                out.push(("ood.background_max", s.motif.background_max.to_string()));
                out.push(("ood.bg_density", s.bg_density.to_string()));
                out.push(("ood.density_factor", s.density_factor.to_string()));
                out.push(("ood.star_leaves", s.star_leaves.to_string()));
            }
        }
        let p = &self.pretrain;
        let d = &self.dgp;
        out.extend([
            ("features", self.features.as_str().to_owned()),
            ("max_degree", self.max_degree.to_string()),
            ("encoder.layers", self.arch.layers.to_string()),
            ("encoder.hidden", self.arch.hidden.to_string()),
            ("encoder.proj_dim", self.arch.proj_dim.to_string()),
            ("encoder.pooling", self.arch.pooling.as_str().to_owned()),
            ("pretrain.method", p.method.as_str().to_owned()),
            ("pretrain.temperature", p.temperature.to_string()),
            ("pretrain.batch_size", p.batch_size.to_string()),
            ("pretrain.epochs", p.epochs.to_string()),
            ("pretrain.lr", p.lr.to_string()),
            ("pretrain.eta", p.eta.to_string()),
            ("pretrain.augment1", p.augmentations.0.to_spec()),
            ("pretrain.augment2", p.augmentations.1.to_spec()),
            ("dgp.lambda", d.lambda.to_string()),
            ("dgp.gamma", d.gamma.to_string()),
            ("dgp.alpha1", d.alpha1.to_string()),
            ("dgp.alpha2", d.alpha2.to_string()),
            ("dgp.lr", d.lr.to_string()),
            ("dgp.epochs", d.epochs.to_string()),
            ("dgp.batch_size", d.batch_size.to_string()),
            ("dgp.variant", d.variant.as_str().to_owned()),
            ("dgp.distance_target", d.distance_target.as_str().to_owned()),
            ("dgp.patience", d.patience.unwrap_or(0).to_string()),
            ("scorer.clusters", d.scorer.clusters.to_string()),
            ("scorer.eps_reg", d.scorer.eps_reg.to_string()),
            ("scorer.eps_d", d.scorer.eps_d.to_string()),
            ("grid.lambda", list(&self.grid.lambda)),
            ("grid.gamma", list(&self.grid.gamma)),
            ("grid.alpha1", list(&self.grid.alpha1)),
            ("grid.alpha2", list(&self.grid.alpha2)),
            ("grid.lr", list(&self.grid.lr)),
        ]);
        for (key, p) in [
            ("encoder", &self.encoder_path),
            ("model", &self.model_path),
            ("scores", &self.scores_path),
        ] {
            if let Some(p) = p {
                out.push((key, path(p)));
            }
        }
        if let Some((dir, name)) = &self.data {
            out.push(("data.tu_dir", path(dir)));
            out.push(("data.tu_name", name.clone()));
            out.push(("data.origin", self.data_origin.as_str().to_owned()));
        }
        out.sort_by_key(|(k, _)| KEYS.iter().position(|x| x == k));
        out
    }

    pub fn render(&self) -> String {
        self.effective().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
