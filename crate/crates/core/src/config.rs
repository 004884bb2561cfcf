//! Experiment config files: flat `key = value` lines, `#` starts a comment.
//!
//! ```text
//! # corpus
//! train = data/train.txt
//! dev = data/dev.txt
//! test = data/test.txt
//! token_col = 0
//! label_col = 1
//! task = pos
//! flavors = c, u, cu, cu50
//! seed = 7
//! tagger.hidden = 64
//! tagger.embeddings = trainable:64
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::OovPolicy;
use crate::flavors::Flavor;
use crate::metrics::MetricKind;
use crate::tagger::{EmbeddingSource, Head, TaggerConfig};
use crate::truecaser::TruecaserConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("config key `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("config is missing `{0}`")]
    Missing(&'static str),
    #[error("config path for `{key}` does not exist: {path}")]
    MissingPath { key: String, path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Pos,
    Ner,
    Truecase,
}

impl Task {
    pub fn default_metric(self) -> MetricKind {
        match self {
            Task::Ner => MetricKind::SpanF1,
            Task::Pos | Task::Truecase => MetricKind::TokenAccuracy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Matrix,
    Encodings,
    Datasets,
    CrfAblation,
}

impl TableKind {
    pub fn file_stem(self) -> &'static str {
        match self {
            TableKind::Matrix => "flavor_matrix",
            TableKind::Encodings => "encodings",
            TableKind::Datasets => "datasets",
            TableKind::CrfAblation => "crf_ablation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPaths {
    pub name: String,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetPaths,
    pub token_col: usize,
    pub label_col: usize,
    pub task: Task,
    pub metric: MetricKind,
    pub flavors: Vec<Flavor>,
    pub seed: u64,
    pub tagger: TaggerConfig,
    pub truecaser: TruecaserConfig,
    /// Pretrained truecaser for TT and TA; trained on the train split when
    /// absent.
    pub truecaser_model: Option<PathBuf>,
    pub tables: Vec<TableKind>,
    pub encodings: Vec<EmbeddingSource>,
    pub extra_datasets: Vec<DatasetPaths>,
    /// Every key/value as read, for manifests.
    pub raw: BTreeMap<String, String>,
}

const KEYS: &[&str] = &[
    "train",
    "dev",
    "test",
    "name",
    "token_col",
    "label_col",
    "task",
    "metric",
    "flavors",
    "seed",
    "truecaser",
    "tables",
    "encodings",
    "datasets",
    "tagger.hidden",
    "tagger.embeddings",
    "tagger.head",
    "tagger.lstm_dropout",
    "tagger.recurrent_dropout",
    "tagger.learning_rate",
    "tagger.max_epochs",
    "tagger.min_delta",
    "tagger.patience",
    "tagger.batch_size",
    "tagger.oov_rate",
    "truecaser.hidden_size",
    "truecaser.layers",
    "truecaser.batch_size",
    "truecaser.epochs",
    "truecaser.learning_rate",
    "truecaser.oov",
    "truecaser.oov_rate",
];

/// Splits the file into key/value pairs. Later duplicates are an error.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |msg: String| ConfigError::Syntax { line: i + 1, msg };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| syntax("expected `key = value`".into()))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(syntax("empty key".into()));
        }
        if !KEYS.contains(&k) {
            return Err(syntax(format!("unknown key `{k}`")));
        }
        if out.insert(k.to_owned(), v.to_owned()).is_some() {
            return Err(syntax(format!("duplicate key `{k}`")));
        }
    }
    Ok(out)
}

fn value_err(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_owned(),
        msg: msg.into(),
    }
}

fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    map.get(key)
        .map(|v| v.parse::<T>().map_err(|e| value_err(key, e.to_string())))
        .transpose()
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl ExperimentConfig {
    /// Parses a config; relative paths are taken relative to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let map = parse_pairs(text)?;
        let path = |key: &'static str| -> Result<PathBuf, ConfigError> {
            let v = map.get(key).ok_or(ConfigError::Missing(key))?;
            Ok(base.join(v))
        };
        let dataset = DatasetPaths {
            name: map.get("name").cloned().unwrap_or_else(|| "default".into()),
            train: path("train")?,
            dev: path("dev")?,
            test: path("test")?,
        };
        let task = match map.get("task").map(String::as_str) {
            None | Some("pos") => Task::Pos,
            Some("ner") => Task::Ner,
            Some("truecase") => Task::Truecase,
            Some(other) => return Err(value_err("task", format!("unknown task `{other}`"))),
        };
        let metric = get::<MetricKind>(&map, "metric")?.unwrap_or(task.default_metric());
        let flavors = match map.get("flavors") {
            Some(v) => list(v)
                .map(|f| f.parse::<Flavor>().map_err(|e| value_err("flavors", e.to_string())))
                .collect::<Result<Vec<_>, _>>()?,
            None => Flavor::ALL.to_vec(),
        };
        if flavors.is_empty() {
            return Err(value_err("flavors", "no flavors listed"));
        }
        let seed = get::<u64>(&map, "seed")?.ok_or(ConfigError::Missing("seed"))?;

        let mut tagger = TaggerConfig::default();
        if let Some(v) = get(&map, "tagger.hidden")? {
            tagger.hidden_units = v;
        }
        if let Some(v) = map.get("tagger.embeddings") {
            tagger.embeddings = v.parse().map_err(|e: String| value_err("tagger.embeddings", e))?;
        }
        if let Some(v) = map.get("tagger.head") {
            tagger.head = v.parse::<Head>().map_err(|e| value_err("tagger.head", e))?;
        }
        if let Some(v) = get(&map, "tagger.lstm_dropout")? {
            tagger.lstm_dropout = v;
        }
        if let Some(v) = get(&map, "tagger.recurrent_dropout")? {
            tagger.recurrent_dropout = v;
        }
        if let Some(v) = get(&map, "tagger.learning_rate")? {
            tagger.learning_rate = v;
        }
        if let Some(v) = get(&map, "tagger.max_epochs")? {
            tagger.max_epochs = v;
        }
        if let Some(v) = get(&map, "tagger.min_delta")? {
            tagger.min_delta = v;
        }
        if let Some(v) = get(&map, "tagger.patience")? {
            tagger.patience = v;
        }
        if let Some(v) = get(&map, "tagger.batch_size")? {
            tagger.batch_size = v;
        }
        if let Some(v) = get::<f64>(&map, "tagger.oov_rate")? {
            tagger.oov = OovPolicy::new(tagger.oov.kind, v).map_err(|e| value_err("tagger.oov_rate", e.to_string()))?;
        }
        tagger
            .validate()
            .map_err(|e| value_err("tagger", e.to_string()))?;

        let mut truecaser = TruecaserConfig::default();
        if let Some(v) = get(&map, "truecaser.hidden_size")? {
            truecaser.hidden_size = v;
        }
        if let Some(v) = get(&map, "truecaser.layers")? {
            truecaser.layers = v;
        }
        if let Some(v) = get(&map, "truecaser.batch_size")? {
            truecaser.batch_size = v;
        }
        if let Some(v) = get(&map, "truecaser.epochs")? {
            truecaser.epochs = v;
        }
        if let Some(v) = get(&map, "truecaser.learning_rate")? {
            truecaser.learning_rate = v;
        }
        let oov_rate = get::<f64>(&map, "truecaser.oov_rate")?.unwrap_or(truecaser.oov.rate);
        let oov_kind = match map.get("truecaser.oov").map(String::as_str) {
            None => truecaser.oov.kind,
            Some(v) => v.parse().map_err(|e: String| value_err("truecaser.oov", e))?,
        };
        truecaser.oov = OovPolicy::new(oov_kind, oov_rate).map_err(|e| value_err("truecaser.oov_rate", e.to_string()))?;
        truecaser
            .validate()
            .map_err(|e| value_err("truecaser", e.to_string()))?;

        let tables = match map.get("tables") {
            None => vec![TableKind::Matrix],
            Some(v) => list(v)
                .map(|t| match t {
                    "matrix" => Ok(TableKind::Matrix),
                    "encodings" => Ok(TableKind::Encodings),
                    "datasets" => Ok(TableKind::Datasets),
                    "crf-ablation" => Ok(TableKind::CrfAblation),
                    other => Err(value_err("tables", format!("unknown table `{other}`"))),
                })
                .collect::<Result<_, _>>()?,
        };
        let encodings = match map.get("encodings") {
            None => Vec::new(),
            Some(v) => list(v)
                .map(|e| match e.parse::<EmbeddingSource>() {
                    Ok(EmbeddingSource::StaticFile { path }) => Ok(EmbeddingSource::StaticFile { path: base.join(path) }),
                    Ok(other) => Ok(other),
                    Err(msg) => Err(value_err("encodings", msg)),
                })
                .collect::<Result<_, _>>()?,
        };
        if tables.contains(&TableKind::Encodings) && encodings.is_empty() {
            return Err(ConfigError::Missing("encodings"));
        }
        let extra_datasets = match map.get("datasets") {
            None => Vec::new(),
            Some(v) => v
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|entry| {
                    let bad = || value_err("datasets", format!("expected name:train|dev|test, got `{entry}`"));
                    let (name, files) = entry.split_once(':').ok_or_else(bad)?;
                    let parts: Vec<&str> = files.split('|').map(str::trim).collect();
                    if parts.len() != 3 || name.trim().is_empty() {
                        return Err(bad());
                    }
                    Ok(DatasetPaths {
                        name: name.trim().to_owned(),
                        train: base.join(parts[0]),
                        dev: base.join(parts[1]),
                        test: base.join(parts[2]),
                    })
                })
                .collect::<Result<_, _>>()?,
        };
        if tables.contains(&TableKind::Datasets) && extra_datasets.is_empty() {
            return Err(ConfigError::Missing("datasets"));
        }
        let config = ExperimentConfig {
            dataset,
            token_col: get(&map, "token_col")?.unwrap_or(0),
            label_col: get(&map, "label_col")?.unwrap_or(1),
            task,
            metric,
            flavors,
            seed,
            tagger,
            truecaser,
            truecaser_model: map.get("truecaser").map(|p| base.join(p)),
            tables,
            encodings,
            extra_datasets,
            raw: map,
        };
        config.check_paths()?;
        Ok(config)
    }

    fn check_paths(&self) -> Result<(), ConfigError> {
        let mut paths: Vec<(String, &Path)> = Vec::new();
        for d in std::iter::once(&self.dataset).chain(&self.extra_datasets) {
            paths.push((format!("{}.train", d.name), &d.train));
            paths.push((format!("{}.dev", d.name), &d.dev));
            paths.push((format!("{}.test", d.name), &d.test));
        }
        if let Some(p) = &self.truecaser_model {
            paths.push(("truecaser".into(), p));
        }
        for e in &self.encodings {
            if let EmbeddingSource::StaticFile { path } = e {
                paths.push(("encodings".into(), path));
            }
        }
        for (key, p) in paths {
            if !p.exists() {
                return Err(ConfigError::MissingPath {
                    key,
                    path: p.display().to_string(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn files() -> tempfile::TempDir {
        let d = tempfile::tempdir().unwrap();
        for f in ["tr", "dv", "te"] {
            std::fs::write(d.path().join(f), "a X\n").unwrap();
        }
        d
    }

    #[test]
    fn pairs_and_comments() {
        let m = parse_pairs("# hi\nseed = 3  # trailing\n\n tagger.head=softmax\n").unwrap();
        assert_eq!(m["seed"], "3");
        assert_eq!(m["tagger.head"], "softmax");
        assert!(matches!(parse_pairs("seed 3"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_pairs("bogus = 1"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse_pairs("seed=1\nseed=2"), Err(ConfigError::Syntax { line: 2, .. })));
    }

    #[test]
    fn full_config() {
        let d = files();
        let text = "train = tr\ndev = dv\ntest = te\nflavors = c, cu50\nseed = 9\ntagger.hidden = 16\n\
                    tagger.head = softmax\ntables = matrix, crf-ablation\ntruecaser.oov = stochastic_at_read\n";
        let c = ExperimentConfig::parse(text, d.path()).unwrap();
        assert_eq!(c.flavors, vec![Flavor::C, Flavor::CPlusU50]);
        assert_eq!(c.seed, 9);
        assert_eq!(c.tagger.hidden_units, 16);
        assert_eq!(c.tagger.head, Head::Softmax);
        assert_eq!(c.tables, vec![TableKind::Matrix, TableKind::CrfAblation]);
        assert_eq!(c.metric, MetricKind::TokenAccuracy);
        assert_eq!(c.truecaser.oov.kind, crate::corpus::OovKind::StochasticAtRead);
    }

    #[test]
    fn seed_is_mandatory() {
        let d = files();
        let r = ExperimentConfig::parse("train = tr\ndev = dv\ntest = te\n", d.path());
        assert_eq!(r.unwrap_err(), ConfigError::Missing("seed"));
    }

    #[test]
    fn paths_must_exist() {
        let d = files();
        let r = ExperimentConfig::parse("train = nope\ndev = dv\ntest = te\nseed = 1\n", d.path());
        assert!(matches!(r, Err(ConfigError::MissingPath { .. })));
    }

    #[test]
    fn flavors_must_be_listed() {
        let d = files();
        let r = ExperimentConfig::parse("train = tr\ndev = dv\ntest = te\nseed = 1\nflavors = ,\n", d.path());
        assert!(matches!(r, Err(ConfigError::Value { .. })));
    }
}
