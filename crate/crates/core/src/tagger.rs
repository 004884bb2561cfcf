//! Word-level sequence tagger: embeddings, one BiLSTM layer, a per-step
//! dense layer, and a softmax or CRF head.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde_json::json;
use thiserror::Error;

use crate::corpus::{
    encode_chars, encode_units, unit_counts, vocabulary_from_counts, CorpusError, EncodeMode, OovPolicy, Sentence,
    UnitKind, Vocabulary,
};
use crate::crf::{self, CrfParams};
use crate::flavors::{self, CaseRestorer, FlavorError, Flavor, FlavoredDataset};
use crate::metrics::{self, EvalReport, MetricKind, MetricsError, ReportRow};
use crate::nn::layers::time_major;
use crate::nn::params::{container_bytes, read_container};
use crate::nn::{
    AdamConfig, AdamState, BiLstm, Dense, Dropout, Embedding, Graph, Mode, NnError, ParamStore, Tensor, Var,
};
use crate::rng::{self, Rng};

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("label `{0}` is not in the model's label index")]
    UnknownLabel(String),
    #[error("invalid tagger config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss in epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("embeddings line {0}: vector length differs from the first line")]
    RaggedDimensions(usize),
    #[error("embeddings line {line}: {msg}")]
    EmbeddingsFormat { line: usize, msg: String },
    #[error("embeddings file is empty")]
    EmptyFile,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Flavor(#[from] FlavorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad tagger model: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Softmax,
    Crf,
}

impl Head {
    pub fn code(self) -> &'static str {
        match self {
            Head::Softmax => "softmax",
            Head::Crf => "crf",
        }
    }
}

impl std::str::FromStr for Head {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softmax" => Ok(Head::Softmax),
            "crf" => Ok(Head::Crf),
            _ => Err(format!("unknown head `{s}` (expected crf or softmax)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    Trainable { dim: usize },
    StaticFile { path: PathBuf },
    TrainablePlusChar { word_dim: usize, char_dim: usize, char_hidden: usize },
}

impl std::fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EmbeddingSource::Trainable { dim } => write!(f, "trainable:{dim}"),
            EmbeddingSource::StaticFile { path } => write!(f, "static:{}", path.display()),
            EmbeddingSource::TrainablePlusChar {
                word_dim,
                char_dim,
                char_hidden,
            } => write!(f, "char:{word_dim},{char_dim},{char_hidden}"),
        }
    }
}

impl std::str::FromStr for EmbeddingSource {
    type Err = String;

    /// `trainable:D`, `static:PATH` or `char:WD,CD,CH`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad embeddings `{s}` (expected trainable:D, static:PATH or char:WD,CD,CH)");
        let num = |x: &str| x.trim().parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(bad);
        match s.split_once(':') {
            Some(("trainable", d)) => Ok(EmbeddingSource::Trainable { dim: num(d)? }),
            Some(("static", p)) if !p.is_empty() => Ok(EmbeddingSource::StaticFile { path: PathBuf::from(p) }),
            Some(("char", rest)) => {
                let v: Vec<&str> = rest.split(',').collect();
                if v.len() != 3 {
                    return Err(bad());
                }
                Ok(EmbeddingSource::TrainablePlusChar {
                    word_dim: num(v[0])?,
                    char_dim: num(v[1])?,
                    char_hidden: num(v[2])?,
                })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerConfig {
    pub hidden_units: usize,
    pub lstm_dropout: f64,
    pub recurrent_dropout: f64,
    pub learning_rate: f64,
    pub head: Head,
    pub embeddings: EmbeddingSource,
    pub max_epochs: usize,
    /// Smallest dev-accuracy gain (as a fraction) that resets patience.
    pub min_delta: f64,
    pub patience: usize,
    pub batch_size: usize,
    /// Word vocabulary policy for trainable embeddings.
    pub oov: OovPolicy,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            hidden_units: 512,
            lstm_dropout: 0.0,
            recurrent_dropout: 0.0,
            learning_rate: 0.001,
            head: Head::Crf,
            embeddings: EmbeddingSource::Trainable { dim: 128 },
            max_epochs: 40,
            min_delta: 0.001,
            patience: 4,
            batch_size: 32,
            oov: OovPolicy::frequency_cutoff(0.005),
        }
    }
}

impl TaggerConfig {
    /// Char-embedding defaults for NER: char dim 25, hidden 200, dropout
    /// 0.5, learning rate 0.015.
    pub fn ner_with_chars(word_dim: usize) -> Self {
        TaggerConfig {
            hidden_units: 200,
            lstm_dropout: 0.5,
            recurrent_dropout: 0.5,
            learning_rate: 0.015,
            embeddings: EmbeddingSource::TrainablePlusChar {
                word_dim,
                char_dim: 25,
                char_hidden: 25,
            },
            ..TaggerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TaggerError> {
        let bad = |m: &str| Err(TaggerError::InvalidConfig(m.to_owned()));
        if self.hidden_units == 0 || self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("hidden_units, max_epochs, batch_size and patience must be positive");
        }
        for (name, r) in [("lstm_dropout", self.lstm_dropout), ("recurrent_dropout", self.recurrent_dropout)] {
            if !(0.0..1.0).contains(&r) {
                return bad(&format!("{name} must be in [0, 1)"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticEmbeddings {
    pub dim: usize,
    pub table: HashMap<String, Vec<f64>>,
}

impl StaticEmbeddings {
    /// The vector for `word`, or zeros when it is absent.
    pub fn lookup(&self, word: &str) -> Vec<f64> {
        self.table.get(word).cloned().unwrap_or_else(|| vec![0.0; self.dim])
    }
}

/// Parses `word v1 ... vD` lines; `D` comes from the first line. Blank
/// lines are skipped.
pub fn parse_static_embeddings(text: &str) -> Result<StaticEmbeddings, TaggerError> {
    let mut dim = None;
    let mut table = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let v: Vec<f64> = fields
            .map(|x| {
                x.parse::<f64>().map_err(|_| TaggerError::EmbeddingsFormat {
                    line: line_no,
                    msg: format!("`{x}` is not a number"),
                })
            })
            .collect::<Result<_, _>>()?;
        let d = *dim.get_or_insert(v.len());
        if v.len() != d || d == 0 {
            return Err(TaggerError::RaggedDimensions(line_no));
        }
        table.insert(word.to_owned(), v);
    }
    match dim {
        Some(dim) => Ok(StaticEmbeddings { dim, table }),
        None => Err(TaggerError::EmptyFile),
    }
}

pub fn load_static_embeddings(path: &Path) -> Result<StaticEmbeddings, TaggerError> {
    let text = fs::read_to_string(path).map_err(|source| TaggerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_static_embeddings(&text)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    /// Percent.
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TaggerModel {
    pub config: TaggerConfig,
    pub word_vocab: Vocabulary,
    pub char_vocab: Option<Vocabulary>,
    pub labels: Vec<String>,
    pub store: ParamStore,
    word_embedding: Embedding,
    chars: Option<(Embedding, BiLstm)>,
    bilstm: BiLstm,
    dense: Dense,
    crf: Option<CrfParams>,
}

const MODEL_KIND: &str = "tagger";

struct Batch {
    emissions: Var,
    lengths: Vec<usize>,
}

impl TaggerModel {
    fn init(
        config: TaggerConfig,
        word_vocab: Vocabulary,
        char_vocab: Option<Vocabulary>,
        labels: Vec<String>,
        static_table: Option<Tensor>,
        r: &mut Rng,
    ) -> Self {
        let mut store = ParamStore::new();
        let (word_embedding, word_dim) = match (&config.embeddings, static_table) {
            (_, Some(table)) => {
                let d = table.cols();
                (Embedding::frozen(&mut store, "word_embedding", table), d)
            }
            (EmbeddingSource::Trainable { dim }, None) => {
                (Embedding::init(&mut store, "word_embedding", word_vocab.len(), *dim, r), *dim)
            }
            (EmbeddingSource::TrainablePlusChar { word_dim, .. }, None) => (
                Embedding::init(&mut store, "word_embedding", word_vocab.len(), *word_dim, r),
                *word_dim,
            ),
            (EmbeddingSource::StaticFile { .. }, None) => unreachable!("static embeddings come with a table"),
        };
        let mut input = word_dim;
        let chars = match (&config.embeddings, &char_vocab) {
            (
                EmbeddingSource::TrainablePlusChar {
                    char_dim, char_hidden, ..
                },
                Some(cv),
            ) => {
                let e = Embedding::init(&mut store, "char_embedding", cv.len(), *char_dim, r);
                let b = BiLstm::init(&mut store, "char_bilstm", *char_dim, *char_hidden, 1, r);
                input += 2 * char_hidden;
                Some((e, b))
            }
            _ => None,
        };
        let h = config.hidden_units;
        let bilstm = BiLstm::init(&mut store, "bilstm", input, h, 1, r);
        let dense = Dense::init(&mut store, "dense", 2 * h, labels.len(), r);
        let crf = (config.head == Head::Crf).then(|| CrfParams::init(&mut store, labels.len(), r));
        TaggerModel {
            config,
            word_vocab,
            char_vocab,
            labels,
            store,
            word_embedding,
            chars,
            bilstm,
            dense,
            crf,
        }
    }

    pub fn head(&self) -> Head {
        self.config.head
    }

    fn label_id(&self, label: &str) -> Result<usize, TaggerError> {
        self.labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map_err(|_| TaggerError::UnknownLabel(label.to_owned()))
    }

    fn forward(
        &self,
        g: &mut Graph,
        sentences: &[&Sentence],
        mode: Mode,
        mut oov_rng: Option<&mut Rng>,
        dropout_rng: Option<&mut Rng>,
    ) -> Result<Batch, TaggerError> {
        let enc_mode = if mode == Mode::Train {
            EncodeMode::Train
        } else {
            EncodeMode::Eval
        };
        let ids: Vec<Vec<usize>> = sentences
            .iter()
            .map(|s| encode_units(s.surfaces(), &self.word_vocab, enc_mode, oov_rng.as_deref_mut()))
            .collect::<Result<_, _>>()?;
        let (flat, lengths) = time_major(&ids, self.word_vocab.pad_id());
        let mut x = self.word_embedding.forward(g, &self.store, &flat)?;
        if let (Some((cemb, cbilstm)), Some(cv)) = (&self.chars, &self.char_vocab) {
            let mut uniq: BTreeMap<&str, usize> = BTreeMap::new();
            for s in sentences {
                for w in s.surfaces() {
                    let n = uniq.len();
                    uniq.entry(w).or_insert(n);
                }
            }
            let mut words: Vec<&str> = vec![""; uniq.len()];
            for (w, &i) in &uniq {
                words[i] = w;
            }
            let char_ids: Vec<Vec<usize>> = words
                .iter()
                .map(|w| encode_chars(w, cv, EncodeMode::Eval, None))
                .collect::<Result<_, _>>()?;
            let (cflat, clens) = time_major(&char_ids, cv.pad_id());
            let ce = cemb.forward(g, &self.store, &cflat)?;
            let out = cbilstm.forward_batch(g, &self.store, ce, &clens, Dropout::NONE, Mode::Eval, None)?;
            let per_word = g.concat_cols(&[out.final_forward, out.final_backward])?;
            let b = sentences.len();
            let steps = lengths.iter().copied().max().unwrap_or(0);
            let mut pick = vec![0usize; steps * b];
            for (j, s) in sentences.iter().enumerate() {
                for (t, w) in s.surfaces().enumerate() {
                    pick[t * b + j] = uniq[w];
                }
            }
            let cf = g.gather(per_word, &pick)?;
            x = g.concat_cols(&[x, cf])?;
        }
        let dropout = Dropout {
            input: self.config.lstm_dropout,
            recurrent: self.config.recurrent_dropout,
        };
        let out = self
            .bilstm
            .forward_batch(g, &self.store, x, &lengths, dropout, mode, dropout_rng)?;
        let emissions = self.dense.forward(g, &self.store, out.outputs)?;
        Ok(Batch { emissions, lengths })
    }

    fn loss(&self, g: &mut Graph, sentences: &[&Sentence], batch: &Batch) -> Result<Var, TaggerError> {
        let tags: Vec<Vec<usize>> = sentences
            .iter()
            .map(|s| s.labels().map(|l| self.label_id(l)).collect())
            .collect::<Result<_, _>>()?;
        match &self.crf {
            Some(p) => Ok(crf::neg_log_likelihood_batch(g, &self.store, p, batch.emissions, &tags)?),
            None => {
                let b = sentences.len();
                let steps = batch.lengths.iter().copied().max().unwrap_or(0);
                let mut targets = vec![0usize; steps * b];
                let mut mask = vec![false; steps * b];
                for (j, ts) in tags.iter().enumerate() {
                    for (t, &y) in ts.iter().enumerate() {
                        targets[t * b + j] = y;
                        mask[t * b + j] = true;
                    }
                }
                Ok(g.softmax_cross_entropy(batch.emissions, &targets, &mask)?)
            }
        }
    }

    /// Labels for each sentence, predicted in batches of `batch_size`.
    /// Empty sentences get no labels.
    pub fn predict_batch(&self, sentences: &[Sentence]) -> Result<Vec<Vec<String>>, TaggerError> {
        let mut out: Vec<Vec<String>> = vec![Vec::new(); sentences.len()];
        let order: Vec<usize> = (0..sentences.len()).filter(|&i| !sentences[i].is_empty()).collect();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Sentence> = chunk.iter().map(|&i| &sentences[i]).collect();
            let mut g = Graph::new();
            let fw = self.forward(&mut g, &batch, Mode::Eval, None, None)?;
            let em = g.value(fw.emissions);
            let b = batch.len();
            let tables = self.crf.map(|p| p.tables(&self.store));
            for (j, &i) in chunk.iter().enumerate() {
                let len = fw.lengths[j];
                let rows: Vec<&[f64]> = (0..len).map(|t| em.row_slice(t * b + j)).collect();
                let ids: Vec<usize> = match &tables {
                    Some(tb) => {
                        let e = Tensor::from_rows(&rows);
                        crf::viterbi_decode(&e, tb, &vec![true; len])?.0
                    }
                    None => rows.iter().map(|r| argmax(r)).collect(),
                };
                out[i] = ids.into_iter().map(|y| self.labels[y].clone()).collect();
            }
        }
        Ok(out)
    }

    pub fn predict(&self, sentence: &Sentence) -> Result<Vec<String>, TaggerError> {
        Ok(self.predict_batch(std::slice::from_ref(sentence))?.pop().expect("one sentence"))
    }

    /// Mean loss in evaluation mode: per token for softmax, per sentence for
    /// the CRF head.
    pub fn mean_loss(&self, sentences: &[Sentence]) -> Result<f64, TaggerError> {
        let refs: Vec<&Sentence> = sentences.iter().filter(|s| !s.is_empty()).collect();
        let (mut total, mut weight) = (0.0, 0usize);
        for chunk in refs.chunks(self.config.batch_size) {
            let mut g = Graph::new();
            let fw = self.forward(&mut g, chunk, Mode::Eval, None, None)?;
            let l = self.loss(&mut g, chunk, &fw)?;
            let w = match self.crf {
                Some(_) => chunk.len(),
                None => fw.lengths.iter().sum(),
            };
            total += g.value(l).item() * w as f64;
            weight += w;
        }
        Ok(if weight == 0 { 0.0 } else { total / weight as f64 })
    }

    fn metadata(&self) -> String {
        json!({
            "kind": MODEL_KIND,
            "hidden_units": self.config.hidden_units,
            "lstm_dropout": self.config.lstm_dropout,
            "recurrent_dropout": self.config.recurrent_dropout,
            "learning_rate": self.config.learning_rate,
            "head": self.config.head.code(),
            "embeddings": self.config.embeddings.to_string(),
            "max_epochs": self.config.max_epochs,
            "min_delta": self.config.min_delta,
            "patience": self.config.patience,
            "batch_size": self.config.batch_size,
            "labels": self.labels,
            "word_vocab": self.word_vocab.to_text(),
            "char_vocab": self.char_vocab.as_ref().map(Vocabulary::to_text),
        })
        .to_string()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        container_bytes(&self.metadata(), &self.store)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TaggerError> {
        let fmt = |m: String| TaggerError::Format(m);
        let bad = |m: &str| TaggerError::Format(m.to_owned());
        let (meta, mut store) = read_container(&mut &bytes[..]).map_err(|e| fmt(e.to_string()))?;
        let meta: serde_json::Value = serde_json::from_str(&meta).map_err(|e| fmt(e.to_string()))?;
        if meta["kind"] != MODEL_KIND {
            return Err(bad("not a tagger model"));
        }
        let uint = |k: &str| meta[k].as_u64().map(|v| v as usize).ok_or_else(|| bad(k));
        let float = |k: &str| meta[k].as_f64().ok_or_else(|| bad(k));
        let text = |k: &str| meta[k].as_str().ok_or_else(|| bad(k));
        let word_vocab = Vocabulary::from_text(text("word_vocab")?)?;
        let char_vocab = match meta["char_vocab"].as_str() {
            Some(t) => Some(Vocabulary::from_text(t)?),
            None => None,
        };
        let config = TaggerConfig {
            hidden_units: uint("hidden_units")?,
            lstm_dropout: float("lstm_dropout")?,
            recurrent_dropout: float("recurrent_dropout")?,
            learning_rate: float("learning_rate")?,
            head: text("head")?.parse().map_err(fmt)?,
            embeddings: text("embeddings")?.parse().map_err(fmt)?,
            max_epochs: uint("max_epochs")?,
            min_delta: float("min_delta")?,
            patience: uint("patience")?,
            batch_size: uint("batch_size")?,
            oov: word_vocab.policy(),
        };
        config.validate()?;
        let labels: Vec<String> = meta["labels"]
            .as_array()
            .ok_or_else(|| bad("labels"))?
            .iter()
            .map(|v| v.as_str().map(str::to_owned).ok_or_else(|| bad("labels")))
            .collect::<Result<_, _>>()?;
        let word_embedding = Embedding {
            table: store.find("word_embedding").ok_or_else(|| bad("word_embedding"))?,
        };
        if matches!(config.embeddings, EmbeddingSource::StaticFile { .. }) {
            store.get_mut(word_embedding.table).trainable = false;
        }
        let chars = match store.find("char_embedding") {
            Some(table) => Some((
                Embedding { table },
                BiLstm::find(&store, "char_bilstm").ok_or_else(|| bad("char_bilstm"))?,
            )),
            None => None,
        };
        if chars.is_some() != char_vocab.is_some() {
            return Err(bad("char parameters and char vocabulary disagree"));
        }
        let bilstm = BiLstm::find(&store, "bilstm").ok_or_else(|| bad("bilstm"))?;
        let dense = Dense {
            weight: store.find("dense.weight").ok_or_else(|| bad("dense.weight"))?,
            bias: store.find("dense.bias").ok_or_else(|| bad("dense.bias"))?,
        };
        let crf = CrfParams::find(&store);
        if crf.is_some() != (config.head == Head::Crf) {
            return Err(bad("CRF parameters do not match the head"));
        }
        if store.get(dense.weight).value.rows() != labels.len()
            || store.get(word_embedding.table).value.rows() != word_vocab.len()
        {
            return Err(bad("parameter shapes do not match the vocabulary or labels"));
        }
        Ok(TaggerModel {
            config,
            word_vocab,
            char_vocab,
            labels,
            store,
            word_embedding,
            chars,
            bilstm,
            dense,
            crf,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TaggerError> {
        fs::write(path, self.to_bytes()).map_err(|source| TaggerError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TaggerError> {
        let bytes = fs::read(path).map_err(|source| TaggerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn build_vocabularies(
    train: &[Sentence],
    config: &TaggerConfig,
    statics: Option<&StaticEmbeddings>,
) -> (Vocabulary, Option<Vocabulary>, Option<Tensor>) {
    let mut counts = unit_counts(train, UnitKind::Word);
    let (word_vocab, table) = match statics {
        Some(se) => {
            for w in se.table.keys() {
                counts.entry(w.clone()).or_insert(0);
            }
            let v = vocabulary_from_counts(&counts, UnitKind::Word, OovPolicy::frequency_cutoff(0.0));
            let mut t = Tensor::zeros(v.len(), se.dim);
            for (k, w) in v.units().iter().enumerate() {
                if let Some(vec) = se.table.get(w) {
                    t.data_mut()[(k + 2) * se.dim..(k + 3) * se.dim].copy_from_slice(vec);
                }
            }
            (v, Some(t))
        }
        None => (vocabulary_from_counts(&counts, UnitKind::Word, config.oov), None),
    };
    let char_vocab = matches!(config.embeddings, EmbeddingSource::TrainablePlusChar { .. }).then(|| {
        let mut cc: BTreeMap<String, u64> = BTreeMap::new();
        for s in train {
            for w in s.surfaces() {
                for c in w.chars() {
                    *cc.entry(c.to_string()).or_insert(0) += 1;
                }
            }
        }
        vocabulary_from_counts(&cc, UnitKind::Character, OovPolicy::frequency_cutoff(0.0))
    });
    (word_vocab, char_vocab, table)
}

/// Sorted labels of `train` and `dev`.
pub fn label_index(train: &[Sentence], dev: &[Sentence]) -> Vec<String> {
    let set: BTreeSet<&str> = train.iter().chain(dev).flat_map(|s| s.labels()).collect();
    set.into_iter().map(str::to_owned).collect()
}

/// Minibatch Adam with early stopping on dev token accuracy; returns the
/// best-dev snapshot.
pub fn train_on(
    train: &[Sentence],
    dev: &[Sentence],
    config: &TaggerConfig,
    seed: u64,
) -> Result<(TaggerModel, TrainingLog), TaggerError> {
    config.validate()?;
    let train: Vec<Sentence> = train.iter().filter(|s| !s.is_empty()).cloned().collect();
    let dev: Vec<Sentence> = dev.iter().filter(|s| !s.is_empty()).cloned().collect();
    if train.is_empty() {
        return Err(TaggerError::EmptySplit("train"));
    }
    if dev.is_empty() {
        return Err(TaggerError::EmptySplit("dev"));
    }
    let statics = match &config.embeddings {
        EmbeddingSource::StaticFile { path } => Some(load_static_embeddings(path)?),
        _ => None,
    };
    let (word_vocab, char_vocab, table) = build_vocabularies(&train, config, statics.as_ref());
    let labels = label_index(&train, &dev);
    let mut init_rng = rng::derived(seed, "tagger.init");
    let mut shuffle_rng = rng::derived(seed, "tagger.shuffle");
    let mut oov_rng = rng::derived(seed, "tagger.oov");
    let mut dropout_rng = rng::derived(seed, "tagger.dropout");
    let mut model = TaggerModel::init(config.clone(), word_vocab, char_vocab, labels, table, &mut init_rng);
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let dev_gold: Vec<Vec<&str>> = dev.iter().map(|s| s.labels().collect()).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut reference = f64::NEG_INFINITY;
    let mut waited = 0;
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sentence> = chunk.iter().map(|&i| &train[i]).collect();
            let mut g = Graph::new();
            let fw = model.forward(&mut g, &batch, Mode::Train, Some(&mut oov_rng), Some(&mut dropout_rng))?;
            let loss = model.loss(&mut g, &batch, &fw)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(TaggerError::NonFinite { epoch });
            }
            total += lv * batch.len() as f64;
            count += batch.len();
            g.backward(loss);
            let grads = g.param_grads(&model.store);
            adam.step(&mut model.store, &grads)?;
        }
        if !model.store.all_finite() {
            return Err(TaggerError::NonFinite { epoch });
        }
        let pred = model.predict_batch(&dev)?;
        let pred_refs: Vec<Vec<&str>> = pred.iter().map(|p| p.iter().map(String::as_str).collect()).collect();
        let acc = metrics::corpus_token_accuracy(&dev_gold, &pred_refs)?;
        let dev_loss = model.mean_loss(&dev)?;
        log::info!(
            "tagger epoch {epoch}: train loss {:.5}, dev loss {dev_loss:.5}, dev acc {acc:.2}",
            total / count as f64
        );
        epochs.push(EpochLog {
            epoch,
            train_loss: total / count as f64,
            dev_loss,
            dev_accuracy: acc,
        });
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, epoch, model.store.clone()));
        }
        if acc / 100.0 >= reference + config.min_delta {
            reference = acc / 100.0;
            waited = 0;
        } else {
            waited += 1;
            if waited >= config.patience {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    let (_, best_epoch, store) = best.expect("at least one epoch");
    model.store = store;
    Ok((
        model,
        TrainingLog {
            epochs,
            best_epoch,
            stopped_early,
        },
    ))
}

/// Trains on a flavored dataset's train side.
pub fn train_tagger(
    data: &FlavoredDataset,
    dev: &[Sentence],
    config: &TaggerConfig,
    seed: u64,
) -> Result<(TaggerModel, TrainingLog), TaggerError> {
    train_on(&data.train, dev, config, seed)
}

/// Scores predictions of `model` on `sentences`.
pub fn evaluate(model: &TaggerModel, sentences: &[Sentence], metric: MetricKind) -> Result<f64, TaggerError> {
    let pred = model.predict_batch(sentences)?;
    let gold: Vec<Vec<String>> = sentences.iter().map(|s| s.labels().map(str::to_owned).collect()).collect();
    Ok(match metric {
        MetricKind::TokenAccuracy => metrics::corpus_token_accuracy(&gold, &pred)?,
        MetricKind::SpanF1 => metrics::span_f1_labels(&gold, &pred)?,
    })
}

/// Both test casings of one flavor. TT and TA have a single truecased test
/// set, reported in both columns.
pub fn evaluate_flavor(model: &TaggerModel, data: &FlavoredDataset, metric: MetricKind) -> Result<ReportRow, TaggerError> {
    let test_cased = evaluate(model, &data.test_cased, metric)?;
    let test_uncased = if data.flavor.needs_truecaser() {
        test_cased
    } else {
        evaluate(model, &data.test_uncased, metric)?
    };
    Ok(ReportRow {
        flavor: data.flavor,
        test_cased,
        test_uncased,
    })
}

/// A training and test recipe shared by every flavor of a matrix run.
pub struct MatrixRecipe<'a> {
    pub train: &'a [Sentence],
    pub dev: &'a [Sentence],
    pub test: &'a [Sentence],
    pub flavors: &'a [Flavor],
    pub config: &'a TaggerConfig,
    pub seed: u64,
    pub truecaser: Option<&'a dyn CaseRestorer>,
    pub metric: MetricKind,
}

/// Trains one model per flavor and evaluates it on both test casings. The
/// dev split gets the same casing transform as train.
pub fn evaluate_flavor_matrix(recipe: &MatrixRecipe<'_>) -> Result<EvalReport, TaggerError> {
    let mut rows = Vec::with_capacity(recipe.flavors.len());
    for &flavor in recipe.flavors {
        let tc = if flavor.needs_truecaser() { recipe.truecaser } else { None };
        let data = flavors::make_flavor(recipe.train, recipe.test, flavor, recipe.seed, tc)?;
        let dev = flavors::transform_train(recipe.dev, flavor, recipe.seed, tc)?;
        let (model, log) = train_tagger(&data, &dev, recipe.config, recipe.seed)?;
        log::info!(
            "flavor {}: kept epoch {} of {}",
            flavor.label(),
            log.best_epoch,
            log.epochs.len()
        );
        rows.push(evaluate_flavor(&model, &data, recipe.metric)?);
    }
    Ok(EvalReport {
        metric: recipe.metric,
        rows,
    })
}
