//! Character-level truecaser: a 2-layer BiLSTM over lowercased characters
//! with a 2-way output per character (keep / uppercase).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde_json::json;
use thiserror::Error;

use crate::corpus::{
    encode_chars, vocabulary_from_counts, CorpusError, EncodeMode, LabeledCorpus, OovPolicy, Sentence, UnitKind,
    Vocabulary,
};
use crate::flavors::CaseRestorer;
use crate::metrics::{self, Counts};
use crate::nn::layers::time_major;
use crate::nn::params::{container_bytes, read_container};
use crate::nn::{AdamConfig, AdamState, BiLstm, Dense, Dropout, Embedding, Graph, Mode, NnError, ParamStore, Var};
use crate::rng::{self, Rng};

#[derive(Debug, Error)]
pub enum TruecaserError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid truecaser config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss in epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad truecaser model: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruecaserConfig {
    /// LSTM width; the character embedding has the same width.
    pub hidden_size: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub oov: OovPolicy,
}

impl Default for TruecaserConfig {
    fn default() -> Self {
        TruecaserConfig {
            hidden_size: 300,
            layers: 2,
            batch_size: 100,
            epochs: 30,
            learning_rate: AdamConfig::default().learning_rate,
            oov: OovPolicy::frequency_cutoff(0.005),
        }
    }
}

impl TruecaserConfig {
    pub fn embed_size(&self) -> usize {
        self.hidden_size
    }

    pub fn validate(&self) -> Result<(), TruecaserError> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("layers", self.layers),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TruecaserError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TruecaserError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CasingExample {
    pub lower_chars: Vec<char>,
    /// `true` where the original character is uppercase.
    pub targets: Vec<bool>,
}

/// Lowercases one character, keeping it when its lowercase form is not a
/// single character (so positions stay aligned).
pub fn lower_char(c: char) -> char {
    let mut it = c.to_lowercase();
    match (it.next(), it.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

/// Uppercases one character when that is a single character that
/// lowercases back to `c`.
pub fn upper_char(c: char) -> char {
    let mut it = c.to_uppercase();
    match (it.next(), it.next()) {
        (Some(u), None) if lower_char(u) == c => u,
        _ => c,
    }
}

pub fn lowercase_text(text: &str) -> String {
    text.chars().map(lower_char).collect()
}

pub fn casing_example(text: &str) -> CasingExample {
    CasingExample {
        lower_chars: text.chars().map(lower_char).collect(),
        targets: text.chars().map(char::is_uppercase).collect(),
    }
}

/// One example per sentence over its space-joined surfaces.
pub fn make_casing_examples(sentences: &[Sentence]) -> Vec<CasingExample> {
    sentences.iter().map(|s| casing_example(&s.text())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn best(&self) -> &EpochLog {
        &self.epochs[self.best_epoch - 1]
    }
}

#[derive(Debug, Clone)]
pub struct TruecaserModel {
    pub config: TruecaserConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    embedding: Embedding,
    bilstm: BiLstm,
    output: Dense,
}

const MODEL_KIND: &str = "truecaser";

impl TruecaserModel {
    pub fn init(config: TruecaserConfig, vocab: Vocabulary, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let h = config.hidden_size;
        let embedding = Embedding::init(&mut store, "char_embedding", vocab.len(), config.embed_size(), rng);
        let bilstm = BiLstm::init(&mut store, "bilstm", config.embed_size(), h, config.layers, rng);
        let output = Dense::init(&mut store, "output", 2 * h, 2, rng);
        TruecaserModel {
            config,
            vocab,
            store,
            embedding,
            bilstm,
            output,
        }
    }

    fn logits(&self, g: &mut Graph, ids: &[Vec<usize>]) -> Result<(Var, Vec<usize>), NnError> {
        let (flat, lengths) = time_major(ids, self.vocab.pad_id());
        let x = self.embedding.forward(g, &self.store, &flat)?;
        let out = self
            .bilstm
            .forward_batch(g, &self.store, x, &lengths, Dropout::NONE, Mode::Eval, None)?;
        Ok((self.output.forward(g, &self.store, out.outputs)?, lengths))
    }

    fn encode(&self, chars: &[char], mode: EncodeMode, rng: Option<&mut Rng>) -> Result<Vec<usize>, CorpusError> {
        let s: String = chars.iter().collect();
        encode_chars(&s, &self.vocab, mode, rng)
    }

    /// Mean cross-entropy over the characters of a batch, and the number of
    /// characters.
    fn batch_loss(
        &self,
        g: &mut Graph,
        batch: &[&CasingExample],
        mode: EncodeMode,
        mut rng: Option<&mut Rng>,
    ) -> Result<(Var, usize), TruecaserError> {
        let ids: Vec<Vec<usize>> = batch
            .iter()
            .map(|e| self.encode(&e.lower_chars, mode, rng.as_deref_mut()))
            .collect::<Result<_, _>>()?;
        let (logits, lengths) = self.logits(g, &ids)?;
        let b = batch.len();
        let steps = lengths.iter().copied().max().unwrap_or(0);
        let mut targets = vec![0usize; steps * b];
        let mut mask = vec![false; steps * b];
        for (j, e) in batch.iter().enumerate() {
            for (t, &up) in e.targets.iter().enumerate() {
                targets[t * b + j] = usize::from(up);
                mask[t * b + j] = true;
            }
        }
        let n = lengths.iter().sum();
        Ok((g.softmax_cross_entropy(logits, &targets, &mask)?, n))
    }

    /// Per-character uppercase decisions (class 1 logit above class 0).
    pub fn predict_targets(&self, lower: &[Vec<char>]) -> Result<Vec<Vec<bool>>, TruecaserError> {
        let mut out: Vec<Vec<bool>> = lower.iter().map(|_| Vec::new()).collect();
        let order: Vec<usize> = (0..lower.len()).filter(|&i| !lower[i].is_empty()).collect();
        for chunk in order.chunks(self.config.batch_size) {
            let ids: Vec<Vec<usize>> = chunk
                .iter()
                .map(|&i| self.encode(&lower[i], EncodeMode::Eval, None))
                .collect::<Result<_, _>>()?;
            let mut g = Graph::new();
            let (logits, lengths) = self.logits(&mut g, &ids)?;
            let v = g.value(logits);
            let b = chunk.len();
            for (j, &i) in chunk.iter().enumerate() {
                out[i] = (0..lengths[j])
                    .map(|t| {
                        let r = v.row_slice(t * b + j);
                        r[1] > r[0]
                    })
                    .collect();
            }
        }
        Ok(out)
    }

    /// Restores casing of lowercased text. Length and caseless characters
    /// are preserved.
    pub fn apply(&self, text: &str) -> Result<String, TruecaserError> {
        Ok(self.apply_batch(&[text])?.pop().expect("one output per input"))
    }

    pub fn apply_batch(&self, texts: &[&str]) -> Result<Vec<String>, TruecaserError> {
        let chars: Vec<Vec<char>> = texts.iter().map(|t| t.chars().collect()).collect();
        let lower: Vec<Vec<char>> = chars.iter().map(|c| c.iter().map(|&x| lower_char(x)).collect()).collect();
        let preds = self.predict_targets(&lower)?;
        Ok(chars
            .iter()
            .zip(&preds)
            .map(|(cs, up)| {
                cs.iter()
                    .zip(up)
                    .map(|(&c, &u)| if u { upper_char(c) } else { c })
                    .collect()
            })
            .collect())
    }

    /// Mean per-character loss over `examples` in evaluation mode.
    pub fn loss(&self, examples: &[CasingExample]) -> Result<f64, TruecaserError> {
        let refs: Vec<&CasingExample> = examples.iter().filter(|e| !e.lower_chars.is_empty()).collect();
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in refs.chunks(self.config.batch_size) {
            let mut g = Graph::new();
            let (l, n) = self.batch_loss(&mut g, chunk, EncodeMode::Eval, None)?;
            total += g.value(l).item() * n as f64;
            count += n;
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }

    fn metadata(&self) -> String {
        json!({
            "kind": MODEL_KIND,
            "hidden_size": self.config.hidden_size,
            "layers": self.config.layers,
            "batch_size": self.config.batch_size,
            "epochs": self.config.epochs,
            "learning_rate": self.config.learning_rate,
            "vocab": self.vocab.to_text(),
        })
        .to_string()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        container_bytes(&self.metadata(), &self.store)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TruecaserError> {
        let bad = |m: &str| TruecaserError::Format(m.to_owned());
        let (meta, store) = read_container(&mut &bytes[..]).map_err(|e| TruecaserError::Format(e.to_string()))?;
        let meta: serde_json::Value = serde_json::from_str(&meta).map_err(|e| TruecaserError::Format(e.to_string()))?;
        if meta["kind"] != MODEL_KIND {
            return Err(bad("not a truecaser model"));
        }
        let uint = |k: &str| meta[k].as_u64().map(|v| v as usize).ok_or_else(|| bad(k));
        let vocab = Vocabulary::from_text(meta["vocab"].as_str().ok_or_else(|| bad("vocab"))?)?;
        let config = TruecaserConfig {
            hidden_size: uint("hidden_size")?,
            layers: uint("layers")?,
            batch_size: uint("batch_size")?,
            epochs: uint("epochs")?,
            learning_rate: meta["learning_rate"].as_f64().ok_or_else(|| bad("learning_rate"))?,
            oov: vocab.policy(),
        };
        config.validate()?;
        let embedding = Embedding {
            table: store.find("char_embedding").ok_or_else(|| bad("char_embedding"))?,
        };
        let bilstm = BiLstm::find(&store, "bilstm").ok_or_else(|| bad("bilstm"))?;
        let output = Dense {
            weight: store.find("output.weight").ok_or_else(|| bad("output.weight"))?,
            bias: store.find("output.bias").ok_or_else(|| bad("output.bias"))?,
        };
        if store.get(output.weight).value.rows() != 2 || store.get(embedding.table).value.rows() != vocab.len() {
            return Err(bad("parameter shapes do not match the vocabulary"));
        }
        Ok(TruecaserModel {
            config,
            vocab,
            store,
            embedding,
            bilstm,
            output,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TruecaserError> {
        fs::write(path, self.to_bytes()).map_err(|source| TruecaserError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TruecaserError> {
        let bytes = fs::read(path).map_err(|source| TruecaserError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

impl CaseRestorer for TruecaserModel {
    fn restore(&self, lowercased: &str) -> String {
        self.apply(lowercased).unwrap_or_else(|e| {
            log::warn!("truecaser failed ({e}); keeping lowercased text");
            lowercased.to_owned()
        })
    }

    fn id(&self) -> String {
        format!("truecaser-{:016x}", rng::fnv1a(&self.to_bytes()))
    }
}

/// Train and dev sentences for model selection. Without a dev split the
/// last 10% of train (at least one sentence) is held out.
pub fn selection_split(corpus: &LabeledCorpus) -> Result<(Vec<Sentence>, Vec<Sentence>), TruecaserError> {
    if corpus.train.is_empty() {
        return Err(TruecaserError::EmptySplit("train"));
    }
    if !corpus.dev.is_empty() {
        return Ok((corpus.train.clone(), corpus.dev.clone()));
    }
    let n = corpus.train.len();
    let held = (n / 10).max(1);
    if held >= n {
        return Err(TruecaserError::EmptySplit("dev"));
    }
    Ok((corpus.train[..n - held].to_vec(), corpus.train[n - held..].to_vec()))
}

/// Minibatch Adam on per-character cross-entropy; returns the parameters of
/// the epoch with the lowest dev loss.
pub fn train_truecaser(
    corpus: &LabeledCorpus,
    config: TruecaserConfig,
    seed: u64,
) -> Result<(TruecaserModel, TrainingLog), TruecaserError> {
    config.validate()?;
    let (train, dev) = selection_split(corpus)?;
    let train_ex = make_casing_examples(&train);
    let dev_ex = make_casing_examples(&dev);
    let mut counts = std::collections::BTreeMap::new();
    for e in &train_ex {
        for &c in &e.lower_chars {
            *counts.entry(c.to_string()).or_insert(0u64) += 1;
        }
    }
    let vocab = vocabulary_from_counts(&counts, UnitKind::Character, config.oov);
    let mut init_rng = rng::derived(seed, "truecaser.init");
    let mut shuffle_rng = rng::derived(seed, "truecaser.shuffle");
    let mut oov_rng = rng::derived(seed, "truecaser.oov");
    let mut model = TruecaserModel::init(config, vocab, &mut init_rng);
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..train_ex.len()).filter(|&i| !train_ex[i].lower_chars.is_empty()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&CasingExample> = chunk.iter().map(|&i| &train_ex[i]).collect();
            let mut g = Graph::new();
            let (loss, n) = model.batch_loss(&mut g, &batch, EncodeMode::Train, Some(&mut oov_rng))?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(TruecaserError::NonFinite { epoch });
            }
            total += lv * n as f64;
            count += n;
            g.backward(loss);
            let grads = g.param_grads(&model.store);
            adam.step(&mut model.store, &grads)?;
        }
        let train_loss = if count == 0 { 0.0 } else { total / count as f64 };
        let dev_loss = model.loss(&dev_ex)?;
        if !dev_loss.is_finite() || !model.store.all_finite() {
            return Err(TruecaserError::NonFinite { epoch });
        }
        log::info!("truecaser epoch {epoch}: train loss {train_loss:.5}, dev loss {dev_loss:.5}");
        log.push(EpochLog {
            epoch,
            train_loss,
            dev_loss,
        });
        if best.as_ref().is_none_or(|(b, _, _)| dev_loss < *b) {
            best = Some((dev_loss, epoch, model.store.clone()));
        }
    }
    let (_, best_epoch, store) = best.expect("at least one epoch");
    model.store = store;
    Ok((
        model,
        TrainingLog {
            epochs: log,
            best_epoch,
        },
    ))
}

/// Pooled uppercase-class counts of the model's predictions.
pub fn truecaser_counts(model: &TruecaserModel, sentences: &[Sentence]) -> Result<Counts, TruecaserError> {
    let examples = make_casing_examples(sentences);
    let lower: Vec<Vec<char>> = examples.iter().map(|e| e.lower_chars.clone()).collect();
    let preds = model.predict_targets(&lower)?;
    let mut c = Counts::default();
    for (e, p) in examples.iter().zip(&preds) {
        c.add(metrics::char_counts(&e.targets, p).map_err(|e| TruecaserError::Format(e.to_string()))?);
    }
    Ok(c)
}

/// Character F1 (percent) of the uppercase class.
pub fn evaluate_truecaser(model: &TruecaserModel, sentences: &[Sentence]) -> Result<f64, TruecaserError> {
    Ok(truecaser_counts(model, sentences)?.f1())
}
