//! Browser demo bindings. The page previews flavors, explores CRF decoding
//! on hand-entered scores and trains a tiny truecaser in place.
//!
//! Every operation has a plain Rust entry point returning JSON text, plus a
//! `wasm_bindgen` wrapper for the page.

use casefold::corpus::{parse_column_corpus, write_column_corpus, CorpusError, LabeledCorpus, Sentence, Token};
use casefold::crf::{self, CrfTables};
use casefold::flavors::{self, Flavor, FlavorError};
use casefold::nn::Tensor;
use casefold::truecaser::{self, TruecaserConfig, TruecaserError};
use serde_json::json;
use thiserror::Error;
use wasm_bindgen::prelude::*;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Flavor(#[from] FlavorError),
    #[error(transparent)]
    Truecaser(#[from] TruecaserError),
    #[error("{0}")]
    Input(String),
}

/// Applies a non-truecasing flavor to a two-column corpus and returns
/// `{flavor, train, test_c, test_u, sentences_in, sentences_out}`. The
/// input serves as both train and test side.
pub fn flavor_preview(corpus: &str, flavor: &str, seed: u32) -> Result<String, DemoError> {
    let flavor: Flavor = flavor.parse()?;
    if flavor.needs_truecaser() {
        return Err(DemoError::Input(format!("flavor {flavor} needs a trained truecaser; try the truecaser panel")));
    }
    let sentences = parse_column_corpus(corpus, 0, 1)?;
    let data = flavors::make_flavor(&sentences, &sentences, flavor, u64::from(seed), None)?;
    Ok(json!({
        "flavor": flavor.label(),
        "train": write_column_corpus(&data.train),
        "test_c": write_column_corpus(&data.test_cased),
        "test_u": write_column_corpus(&data.test_uncased),
        "sentences_in": sentences.len(),
        "sentences_out": data.train.len(),
    })
    .to_string())
}

/// Rows separated by newlines or `;`, values by spaces or commas.
pub fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>, DemoError> {
    text.split(['\n', ';'])
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split([' ', ',', '\t'])
                .filter(|v| !v.is_empty())
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| DemoError::Input(format!("row {}: `{v}` is not a number", i + 1)))
                })
                .collect()
        })
        .collect()
}

fn tensor(rows: &[Vec<f64>], what: &str) -> Result<Tensor, DemoError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(DemoError::Input(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(Tensor::from_vec(rows.len(), cols, rows.concat()))
}

fn vector(text: &str, classes: usize, what: &str) -> Result<Vec<f64>, DemoError> {
    let rows = parse_matrix(text)?;
    if rows.is_empty() {
        return Ok(vec![0.0; classes]);
    }
    let v = rows.concat();
    if v.len() != classes {
        return Err(DemoError::Input(format!("{what} needs {classes} values, got {}", v.len())));
    }
    Ok(v)
}

/// Viterbi path, its score, log Z and the path's probability for a T x C
/// emission matrix and a C x C transition matrix. Empty start/end mean
/// zeros.
pub fn crf_explore(emissions: &str, transitions: &str, start: &str, end: &str) -> Result<String, DemoError> {
    let e = tensor(&parse_matrix(emissions)?, "emissions")?;
    let tr = tensor(&parse_matrix(transitions)?, "transitions")?;
    let c = e.cols();
    if tr.rows() != c || tr.cols() != c {
        return Err(DemoError::Input(format!("transitions must be {c} x {c} to match the emissions")));
    }
    let tables = CrfTables {
        transitions: tr,
        start: vector(start, c, "start")?,
        end: vector(end, c, "end")?,
    };
    let (path, score) = crf::viterbi_decode(&e, &tables, &vec![true; e.rows()])
        .map_err(|err| DemoError::Input(err.to_string()))?;
    let log_z = crf::log_partition_value(&e, &tables);
    Ok(json!({
        "path": path,
        "score": score,
        "log_z": log_z,
        "probability": (score - log_z).exp(),
    })
    .to_string())
}

fn text_sentences(text: &str) -> Vec<Sentence> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Sentence::new(l.split_whitespace().map(|w| Token::new(w, "O")).collect()))
        .collect()
}

/// Trains a one-layer truecaser of width `hidden` on the cased lines of
/// `train` and restores the casing of each line of `input`. Returns
/// `{output, best_epoch, dev_loss}`.
pub fn truecase_demo(train: &str, input: &str, hidden: u32, epochs: u32, seed: u32) -> Result<String, DemoError> {
    let sentences = text_sentences(train);
    if sentences.len() < 2 {
        return Err(DemoError::Input("give at least two training lines".into()));
    }
    let config = TruecaserConfig {
        hidden_size: hidden as usize,
        layers: 1,
        batch_size: 16,
        epochs: epochs as usize,
        ..TruecaserConfig::default()
    };
    let corpus = LabeledCorpus::new(sentences, Vec::new(), Vec::new());
    let (model, log) = truecaser::train_truecaser(&corpus, config, u64::from(seed))?;
    let lowered: Vec<String> = input.lines().map(truecaser::lowercase_text).collect();
    let refs: Vec<&str> = lowered.iter().map(String::as_str).collect();
    let output = model.apply_batch(&refs)?;
    Ok(json!({
        "output": output.join("\n"),
        "best_epoch": log.best_epoch,
        "dev_loss": log.best().dev_loss,
    })
    .to_string())
}

fn js<T>(r: Result<T, DemoError>) -> Result<T, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = flavorPreview)]
pub fn flavor_preview_js(corpus: &str, flavor: &str, seed: u32) -> Result<String, JsValue> {
    js(flavor_preview(corpus, flavor, seed))
}

#[wasm_bindgen(js_name = crfExplore)]
pub fn crf_explore_js(emissions: &str, transitions: &str, start: &str, end: &str) -> Result<String, JsValue> {
    js(crf_explore(emissions, transitions, start, end))
}

#[wasm_bindgen(js_name = truecaseDemo)]
pub fn truecase_demo_js(train: &str, input: &str, hidden: u32, epochs: u32, seed: u32) -> Result<String, JsValue> {
    js(truecase_demo(train, input, hidden, epochs, seed))
}
