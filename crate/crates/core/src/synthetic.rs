//! Seeded synthetic corpora for the desk-scale experiments.
//!
//! `truecase_corpus` follows a fixed casing rule (sentence-initial
//! character and the word "london" are capitalized), so the rule itself is
//! the oracle for a trained truecaser. `pos_corpus` is a small grammar
//! whose proper nouns often share their spelling with a modal or a common
//! noun ("Will" vs "will", "Bill" vs "bill"): casing decides the tag in
//! cased text, and only context decides it once the text is lowercased.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::corpus::{Sentence, Token};
use crate::rng::{self, Rng};

const FILLER: &[&str] = &[
    "the", "a", "city", "river", "is", "was", "big", "old", "near", "bridge", "we", "saw", "rain", "in", "and", "to",
    "from", "train", "left", "early", "cold", "market", "people", "walk", "by", "north", "quiet", "street", "very",
    "new",
];

fn capitalize(w: &str) -> String {
    let mut cs = w.chars();
    match cs.next() {
        Some(c) => c.to_uppercase().chain(cs).collect(),
        None => String::new(),
    }
}

/// Sentences of 4 to 9 lowercase words, about a third of them containing
/// "london". Labels are all `O`.
pub fn truecase_corpus(n: usize, seed: u64) -> Vec<Sentence> {
    let mut r = rng::derived(seed, "synthetic.truecase");
    (0..n)
        .map(|_| {
            let len = r.gen_range(4..=9);
            let mut words: Vec<String> = (0..len).map(|_| FILLER.choose(&mut r).unwrap().to_string()).collect();
            if r.gen_bool(0.35) {
                let at = r.gen_range(0..len);
                words[at] = "london".into();
            }
            let tokens = words
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let s = if i == 0 || w == "london" { capitalize(w) } else { w.clone() };
                    Token::new(s, "O")
                })
                .collect();
            Sentence::new(tokens)
        })
        .collect()
}

/// Names that double as a modal or a common noun, with that other tag.
const AMBIGUOUS: &[(&str, &str)] = &[
    ("will", "MD"),
    ("may", "MD"),
    ("bill", "NN"),
    ("rose", "NN"),
    ("mark", "NN"),
    ("hope", "NN"),
    ("grant", "NN"),
    ("jack", "NN"),
    ("faith", "NN"),
];
const ONSETS: &[&str] = &["b", "d", "k", "l", "m", "n", "r", "s", "t", "v", "z", "th", "br", "gr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ei", "ou"];
const NOUNS: &[&str] = &["dog", "cat", "car", "book", "house", "letter", "garden", "ticket", "song", "door"];
const MODALS: &[&str] = &["can", "must", "should", "will", "may"];
const VB: &[&str] = &["see", "take", "find", "like", "help", "call", "read", "open"];
const VBD: &[&str] = &["saw", "took", "found", "liked", "helped", "called", "read", "opened", "said"];
const DT: &[&str] = &["the", "a", "this", "every"];
const IN: &[&str] = &["with", "near", "for", "from"];
const PRP: &[&str] = &["he", "she", "they", "we"];
const RB: &[&str] = &["today", "again", "quickly", "here"];
const CC: &[&str] = &["and", "or"];

const TEMPLATES: &[&[&str]] = &[
    &["NNP", "VBD", "DT", "NN", "."],
    &["PRP", "MD", "VB", "DT", "NN", "."],
    &["NNP", "VBD", "IN", "DT", "NN", "."],
    &["DT", "NN", "VBD", "NNP", "."],
    &["NNP", "CC", "NNP", "VBD", "DT", "NN", "."],
    &["DT", "NN", "MD", "VB", "NNP", "RB", "."],
    &["PRP", "VBD", "NNP", "IN", "NNP", "."],
    &["NNP", "MD", "VB", "DT", "NN", "."],
    &["NNP", "VBD", "RB", "."],
    &["PRP", "MD", "VB", "NNP", "."],
];

struct Grammar {
    /// Capitalized names outside the ambiguous list.
    pool: Vec<String>,
}

impl Grammar {
    fn new(r: &mut Rng) -> Self {
        let mut pool = Vec::new();
        while pool.len() < 120 {
            let syl = r.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syl {
                w.push_str(ONSETS.choose(r).unwrap());
                w.push_str(VOWELS.choose(r).unwrap());
            }
            let w = capitalize(&w);
            if !pool.contains(&w) {
                pool.push(w);
            }
        }
        Grammar { pool }
    }

    fn word(&self, tag: &str, r: &mut Rng) -> String {
        let pick = |list: &[&str], r: &mut Rng| list.choose(r).unwrap().to_string();
        match tag {
            "NNP" => {
                if r.gen_bool(0.65) {
                    capitalize(AMBIGUOUS.choose(r).unwrap().0)
                } else {
                    self.pool.choose(r).unwrap().clone()
                }
            }
            "NN" => {
                if r.gen_bool(0.4) {
                    let nn: Vec<&str> = AMBIGUOUS.iter().filter(|(_, t)| *t == "NN").map(|(w, _)| *w).collect();
                    pick(&nn, r)
                } else {
                    pick(NOUNS, r)
                }
            }
            "MD" => pick(MODALS, r),
            "VB" => pick(VB, r),
            "VBD" => pick(VBD, r),
            "DT" => pick(DT, r),
            "IN" => pick(IN, r),
            "PRP" => pick(PRP, r),
            "RB" => pick(RB, r),
            "CC" => pick(CC, r),
            "." => ".".into(),
            other => unreachable!("tag {other} has no word list"),
        }
    }
}

/// `n` sentences from the grammar above, with sentence-initial
/// capitalization. The name pool depends only on `seed`, so splits drawn
/// with the same seed and different `stream`s share names.
pub fn pos_corpus(n: usize, seed: u64, stream: &str) -> Vec<Sentence> {
    let grammar = Grammar::new(&mut rng::derived(seed, "synthetic.pos.names"));
    let mut r = rng::derived(seed, &format!("synthetic.pos.{stream}"));
    (0..n)
        .map(|_| {
            let template = TEMPLATES.choose(&mut r).unwrap();
            let tokens = template
                .iter()
                .enumerate()
                .map(|(i, &tag)| {
                    let w = grammar.word(tag, &mut r);
                    Token::new(if i == 0 { capitalize(&w) } else { w }, tag)
                })
                .collect();
            Sentence::new(tokens)
        })
        .collect()
}

/// Train, dev and test splits of [`pos_corpus`].
pub fn pos_splits(train: usize, dev: usize, test: usize, seed: u64) -> (Vec<Sentence>, Vec<Sentence>, Vec<Sentence>) {
    (
        pos_corpus(train, seed, "train"),
        pos_corpus(dev, seed, "dev"),
        pos_corpus(test, seed, "test"),
    )
}
