//! Column-format corpora, vocabularies and the two OOV schemes.
//!
//! Input files hold one token per line with whitespace-separated columns and
//! a blank line between sentences, which covers CoNLL 2000/2003 and plain
//! two-column tag files. Vocabularies reserve id 0 for padding and id 1 for
//! out-of-vocabulary units; real units start at 2.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use thiserror::Error;

use crate::rng::Rng;

pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;
const FIRST_UNIT_ID: usize = 2;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: expected columns {token_col} and {label_col}")]
    MalformedLine {
        line: usize,
        token_col: usize,
        label_col: usize,
    },
    #[error("no sentences in corpus")]
    EmptyCorpus,
    #[error("stochastic OOV masking requested without a PRNG")]
    MissingRng,
    #[error("OOV rate {0} is outside [0, 1]")]
    InvalidRate(f64),
    #[error("vocabulary line {line}: {msg}")]
    VocabFormat { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub surface: String,
    pub label: String,
}

impl Token {
    pub fn new(surface: impl Into<String>, label: impl Into<String>) -> Self {
        Token {
            surface: surface.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sentence { tokens }
    }

    /// Builds a sentence from `(surface, label)` pairs.
    pub fn from_pairs<S: AsRef<str>, L: AsRef<str>>(pairs: &[(S, L)]) -> Self {
        Sentence {
            tokens: pairs
                .iter()
                .map(|(s, l)| Token::new(s.as_ref(), l.as_ref()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.label.as_str())
    }

    /// Token surfaces joined by single spaces: the character stream the
    /// truecaser reads and writes.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&t.surface);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
    pub label_set: BTreeSet<String>,
}

impl LabeledCorpus {
    pub fn new(train: Vec<Sentence>, dev: Vec<Sentence>, test: Vec<Sentence>) -> Self {
        let label_set = train
            .iter()
            .chain(&dev)
            .chain(&test)
            .flat_map(|s| s.labels().map(str::to_owned))
            .collect();
        LabeledCorpus {
            train,
            dev,
            test,
            label_set,
        }
    }
}

pub fn parse_column_corpus(
    text: &str,
    token_col: usize,
    label_col: usize,
) -> Result<Vec<Sentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            if !current.is_empty() {
                sentences.push(Sentence::new(std::mem::take(&mut current)));
            }
            continue;
        }
        match (cols.get(token_col), cols.get(label_col)) {
            (Some(tok), Some(lab)) => current.push(Token::new(*tok, *lab)),
            _ => {
                return Err(CorpusError::MalformedLine {
                    line: idx + 1,
                    token_col,
                    label_col,
                })
            }
        }
    }
    if !current.is_empty() {
        sentences.push(Sentence::new(current));
    }
    if sentences.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(sentences)
}

pub fn read_column_file(
    path: &Path,
    token_col: usize,
    label_col: usize,
) -> Result<Vec<Sentence>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_column_corpus(&text, token_col, label_col)
}

/// Two-column `surface label` serialization with a blank line after each
/// sentence. Parsing the output with columns (0, 1) gives back the input.
pub fn write_column_corpus(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for t in &s.tokens {
            out.push_str(&t.surface);
            out.push(' ');
            out.push_str(&t.label);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    Character,
    Word,
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnitKind::Character => "character",
            UnitKind::Word => "word",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OovKind {
    /// Every unit enters the vocabulary; known units are masked at random
    /// while encoding training data.
    StochasticAtRead,
    /// The rarest units covering at least `rate` of all occurrences are
    /// left out of the vocabulary.
    FrequencyCutoff,
}

impl fmt::Display for OovKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OovKind::StochasticAtRead => "stochastic_at_read",
            OovKind::FrequencyCutoff => "frequency_cutoff",
        })
    }
}

impl std::str::FromStr for OovKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stochastic_at_read" | "stochastic" => Ok(OovKind::StochasticAtRead),
            "frequency_cutoff" | "frequency" => Ok(OovKind::FrequencyCutoff),
            _ => Err(format!("unknown OOV policy `{s}` (expected stochastic or frequency)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OovPolicy {
    pub kind: OovKind,
    pub rate: f64,
}

impl OovPolicy {
    pub fn new(kind: OovKind, rate: f64) -> Result<Self, CorpusError> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(CorpusError::InvalidRate(rate));
        }
        Ok(OovPolicy { kind, rate })
    }

    pub fn frequency_cutoff(rate: f64) -> Self {
        Self::new(OovKind::FrequencyCutoff, rate).expect("rate in [0, 1]")
    }

    pub fn stochastic(rate: f64) -> Self {
        Self::new(OovKind::StochasticAtRead, rate).expect("rate in [0, 1]")
    }
}

/// Whether encoding is for a training pass (stochastic masking allowed) or
/// for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    unit_kind: UnitKind,
    id_of: HashMap<String, usize>,
    units: Vec<String>,
    policy: OovPolicy,
}

impl Vocabulary {
    fn from_units(unit_kind: UnitKind, units: Vec<String>, policy: OovPolicy) -> Self {
        let id_of = units
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i + FIRST_UNIT_ID))
            .collect();
        Vocabulary {
            unit_kind,
            id_of,
            units,
            policy,
        }
    }

    pub fn unit_kind(&self) -> UnitKind {
        self.unit_kind
    }

    pub fn policy(&self) -> OovPolicy {
        self.policy
    }

    pub fn pad_id(&self) -> usize {
        PAD_ID
    }

    pub fn oov_id(&self) -> usize {
        OOV_ID
    }

    /// Total number of ids, including PAD and OOV.
    pub fn len(&self) -> usize {
        self.units.len() + FIRST_UNIT_ID
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn id(&self, unit: &str) -> Option<usize> {
        self.id_of.get(unit).copied()
    }

    pub fn id_or_oov(&self, unit: &str) -> usize {
        self.id(unit).unwrap_or(OOV_ID)
    }

    pub fn char_id(&self, c: char) -> usize {
        let mut buf = [0u8; 4];
        self.id_or_oov(c.encode_utf8(&mut buf))
    }

    pub fn contains(&self, unit: &str) -> bool {
        self.id_of.contains_key(unit)
    }

    /// Real units in id order (id = index + 2).
    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "casefold-vocab v1 {} {} {}\n",
            self.unit_kind, self.policy.kind, self.policy.rate
        );
        for (i, u) in self.units.iter().enumerate() {
            out.push_str(u);
            out.push('\t');
            out.push_str(&(i + FIRST_UNIT_ID).to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let bad = |line: usize, msg: &str| CorpusError::VocabFormat {
            line,
            msg: msg.to_owned(),
        };
        let mut lines = text.split('\n');
        let header = lines.next().unwrap_or_default();
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 5 || fields[0] != "casefold-vocab" || fields[1] != "v1" {
            return Err(bad(1, "expected `casefold-vocab v1 <kind> <policy> <rate>`"));
        }
        let unit_kind = match fields[2] {
            "character" => UnitKind::Character,
            "word" => UnitKind::Word,
            _ => return Err(bad(1, "unknown unit kind")),
        };
        let kind = match fields[3] {
            "stochastic_at_read" => OovKind::StochasticAtRead,
            "frequency_cutoff" => OovKind::FrequencyCutoff,
            _ => return Err(bad(1, "unknown OOV policy")),
        };
        let rate: f64 = fields[4].parse().map_err(|_| bad(1, "bad rate"))?;
        let policy = OovPolicy::new(kind, rate)?;
        let mut units = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            if line.is_empty() {
                continue;
            }
            let (unit, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad(line_no, "expected `unit<TAB>id`"))?;
            let id: usize = id.parse().map_err(|_| bad(line_no, "bad id"))?;
            if id != units.len() + FIRST_UNIT_ID {
                return Err(bad(line_no, "ids must be dense and ascending from 2"));
            }
            units.push(unit.to_owned());
        }
        Ok(Vocabulary::from_units(unit_kind, units, policy))
    }
}

/// Unit occurrence counts of a corpus. Character units come from
/// [`Sentence::text`], so the separating space is a unit too.
pub fn unit_counts(sentences: &[Sentence], unit_kind: UnitKind) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for s in sentences {
        match unit_kind {
            UnitKind::Word => {
                for w in s.surfaces() {
                    *counts.entry(w.to_owned()).or_insert(0) += 1;
                }
            }
            UnitKind::Character => {
                for c in s.text().chars() {
                    *counts.entry(c.to_string()).or_insert(0) += 1;
                }
            }
        }
    }
    counts
}

/// Units excluded by the frequency cutoff: sorted by increasing count (ties
/// lexicographic), the shortest prefix whose cumulative count reaches
/// `rate * total`.
pub fn cutoff_excluded(counts: &BTreeMap<String, u64>, rate: f64) -> BTreeSet<String> {
    let total: u64 = counts.values().sum();
    let threshold = rate * total as f64;
    let mut excluded = BTreeSet::new();
    if threshold <= 0.0 {
        return excluded;
    }
    let mut sorted: Vec<(&String, u64)> = counts.iter().map(|(u, &c)| (u, c)).collect();
    // BTreeMap order is already lexicographic; a stable sort keeps it for ties.
    sorted.sort_by_key(|&(_, c)| c);
    let mut cumulative = 0u64;
    for (unit, c) in sorted {
        cumulative += c;
        excluded.insert(unit.clone());
        if cumulative as f64 >= threshold {
            break;
        }
    }
    excluded
}

pub fn build_vocabulary(sentences: &[Sentence], unit_kind: UnitKind, policy: OovPolicy) -> Vocabulary {
    let counts = unit_counts(sentences, unit_kind);
    vocabulary_from_counts(&counts, unit_kind, policy)
}

pub fn vocabulary_from_counts(
    counts: &BTreeMap<String, u64>,
    unit_kind: UnitKind,
    policy: OovPolicy,
) -> Vocabulary {
    let excluded = match policy.kind {
        OovKind::FrequencyCutoff => cutoff_excluded(counts, policy.rate),
        OovKind::StochasticAtRead => BTreeSet::new(),
    };
    let units = counts
        .keys()
        .filter(|u| !excluded.contains(*u))
        .cloned()
        .collect();
    Vocabulary::from_units(unit_kind, units, policy)
}

/// Encodes a unit sequence. In training mode with the stochastic policy each
/// known unit becomes OOV with probability `rate`.
pub fn encode_units<'a>(
    units: impl IntoIterator<Item = &'a str>,
    vocab: &Vocabulary,
    mode: EncodeMode,
    rng: Option<&mut Rng>,
) -> Result<Vec<usize>, CorpusError> {
    let ids = units.into_iter().map(|u| vocab.id_or_oov(u));
    mask_ids(ids, vocab, mode, rng)
}

fn mask_ids(
    ids: impl Iterator<Item = usize>,
    vocab: &Vocabulary,
    mode: EncodeMode,
    rng: Option<&mut Rng>,
) -> Result<Vec<usize>, CorpusError> {
    let stochastic = mode == EncodeMode::Train
        && vocab.policy.kind == OovKind::StochasticAtRead
        && vocab.policy.rate > 0.0;
    if !stochastic {
        return Ok(ids.collect());
    }
    let rng = rng.ok_or(CorpusError::MissingRng)?;
    let rate = vocab.policy.rate;
    Ok(ids
        .map(|id| {
            if id != OOV_ID && rng.gen::<f64>() < rate {
                OOV_ID
            } else {
                id
            }
        })
        .collect())
}

pub fn encode_chars(
    text: &str,
    vocab: &Vocabulary,
    mode: EncodeMode,
    rng: Option<&mut Rng>,
) -> Result<Vec<usize>, CorpusError> {
    mask_ids(text.chars().map(|c| vocab.char_id(c)), vocab, mode, rng)
}

/// Encodes a sentence according to the vocabulary's unit kind: words are
/// token surfaces, characters come from [`Sentence::text`].
pub fn encode(
    sentence: &Sentence,
    vocab: &Vocabulary,
    mode: EncodeMode,
    rng: Option<&mut Rng>,
) -> Result<Vec<usize>, CorpusError> {
    match vocab.unit_kind {
        UnitKind::Word => encode_units(sentence.surfaces(), vocab, mode, rng),
        UnitKind::Character => encode_chars(&sentence.text(), vocab, mode, rng),
    }
}
