//! Token accuracy, span F1 over BIO tags, per-character truecasing F1, and
//! the report tables.
//!
//! All scores are percentages. Printed values are rounded half-up to two
//! decimals on the shortest decimal representation of the score, so
//! `92.795` prints as `92.80`.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::flavors::Flavor;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("length mismatch: {0} gold vs {1} predicted")]
    LengthMismatch(usize, usize),
    #[error("malformed BIO tag `{0}`")]
    MalformedTag(String),
}

/// `100 * correct / total` over unmasked positions; 0 (with a warning)
/// when nothing is unmasked.
pub fn token_accuracy<T: PartialEq>(gold: &[T], pred: &[T], mask: &[bool]) -> Result<f64, MetricsError> {
    if gold.len() != pred.len() || gold.len() != mask.len() {
        return Err(MetricsError::LengthMismatch(gold.len(), pred.len()));
    }
    let (mut correct, mut total) = (0usize, 0usize);
    for ((g, p), &m) in gold.iter().zip(pred).zip(mask) {
        if m {
            total += 1;
            correct += usize::from(g == p);
        }
    }
    if total == 0 {
        log::warn!("token accuracy over zero tokens is reported as 0");
        return Ok(0.0);
    }
    Ok(100.0 * correct as f64 / total as f64)
}

/// Token accuracy pooled over sentences.
pub fn corpus_token_accuracy<T: PartialEq>(gold: &[Vec<T>], pred: &[Vec<T>]) -> Result<f64, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch(gold.len(), pred.len()));
    }
    let (mut correct, mut total) = (0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(MetricsError::LengthMismatch(g.len(), p.len()));
        }
        total += g.len();
        correct += g.iter().zip(p).filter(|(a, b)| a == b).count();
    }
    if total == 0 {
        log::warn!("token accuracy over zero tokens is reported as 0");
        return Ok(0.0);
    }
    Ok(100.0 * correct as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub kind: String,
}

pub type SpanSet = BTreeSet<Span>;

enum Bio<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_bio(tag: &str) -> Result<Bio<'_>, MetricsError> {
    if tag == "O" {
        return Ok(Bio::Outside);
    }
    match tag.split_once('-') {
        Some(("B", t)) if !t.is_empty() => Ok(Bio::Begin(t)),
        Some(("I", t)) if !t.is_empty() => Ok(Bio::Inside(t)),
        _ => Err(MetricsError::MalformedTag(tag.to_owned())),
    }
}

/// Maximal spans, conlleval style: an `I-X` that does not continue an open
/// `X` span opens a new one.
pub fn bio_decode<S: AsRef<str>>(labels: &[S]) -> Result<SpanSet, MetricsError> {
    let mut spans = SpanSet::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in labels.iter().enumerate() {
        let tag = parse_bio(tag.as_ref())?;
        let starts = match (&tag, open) {
            (Bio::Outside, _) => None,
            (Bio::Begin(t), _) => Some(*t),
            (Bio::Inside(t), Some((_, cur))) if cur == *t => continue,
            (Bio::Inside(t), _) => Some(*t),
        };
        if let Some((s, kind)) = open.take() {
            spans.insert(Span {
                start: s,
                end: i,
                kind: kind.to_owned(),
            });
        }
        open = starts.map(|t| (i, t));
    }
    if let Some((s, kind)) = open {
        spans.insert(Span {
            start: s,
            end: labels.len(),
            kind: kind.to_owned(),
        });
    }
    Ok(spans)
}

/// Canonical BIO tags for non-overlapping spans.
pub fn bio_encode(spans: &SpanSet, len: usize) -> Vec<String> {
    let mut out = vec!["O".to_owned(); len];
    for s in spans {
        for (k, slot) in out[s.start..s.end].iter_mut().enumerate() {
            *slot = format!("{}-{}", if k == 0 { "B" } else { "I" }, s.kind);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// F1 as a percentage; zero denominators give 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            if self.tp + self.fp + self.fn_ == 0 {
                log::warn!("F1 with no positives is reported as 0");
            }
            return 0.0;
        }
        100.0 * 2.0 * p * r / (p + r)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn span_counts(gold: &[SpanSet], pred: &[SpanSet]) -> Result<Counts, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch(gold.len(), pred.len()));
    }
    let mut c = Counts::default();
    for (g, p) in gold.iter().zip(pred) {
        let tp = g.intersection(p).count();
        c.add(Counts {
            tp,
            fp: p.len() - tp,
            fn_: g.len() - tp,
        });
    }
    Ok(c)
}

/// Micro-averaged exact-match span F1.
pub fn span_f1(gold: &[SpanSet], pred: &[SpanSet]) -> Result<f64, MetricsError> {
    Ok(span_counts(gold, pred)?.f1())
}

/// Span F1 straight from per-sentence label sequences.
pub fn span_f1_labels<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<f64, MetricsError> {
    let g: Vec<SpanSet> = gold.iter().map(|s| bio_decode(s)).collect::<Result<_, _>>()?;
    let p: Vec<SpanSet> = pred.iter().map(|s| bio_decode(s)).collect::<Result<_, _>>()?;
    span_f1(&g, &p)
}

pub fn char_counts(gold: &[bool], pred: &[bool]) -> Result<Counts, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch(gold.len(), pred.len()));
    }
    let mut c = Counts::default();
    for (&g, &p) in gold.iter().zip(pred) {
        match (g, p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

/// F1 of the "uppercase" class.
pub fn char_f1(gold: &[bool], pred: &[bool]) -> Result<f64, MetricsError> {
    Ok(char_counts(gold, pred)?.f1())
}

/// Half-up rounding to two decimals of the shortest decimal form of `x`.
pub fn round2(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let neg = x < 0.0;
    let s = format!("{}", x.abs());
    let (int_part, frac) = s.split_once('.').unwrap_or((&s, ""));
    let mut digits: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let mut frac_digits: Vec<u8> = frac.bytes().map(|b| b - b'0').collect();
    frac_digits.resize(3, 0);
    let round_up = frac_digits[2] >= 5;
    digits.extend_from_slice(&frac_digits[..2]);
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let n = digits.len();
    let int: String = digits[..n - 2].iter().map(|d| char::from(b'0' + d)).collect();
    let fr: String = digits[n - 2..].iter().map(|d| char::from(b'0' + d)).collect();
    let body = format!("{}.{}", if int.is_empty() { "0" } else { &int }, fr);
    if neg && body != "0.00" {
        format!("-{body}")
    } else {
        body
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    TokenAccuracy,
    SpanF1,
}

impl MetricKind {
    pub fn code(self) -> &'static str {
        match self {
            MetricKind::TokenAccuracy => "acc",
            MetricKind::SpanF1 => "span-f1",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "acc" => Ok(MetricKind::TokenAccuracy),
            "span-f1" => Ok(MetricKind::SpanF1),
            _ => Err(format!("unknown metric `{s}` (expected acc or span-f1)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub flavor: Flavor,
    pub test_cased: f64,
    pub test_uncased: f64,
}

impl ReportRow {
    pub fn avg(&self) -> f64 {
        (self.test_cased + self.test_uncased) / 2.0
    }
}

/// Flavor matrix: one row per flavor with both test casings and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: MetricKind,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn row(&self, flavor: Flavor) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.flavor == flavor)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("flavor\ttest_c\ttest_u\tavg\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.flavor.label(),
                round2(r.test_cased),
                round2(r.test_uncased),
                round2(r.avg())
            ));
        }
        out
    }

    /// Flat object: `metric` plus `<code>.test_c`, `<code>.test_u` and
    /// `<code>.avg` per flavor, values rounded like the TSV.
    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        map.insert("metric".into(), self.metric.code().into());
        for r in &self.rows {
            let code = r.flavor.code();
            for (key, v) in [("test_c", r.test_cased), ("test_u", r.test_uncased), ("avg", r.avg())] {
                let rounded: f64 = round2(v).parse().unwrap_or(v);
                map.insert(format!("{code}.{key}"), serde_json::json!(rounded));
            }
        }
        let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("serializable");
        s.push('\n');
        s
    }
}

/// One score per (flavor, column), e.g. the CRF ablation with columns
/// `No CRF` and `CRF`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub rows: Vec<(Flavor, Vec<f64>)>,
}

impl ComparisonTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("flavor");
        for c in &self.columns {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for (f, vals) in &self.rows {
            out.push_str(f.label());
            for v in vals {
                out.push('\t');
                out.push_str(&round2(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        for (f, vals) in &self.rows {
            for (c, v) in self.columns.iter().zip(vals) {
                let rounded: f64 = round2(*v).parse().unwrap_or(*v);
                map.insert(format!("{}.{}", f.code(), c), serde_json::json!(rounded));
            }
        }
        let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("serializable");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spans(v: &[(usize, usize, &str)]) -> SpanSet {
        v.iter()
            .map(|&(start, end, k)| Span {
                start,
                end,
                kind: k.into(),
            })
            .collect()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(token_accuracy(&[1, 2], &[1, 2], &[true, true]).unwrap(), 100.0);
        assert_eq!(token_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0], &[true; 4]).unwrap(), 75.0);
        assert_eq!(token_accuracy(&[1], &[2], &[false]).unwrap(), 0.0);
        assert!(token_accuracy(&[1], &[1, 2], &[true]).is_err());
    }

    #[test]
    fn masked_positions_do_not_count() {
        assert_eq!(token_accuracy(&[1, 2], &[1, 9], &[true, false]).unwrap(), 100.0);
    }

    #[test]
    fn bio_cases() {
        assert_eq!(bio_decode(&["B-ORG", "I-ORG", "O"]).unwrap(), spans(&[(0, 2, "ORG")]));
        assert_eq!(bio_decode(&["I-PER"]).unwrap(), spans(&[(0, 1, "PER")]));
        assert_eq!(
            bio_decode(&["B-ORG", "I-PER"]).unwrap(),
            spans(&[(0, 1, "ORG"), (1, 2, "PER")])
        );
        assert_eq!(
            bio_decode(&["B-LOC", "B-LOC", "O", "I-LOC", "I-LOC"]).unwrap(),
            spans(&[(0, 1, "LOC"), (1, 2, "LOC"), (3, 5, "LOC")])
        );
        assert_eq!(
            bio_decode(&["X-ORG"]).unwrap_err(),
            MetricsError::MalformedTag("X-ORG".into())
        );
        assert!(bio_decode(&["B-"]).is_err());
    }

    #[test]
    fn span_f1_half() {
        let gold = vec![spans(&[(0, 2, "ORG"), (3, 4, "PER")])];
        let pred = vec![spans(&[(0, 2, "ORG"), (3, 4, "LOC")])];
        let c = span_counts(&gold, &pred).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 1));
        assert_eq!(span_f1(&gold, &pred).unwrap(), 50.0);
        assert_eq!(span_f1(&gold, &gold).unwrap(), 100.0);
        assert_eq!(span_f1(&gold, &[SpanSet::new()]).unwrap(), 0.0);
    }

    #[test]
    fn char_f1_cases() {
        let g = [true, false, false, true, false];
        let p = [true, false, false, false, false];
        let c = char_counts(&g, &p).unwrap();
        assert_eq!((c.precision(), c.recall()), (1.0, 0.5));
        assert_eq!(round2(char_f1(&g, &p).unwrap()), "66.67");
        assert_eq!(char_f1(&g, &g).unwrap(), 100.0);
        assert_eq!(char_f1(&[false; 3], &[false; 3]).unwrap(), 0.0);
    }

    #[test]
    fn rounding() {
        assert_eq!(round2(92.795), "92.80");
        assert_eq!(round2(97.3), "97.30");
        assert_eq!(round2(99.995), "100.00");
        assert_eq!(round2(0.0), "0.00");
        assert_eq!(round2(66.66666666666667), "66.67");
        assert_eq!(round2(12.344), "12.34");
        assert_eq!(round2(-0.001), "0.00");
        assert_eq!(round2(1.0 / 3.0), "0.33");
    }

    #[test]
    fn tsv_layout() {
        let r = EvalReport {
            metric: MetricKind::TokenAccuracy,
            rows: vec![ReportRow {
                flavor: Flavor::U,
                test_cased: 96.51,
                test_uncased: 96.51,
            }],
        };
        assert_eq!(r.to_tsv(), "flavor\ttest_c\ttest_u\tavg\nU\t96.51\t96.51\t96.51\n");
    }
}
