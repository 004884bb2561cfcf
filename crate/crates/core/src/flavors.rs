//! The six casing regimes a (train, test) pair can be trained and tested in.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use thiserror::Error;

use crate::corpus::{Sentence, Token};
use crate::rng;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlavorError {
    #[error("flavor {0} needs a truecaser")]
    MissingTruecaser(Flavor),
    #[error("flavor {0} does not take a truecaser")]
    UnexpectedTruecaser(Flavor),
    #[error("unknown flavor `{0}` (expected c, u, cu, cu50, tt or ta)")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Flavor {
    /// Cased: the corpus as distributed.
    C,
    /// Uncased: train lowercased.
    U,
    /// Cased train followed by a lowercased copy of it.
    CPlusU,
    /// Half of the train sentences lowercased in place.
    CPlusU50,
    /// Truecased test: the test side is lowercased then truecased.
    TT,
    /// Truecase all: train and test both lowercased then truecased.
    TA,
}

impl Flavor {
    pub const ALL: [Flavor; 6] = [
        Flavor::C,
        Flavor::U,
        Flavor::CPlusU,
        Flavor::CPlusU50,
        Flavor::TT,
        Flavor::TA,
    ];

    /// Short code used on the command line and as file suffix.
    pub fn code(self) -> &'static str {
        match self {
            Flavor::C => "c",
            Flavor::U => "u",
            Flavor::CPlusU => "cu",
            Flavor::CPlusU50 => "cu50",
            Flavor::TT => "tt",
            Flavor::TA => "ta",
        }
    }

    /// Row label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Flavor::C => "C",
            Flavor::U => "U",
            Flavor::CPlusU => "C+U",
            Flavor::CPlusU50 => "C+U 50",
            Flavor::TT => "TT",
            Flavor::TA => "TA",
        }
    }

    pub fn needs_truecaser(self) -> bool {
        matches!(self, Flavor::TT | Flavor::TA)
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Flavor {
    type Err = FlavorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Flavor::ALL
            .into_iter()
            .find(|f| f.code() == s.to_ascii_lowercase())
            .ok_or_else(|| FlavorError::Unknown(s.to_owned()))
    }
}

/// Anything that can restore casing on a lowercased, space-joined sentence
/// without changing its length.
pub trait CaseRestorer {
    fn restore(&self, lowercased: &str) -> String;

    /// Identifier recorded in dataset provenance.
    fn id(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub truecaser: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlavoredDataset {
    pub flavor: Flavor,
    pub train: Vec<Sentence>,
    pub test_cased: Vec<Sentence>,
    pub test_uncased: Vec<Sentence>,
    pub provenance: Provenance,
}

pub fn lowercase_sentence(s: &Sentence) -> Sentence {
    Sentence::new(
        s.tokens
            .iter()
            .map(|t| Token::new(t.surface.to_lowercase(), t.label.clone()))
            .collect(),
    )
}

/// `truecaser(lowercase(s))`, split back onto the original tokens.
pub fn truecase_sentence(s: &Sentence, truecaser: &dyn CaseRestorer) -> Sentence {
    let lowered = lowercase_sentence(s);
    let restored = truecaser.restore(&lowered.text());
    let pieces: Vec<&str> = restored.split(' ').collect();
    if pieces.len() != lowered.len() {
        // A restorer that moved spaces around; keep the lowercased form.
        log::warn!("truecaser changed token boundaries; keeping lowercased sentence");
        return lowered;
    }
    Sentence::new(
        lowered
            .tokens
            .iter()
            .zip(pieces)
            .map(|(t, p)| Token::new(p, t.label.clone()))
            .collect(),
    )
}

/// Indices of the sentences C+U 50 lowercases: a seeded uniform sample of
/// exactly `n / 2` indices, returned sorted.
pub fn half_selection(n: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::derived(seed, "cu50");
    let mut picked = index::sample(&mut r, n, n / 2).into_vec();
    picked.sort_unstable();
    picked
}

/// Applies the train-side transform of `flavor` to a sentence list.
///
/// Dev data for model selection goes through this same function so it
/// matches the casing the model is trained on.
pub fn transform_train(
    train: &[Sentence],
    flavor: Flavor,
    seed: u64,
    truecaser: Option<&dyn CaseRestorer>,
) -> Result<Vec<Sentence>, FlavorError> {
    check_truecaser(flavor, truecaser.is_some())?;
    Ok(match flavor {
        Flavor::C | Flavor::TT => train.to_vec(),
        Flavor::U => train.iter().map(lowercase_sentence).collect(),
        Flavor::CPlusU => train
            .iter()
            .cloned()
            .chain(train.iter().map(lowercase_sentence))
            .collect(),
        Flavor::CPlusU50 => {
            let mut out = train.to_vec();
            for i in half_selection(train.len(), seed) {
                out[i] = lowercase_sentence(&train[i]);
            }
            out
        }
        Flavor::TA => {
            let tc = truecaser.expect("checked above");
            train.iter().map(|s| truecase_sentence(s, tc)).collect()
        }
    })
}

fn check_truecaser(flavor: Flavor, present: bool) -> Result<(), FlavorError> {
    match (flavor.needs_truecaser(), present) {
        (true, false) => Err(FlavorError::MissingTruecaser(flavor)),
        (false, true) => Err(FlavorError::UnexpectedTruecaser(flavor)),
        _ => Ok(()),
    }
}

pub fn make_flavor(
    train: &[Sentence],
    test: &[Sentence],
    flavor: Flavor,
    seed: u64,
    truecaser: Option<&dyn CaseRestorer>,
) -> Result<FlavoredDataset, FlavorError> {
    let train_out = transform_train(train, flavor, seed, truecaser)?;
    let (test_cased, test_uncased) = match (flavor, truecaser) {
        (Flavor::TT | Flavor::TA, Some(tc)) => {
            let t: Vec<Sentence> = test.iter().map(|s| truecase_sentence(s, tc)).collect();
            (t.clone(), t)
        }
        _ => (test.to_vec(), test.iter().map(lowercase_sentence).collect()),
    };
    Ok(FlavoredDataset {
        flavor,
        train: train_out,
        test_cased,
        test_uncased,
        provenance: Provenance {
            seed,
            truecaser: truecaser.map(|t| t.id()),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Identity;

    impl CaseRestorer for Identity {
        fn restore(&self, lowercased: &str) -> String {
            lowercased.to_owned()
        }
        fn id(&self) -> String {
            "identity".into()
        }
    }

    /// Capitalizes the first character of each word.
    struct Titler;

    impl CaseRestorer for Titler {
        fn restore(&self, lowercased: &str) -> String {
            lowercased
                .split(' ')
                .map(|w| {
                    let mut c = w.chars();
                    match c.next() {
                        Some(f) => f.to_uppercase().chain(c).collect(),
                        None => String::new(),
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        }
        fn id(&self) -> String {
            "titler".into()
        }
    }

    fn sents(n: usize) -> Vec<Sentence> {
        (0..n)
            .map(|i| Sentence::from_pairs(&[(format!("Word{i}"), "NNP"), ("Cat".to_string(), "NN")]))
            .collect()
    }

    #[test]
    fn lowercase_examples() {
        let s = Sentence::from_pairs(&[("Apple", "NNP"), ("pie", "NN")]);
        assert_eq!(lowercase_sentence(&s), Sentence::from_pairs(&[("apple", "NNP"), ("pie", "NN")]));
        let l = Sentence::from_pairs(&[("apple", "X")]);
        assert_eq!(lowercase_sentence(&l), l);
        let e = Sentence::from_pairs(&[("EU", "B-ORG")]);
        assert_eq!(lowercase_sentence(&e), Sentence::from_pairs(&[("eu", "B-ORG")]));
    }

    #[test]
    fn cu50_on_four() {
        let train = sents(4);
        let d = make_flavor(&train, &train, Flavor::CPlusU50, 11, None).unwrap();
        let lowered = d.train.iter().zip(&train).filter(|(a, b)| a != b).count();
        assert_eq!(lowered, 2);
        assert_eq!(d.train.len(), 4);
    }

    #[test]
    fn cu_concatenates() {
        let train = sents(3);
        let d = make_flavor(&train, &train, Flavor::CPlusU, 0, None).unwrap();
        assert_eq!(d.train.len(), 6);
        assert_eq!(&d.train[..3], &train[..]);
        for i in 0..3 {
            assert_eq!(d.train[3 + i], lowercase_sentence(&train[i]));
        }
    }

    #[test]
    fn truecaser_preconditions() {
        let t = sents(2);
        assert_eq!(
            make_flavor(&t, &t, Flavor::TT, 0, None).unwrap_err(),
            FlavorError::MissingTruecaser(Flavor::TT)
        );
        assert_eq!(
            make_flavor(&t, &t, Flavor::C, 0, Some(&Identity)).unwrap_err(),
            FlavorError::UnexpectedTruecaser(Flavor::C)
        );
    }

    #[test]
    fn tt_with_identity_restorer_gives_lowercased_test() {
        let train = sents(2);
        let test: Vec<Sentence> = sents(3).iter().map(lowercase_sentence).collect();
        let d = make_flavor(&train, &test, Flavor::TT, 0, Some(&Identity)).unwrap();
        assert_eq!(d.test_cased, test);
        assert_eq!(d.test_uncased, test);
        assert_eq!(d.train, train);
        assert_eq!(d.provenance.truecaser.as_deref(), Some("identity"));
    }

    #[test]
    fn ta_truecases_both_sides() {
        let train = vec![Sentence::from_pairs(&[("new", "JJ"), ("YORK", "NNP")])];
        let d = make_flavor(&train, &train, Flavor::TA, 0, Some(&Titler)).unwrap();
        let expect = Sentence::from_pairs(&[("New", "JJ"), ("York", "NNP")]);
        assert_eq!(d.train, vec![expect.clone()]);
        assert_eq!(d.test_cased, vec![expect]);
    }

    #[test]
    fn flavor_codes_parse() {
        for f in Flavor::ALL {
            assert_eq!(f.code().parse::<Flavor>().unwrap(), f);
        }
        assert!("x".parse::<Flavor>().is_err());
    }

    #[test]
    fn half_selection_is_seeded() {
        assert_eq!(half_selection(40, 3), half_selection(40, 3));
        let distinct: std::collections::BTreeSet<_> = (0..10).map(|s| half_selection(40, s)).collect();
        assert_eq!(distinct.len(), 10);
        assert!(half_selection(1, 0).is_empty());
    }
}
