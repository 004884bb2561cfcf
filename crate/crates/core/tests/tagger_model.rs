use casefold::corpus::Sentence;
use casefold::flavors::Flavor;
use casefold::metrics::MetricKind;
use casefold::synthetic;
use casefold::tagger::{self, EmbeddingSource, Head, MatrixRecipe, TaggerConfig, TaggerError, TaggerModel};

fn small(head: Head) -> TaggerConfig {
    TaggerConfig {
        hidden_units: 8,
        embeddings: EmbeddingSource::Trainable { dim: 8 },
        head,
        max_epochs: 3,
        batch_size: 4,
        ..TaggerConfig::default()
    }
}

fn data() -> (Vec<Sentence>, Vec<Sentence>) {
    (synthetic::pos_corpus(40, 3, "train"), synthetic::pos_corpus(10, 3, "dev"))
}

#[test]
fn batched_prediction_matches_one_at_a_time() {
    let (train, dev) = data();
    for head in [Head::Softmax, Head::Crf] {
        let (model, _) = tagger::train_on(&train, &dev, &small(head), 5).unwrap();
        let batched = model.predict_batch(&dev).unwrap();
        for (s, b) in dev.iter().zip(&batched) {
            assert_eq!(&model.predict(s).unwrap(), b);
        }
        // Softmax loss is a per-token mean, CRF loss a per-sentence mean.
        let weight = |s: &Sentence| if head == Head::Crf { 1.0 } else { s.len() as f64 };
        let single: f64 = dev
            .iter()
            .map(|s| model.mean_loss(std::slice::from_ref(s)).unwrap() * weight(s))
            .sum();
        let pooled = model.mean_loss(&dev).unwrap() * dev.iter().map(weight).sum::<f64>();
        assert!((single - pooled).abs() < 1e-8, "{single} vs {pooled}");
    }
}

#[test]
fn training_is_deterministic_and_bytes_round_trip() {
    let (train, dev) = data();
    let (a, log_a) = tagger::train_on(&train, &dev, &small(Head::Crf), 9).unwrap();
    let (b, log_b) = tagger::train_on(&train, &dev, &small(Head::Crf), 9).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(log_a.best_epoch, log_b.best_epoch);
    let back = TaggerModel::from_bytes(&a.to_bytes()).unwrap();
    assert_eq!(back.to_bytes(), a.to_bytes());
    assert_eq!(back.predict_batch(&dev).unwrap(), a.predict_batch(&dev).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    a.save(&path).unwrap();
    assert_eq!(TaggerModel::load(&path).unwrap().to_bytes(), a.to_bytes());
    assert!(TaggerModel::from_bytes(b"not a model").is_err());
}

#[test]
fn static_embeddings_stay_frozen() {
    let (train, dev) = data();
    let mut words: Vec<String> = train.iter().flat_map(|s| s.surfaces().map(str::to_owned)).collect();
    words.sort();
    words.dedup();
    let text: String = words
        .iter()
        .enumerate()
        .map(|(i, w)| format!("{w} {} {}\n", (i % 7) as f64 / 7.0, -((i % 5) as f64) / 5.0))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vectors.txt");
    std::fs::write(&path, text).unwrap();
    let config = TaggerConfig {
        embeddings: EmbeddingSource::StaticFile { path: path.clone() },
        ..small(Head::Softmax)
    };
    let (model, _) = tagger::train_on(&train, &dev, &config, 2).unwrap();
    let id = model.store.find("word_embedding").unwrap();
    let p = model.store.get(id);
    assert!(!p.trainable);
    let table = &p.value;
    assert_eq!(table.cols(), 2);
    let vectors = tagger::load_static_embeddings(&path).unwrap();
    for w in &words {
        let row = model.word_vocab.id_or_oov(w);
        assert_eq!(table.row_slice(row), vectors.lookup(w).as_slice(), "{w}");
    }
}

#[test]
fn char_features_train() {
    let (train, dev) = data();
    let config = TaggerConfig {
        embeddings: EmbeddingSource::TrainablePlusChar {
            word_dim: 8,
            char_dim: 4,
            char_hidden: 4,
        },
        ..small(Head::Crf)
    };
    let (model, log) = tagger::train_on(&train, &dev, &config, 4).unwrap();
    assert!(model.char_vocab.is_some());
    assert!(log.epochs.iter().all(|e| e.train_loss.is_finite()));
    let back = TaggerModel::from_bytes(&model.to_bytes()).unwrap();
    assert_eq!(back.predict_batch(&dev).unwrap(), model.predict_batch(&dev).unwrap());
}

#[test]
fn early_stopping_respects_patience() {
    let (train, dev) = data();
    let config = TaggerConfig {
        max_epochs: 40,
        patience: 1,
        min_delta: 1.0,
        ..small(Head::Softmax)
    };
    let (_, log) = tagger::train_on(&train, &dev, &config, 1).unwrap();
    assert_eq!(log.epochs.len(), 2);
    assert!(log.stopped_early);
}

#[test]
fn matrix_needs_truecaser_for_tt() {
    let (train, dev) = data();
    let recipe = MatrixRecipe {
        train: &train,
        dev: &dev,
        test: &dev,
        flavors: &[Flavor::TT],
        config: &small(Head::Softmax),
        seed: 1,
        truecaser: None,
        metric: MetricKind::TokenAccuracy,
    };
    assert!(matches!(tagger::evaluate_flavor_matrix(&recipe), Err(TaggerError::Flavor(_))));
}

#[test]
fn matrix_rows_follow_requested_flavors() {
    let (train, dev) = data();
    let flavors = [Flavor::CPlusU50, Flavor::C];
    let recipe = MatrixRecipe {
        train: &train,
        dev: &dev,
        test: &dev,
        flavors: &flavors,
        config: &small(Head::Softmax),
        seed: 1,
        truecaser: None,
        metric: MetricKind::TokenAccuracy,
    };
    let report = tagger::evaluate_flavor_matrix(&recipe).unwrap();
    let order: Vec<Flavor> = report.rows.iter().map(|r| r.flavor).collect();
    assert_eq!(order, flavors);
    for r in &report.rows {
        assert!((0.0..=100.0).contains(&r.test_cased) && (0.0..=100.0).contains(&r.test_uncased));
        assert!((r.avg() - (r.test_cased + r.test_uncased) / 2.0).abs() < 1e-12);
    }
}
