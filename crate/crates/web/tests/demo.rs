use casefold_web::{crf_explore, flavor_preview, parse_matrix, truecase_demo};
use serde_json::Value;

const CORPUS: &str = "Will NNP\nsaw VBD\nBill NNP\n. .\n\nThe DT\ncat NN\n. .\n";

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn preview_of_each_plain_flavor() {
    let cu = parse(&flavor_preview(CORPUS, "cu", 1).unwrap());
    assert_eq!(cu["sentences_in"], 2);
    assert_eq!(cu["sentences_out"], 4);
    assert!(cu["train"].as_str().unwrap().ends_with("the DT\ncat NN\n. .\n\n"));
    let u = parse(&flavor_preview(CORPUS, "u", 1).unwrap());
    let surfaces: String = u["train"].as_str().unwrap().lines().filter_map(|l| l.split(' ').next()).collect();
    assert!(!surfaces.chars().any(char::is_uppercase));
    assert_eq!(u["test_c"].as_str().unwrap(), CORPUS.to_owned() + "\n");
    assert_eq!(flavor_preview(CORPUS, "cu50", 3).unwrap(), flavor_preview(CORPUS, "cu50", 3).unwrap());
}

#[test]
fn preview_rejects_bad_input() {
    assert!(flavor_preview(CORPUS, "tt", 1).unwrap_err().to_string().contains("truecaser"));
    assert!(flavor_preview(CORPUS, "zz", 1).is_err());
    assert!(flavor_preview("lonely\n", "c", 1).is_err());
}

#[test]
fn matrix_parsing() {
    assert_eq!(parse_matrix("1 2; 3,4\n").unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    assert!(parse_matrix("1 x").is_err());
    assert!(parse_matrix("").unwrap().is_empty());
}

#[test]
fn crf_explorer_matches_a_hand_computed_case() {
    // Two steps, two classes, no transition preferences: the best path
    // takes the larger emission at each step and Z factorizes.
    let r = parse(&crf_explore("1 0\n0 2", "0 0\n0 0", "", "").unwrap());
    assert_eq!(r["path"], serde_json::json!([0, 1]));
    assert!((r["score"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    let log_z = (1f64.exp() + 1.0).ln() + (1.0 + 2f64.exp()).ln();
    assert!((r["log_z"].as_f64().unwrap() - log_z).abs() < 1e-12);
    let p = r["probability"].as_f64().unwrap();
    assert!(p > 0.0 && p <= 1.0);
    assert!(crf_explore("1 0", "0 0 0", "", "").is_err());
    assert!(crf_explore("1 0", "0 0\n0 0", "1 2 3", "").is_err());
}

#[test]
fn truecaser_demo_keeps_text_up_to_case() {
    let train = "The cat sat\nLondon is big\nWe saw London\nThe river runs\n";
    let r = parse(&truecase_demo(train, "london is big\nthe cat", 4, 2, 1).unwrap());
    let out = r["output"].as_str().unwrap();
    assert_eq!(out.to_lowercase(), "london is big\nthe cat");
    assert!(truecase_demo("one line", "x", 4, 2, 1).is_err());
}
