use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::construction::ConstructionDecoder;
use crate::model::{Model, ModelConfig, PositionalEmbeddings, SoftmaxMode};
use crate::numerics::Activation;

fn tiny(context_length: usize) -> ModelConfig {
    ModelConfig {
        depth: 1,
        d: 16,
        heads: 2,
        d_mlp: 32,
        vocab: 103,
        activation: Activation::Gelu,
        softmax_mode: SoftmaxMode::Standard,
        context_length,
        positional_embeddings: PositionalEmbeddings::None,
    }
}

/// Plain recursion over the three edit operations.
fn edit_recursive(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = edit_recursive(ra, rb) + usize::from(x != y);
            sub.min(edit_recursive(ra, b) + 1).min(edit_recursive(a, rb) + 1)
        }
    }
}

#[test]
fn edit_distance_examples() {
    assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
    assert_eq!(edit_distance(&[1, 2, 3], &[1, 3]), 1);
    assert_eq!(edit_distance::<u32>(&[], &[4, 5]), 2);
    assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
}

#[test]
fn edit_distance_matches_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            let n = rng.gen_range(0..=8);
            (0..n).map(|_| rng.gen_range(0..4)).collect()
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        assert_eq!(edit_distance(&a, &b), edit_recursive(&a, &b), "{a:?} {b:?}");
    }
}

proptest! {
    #[test]
    fn edit_distance_is_a_metric(
        a in prop::collection::vec(0u8..5, 0..10),
        b in prop::collection::vec(0u8..5, 0..10),
        c in prop::collection::vec(0u8..5, 0..10),
    ) {
        let (ab, ba) = (edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
    }
}

#[test]
fn suite_tags_parse() {
    let s = parse_suites("10, 12,rep(10,3)").unwrap();
    assert_eq!(s, vec![Suite::Length(10), Suite::Length(12), Suite::Rep { i: 10, r: 3 }]);
    assert_eq!(s[2].tag(), "rep(10,3)");
    assert!(parse_suites("10,rep(3)").is_err());
    assert!(parse_suites("x").is_err());
}

#[test]
fn construction_wrapper_scores_perfectly() {
    let dec = ConstructionDecoder::new(100).unwrap();
    let suites = [Suite::Length(20), Suite::Length(50), Suite::Rep { i: 10, r: 5 }];
    let report = evaluate_lengths(&dec, "construction", &suites, 20, (1, 100), 3).unwrap();
    assert_eq!(report.rows.len(), 3);
    for row in &report.rows {
        assert_eq!(row.full_seq_acc, 1.0, "{row:?}");
        assert_eq!(row.mean_edit_distance, 0.0);
    }
    let csv = report.to_csv();
    assert!(csv.starts_with("# model: construction\n# seed: 3\n# count: 20\ntag,n_examples"));
    assert!(csv.contains("\n\"rep(10,5)\",20,1.000000,0.000000\n"));
}

#[test]
fn untrained_model_is_at_chance() {
    let model = Model::<f64>::init(tiny(24), 3).unwrap();
    let report = evaluate_lengths(&model, "random", &[Suite::Length(10)], 100, (1, 100), 1).unwrap();
    assert!(report.rows[0].full_seq_acc < 0.01);
    assert!(report.rows[0].mean_edit_distance > 5.0);
}

#[test]
fn single_exact_example() {
    let ex = encode_all(&[RawExample::sorting(&[3, 1])], &TokenTable::SORTING, 8).unwrap();
    let dec = ConstructionDecoder::new(10).unwrap();
    assert_eq!(full_sequence_accuracy(&dec, &ex).unwrap(), 1.0);
}

#[test]
fn increment_oracle_scores_perfectly_including_overflow() {
    let report = evaluate_increment(&IncrementOracle, "oracle", &[2, 5, 11], 200, 9).unwrap();
    assert!(report.rows.iter().all(|r| r.full_seq_acc == 1.0));
    let ex = encode_all(&[RawExample::increment(&[9, 9])], &TokenTable::INCREMENT, 8).unwrap();
    assert_eq!(ex[0].expected(), &[2, 2, 3]);
    let (got, want) = decode_example(&IncrementOracle, &ex[0]).unwrap();
    assert_eq!(got, want);
    assert_eq!(edit_distance(&got[..2], &want), 1);
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let dec = ConstructionDecoder::new(10).unwrap();
    assert!(matches!(evaluate_increment(&dec, "c", &[3], 2, 0), Err(Error::Vocab(_))));
    assert!(matches!(evaluate_lengths(&IncrementOracle, "o", &[Suite::Length(3)], 2, (1, 9), 0), Err(Error::Vocab(_))));
}

#[test]
fn suites_longer_than_the_context_fail() {
    let model = Model::<f64>::init(tiny(16), 3).unwrap();
    assert!(matches!(evaluate_lengths(&model, "m", &[Suite::Length(10)], 2, (1, 100), 0), Err(Error::Capacity(_))));
}
