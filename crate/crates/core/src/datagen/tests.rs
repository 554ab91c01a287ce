use std::collections::BTreeMap;

use super::*;
use crate::datagen::tokens::Symbol::{Delim, Up, Value};

fn multiplicities(seq: &[u32]) -> BTreeMap<u32, usize> {
    let mut m = BTreeMap::new();
    for &v in seq {
        *m.entry(v).or_insert(0) += 1;
    }
    m
}

#[test]
fn length_tier_probabilities() {
    let spec = LengthSpec::SORTING;
    assert!((spec.probability(3) - 0.2).abs() < 1e-12);
    assert!((spec.probability(10) - 0.2 / 15.0).abs() < 1e-12);
    assert_eq!(spec.probability(21), 0.0);
    let total: f64 = (0..30).map(|l| spec.probability(l)).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn head_tier_mass_is_eighty_percent() {
    let cfg = GenConfig::sorting(3, 100_000);
    let head = (0..cfg.count)
        .filter(|&i| (2..=5).contains(&skewed_length_sample(&mut cfg.rng(i), &cfg.lengths)))
        .count();
    let frac = head as f64 / cfg.count as f64;
    assert!((frac - 0.8).abs() < 0.01, "{frac}");
}

#[test]
fn two_element_sort_encodes_two_predictions() {
    let raw = RawExample::sorting(&[9, 4]);
    assert_eq!(raw.answer, vec![Value(4), Value(9)]);
    let ex = encode_example(&raw, &TokenTable::SORTING, 8).unwrap();
    assert_eq!(&ex.tokens[..4], &[10, 5, 1, 5]);
    assert_eq!(&ex.targets[..4], &[5, 1, 5, 10]);
    assert_eq!(ex.mask, vec![false, false, true, true, false, false, false, false]);
    assert_eq!(ex.prompt(), &[10, 5, 1]);
    assert_eq!(ex.expected(), &[5, 10]);
    assert_eq!(ex.n_input, 2);
}

#[test]
fn padding_is_never_scored_and_decoding_round_trips() {
    let cfg = GenConfig::sorting(5, 200);
    for task in [Task::Sort, Task::Successor, Task::Count, Task::Fill, Task::Increment, Task::Carry] {
        let cfg = GenConfig::for_task(task, cfg.seed, cfg.count);
        let table = TokenTable::for_family(task.family());
        for raw in gen_dataset(task, &cfg).unwrap() {
            let ex = encode_example(&raw, &table, 48).unwrap();
            for t in 0..48 {
                if ex.tokens[t] == PAD_ID {
                    assert!(!ex.mask[t]);
                }
            }
            let back = ex.decode(&table).unwrap();
            assert_eq!(back.sequence(), raw.sequence());
            assert_eq!((back.task, &back.input, &back.given, &back.scored), (raw.task, &raw.input, &raw.given, &raw.scored));
        }
    }
}

#[test]
fn oversized_examples_are_rejected() {
    let raw = RawExample::sorting(&[3, 1, 2]);
    assert!(matches!(encode_example(&raw, &TokenTable::SORTING, 5), Err(crate::Error::Capacity(_))));
    assert!(encode_example(&raw, &TokenTable::SORTING, 6).is_ok());
    assert!(matches!(encode_example(&raw, &TokenTable::INCREMENT, 8), Err(crate::Error::Vocab(_))));
}

#[test]
fn repetition_branch_uses_half_length_palette() {
    let cfg = GenConfig { repetition_prob: 1.0, ..GenConfig::sorting(11, 500) };
    for raw in gen_sort_dataset(&cfg, true).unwrap() {
        let seq = raw.input_values();
        assert_eq!(raw.variant, Variant::Repeated);
        assert!(multiplicities(&seq).len() <= seq.len() / 2, "{seq:?}");
    }
    let six = LengthSpec { head: (6, 6), tail: (6, 6), head_mass: 1.0 };
    let cfg = GenConfig { lengths: six, ..cfg };
    let widest = gen_sort_dataset(&cfg, true).unwrap().iter().map(|r| multiplicities(&r.input_values()).len()).max();
    assert_eq!(widest, Some(3));
}

#[test]
fn successor_follows_the_first_occurrence() {
    assert_eq!(successor_of(&[5, 17, 43, 78, 92], 43), Some(78));
    assert_eq!(successor_of(&[4, 4, 9], 4), Some(4));
    assert_eq!(successor_of(&[5, 17], 17), None);
    assert_eq!(RawExample::successor(&[17, 5], 17).answer, vec![Delim]);
    let ex = encode_example(&RawExample::successor(&[43, 5, 92], 43), &TokenTable::SORTING, 8).unwrap();
    assert_eq!(ex.prompt(), &[44, 6, 93, 1, 44]);
    assert_eq!(ex.expected(), &[93]);
}

#[test]
fn count_targets_the_least_occurring_symbol() {
    let cfg = GenConfig::sorting(8, 5000);
    let mut ties = 0;
    for raw in gen_dataset(Task::Count, &cfg).unwrap() {
        let m = multiplicities(&raw.input_values());
        assert_eq!(m.len(), 2);
        let (lo, hi) = (m.values().min().copied().unwrap(), m.values().max().copied().unwrap());
        if lo == hi {
            ties += 1;
            assert_eq!(raw.answer, vec![Delim]);
        } else {
            assert!((1..=5).contains(&(hi - lo)));
            let least = m.iter().find(|(_, &c)| c == lo).map(|(&v, _)| v).unwrap();
            assert_eq!(raw.answer, vec![Value(least)]);
        }
    }
    let frac = ties as f64 / cfg.count as f64;
    assert!((frac - 0.5).abs() < 0.03, "{frac}");
}

#[test]
fn fill_completes_the_run() {
    assert_eq!(RawExample::fill(7, 4, 1).answer, vec![Value(7); 3]);
    assert_eq!(RawExample::fill(7, 4, 0).answer, vec![Value(7); 4]);
    let cfg = GenConfig::sorting(2, 3000);
    for (i, raw) in gen_dataset(Task::Fill, &cfg).unwrap().into_iter().enumerate() {
        let len = skewed_length_sample(&mut cfg.rng(i), &cfg.lengths);
        let m = raw.input.len();
        assert!(m >= 1 && m <= (len / 2).max(1));
        assert_eq!(raw.given.len() + raw.answer.len(), m);
    }
}

#[test]
fn rep_sets_have_the_declared_composition() {
    let rep = RepTestConfig { i: 10, r: 3, count: 300 };
    for raw in gen_rep_test_set(&rep, (1, 100), 4).unwrap() {
        let seq = raw.input_values();
        assert_eq!(seq.len(), 10);
        assert!(multiplicities(&seq).values().filter(|&&c| c >= 3).count() >= 3);
        assert_eq!(raw.answer_values(), sorted(&seq));
    }
    let rep = RepTestConfig { i: 6, r: 2, count: 300 };
    for raw in gen_rep_test_set(&rep, (1, 100), 4).unwrap() {
        assert!(multiplicities(&raw.input_values()).values().filter(|&&c| c >= 2).count() >= 3);
    }
    let rep = RepTestConfig { i: 10, r: 5, count: 50 };
    for raw in gen_rep_test_set(&rep, (1, 100), 4).unwrap() {
        assert_eq!(multiplicities(&raw.input_values()).values().filter(|&&c| c >= 5).count(), 2);
    }
    assert!(RepTestConfig { i: 3, r: 1, count: 1 }.validate((1, 100)).is_err());
    assert!(RepTestConfig { i: 2, r: 3, count: 1 }.validate((1, 100)).is_err());
}

#[test]
fn increment_targets_are_reversed_digits() {
    assert_eq!(RawExample::increment(&[1, 2, 3]).answer_values(), vec![4, 2, 1]);
    assert_eq!(RawExample::increment(&[9, 9]).answer_values(), vec![0, 0, 1]);
    assert_eq!(RawExample::carry(&[1, 2, 3]).answer, [Value(4), Up, Value(0), Value(2), Up, Value(0), Value(1), Up, Value(0)]);
    assert_eq!(RawExample::carry(&[1, 9, 9]).answer, [Value(0), Up, Value(1), Value(0), Up, Value(1), Value(2), Up, Value(0)]);
    assert_eq!(RawExample::carry(&[9]).answer, [Value(0), Up, Value(1), Value(1), Up, Value(0)]);
    let ex = encode_example(&RawExample::carry(&[1, 2, 3]), &TokenTable::INCREMENT, 16).unwrap();
    let ups = (0..16).filter(|&t| ex.targets[t] == 12).collect::<Vec<_>>();
    assert_eq!(ups.len(), 3);
    assert!(ups.iter().all(|&t| !ex.mask[t]));
    assert_eq!(ex.mask.iter().filter(|&&m| m).count(), 6);
}

#[test]
fn nines_branch_frequency() {
    let cfg = GenConfig::increment(21, 100_000);
    let data = gen_dataset(Task::Increment, &cfg).unwrap();
    let nines = data.iter().filter(|r| r.variant == Variant::Nines).count() as f64 / data.len() as f64;
    assert!((nines - 0.1).abs() < 0.01, "{nines}");
    for raw in &data {
        let digits = raw.input_values();
        assert_ne!(digits[0], 0);
        let value: u128 = digits.iter().fold(0, |acc, &d| acc * 10 + d as u128);
        let mut out = raw.answer_values();
        out.reverse();
        assert_eq!(out.iter().fold(0u128, |acc, &d| acc * 10 + d as u128), value + 1);
    }
}

#[test]
fn value_marginals_are_uniform() {
    let cfg = GenConfig { repetition_prob: 0.0, ..GenConfig::sorting(13, 20_000) };
    let mut counts = [0usize; 100];
    for raw in gen_sort_dataset(&cfg, false).unwrap() {
        for v in raw.input_values() {
            counts[v as usize - 1] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let expected = total as f64 / 100.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of χ² with 99 degrees of freedom.
    assert!(chi2 < 134.64, "{chi2}");
}

#[test]
fn examples_do_not_depend_on_generation_order() {
    let cfg = GenConfig::sorting(99, 64);
    let all = gen_dataset(Task::Successor, &cfg).unwrap();
    for i in [0, 17, 63] {
        assert_eq!(gen_example(Task::Successor, &cfg, i), all[i]);
    }
    let other = gen_dataset(Task::Successor, &GenConfig::sorting(100, 64)).unwrap();
    assert_ne!(all, other);
}

#[test]
fn dataset_files_round_trip_and_regenerate_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenConfig::sorting(17, 3);
    let make = |path: &std::path::Path| {
        let ex = encode_all(&gen_sort_dataset(&cfg, true).unwrap(), &TokenTable::SORTING, 48).unwrap();
        write_dataset(path, &DatasetHeader::new(Task::Sort, &cfg, 48, ex.len()), &ex).unwrap();
        ex
    };
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let ex = make(&a);
    make(&b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let back = read_dataset(&a).unwrap();
    assert_eq!(back.examples, ex);
    assert_eq!(back.header.format, "lg-dataset/1");
    assert_eq!(back.header.generator, cfg);

    let text = std::fs::read_to_string(&a).unwrap().replacen("lg-dataset/1", "lg-dataset/9", 1);
    std::fs::write(&b, text).unwrap();
    assert!(matches!(read_dataset(&b), Err(crate::Error::Version(_))));
    let text = std::fs::read_to_string(&a).unwrap();
    std::fs::write(&b, &text[..text.len() - 20]).unwrap();
    assert!(matches!(read_dataset(&b), Err(crate::Error::Malformed(_))));
}
