mod common;

use common::{random_sentence, rng, sari_oracle};
use rand::Rng;
use sentsimp::exec::Exec;
use sentsimp::sari::{sari_corpus_with, sari_sentence, SariItem};

const ALPHABET: &[&str] = &["a", "b", "c", "d", "e", "f"];

#[test]
fn matches_brute_force_on_random_cases() {
    let mut r = rng(11);
    for case in 0..300 {
        let source = random_sentence(&mut r, ALPHABET, 1, 8);
        let output = random_sentence(&mut r, ALPHABET, 0, 8);
        let n_refs = r.random_range(1..=3);
        let refs: Vec<String> = (0..n_refs).map(|_| random_sentence(&mut r, ALPHABET, 1, 8)).collect();
        let got = sari_sentence(&source, &output, &refs).unwrap();
        let (sari, add, keep, del) = sari_oracle(&source, &output, &refs);
        for (name, a, b) in [
            ("sari", got.sari, sari),
            ("add", got.add, add),
            ("keep", got.keep, keep),
            ("delete", got.delete, del),
        ] {
            assert!(
                (a - b).abs() < 1e-9,
                "case {case} {name}: {a} vs {b} for {source:?} -> {output:?} / {refs:?}"
            );
        }
    }
}

#[test]
fn scores_stay_in_range() {
    let mut r = rng(5);
    for _ in 0..200 {
        let source = random_sentence(&mut r, ALPHABET, 1, 8);
        let output = random_sentence(&mut r, ALPHABET, 0, 8);
        let refs = vec![random_sentence(&mut r, ALPHABET, 1, 8)];
        let s = sari_sentence(&source, &output, &refs).unwrap();
        for x in [s.sari, s.add, s.keep, s.delete] {
            assert!((0.0..=100.0).contains(&x));
        }
    }
}

#[test]
fn hand_worked_examples() {
    let s = "the cat sat on the mat";
    let id = sari_sentence(s, s, &[s]).unwrap();
    assert_eq!(format!("{:.2}", id.sari), "33.33");

    let r = sari_sentence("a b c", "a b", &["a b"]).unwrap();
    assert_eq!(
        format!("{:.2} {:.2} {:.2} {:.2}", r.sari, r.keep, r.delete, r.add),
        "41.67 50.00 75.00 0.00"
    );
}

#[test]
fn reference_order_is_irrelevant() {
    let refs = vec!["a x c".to_string(), "b c".to_string(), "a b y".to_string()];
    let mut rev = refs.clone();
    rev.reverse();
    let a = sari_sentence("a b c", "a y c", &refs).unwrap();
    let b = sari_sentence("a b c", "a y c", &rev).unwrap();
    assert_eq!(a, b);
}

#[test]
fn corpus_macro_average_matches_oracle() {
    let mut r = rng(23);
    let rows: Vec<(String, String, Vec<String>)> = (0..40)
        .map(|_| {
            let src = random_sentence(&mut r, ALPHABET, 1, 8);
            let out = random_sentence(&mut r, ALPHABET, 1, 8);
            let refs = (0..2).map(|_| random_sentence(&mut r, ALPHABET, 1, 8)).collect();
            (src, out, refs)
        })
        .collect();
    let items: Vec<SariItem> = rows
        .iter()
        .map(|(s, o, refs)| SariItem {
            source: s,
            output: o,
            references: refs,
        })
        .collect();
    let expected = rows.iter().map(|(s, o, refs)| sari_oracle(s, o, refs).0).sum::<f64>() / rows.len() as f64;
    let seq = sari_corpus_with(Exec::Sequential, &items).unwrap();
    let par = sari_corpus_with(Exec::Parallel, &items).unwrap();
    assert!((seq.report.sari - expected).abs() < 1e-9);
    assert_eq!(seq, par);
}
