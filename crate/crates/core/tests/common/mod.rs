//! Shared fixtures and oracles for the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentsimp::corpus::{load_parallel, ParallelExample};
use sentsimp::model::{init_model, variant_config, Model, Scale, Variant};
use sentsimp::tokenizer::Vocabulary;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/toy")
        .join(name)
}

pub fn toy_train() -> Vec<ParallelExample> {
    load_parallel(fixture("train.src"), fixture("train.tgt")).unwrap()
}

pub fn toy_vocab(max_size: usize) -> Vocabulary {
    let ex = toy_train();
    let text: Vec<&str> = ex.iter().flat_map(|e| [e.source.as_str(), e.target.as_str()]).collect();
    Vocabulary::build(&text, max_size, 1).unwrap()
}

pub fn toy_model(variant: Variant, vocab_size: usize, seed: u64) -> Model {
    init_model(variant_config(variant, Scale::Toy).with_vocab_size(vocab_size), seed).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Whitespace-joined sentence of `lo..=hi` tokens drawn from `alphabet`.
pub fn random_sentence(rng: &mut ChaCha8Rng, alphabet: &[&str], lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Straightforward SARI written from the component definitions, kept apart
/// from the library implementation. Returns `(sari, add, keep, delete)`.
pub fn sari_oracle(source: &str, output: &str, refs: &[String]) -> (f64, f64, f64, f64) {
    fn grams(s: &str, n: usize) -> HashMap<String, f64> {
        let toks: Vec<String> = s.split_whitespace().map(|t| t.to_lowercase()).collect();
        let mut m = HashMap::new();
        if toks.len() >= n {
            for i in 0..=toks.len() - n {
                *m.entry(toks[i..i + n].join(" ")).or_insert(0.0) += 1.0;
            }
        }
        m
    }
    fn div(a: f64, b: f64) -> f64 {
        if b > 0.0 {
            a / b
        } else {
            0.0
        }
    }
    fn fscore(p: f64, r: f64) -> f64 {
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    let (mut add, mut keep, mut del) = (0.0, 0.0, 0.0);
    for n in 1..=4 {
        let s = grams(source, n);
        let o = grams(output, n);
        let rs: Vec<HashMap<String, f64>> = refs.iter().map(|r| grams(r, n)).collect();
        let mut vocab: Vec<&String> = s
            .keys()
            .chain(o.keys())
            .chain(rs.iter().flat_map(|r| r.keys()))
            .collect();
        vocab.sort();
        vocab.dedup();

        let c = |m: &HashMap<String, f64>, g: &String| m.get(g).copied().unwrap_or(0.0);
        let (mut kn, mut kd_sys, mut kd_ref) = (0.0, 0.0, 0.0);
        let (mut dn, mut dd) = (0.0, 0.0);
        let (mut an, mut ad_sys, mut ad_ref) = (0.0, 0.0, 0.0);
        for g in vocab {
            let (sv, ov) = (c(&s, g), c(&o, g));
            let rv = rs.iter().map(|r| c(r, g)).sum::<f64>() / refs.len() as f64;
            let k_sys = f64::min(sv, ov);
            let k_ref = f64::min(sv, rv);
            kn += f64::min(k_sys, k_ref);
            kd_sys += k_sys;
            kd_ref += k_ref;
            let d_sys = f64::max(sv - ov, 0.0);
            let d_ref = f64::max(sv - rv, 0.0);
            dn += f64::min(d_sys, d_ref);
            dd += d_sys;
            let a_sys = f64::max(ov - sv, 0.0);
            let a_ref = f64::max(rv - sv, 0.0);
            an += f64::min(a_sys, a_ref);
            ad_sys += a_sys;
            ad_ref += a_ref;
        }
        keep += fscore(div(kn, kd_sys), div(kn, kd_ref));
        del += div(dn, dd);
        add += fscore(div(an, ad_sys), div(an, ad_ref));
    }
    let (add, keep, del) = (100.0 * add / 4.0, 100.0 * keep / 4.0, 100.0 * del / 4.0);
    ((add + keep + del) / 3.0, add, keep, del)
}
