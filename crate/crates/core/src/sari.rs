//! SARI: n-gram ADD / KEEP / DELETE scores of a system output against its
//! source sentence and a set of references.
//!
//! For each order n in 1..=4, with `S`, `O` the source and output n-gram
//! counts and `R*(g)` the reference count averaged over the `r` references:
//!
//! * keep: `K = min(S, O)`, `K* = min(S, R*)`; F1 of `sum min(K, K*)` against
//!   `sum K` (precision) and `sum K*` (recall).
//! * delete: `D = max(0, S - O)`, `D* = max(0, S - R*)`; precision only.
//! * add: `A = max(0, O - S)`, `A* = max(0, R* - S)`; F1 as for keep.
//!
//! A ratio with a zero denominator is 0. Every order contributes to the
//! component means, including orders a short sentence cannot fill.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::tokenizer::surface_tokens;

pub const MAX_ORDER: usize = 4;

/// Multiset of the contiguous n-grams of one order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NgramCounts {
    order: usize,
    counts: BTreeMap<Vec<String>, usize>,
}

impl NgramCounts {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, gram: &[&str]) -> usize {
        let key: Vec<String> = gram.iter().map(|s| s.to_string()).collect();
        self.counts.get(&key).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[String], usize)> {
        self.counts.iter().map(|(k, &v)| (k.as_slice(), v))
    }

    fn count(&self, gram: &[String]) -> f64 {
        self.counts.get(gram).copied().unwrap_or(0) as f64
    }
}

pub fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> NgramCounts {
    let mut counts = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            let key = w.iter().map(|s| s.as_ref().to_string()).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    NgramCounts { order: n, counts }
}

/// Component scores of one n-gram order, each in [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OrderScores {
    pub add: f64,
    pub keep: f64,
    pub delete: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SariReport {
    pub sari: f64,
    pub add: f64,
    pub keep: f64,
    pub delete: f64,
    pub per_order: [OrderScores; MAX_ORDER],
}

impl SariReport {
    fn from_orders(per_order: [OrderScores; MAX_ORDER]) -> Self {
        let mean = |f: fn(&OrderScores) -> f64| per_order.iter().map(f).sum::<f64>() / MAX_ORDER as f64;
        let add = mean(|o| o.add);
        let keep = mean(|o| o.keep);
        let delete = mean(|o| o.delete);
        SariReport {
            sari: (add + keep + delete) / 3.0,
            add,
            keep,
            delete,
            per_order,
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn order_scores(source: &[String], output: &[String], refs: &[Vec<String>], n: usize) -> OrderScores {
    let cs = ngrams(source, n);
    let co = ngrams(output, n);
    let cr: Vec<NgramCounts> = refs.iter().map(|r| ngrams(r, n)).collect();
    let r = refs.len() as f64;

    let mut grams: BTreeSet<&[String]> = BTreeSet::new();
    grams.extend(cs.counts.keys().map(Vec::as_slice));
    grams.extend(co.counts.keys().map(Vec::as_slice));
    for c in &cr {
        grams.extend(c.counts.keys().map(Vec::as_slice));
    }

    let (mut keep_hit, mut keep_sys, mut keep_ref) = (0.0, 0.0, 0.0);
    let (mut del_hit, mut del_sys) = (0.0, 0.0);
    let (mut add_hit, mut add_sys, mut add_ref) = (0.0, 0.0, 0.0);
    for g in grams {
        let s = cs.count(g);
        let o = co.count(g);
        let rstar = cr.iter().map(|c| c.count(g)).sum::<f64>() / r;

        let k = s.min(o);
        let k_ref = s.min(rstar);
        keep_hit += k.min(k_ref);
        keep_sys += k;
        keep_ref += k_ref;

        let d = (s - o).max(0.0);
        let d_ref = (s - rstar).max(0.0);
        del_hit += d.min(d_ref);
        del_sys += d;

        let a = (o - s).max(0.0);
        let a_ref = (rstar - s).max(0.0);
        add_hit += a.min(a_ref);
        add_sys += a;
        add_ref += a_ref;
    }

    OrderScores {
        add: 100.0 * f1(ratio(add_hit, add_sys), ratio(add_hit, add_ref)),
        keep: 100.0 * f1(ratio(keep_hit, keep_sys), ratio(keep_hit, keep_ref)),
        delete: 100.0 * ratio(del_hit, del_sys),
    }
}

/// SARI of one system output.
pub fn sari_sentence<S: AsRef<str>>(source: &str, output: &str, references: &[S]) -> Result<SariReport> {
    if references.is_empty() {
        return Err(Error::Sari("at least one reference is required".into()));
    }
    let tok = |t: &str| surface_tokens(t).collect::<Vec<_>>();
    let s = tok(source);
    let o = tok(output);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tok(r.as_ref())).collect();
    let per_order = std::array::from_fn(|i| order_scores(&s, &o, &refs, i + 1));
    Ok(SariReport::from_orders(per_order))
}

#[derive(Debug, Clone, Copy)]
pub struct SariItem<'a> {
    pub source: &'a str,
    pub output: &'a str,
    pub references: &'a [String],
}

/// Corpus report plus the per-sentence reports it averages.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSari {
    pub report: SariReport,
    pub sentences: Vec<SariReport>,
}

impl CorpusSari {
    pub fn sentence_scores(&self) -> Vec<f64> {
        self.sentences.iter().map(|s| s.sari).collect()
    }
}

/// Macro-averaged SARI: every component is the mean of the per-sentence
/// components.
pub fn sari_corpus(items: &[SariItem<'_>]) -> Result<CorpusSari> {
    sari_corpus_with(Exec::default(), items)
}

pub fn sari_corpus_with(exec: Exec, items: &[SariItem<'_>]) -> Result<CorpusSari> {
    if items.is_empty() {
        return Err(Error::Sari("cannot score an empty corpus".into()));
    }
    let sentences = exec::map(exec, items, |it| sari_sentence(it.source, it.output, it.references))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = sentences.len() as f64;
    let per_order = std::array::from_fn(|i| {
        let mut acc = OrderScores::default();
        for s in &sentences {
            acc.add += s.per_order[i].add;
            acc.keep += s.per_order[i].keep;
            acc.delete += s.per_order[i].delete;
        }
        OrderScores {
            add: acc.add / n,
            keep: acc.keep / n,
            delete: acc.delete / n,
        }
    });
    Ok(CorpusSari {
        report: SariReport::from_orders(per_order),
        sentences,
    })
}

/// Equal-width histogram over [0, 100]; 100 falls in the last bin.
/// Returns `(bin lower edge, count)` for every bin.
pub fn score_histogram(scores: &[f64], num_bins: usize) -> Result<Vec<(f64, usize)>> {
    if num_bins == 0 {
        return Err(Error::Sari("histogram needs at least one bin".into()));
    }
    let width = 100.0 / num_bins as f64;
    let mut counts = vec![0usize; num_bins];
    for &s in scores {
        let bin = ((s.clamp(0.0, 100.0) / width).floor() as usize).min(num_bins - 1);
        counts[bin] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as f64 * width, c))
        .collect())
}
