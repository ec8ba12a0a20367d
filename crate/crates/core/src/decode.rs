//! Greedy and beam-search generation.
//!
//! Search runs against the [`NextToken`] trait so it can be exercised on
//! hand-built distributions as well as on a [`Model`].

use std::cmp::Ordering;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::model::{EncodedSource, Model, MAX_TOKENS};
use crate::tokenizer::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Beam,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Beam => "beam",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "beam" => Ok(Strategy::Beam),
            _ => Err(Error::Config(format!("unknown decoding strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    /// Cap on generated ids, counting the leading BOS.
    pub max_len: usize,
    pub strategy: Strategy,
    pub beam_width: usize,
    /// Finished beams are ranked by `log_prob / len^length_penalty`.
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_len: MAX_TOKENS,
            strategy: Strategy::Greedy,
            beam_width: 4,
            length_penalty: 0.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        if self.max_len < 3 {
            return Err(Error::Config(format!("decode max_len {} is below 3", self.max_len)));
        }
        Ok(())
    }
}

/// Next-token scores given a prefix that starts with BOS.
pub trait NextToken {
    fn logits(&self, prefix: &[TokenId]) -> Result<Vec<f64>>;
}

/// A model conditioned on one encoded source sentence.
pub struct ModelScorer<'m> {
    model: &'m Model,
    source: EncodedSource,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m Model, source_ids: &[TokenId]) -> Result<Self> {
        Ok(ModelScorer {
            model,
            source: model.encode_source(source_ids)?,
        })
    }
}

impl NextToken for ModelScorer<'_> {
    fn logits(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        self.model.next_token_logits(&self.source, prefix)
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

/// A generated sequence. `ids` excludes BOS and includes EOS when finished.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub ids: Vec<TokenId>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn score(&self, length_penalty: f64) -> f64 {
        if length_penalty == 0.0 {
            self.log_prob
        } else {
            self.log_prob / (self.ids.len().max(1) as f64).powf(length_penalty)
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_search(m: &impl NextToken, bos: TokenId, eos: TokenId, max_len: usize) -> Result<Hypothesis> {
    let mut prefix = vec![bos];
    let mut log_prob = 0.0;
    while prefix.len() < max_len {
        let logits = m.logits(&prefix)?;
        let next = argmax(&logits);
        log_prob += log_softmax(&logits)[next];
        if next as TokenId == eos {
            let mut ids = prefix.split_off(1);
            ids.push(eos);
            return Ok(Hypothesis {
                ids,
                log_prob,
                finished: true,
            });
        }
        prefix.push(next as TokenId);
    }
    Ok(Hypothesis {
        ids: prefix.split_off(1),
        log_prob,
        finished: false,
    })
}

/// Log-probability of `ids` (without BOS) under `m`, scored token by token.
pub fn sequence_log_prob(m: &impl NextToken, bos: TokenId, ids: &[TokenId]) -> Result<f64> {
    let mut prefix = vec![bos];
    let mut total = 0.0;
    for &id in ids {
        let lp = log_softmax(&m.logits(&prefix)?);
        total += lp
            .get(id as usize)
            .ok_or_else(|| Error::Vocab(format!("token id {id} outside the model vocabulary")))?;
        prefix.push(id);
    }
    Ok(total)
}

struct Candidate {
    total: f64,
    beam: usize,
    logit: f64,
    token: TokenId,
}

/// Length-penalised beam search. Candidates are ranked by cumulative
/// log-probability, then parent beam rank, then raw logit, then lowest id,
/// so width 1 retraces [`greedy_search`] exactly. Beams that emit EOS retire;
/// beams still open at `max_len` join the pool as unfinished. The greedy
/// hypothesis is always part of the pool, so the result never scores below
/// greedy decoding.
pub fn beam_search(m: &impl NextToken, bos: TokenId, eos: TokenId, cfg: &DecodeConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let greedy = greedy_search(m, bos, eos, cfg.max_len)?;
    let mut alive: Vec<(Vec<TokenId>, f64)> = vec![(vec![bos], 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();

    while !alive.is_empty() {
        if alive[0].0.len() >= cfg.max_len {
            finished.extend(alive.drain(..).map(|(mut ids, log_prob)| Hypothesis {
                ids: ids.split_off(1),
                log_prob,
                finished: false,
            }));
            break;
        }
        let mut cands = Vec::new();
        for (beam, (prefix, lp)) in alive.iter().enumerate() {
            let logits = m.logits(prefix)?;
            let lps = log_softmax(&logits);
            for (tok, (&logit, &l)) in logits.iter().zip(&lps).enumerate() {
                cands.push(Candidate {
                    total: lp + l,
                    beam,
                    logit,
                    token: tok as TokenId,
                });
            }
        }
        cands.sort_by(|a, b| {
            b.total
                .partial_cmp(&a.total)
                .unwrap_or(Ordering::Equal)
                .then(a.beam.cmp(&b.beam))
                .then(b.logit.partial_cmp(&a.logit).unwrap_or(Ordering::Equal))
                .then(a.token.cmp(&b.token))
        });

        let mut next = Vec::with_capacity(cfg.beam_width);
        for c in cands.into_iter().take(cfg.beam_width) {
            let mut ids = alive[c.beam].0.clone();
            ids.push(c.token);
            if c.token == eos {
                finished.push(Hypothesis {
                    ids: ids.split_off(1),
                    log_prob: c.total,
                    finished: true,
                });
            } else {
                next.push((ids, c.total));
            }
        }
        alive = next;

        // With no length penalty an open beam can only lose probability.
        if cfg.length_penalty == 0.0 {
            let best_done = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            let best_open = alive.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
            if best_done >= best_open {
                break;
            }
        }
    }

    finished.push(greedy);
    let mut best: Option<Hypothesis> = None;
    for h in finished {
        if best
            .as_ref()
            .is_none_or(|b| h.score(cfg.length_penalty) > b.score(cfg.length_penalty))
        {
            best = Some(h);
        }
    }
    Ok(best.expect("pool holds at least the greedy hypothesis"))
}

fn decode_with(model: &Model, vocab: &Vocabulary, source: &str, cfg: &DecodeConfig, beam: bool) -> Result<String> {
    cfg.validate()?;
    let max_len = cfg.max_len.min(model.config().max_len);
    let src = vocab.encode(source, model.config().max_len).ids;
    let scorer = ModelScorer::new(model, &src)?;
    let hyp = if beam {
        beam_search(
            &scorer,
            vocab.bos_id(),
            vocab.eos_id(),
            &DecodeConfig { max_len, ..*cfg },
        )?
    } else {
        greedy_search(&scorer, vocab.bos_id(), vocab.eos_id(), max_len)?
    };
    vocab.decode(&hyp.ids)
}

pub fn greedy_decode(model: &Model, vocab: &Vocabulary, source: &str, cfg: &DecodeConfig) -> Result<String> {
    decode_with(model, vocab, source, cfg, false)
}

pub fn beam_decode(model: &Model, vocab: &Vocabulary, source: &str, cfg: &DecodeConfig) -> Result<String> {
    decode_with(model, vocab, source, cfg, true)
}

/// Decodes with the strategy named in `cfg`.
pub fn simplify(model: &Model, vocab: &Vocabulary, source: &str, cfg: &DecodeConfig) -> Result<String> {
    decode_with(model, vocab, source, cfg, cfg.strategy == Strategy::Beam)
}

/// Simplifies every sentence, in order. Sentences are independent, so they
/// may be decoded in parallel.
pub fn simplify_all<S: AsRef<str> + Sync>(
    exec: Exec,
    model: &Model,
    vocab: &Vocabulary,
    sources: &[S],
    cfg: &DecodeConfig,
) -> Result<Vec<String>> {
    exec::map(exec, sources, |s| simplify(model, vocab, s.as_ref(), cfg))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed next-token table keyed by the last token of the prefix.
    struct Table(Vec<Vec<f64>>);

    impl NextToken for Table {
        fn logits(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
            Ok(self.0[*prefix.last().unwrap() as usize]
                .iter()
                .map(|p| p.ln())
                .collect())
        }
    }

    #[test]
    fn argmax_prefers_lowest_id() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }

    #[test]
    fn log_softmax_normalises() {
        let l = log_softmax(&[1.0, 2.0, 3.0]);
        let total: f64 = l.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_stops_at_eos() {
        // tokens: 0 bos, 1 eos, 2 a
        let t = Table(vec![vec![1e-9, 0.2, 0.8], vec![1e-9, 1.0, 1e-9], vec![1e-9, 0.9, 0.1]]);
        let h = greedy_search(&t, 0, 1, 10).unwrap();
        assert_eq!(h.ids, vec![2, 1]);
        assert!(h.finished);
        assert!((h.log_prob - (0.8f64.ln() + 0.9f64.ln())).abs() < 1e-8);
    }

    #[test]
    fn greedy_respects_max_len() {
        let t = Table(vec![
            vec![1e-9, 1e-9, 1.0],
            vec![1e-9, 1.0, 1e-9],
            vec![1e-9, 1e-9, 1.0],
        ]);
        let h = greedy_search(&t, 0, 1, 5).unwrap();
        assert_eq!(h.ids.len(), 4);
        assert!(!h.finished);
    }

    #[test]
    fn beam_width_one_matches_greedy() {
        let t = Table(vec![
            vec![0.0001, 0.3, 0.35, 0.35],
            vec![1.0, 1e-9, 1e-9, 1e-9],
            vec![0.1, 0.5, 0.2, 0.2],
            vec![0.1, 0.1, 0.1, 0.7],
        ]);
        let g = greedy_search(&t, 0, 1, 8).unwrap();
        let cfg = DecodeConfig {
            max_len: 8,
            beam_width: 1,
            ..Default::default()
        };
        assert_eq!(beam_search(&t, 0, 1, &cfg).unwrap(), g);
    }

    #[test]
    fn beam_rejects_zero_width() {
        let t = Table(vec![vec![1.0]]);
        let cfg = DecodeConfig {
            beam_width: 0,
            ..Default::default()
        };
        assert!(beam_search(&t, 0, 0, &cfg).is_err());
    }
}
