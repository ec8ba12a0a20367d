//! Line-aligned parallel corpora, multi-reference evaluation sets and batching.
//!
//! Files hold one UTF-8 sentence per line (LF or CRLF). Evaluation sets use
//! `<stem>.src` plus `<stem>.ref.0`, `<stem>.ref.1`, ... with the reference
//! count inferred from the files present.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{surface_tokens, TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelExample {
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalExample {
    pub source: String,
    pub references: Vec<String>,
}

/// An encoded pair; both sides carry their BOS/EOS framing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPair {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

/// Right-padded id matrices for one optimiser step. Mask entries are `true`
/// for real tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub source_ids: Vec<Vec<TokenId>>,
    pub source_pad_mask: Vec<Vec<bool>>,
    pub target_in_ids: Vec<Vec<TokenId>>,
    pub target_out_ids: Vec<Vec<TokenId>>,
    pub target_pad_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }

    pub fn source_len(&self) -> usize {
        self.source_ids.first().map_or(0, Vec::len)
    }

    pub fn target_len(&self) -> usize {
        self.target_in_ids.first().map_or(0, Vec::len)
    }

    /// Pads `pairs` into a single batch. `target_in` drops the final EOS and
    /// `target_out` drops the leading BOS.
    pub fn from_pairs(pairs: &[&TokenPair], pad_id: TokenId) -> Self {
        let ls = pairs.iter().map(|p| p.source.len()).max().unwrap_or(0);
        let lt = pairs
            .iter()
            .map(|p| p.target.len().saturating_sub(1))
            .max()
            .unwrap_or(0);
        let pad = |seq: &[TokenId], len: usize| -> (Vec<TokenId>, Vec<bool>) {
            let mut ids = seq.to_vec();
            let mut mask = vec![true; seq.len()];
            ids.resize(len, pad_id);
            mask.resize(len, false);
            (ids, mask)
        };
        let mut b = Batch {
            source_ids: Vec::with_capacity(pairs.len()),
            source_pad_mask: Vec::with_capacity(pairs.len()),
            target_in_ids: Vec::with_capacity(pairs.len()),
            target_out_ids: Vec::with_capacity(pairs.len()),
            target_pad_mask: Vec::with_capacity(pairs.len()),
        };
        for p in pairs {
            let (ids, mask) = pad(&p.source, ls);
            b.source_ids.push(ids);
            b.source_pad_mask.push(mask);
            let n = p.target.len().saturating_sub(1);
            let (tin, tmask) = pad(&p.target[..n], lt);
            let (tout, _) = pad(&p.target[1.min(p.target.len())..], lt);
            b.target_in_ids.push(tin);
            b.target_out_ids.push(tout);
            b.target_pad_mask.push(tmask);
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_pairs: usize,
    pub num_refs: usize,
    pub max_src_tokens: usize,
    pub max_tgt_tokens: usize,
}

impl CorpusStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serialises")
    }
}

/// Reads a corpus file into trimmed lines, keeping empty lines so that line
/// numbers stay aligned.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.trim().to_string()).collect())
}

pub fn write_lines<S: AsRef<str>>(path: impl AsRef<Path>, lines: &[S]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for l in lines {
        text.push_str(l.as_ref());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Pairs line `i` of `src_path` with line `i` of `tgt_path`. Pairs with an
/// empty side are dropped with a warning.
pub fn load_parallel(src_path: impl AsRef<Path>, tgt_path: impl AsRef<Path>) -> Result<Vec<ParallelExample>> {
    let (src_path, tgt_path) = (src_path.as_ref(), tgt_path.as_ref());
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(Error::LineCountMismatch {
            left: src_path.display().to_string(),
            left_count: src.len(),
            right: tgt_path.display().to_string(),
            right_count: tgt.len(),
        });
    }
    let mut out = Vec::with_capacity(src.len());
    for (i, (source, target)) in src.into_iter().zip(tgt).enumerate() {
        if source.is_empty() || target.is_empty() {
            log::warn!(
                "dropping pair at line {} of {} / {}: empty side",
                i + 1,
                src_path.display(),
                tgt_path.display()
            );
            continue;
        }
        out.push(ParallelExample { source, target });
    }
    Ok(out)
}

/// Loads a source file and its aligned reference files. Every file must have
/// the same number of lines and no empty lines.
pub fn load_eval<P: AsRef<Path>>(src_path: impl AsRef<Path>, ref_paths: &[P]) -> Result<Vec<EvalExample>> {
    let src_path = src_path.as_ref();
    if ref_paths.is_empty() {
        return Err(Error::Config(format!("no reference files for {}", src_path.display())));
    }
    let src = read_lines(src_path)?;
    check_complete(src_path, &src)?;
    let mut refs = Vec::with_capacity(ref_paths.len());
    for p in ref_paths {
        let p = p.as_ref();
        let lines = read_lines(p)?;
        if lines.len() != src.len() {
            return Err(Error::LineCountMismatch {
                left: p.display().to_string(),
                left_count: lines.len(),
                right: src_path.display().to_string(),
                right_count: src.len(),
            });
        }
        check_complete(p, &lines)?;
        refs.push(lines);
    }
    Ok(src
        .into_iter()
        .enumerate()
        .map(|(i, source)| EvalExample {
            source,
            references: refs.iter().map(|r| r[i].clone()).collect(),
        })
        .collect())
}

fn check_complete(path: &Path, lines: &[String]) -> Result<()> {
    match lines.iter().position(String::is_empty) {
        Some(i) => Err(Error::Corpus {
            path: path.display().to_string(),
            line: i + 1,
            message: "empty line in evaluation file".into(),
        }),
        None => Ok(()),
    }
}

/// `<stem>.src` and the consecutive `<stem>.ref.N` files that exist.
pub fn eval_paths(stem: impl AsRef<Path>) -> (PathBuf, Vec<PathBuf>) {
    let stem = stem.as_ref().as_os_str().to_owned();
    let with = |suffix: &str| {
        let mut s = stem.clone();
        s.push(suffix);
        PathBuf::from(s)
    };
    let refs = (0..)
        .map(|i| with(&format!(".ref.{i}")))
        .take_while(|p| p.is_file())
        .collect();
    (with(".src"), refs)
}

pub fn load_eval_stem(stem: impl AsRef<Path>) -> Result<Vec<EvalExample>> {
    let (src, refs) = eval_paths(stem.as_ref());
    if !src.is_file() {
        return Err(Error::io(
            &src,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing source file"),
        ));
    }
    load_eval(src, &refs)
}

fn token_count(text: &str) -> usize {
    surface_tokens(text).count()
}

pub fn parallel_stats(examples: &[ParallelExample]) -> CorpusStats {
    CorpusStats {
        num_pairs: examples.len(),
        num_refs: 1,
        max_src_tokens: examples.iter().map(|e| token_count(&e.source)).max().unwrap_or(0),
        max_tgt_tokens: examples.iter().map(|e| token_count(&e.target)).max().unwrap_or(0),
    }
}

pub fn eval_stats(examples: &[EvalExample]) -> CorpusStats {
    CorpusStats {
        num_pairs: examples.len(),
        num_refs: examples.first().map_or(0, |e| e.references.len()),
        max_src_tokens: examples.iter().map(|e| token_count(&e.source)).max().unwrap_or(0),
        max_tgt_tokens: examples
            .iter()
            .flat_map(|e| e.references.iter().map(|r| token_count(r)))
            .max()
            .unwrap_or(0),
    }
}

pub fn encode_pairs(vocab: &Vocabulary, examples: &[ParallelExample], max_len: usize) -> Vec<TokenPair> {
    examples
        .iter()
        .map(|e| TokenPair {
            source: vocab.encode(&e.source, max_len).ids,
            target: vocab.encode(&e.target, max_len).ids,
        })
        .collect()
}

/// Splits `examples` into padded batches of `batch_size` (the last may be
/// smaller). With a seed the example order is shuffled deterministically;
/// without one, input order is kept.
pub fn make_batches(
    examples: &[TokenPair],
    batch_size: usize,
    pad_id: TokenId,
    max_len: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if let Some(i) = examples
        .iter()
        .position(|p| p.source.len() > max_len || p.target.len() > max_len || p.target.len() < 2 || p.source.is_empty())
    {
        return Err(Error::Config(format!(
            "example {i} has a sequence outside 1..={max_len} tokens (targets need at least BOS and EOS)"
        )));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order
        .chunks(batch_size)
        .map(|idx| {
            let pairs: Vec<&TokenPair> = idx.iter().map(|&i| &examples[i]).collect();
            Batch::from_pairs(&pairs, pad_id)
        })
        .collect())
}
