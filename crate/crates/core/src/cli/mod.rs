//! The `sentsimp` command line: `train`, `simplify`, `eval` and `report`.
//!
//! Each command resolves a [`RunConfig`], writes its outputs under `--out`,
//! and echoes the effective settings to `<out>/<command>.resolved`.

mod config;

pub use config::{parse_kv_text, RunConfig};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{self, encode_pairs, load_eval_stem, load_parallel, read_lines, write_lines};
use crate::decode::simplify_all;
use crate::error::{Error, Result};
use crate::model::{init_model, variant_config};
use crate::sari::{sari_corpus_with, score_histogram, SariItem};
use crate::tokenizer::Vocabulary;
use crate::train::{load_checkpoint, save_checkpoint, train_loop, Checkpoint, SariValidator};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const HISTORY_FILE: &str = "history.tsv";
pub const EVAL_JSON: &str = "eval.json";

/// A published result row. Missing components are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedRow {
    pub label: &'static str,
    pub sari: f64,
    pub add: Option<f64>,
    pub delete: Option<f64>,
    pub keep: Option<f64>,
}

const fn row(label: &'static str, sari: f64, add: Option<f64>, delete: Option<f64>, keep: Option<f64>) -> PublishedRow {
    PublishedRow {
        label,
        sari,
        add,
        delete,
        keep,
    }
}

/// Prior systems on the Turk test set.
pub const LITERATURE_ROWS: [PublishedRow; 5] = [
    row("Zhao et al. (2018)", 40.42, Some(5.72), Some(42.23), Some(73.41)),
    row("Martin et al. (2019)", 41.87, None, None, None),
    row("Omelianchuk et al. (2021)", 41.46, Some(6.96), Some(47.87), Some(69.56)),
    row("Sheang and Saggion (2021)", 43.31, None, None, None),
    row("Štajner et al. (2022)", 43.30, None, None, None),
];

/// Fine-tuned pretrained encoder-decoder variants on the Turk test set.
pub const VARIANT_ROWS: [PublishedRow; 4] = [
    row("BERT+GPT-2", 42.31, Some(11.07), Some(62.82), Some(53.93)),
    row("GPT-2+BERT", 42.35, Some(10.74), Some(62.37), Some(54.05)),
    row("GPT-2", 46.35, Some(12.60), Some(66.64), Some(59.73)),
    row("BERT", 46.80, Some(12.13), Some(67.16), Some(61.22)),
];

/// Contents of `eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub label: String,
    pub sari: f64,
    pub add: f64,
    pub keep: f64,
    pub delete: f64,
    pub n: usize,
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub sari: f64,
    pub add: Option<f64>,
    pub delete: Option<f64>,
    pub keep: Option<f64>,
    /// `true` for static published rows, `false` for evaluated runs.
    pub published: bool,
}

impl From<&PublishedRow> for ReportRow {
    fn from(r: &PublishedRow) -> Self {
        ReportRow {
            label: r.label.to_string(),
            sari: r.sari,
            add: r.add,
            delete: r.delete,
            keep: r.keep,
            published: true,
        }
    }
}

impl ReportRow {
    /// `label SARI ADD DELETE KEEP`, two decimals, `-` for missing values.
    pub fn to_line(&self) -> String {
        let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
        format!(
            "{} {:.2} {} {} {}",
            self.label,
            self.sari,
            f(self.add),
            f(self.delete),
            f(self.keep)
        )
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn echo_config(rc: &RunConfig, command: &str) -> Result<PathBuf> {
    let out = rc.out()?;
    create_dir(&out)?;
    write_file(&out.join(format!("{command}.resolved")), &rc.to_text())?;
    Ok(out)
}

/// Trains a model and writes `model.ckpt`, `vocab.txt`, `history.tsv` and
/// `train.resolved` to the output directory, which is returned.
pub fn cmd_train(rc: &RunConfig) -> Result<PathBuf> {
    let variant = rc.variant()?;
    let tcfg = rc.train_config()?;
    let dcfg = rc.decode_config()?;
    let exec = rc.exec()?;
    let train = load_parallel(rc.path("train_src")?, rc.path("train_tgt")?)?;
    let valid = load_eval_stem(rc.path("valid")?)?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let vocab = match rc.get("vocab").filter(|v| !v.is_empty()) {
        Some(path) => Vocabulary::load(path)?,
        None => {
            let (max_size, min_freq) = rc.vocab_limits()?;
            let text: Vec<&str> = train
                .iter()
                .flat_map(|e| [e.source.as_str(), e.target.as_str()])
                .collect();
            Vocabulary::build(&text, max_size, min_freq)?
        }
    };

    let mut mcfg = variant_config(variant, rc.scale()?).with_vocab_size(vocab.size());
    mcfg.dropout_rate = rc.dropout()?;
    let mut model = init_model(mcfg, rc.seed()?)?;
    log::info!(
        "training {} ({} parameters) on {} pairs, validating on {}",
        variant,
        model.num_params(),
        train.len(),
        valid.len()
    );

    let pairs = encode_pairs(&vocab, &train, model.config().max_len);
    let mut validator = SariValidator {
        max_len: dcfg.max_len,
        exec,
        ..SariValidator::new(&vocab, &valid)
    };
    let history = train_loop(&mut model, &pairs, &mut validator, &tcfg, vocab.pad_id())?;

    let out = echo_config(rc, "train")?;
    vocab.save(out.join(VOCAB_FILE))?;
    save_checkpoint(
        &Checkpoint::from_model(&model, VOCAB_FILE, history.clone()),
        out.join(CHECKPOINT_FILE),
    )?;
    write_file(&out.join(HISTORY_FILE), &history.to_tsv())?;
    let stats = serde_json::json!({
        "train": corpus::parallel_stats(&train),
        "valid": corpus::eval_stats(&valid),
    });
    write_file(&out.join("corpus_stats.json"), &format!("{stats:#}\n"))?;
    Ok(out)
}

/// Loads a checkpoint and the vocabulary it references (or the `vocab`
/// setting, when given).
pub fn load_run(rc: &RunConfig) -> Result<(crate::model::Model, Vocabulary)> {
    let ckpt_path = rc.path("checkpoint")?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    let vocab_path = match rc.get("vocab").filter(|v| !v.is_empty()) {
        Some(p) => PathBuf::from(p),
        None => ckpt_path.parent().unwrap_or(Path::new(".")).join(&ckpt.vocab),
    };
    let vocab = Vocabulary::load(&vocab_path)?;
    if vocab.size() != ckpt.config.vocab_size {
        return Err(Error::Vocab(format!(
            "{} has {} entries but the checkpoint expects {}",
            vocab_path.display(),
            vocab.size(),
            ckpt.config.vocab_size
        )));
    }
    Ok((ckpt.into_model()?, vocab))
}

/// Simplifies every line of `input` into `output` (default
/// `<out>/simplified.txt`). Empty input lines stay empty.
pub fn cmd_simplify(rc: &RunConfig) -> Result<PathBuf> {
    let (model, vocab) = load_run(rc)?;
    let dcfg = rc.decode_config()?;
    let lines = read_lines(rc.path("input")?)?;
    let outputs = simplify_all(rc.exec()?, &model, &vocab, &lines, &dcfg)?;
    let outputs: Vec<String> = lines
        .iter()
        .zip(outputs)
        .map(|(l, o)| if l.is_empty() { String::new() } else { o })
        .collect();
    let out = echo_config(rc, "simplify")?;
    let target = match rc.get("output").filter(|v| !v.is_empty()) {
        Some(p) => PathBuf::from(p),
        None => out.join("simplified.txt"),
    };
    write_lines(&target, &outputs)?;
    Ok(target)
}

fn published_table(rows: &[PublishedRow]) -> String {
    rows.iter().map(|r| ReportRow::from(r).to_line() + "\n").collect()
}

/// Scores `system` against the `eval` stem. Writes `eval.json`, `eval.txt`,
/// `scores.tsv` and `histogram.tsv`.
pub fn cmd_eval(rc: &RunConfig) -> Result<EvalSummary> {
    let system_path = rc.path("system")?;
    let eval_stem = rc.path("eval")?;
    let system = read_lines(&system_path)?;
    let examples = load_eval_stem(&eval_stem)?;
    if system.len() != examples.len() {
        return Err(Error::LineCountMismatch {
            left: system_path.display().to_string(),
            left_count: system.len(),
            right: format!("{}.src", eval_stem.display()),
            right_count: examples.len(),
        });
    }
    let items: Vec<SariItem> = examples
        .iter()
        .zip(&system)
        .map(|(e, o)| SariItem {
            source: &e.source,
            output: o,
            references: &e.references,
        })
        .collect();
    let scored = sari_corpus_with(rc.exec()?, &items)?;
    let r = &scored.report;
    let label = match rc.get("label").filter(|v| !v.is_empty()) {
        Some(l) => l.to_string(),
        None => rc.variant()?.display_name().to_string(),
    };
    let summary = EvalSummary {
        label,
        sari: r.sari,
        add: r.add,
        keep: r.keep,
        delete: r.delete,
        n: examples.len(),
    };

    let out = echo_config(rc, "eval")?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out.join(EVAL_JSON), &(json + "\n"))?;

    let mut text = format!(
        "system: {}\nsentences: {}\nreferences per sentence: {}\n\n",
        system_path.display(),
        summary.n,
        examples[0].references.len()
    );
    text.push_str("model SARI ADD DELETE KEEP\n");
    text.push_str(&(row_for(&summary).to_line() + "\n\n"));
    text.push_str("order ADD KEEP DELETE\n");
    for (n, o) in r.per_order.iter().enumerate() {
        text.push_str(&format!("{} {:.2} {:.2} {:.2}\n", n + 1, o.add, o.keep, o.delete));
    }
    text.push_str("\npublished results on the Turk test set (reference only)\n");
    text.push_str("model SARI ADD DELETE KEEP\n");
    text.push_str(&published_table(&LITERATURE_ROWS));
    text.push_str(&published_table(&VARIANT_ROWS));
    write_file(&out.join("eval.txt"), &text)?;

    let mut scores = String::from("index\tsari\tadd\tkeep\tdelete\n");
    for (i, s) in scored.sentences.iter().enumerate() {
        scores.push_str(&format!("{i}\t{}\t{}\t{}\t{}\n", s.sari, s.add, s.keep, s.delete));
    }
    write_file(&out.join("scores.tsv"), &scores)?;

    let mut hist = String::from("bin_lower\tcount\tbin_lower_unit\n");
    for (lower, count) in score_histogram(&scored.sentence_scores(), rc.histogram_bins()?)? {
        hist.push_str(&format!("{lower}\t{count}\t{}\n", lower / 100.0));
    }
    write_file(&out.join("histogram.tsv"), &hist)?;
    Ok(summary)
}

fn row_for(s: &EvalSummary) -> ReportRow {
    ReportRow {
        label: s.label.clone(),
        sari: s.sari,
        add: Some(s.add),
        delete: Some(s.delete),
        keep: Some(s.keep),
        published: false,
    }
}

/// Collects `eval.json` from each run directory into a table sorted by SARI
/// (highest first), followed by the published literature rows. Runs without
/// `eval.json` are skipped with a warning. Writes `report.txt` and
/// `report.json`.
pub fn cmd_report(rc: &RunConfig, runs: &[PathBuf]) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for dir in runs {
        let path = dir.join(EVAL_JSON);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        match serde_json::from_str::<EvalSummary>(&text) {
            Ok(s) => rows.push(row_for(&s)),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    rows.sort_by(|a, b| b.sari.total_cmp(&a.sari));
    rows.extend(LITERATURE_ROWS.iter().map(ReportRow::from));

    let out = echo_config(rc, "report")?;
    let mut text = String::from("model SARI ADD DELETE KEEP\n");
    for r in &rows {
        text.push_str(&(r.to_line() + "\n"));
    }
    write_file(&out.join("report.txt"), &text)?;
    let json = serde_json::to_string_pretty(&rows).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out.join("report.json"), &(json + "\n"))?;
    Ok(rows)
}

#[derive(Parser, Debug)]
#[command(
    name = "sentsimp",
    version,
    about = "Train, run and evaluate sentence simplification models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Shared {
    /// key=value config file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// bert, gpt2, bert+gpt2 or gpt2+bert
    #[arg(long, global = true)]
    variant: Option<String>,
    /// paper or toy
    #[arg(long, global = true)]
    scale: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra key=value overrides, applied after all other flags.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on a parallel corpus.
    Train {
        #[arg(long)]
        train_src: Option<PathBuf>,
        #[arg(long)]
        train_tgt: Option<PathBuf>,
        /// Validation stem: reads <stem>.src and <stem>.ref.N.
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Existing vocabulary file; built from the training corpus when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[command(flatten)]
        shared: Shared,
    },
    /// Simplify one sentence per line.
    Simplify {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        shared: Shared,
    },
    /// Score system output with SARI.
    Eval {
        #[arg(long)]
        system: Option<PathBuf>,
        /// Evaluation stem: reads <stem>.src and <stem>.ref.N.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        #[command(flatten)]
        shared: Shared,
    },
    /// Compare evaluated runs.
    Report {
        /// Run directories containing eval.json.
        runs: Vec<PathBuf>,
        #[command(flatten)]
        shared: Shared,
    },
}

fn push_path(kv: &mut Vec<(String, String)>, key: &str, value: &Option<PathBuf>) {
    if let Some(v) = value {
        kv.push((key.to_string(), v.display().to_string()));
    }
}

fn resolve(shared: &Shared, mut kv: Vec<(String, String)>) -> Result<RunConfig> {
    let mut flags = Vec::new();
    if let Some(s) = shared.seed {
        flags.push(("seed".to_string(), s.to_string()));
    }
    if let Some(v) = &shared.variant {
        flags.push(("variant".to_string(), v.clone()));
    }
    if let Some(s) = &shared.scale {
        flags.push(("scale".to_string(), s.clone()));
    }
    push_path(&mut flags, "out", &shared.out);
    flags.append(&mut kv);
    for s in &shared.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        flags.push((k.to_string(), v.to_string()));
    }
    let rc = RunConfig::resolve(shared.config.as_deref(), &flags)?;
    rc.variant()?;
    rc.scale()?;
    Ok(rc)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            train_src,
            train_tgt,
            valid,
            vocab,
            shared,
        } => {
            let mut kv = Vec::new();
            push_path(&mut kv, "train_src", &train_src);
            push_path(&mut kv, "train_tgt", &train_tgt);
            push_path(&mut kv, "valid", &valid);
            push_path(&mut kv, "vocab", &vocab);
            let out = cmd_train(&resolve(&shared, kv)?)?;
            println!("{}", out.display());
        }
        Command::Simplify {
            checkpoint,
            input,
            output,
            shared,
        } => {
            let mut kv = Vec::new();
            push_path(&mut kv, "checkpoint", &checkpoint);
            push_path(&mut kv, "input", &input);
            push_path(&mut kv, "output", &output);
            let out = cmd_simplify(&resolve(&shared, kv)?)?;
            println!("{}", out.display());
        }
        Command::Eval {
            system,
            eval,
            label,
            shared,
        } => {
            let mut kv = Vec::new();
            push_path(&mut kv, "system", &system);
            push_path(&mut kv, "eval", &eval);
            if let Some(l) = label {
                kv.push(("label".to_string(), l));
            }
            let s = cmd_eval(&resolve(&shared, kv)?)?;
            println!("{}", row_for(&s).to_line());
        }
        Command::Report { runs, shared } => {
            let rows = cmd_report(&resolve(&shared, Vec::new())?, &runs)?;
            println!("model SARI ADD DELETE KEEP");
            for r in rows {
                println!("{}", r.to_line());
            }
        }
    }
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code: 0 on success, 1 for numeric failures, 2 for usage and
/// file errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
