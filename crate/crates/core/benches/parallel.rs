use std::hint::black_box;
use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sentsimp::corpus::load_parallel;
use sentsimp::decode::{simplify_all, DecodeConfig};
use sentsimp::exec::Exec;
use sentsimp::model::{init_model, variant_config, Scale, Variant};
use sentsimp::sari::{sari_corpus_with, SariItem};
use sentsimp::tensor::{Graph, Tensor};
use sentsimp::tokenizer::Vocabulary;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/toy")
        .join(name)
}

fn sari(c: &mut Criterion) {
    let train = load_parallel(fixture("train.src"), fixture("train.tgt")).unwrap();
    // Repeat the corpus so there is enough work to split.
    let rows: Vec<(String, String, Vec<String>)> = (0..64)
        .flat_map(|_| train.iter())
        .map(|e| {
            (
                e.source.clone(),
                e.target.clone(),
                vec![e.target.clone(), e.source.clone()],
            )
        })
        .collect();
    let items: Vec<SariItem> = rows
        .iter()
        .map(|(s, o, r)| SariItem {
            source: s,
            output: o,
            references: r,
        })
        .collect();
    let mut group = c.benchmark_group("sari_corpus");
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| sari_corpus_with(exec, black_box(&items)).unwrap()));
    }
    group.finish();
}

fn matmul(c: &mut Criterion) {
    let a = Tensor::new(
        vec![8, 64, 64],
        (0..8 * 64 * 64).map(|i| (i % 17) as f64 * 0.01).collect(),
    )
    .unwrap();
    let w = Tensor::new(vec![64, 256], (0..64 * 256).map(|i| (i % 13) as f64 * 0.01).collect()).unwrap();
    let mut group = c.benchmark_group("matmul");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                let mut g = Graph::no_grad().with_exec(exec);
                let (x, y) = (g.constant(a.clone()), g.constant(w.clone()));
                let out = g.matmul(x, y).unwrap();
                black_box(g.value(out)[0])
            })
        });
    }
    group.finish();
}

fn decode(c: &mut Criterion) {
    let train = load_parallel(fixture("train.src"), fixture("train.tgt")).unwrap();
    let text: Vec<&str> = train
        .iter()
        .flat_map(|e| [e.source.as_str(), e.target.as_str()])
        .collect();
    let vocab = Vocabulary::build(&text, 10_000, 1).unwrap();
    let model = init_model(
        variant_config(Variant::Bert, Scale::Toy).with_vocab_size(vocab.size()),
        0,
    )
    .unwrap();
    let sources: Vec<&str> = train.iter().take(16).map(|e| e.source.as_str()).collect();
    let cfg = DecodeConfig {
        max_len: 12,
        ..DecodeConfig::default()
    };
    let mut group = c.benchmark_group("simplify_all");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| simplify_all(exec, &model, &vocab, black_box(&sources), &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sari, matmul, decode);
criterion_main!(benches);
