//! Parallel vs sequential execution of the two hot loops: one pass of
//! pair-classifier gradients and embedding a whole exemplar store.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use decomp_core::embednet::{
    encode_tokens, pair_batch_loss, train_pair_classifier, PairModel, PairSample, TrainConfig,
    WordVectorTable, MAX_LEN,
};
use decomp_core::par::{self, Exec};
use decomp_core::parser::{preprocess_lifted, seed_examples, ParserConfig};

fn bench(c: &mut Criterion) {
    let table = WordVectorTable::builtin();
    let cfg = ParserConfig::default();
    let seeds = seed_examples();
    let tokens: Vec<Vec<String>> = seeds
        .iter()
        .map(|(f, _)| preprocess_lifted(f, &cfg))
        .collect();
    let inputs: Vec<_> = tokens
        .iter()
        .map(|t| encode_tokens(t, table, Some(MAX_LEN)))
        .collect();
    let n = seeds.len();
    let batch: Vec<PairSample> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .map(|(i, j)| PairSample {
            left: i,
            right: j,
            same: seeds[i].1 == seeds[j].1,
        })
        .collect();
    let model = PairModel::init(1);
    let dataset: Vec<(Vec<String>, _)> = tokens
        .iter()
        .cloned()
        .zip(seeds.iter().map(|(_, q)| q.clone()))
        .collect();

    let mut g = c.benchmark_group("parallel");
    g.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let name = format!("{exec:?}");
        g.bench_with_input(
            BenchmarkId::new("pair_gradient_all_pairs", &name),
            &exec,
            |b, &exec| b.iter(|| pair_batch_loss(&model, &inputs, &batch, exec)),
        );
        g.bench_with_input(BenchmarkId::new("embed_store", &name), &exec, |b, &exec| {
            b.iter(|| par::map(exec, &tokens, |t| model.embed(t, table)))
        });
        let train = TrainConfig {
            epochs: 3,
            early_stop_loss: 0.0,
            exec,
            ..TrainConfig::default()
        };
        g.bench_with_input(
            BenchmarkId::new("train_3_epochs", &name),
            &train,
            |b, train| b.iter(|| train_pair_classifier(&dataset, table, train).unwrap()),
        );
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
