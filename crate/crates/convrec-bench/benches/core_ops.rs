use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use convrec_core::corpus::{chronological_split, extract_instances, synthesize_corpus, GenConfig, Part};
use convrec_core::graphenc::{attention_pool, PoolParams};
use convrec_core::lookalike::{lookalike_contribution, View};
use convrec_core::rec::{rank_of_label, ModelConfig, RecModel};
use convrec_core::tensor::Array;
use convrec_core::Tape;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_setup() -> (convrec_core::corpus::Corpus, convrec_core::corpus::Split, RecModel) {
    let corpus = synthesize_corpus(
        &GenConfig {
            n_users: 30,
            sessions_per_user: 5,
            turns_per_session: 6,
            n_entities: 120,
            n_items: 60,
            n_words: 80,
            n_clusters: 6,
            history_weight: 0.7,
            ..GenConfig::default()
        },
        7,
    )
    .unwrap();
    let split = chronological_split(&corpus, &[], 0, 0).unwrap();
    let model = RecModel::new(&corpus, ModelConfig { dim: 64, ..ModelConfig::default() }, 7).unwrap();
    (corpus, split, model)
}

fn graph_encoding(c: &mut Criterion) {
    let (_, _, model) = bench_setup();
    c.bench_function("encode_graphs_120e_64d", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let (_, tables) = model.inject(&mut tape);
            black_box(tape.value(tables.entity).get(0, 0));
        })
    });
}

fn pooling(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = PoolParams::init(64, &mut rng);
    let rows = Array::uniform(12, 64, 1.0, &mut rng);
    c.bench_function("attention_pool_12x64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let vars = params.inject(&mut tape);
            let r = tape.leaf(rows.clone());
            let (out, _) = attention_pool(&mut tape, r, &vars);
            black_box(tape.value(out).get(0, 0));
        })
    });
}

fn batch_gradients(c: &mut Criterion) {
    let (corpus, split, model) = bench_setup();
    let instances = extract_instances(&corpus, &split, Part::Train, true);
    let batch: Vec<_> = instances.into_iter().take(32).collect();
    c.bench_function("batch_loss_backward_32x64d", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let (loss, _) = model.batch_loss(&mut tape, &corpus, &batch, None, false).unwrap();
            let grads = tape.backward(loss.total);
            black_box(grads.get(loss.total).get(0, 0));
        })
    });
}

fn lookalike_scan(c: &mut Criterion) {
    let (corpus, split, model) = bench_setup();
    let store = model.rebuild_snapshots(&corpus, &split, 0);
    let query = store.entries[0].vectors.hist_word.clone();
    c.bench_function(&format!("lookalike_scan_{}_snapshots", store.len()), |b| {
        b.iter(|| {
            let out = lookalike_contribution(&query, &store, 0, 0.85, View::Word, 0).unwrap();
            black_box(out.get(0, 0));
        })
    });
}

fn ranking(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scores: Vec<f64> = (0..5000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    c.bench_function("rank_of_label_5000", |b| {
        b.iter(|| black_box(rank_of_label(&scores, 2500)))
    });
}

criterion_group!(benches, graph_encoding, pooling, batch_gradients, lookalike_scan, ranking);
criterion_main!(benches);
