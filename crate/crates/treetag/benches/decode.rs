//! Decoding throughput: sentence-parallel vs sequential, for both decoders.
//!
//! Run with `cargo bench`. The parallel path needs the default `parallel`
//! feature; without it `tag_corpus` falls back to the sequential code and the
//! two benchmarks coincide.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treetag::learner::{tag_corpus, tag_corpus_seq, DecodeConfig, Decoder};
use treetag::mdp::{Sentence, TagInventory};
use treetag::neural::{init_params, InitScale, ModelDims};

const EMBED: usize = 8;
const HIDDEN: usize = 16;
const TAGS: usize = 5;

fn corpus(n: usize) -> Vec<Arc<Sentence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    (0..n)
        .map(|i| {
            let len = 4 + (i % 7);
            let tokens = (0..len).map(|j| format!("w{i}_{j}")).collect();
            let embeds = (0..len)
                .map(|_| Array1::from_iter((0..EMBED).map(|_| rng.gen_range(-1.0..=1.0))))
                .collect();
            Arc::new(Sentence::new(tokens, embeds).unwrap())
        })
        .collect()
}

fn bench_decode(c: &mut Criterion) {
    let dims = ModelDims { embed: EMBED, hidden: HIDDEN, tags: TAGS };
    let params = init_params(3, dims, InitScale::InvSqrtHidden).unwrap();
    let inventory = TagInventory::from_tags(["B-NP", "I-NP", "B-VP", "B-PP", "O"]).unwrap();
    let sentences = corpus(24);

    let mut group = c.benchmark_group("tag_corpus");
    group.sample_size(10);
    for (decoder, k) in [(Decoder::Greedy, 2), (Decoder::Mcts, 32)] {
        let cfg = DecodeConfig { k, lambda: 0.25, bio_constraint: false, decoder };
        let label = match decoder {
            Decoder::Greedy => "greedy",
            Decoder::Mcts => "mcts",
        };
        group.bench_with_input(BenchmarkId::new("sequential", label), &cfg, |b, cfg| {
            b.iter(|| tag_corpus_seq(&sentences, &params, &inventory, cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("parallel", label), &cfg, |b, cfg| {
            b.iter(|| tag_corpus(&sentences, &params, &inventory, cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_decode);
criterion_main!(benches);
