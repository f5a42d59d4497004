//! Temporary probe harness (deleted before release).

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use treetag::corpus::{build_inventory, gold_ids, parse_conll, EmbeddingTable};
use treetag::learner::{tag_corpus_seq, train, DecodeConfig, Decoder, TrainConfig};
use treetag::mdp::{Sentence, TagId, TagInventory};
use treetag::neural::InitScale;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn load_fixture() -> (
    Vec<(Arc<Sentence>, Vec<TagId>)>,
    Vec<(Arc<Sentence>, Vec<TagId>)>,
    TagInventory,
) {
    let table =
        EmbeddingTable::load(BufReader::new(File::open(fixture("tiny.vec")).unwrap()), 8).unwrap();
    let train_raw = parse_conll(BufReader::new(File::open(fixture("tiny_train.conll")).unwrap()))
        .unwrap();
    let test_raw =
        parse_conll(BufReader::new(File::open(fixture("tiny_test.conll")).unwrap())).unwrap();
    let inv = build_inventory(&train_raw).unwrap();
    let prep = |raw: &[Vec<treetag::corpus::RawToken>]| {
        raw.iter()
            .map(|s| (table.embed_sentence(s).unwrap(), gold_ids(&inv, s).unwrap()))
            .collect::<Vec<_>>()
    };
    (prep(&train_raw), prep(&test_raw), inv)
}

fn token_acc(data: &[(Arc<Sentence>, Vec<TagId>)], pred: &[Vec<TagId>]) -> f64 {
    let mut hits = 0;
    let mut total = 0;
    for ((_, gold), p) in data.iter().zip(pred) {
        hits += gold.iter().zip(p).filter(|(a, b)| a == b).count();
        total += gold.len();
    }
    hits as f64 / total as f64
}

#[test]
#[ignore]
fn probe_search_vs_greedy() {
    let (train_data, test_data, inv) = load_fixture();
    let test_sents: Vec<_> = test_data.iter().map(|(s, _)| Arc::clone(s)).collect();

    for (k, eta, hidden, epochs, init) in [
        (16usize, 0.05f64, 16usize, 30usize, InitScale::InvSqrtHidden),
        (64, 0.01, 32, 40, InitScale::InvSqrtHidden),
        (16, 0.05, 16, 30, InitScale::Unit),
    ] {
        let mut accs = Vec::new();
        for seed in [1u64, 2, 3] {
            let cfg = TrainConfig {
                k,
                eta,
                lambda: 0.25,
                hidden,
                epochs,
                seed,
                patience: 10_000,
                init,
                ..TrainConfig::default()
            };
            let (params, _) = train(&train_data, &inv, &cfg, |_, _, _| {}).unwrap();
            let mcts_cfg = DecodeConfig {
                k,
                lambda: 0.25,
                bio_constraint: false,
                decoder: Decoder::Mcts,
            };
            let greedy_cfg = DecodeConfig { decoder: Decoder::Greedy, ..mcts_cfg };
            let mcts_pred = tag_corpus_seq(&test_sents, &params, &inv, &mcts_cfg).unwrap();
            let greedy_pred = tag_corpus_seq(&test_sents, &params, &inv, &greedy_cfg).unwrap();
            accs.push((token_acc(&test_data, &mcts_pred), token_acc(&test_data, &greedy_pred)));
        }
        let mean_m: f64 = accs.iter().map(|a| a.0).sum::<f64>() / 3.0;
        let mean_g: f64 = accs.iter().map(|a| a.1).sum::<f64>() / 3.0;
        println!(
            "k={k} eta={eta} h={hidden} ep={epochs} init={init:?}: mcts={mean_m:.3} greedy={mean_g:.3} per-seed={accs:?} {}",
            if mean_m >= mean_g { "OK" } else { "FAIL" }
        );
    }
}

#[test]
#[ignore]
fn probe_overfit_pinned_profile() {
    let (train_data, _, inv) = load_fixture();
    let train_sents: Vec<_> = train_data.iter().map(|(s, _)| Arc::clone(s)).collect();
    for seed in [0u64, 7] {
        let cfg = TrainConfig {
            k: 64,
            eta: 0.001,
            lambda: 0.25,
            hidden: 32,
            epochs: 200,
            seed,
            patience: 10_000,
            init: InitScale::InvSqrtHidden,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let (params, report) = train(&train_data, &inv, &cfg, |_, _, _| {}).unwrap();
        let dec = DecodeConfig { k: 64, lambda: 0.25, bio_constraint: false, decoder: Decoder::Mcts };
        let pred = tag_corpus_seq(&train_sents, &params, &inv, &dec).unwrap();
        println!(
            "pinned profile seed={seed}: train_acc={:.3} best_reward={:.3} ({:.0}s)",
            token_acc(&train_data, &pred),
            report.best_reward,
            t0.elapsed().as_secs_f64()
        );
    }
}
