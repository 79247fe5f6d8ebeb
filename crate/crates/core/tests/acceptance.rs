//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (run with `--nocapture` to see them). Criteria cover
//! gradient certification against the finite-difference oracle, the
//! architectural reduction identities, selection and correlation oracles,
//! desk-scale training behavior, determinism, and gate-analysis
//! bookkeeping.

use std::time::Instant;


use parasent_core::encoders::{
    encode_avg, encode_lstm, init_params, CombineMode, Encoder, EncoderConfig, EncoderKind,
    LstmParams, LstmReadout, W_W,
};
use parasent_core::eval::{pearson_r, spearman_rho};
use parasent_core::gates::{aggregate_norms, GroupBy, TaggedSentence, TaggedToken};
use parasent_core::gradcheck::{certify, FdOptions, HarnessDims, LossKind};
use parasent_core::numeric::{cosine, RandomSource};
use parasent_core::train::supervised::{target_distribution, InitMode, ScoredPair};
use parasent_core::train::transfer::{select_negatives, PairBatch};
use parasent_core::train::{train_supervised, train_transfer, AdamConfig, TrainConfig};
use parasent_core::vocab::{EmbeddingTable, TokenSequence};
use parasent_core::Real;

fn random_table(vocab: usize, dim: usize, seed: u64) -> EmbeddingTable<f64> {
    let mut rng = RandomSource::new(seed);
    let mut text = String::new();
    for w in 0..vocab {
        text.push_str(&format!("w{w:03}"));
        for _ in 0..dim {
            text.push_str(&format!(" {}", rng.uniform(-0.5, 0.5)));
        }
        text.push('\n');
    }
    EmbeddingTable::load(text.as_bytes(), seed).unwrap().0
}

fn random_table_f32(vocab: usize, dim: usize, seed: u64) -> EmbeddingTable<f32> {
    let mut rng = RandomSource::new(seed);
    let mut text = String::new();
    for w in 0..vocab {
        text.push_str(&format!("w{w:03}"));
        for _ in 0..dim {
            text.push_str(&format!(" {}", rng.uniform(-0.5, 0.5)));
        }
        text.push('\n');
    }
    EmbeddingTable::load(text.as_bytes(), seed).unwrap().0
}

fn random_seq(vocab: usize, max_len: usize, rng: &mut RandomSource) -> TokenSequence {
    let len = 1 + rng.below(max_len as u64) as usize;
    let indices: Vec<usize> = (0..len).map(|_| rng.below(vocab as u64) as usize).collect();
    TokenSequence {
        surface: indices.iter().map(|i| format!("w{i:03}")).collect(),
        indices,
    }
}

/// Criterion 1: every encoder kind with both objectives passes the
/// finite-difference oracle at 1e-4 relative error on 20 random small
/// instances each, within the runtime budget.
#[test]
fn criterion_1_gradient_certification() {
    let start = Instant::now();
    let kinds = [
        (EncoderKind::Avg, false),
        (EncoderKind::LstmFinal, false),
        (EncoderKind::LstmAvg, false),
        (EncoderKind::Gran1, false),
        (EncoderKind::Gran2, false),
        (EncoderKind::Gran3, false),
        (EncoderKind::Gran4, false),
        (EncoderKind::Gran5, false),
        (EncoderKind::LstmAvg, true),
        (EncoderKind::Gran1, true),
    ];
    // boundary tags may add 2 positions, so a raw cap of 4 keeps T <= 6
    let dims = HarnessDims {
        dim: 6,
        max_len: 4,
        max_pairs: 4,
        vocab: 9,
    };
    let opts = FdOptions {
        step: 1e-5,
        max_coords: 200,
        ..FdOptions::default()
    };
    let mut worst = 0.0f64;
    for &(kind, bidi) in &kinds {
        for loss in [LossKind::Margin, LossKind::Kl] {
            let seed = 1000 + kind.code() as u64 * 10 + bidi as u64 * 5 + (loss == LossKind::Kl) as u64;
            let report = certify(kind, bidi, loss, &dims, 20, seed, &opts).unwrap();
            assert!(
                report.passes(1e-4),
                "{}{} / {:?}: max rel err {:.3e}\n{}",
                if bidi { "bi-" } else { "" },
                kind.name(),
                loss,
                report.max_rel_err,
                report.render_table()
            );
            worst = worst.max(report.max_rel_err);
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 120,
        "certification took {elapsed:?}, budget is 2 minutes"
    );
    println!(
        "acceptance 1 (gradient certification): PASS (worst rel err {worst:.3e}, {elapsed:.1?})"
    );
}

/// Criterion 2: saturated-gate reductions reproduce the simpler encoders
/// to 1e-6 in 32-bit arithmetic on 100 random sentences.
#[test]
fn criterion_2_reduction_identities() {
    let dim = 8;
    let table = random_table_f32(40, dim, 2);
    let mut rng = RandomSource::new(3);

    // gated averaging with the gate saturated open reduces to averaging
    let config = EncoderConfig::new(EncoderKind::Gran1, dim);
    let mut params = init_params(&config, &table, 4).unwrap();
    params.randomize(&mut rng, 0.5);
    params.insert(W_W, table.w_w.clone());
    params.get_mut("enc.gate1.w_x").unwrap().fill(0.0);
    params.get_mut("enc.gate1.w_h").unwrap().fill(0.0);
    params.get_mut("enc.gate1.b").unwrap().fill(40.0);
    let gran1 = Encoder::from_set(config, &params).unwrap();
    for _ in 0..100 {
        let seq = random_seq(table.rows(), 9, &mut rng);
        let a = gran1.encode(&seq, &table.w_w).unwrap();
        let b = encode_avg(&seq, &table.w_w).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-6, "gran1 vs avg: {x} vs {y}");
        }
    }

    // the two-gate summing variant selects either word averaging or
    // averaged LSTM states depending on which gate saturates
    let config5 = EncoderConfig::new(EncoderKind::Gran5, dim);
    let mut params5 = init_params(&config5, &table, 5).unwrap();
    params5.randomize(&mut rng, 0.5);
    params5.insert(W_W, table.w_w.clone());
    for name in [
        "enc.gate1.w_x",
        "enc.gate1.w_h",
        "enc.gate2.w_x",
        "enc.gate2.w_h",
    ] {
        params5.get_mut(name).unwrap().fill(0.0);
    }
    let lstm = LstmParams::from_set(&params5, parasent_core::encoders::FWD_PREFIX).unwrap();

    params5.get_mut("enc.gate1.b").unwrap().fill(40.0);
    params5.get_mut("enc.gate2.b").unwrap().fill(-40.0);
    let gran5_avg = Encoder::from_set(config5, &params5).unwrap();
    params5.get_mut("enc.gate1.b").unwrap().fill(-40.0);
    params5.get_mut("enc.gate2.b").unwrap().fill(40.0);
    let gran5_lstm = Encoder::from_set(config5, &params5).unwrap();

    for _ in 0..100 {
        let seq = random_seq(table.rows(), 9, &mut rng);
        let g_avg = gran5_avg.encode(&seq, &table.w_w).unwrap();
        let avg = encode_avg(&seq, &table.w_w).unwrap();
        for (x, y) in g_avg.as_slice().iter().zip(avg.as_slice()) {
            assert!((x - y).abs() < 1e-6, "gran5 vs avg: {x} vs {y}");
        }
        let g_lstm = gran5_lstm.encode(&seq, &table.w_w).unwrap();
        let l = encode_lstm(&seq, &table.w_w, &lstm, LstmReadout::Average).unwrap();
        for (x, y) in g_lstm.as_slice().iter().zip(l.as_slice()) {
            assert!((x - y).abs() < 1e-6, "gran5 vs lstmavg: {x} vs {y}");
        }
    }
    println!("acceptance 2 (reduction identities): PASS");
}

/// Criterion 3: argmax negative selection agrees with an exhaustive
/// quadratic oracle on 200 random batches of sizes 2 to 100.
#[test]
fn criterion_3_negative_selection_oracle() {
    let dim = 8;
    let table = random_table(120, dim, 6);
    let config = EncoderConfig::new(EncoderKind::Avg, dim);
    let params = init_params(&config, &table, 7).unwrap();
    let encoder = Encoder::from_set(config, &params).unwrap();
    let w_w = params.get(W_W).unwrap();
    let mut rng = RandomSource::new(8);

    // by-definition cosine for the oracle side
    let cos = |a: &[f64], b: &[f64]| -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };

    for batch_no in 0..200 {
        let n = 2 + (rng.below(99)) as usize;
        let batch = PairBatch::new(
            (0..n)
                .map(|_| {
                    (
                        random_seq(table.rows(), 5, &mut rng),
                        random_seq(table.rows(), 5, &mut rng),
                    )
                })
                .collect(),
        );
        let got = select_negatives(&batch, &encoder, w_w).unwrap();

        let embeddings: Vec<Vec<f64>> = (0..2 * n)
            .map(|flat| {
                let seq = batch.sentence(flat);
                let mut acc = vec![0.0; dim];
                for &i in &seq.indices {
                    for (a, &v) in acc.iter_mut().zip(w_w.row(i)) {
                        *a += v;
                    }
                }
                for a in &mut acc {
                    *a /= seq.indices.len() as f64;
                }
                acc
            })
            .collect();
        for (i, neg) in got.iter().enumerate() {
            for (anchor, found) in [(2 * i, neg.0), (2 * i + 1, neg.1)] {
                let mut best = usize::MAX;
                let mut best_cos = f64::NEG_INFINITY;
                for (j, e) in embeddings.iter().enumerate() {
                    if j / 2 == i {
                        continue;
                    }
                    let c = cos(&embeddings[anchor], e);
                    if c > best_cos {
                        best_cos = c;
                        best = j;
                    }
                }
                assert_eq!(
                    found, best,
                    "batch {batch_no} pair {i} anchor {anchor}: {found} vs oracle {best}"
                );
            }
        }
    }
    println!("acceptance 3 (negative-selection oracle): PASS (200 batches)");
}

/// Criterion 4: the sparse target distribution reproduces the gold score
/// exactly and stays a probability distribution.
#[test]
fn criterion_4_target_distribution_identity() {
    let mut rng = RandomSource::new(9);
    let mut scores: Vec<f64> = (0..1000).map(|_| rng.uniform(1.0, 5.0)).collect();
    scores.push(1.0);
    scores.push(5.0);
    for y in scores {
        let p = target_distribution(y, 5).unwrap();
        let sum: f64 = p.iter().sum();
        let expect: f64 = p.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
        assert!((sum - 1.0).abs() < 1e-12, "sum(p) = {sum} for y = {y}");
        assert!((expect - y).abs() < 1e-9, "r.p = {expect} for y = {y}");
        assert!(p.iter().all(|&v| v >= 0.0));
    }
    println!("acceptance 4 (target-distribution identity): PASS (1002 scores)");
}

/// Criterion 5: correlation implementations match by-definition
/// reimplementations to 1e-12, and Pearson is invariant to the
/// error-analysis rescaling of predictions onto the 0-5 scale.
#[test]
fn criterion_5_correlation_oracles() {
    // independent implementations, written differently on purpose
    fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for i in 0..x.len() {
            sxy += (x[i] - mx) * (y[i] - my);
            sxx += (x[i] - mx) * (x[i] - mx);
            syy += (y[i] - my) * (y[i] - my);
        }
        sxy / (sxx.sqrt() * syy.sqrt())
    }
    fn rank_oracle(x: &[f64]) -> Vec<f64> {
        // counting-based average ranks, quadratic on purpose
        x.iter()
            .map(|&xi| {
                let less = x.iter().filter(|&&xj| xj < xi).count() as f64;
                let equal = x.iter().filter(|&&xj| xj == xi).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }

    let mut rng = RandomSource::new(10);
    for case in 0..1000 {
        let n = 3 + rng.below(40) as usize;
        let x: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let mut y: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        // sprinkle ties to exercise the average-rank policy
        if case % 3 == 0 && n > 4 {
            y[1] = y[0];
            y[3] = y[2];
        }
        let p = pearson_r(&x, &y).unwrap();
        let po = pearson_oracle(&x, &y);
        assert!((p - po).abs() < 1e-12, "pearson {p} vs oracle {po}");

        let s = spearman_rho(&x, &y).unwrap();
        let so = pearson_oracle(&rank_oracle(&x), &rank_oracle(&y));
        assert!((s - so).abs() < 1e-12, "spearman {s} vs oracle {so}");

        // the 0-5 rescaling of cosine predictions leaves Pearson unchanged
        let scaled: Vec<f64> = x.iter().map(|c| 2.5 * (c + 1.0)).collect();
        let ps = pearson_r(&scaled, &y).unwrap();
        assert!((p - ps).abs() < 1e-12, "scaling moved pearson: {p} vs {ps}");
    }
    println!("acceptance 5 (correlation oracles): PASS (1000 instances)");
}

/// Synthetic paraphrase corpus: topical word pools plus shared filler
/// words; a pair samples both sentences from the same topic.
fn synthetic_corpus(
    n_pairs: usize,
    vocab: usize,
    rng: &mut RandomSource,
) -> Vec<(TokenSequence, TokenSequence)> {
    let n_common = 20;
    let per_topic = 6;
    let n_topics = (vocab - n_common) / per_topic;
    let sentence = |topic: usize, rng: &mut RandomSource| -> TokenSequence {
        let len = 4 + rng.below(6) as usize;
        let indices: Vec<usize> = (0..len)
            .map(|_| {
                if rng.coin(0.25) {
                    rng.below(n_common as u64) as usize
                } else {
                    n_common + topic * per_topic + rng.below(per_topic as u64) as usize
                }
            })
            .collect();
        TokenSequence {
            surface: indices.iter().map(|i| format!("w{i:03}")).collect(),
            indices,
        }
    };
    (0..n_pairs)
        .map(|_| {
            let topic = rng.below(n_topics as u64) as usize;
            (sentence(topic, rng), sentence(topic, rng))
        })
        .collect()
}

/// Criterion 6: five epochs of gated-averaging training on a synthetic
/// 500-pair corpus reduce the margin loss and separate held-out
/// paraphrases from random pairs by at least 0.2 mean cosine.
#[test]
fn criterion_6_desk_scale_transfer() {
    let start = Instant::now();
    let dim = 16;
    let vocab = 200;
    let table = random_table_f32(vocab, dim, 11);
    let mut rng = RandomSource::new(12);
    let train_pairs = synthetic_corpus(500, vocab, &mut rng);
    let held_out = synthetic_corpus(100, vocab, &mut rng);

    let config = EncoderConfig::new(EncoderKind::Gran1, dim);
    let tcfg = TrainConfig {
        delta: 0.4,
        epochs: 5,
        batch_size: 100,
        seed: 13,
        ..TrainConfig::default()
    };
    let params = init_params(&config, &table, 14).unwrap();
    let out = train_transfer(&train_pairs, &table, &config, &tcfg, params).unwrap();

    let first = out.epoch_losses.first().copied().unwrap();
    let last = out.epoch_losses.last().copied().unwrap();
    assert!(
        last < first,
        "loss did not decrease: first {first}, last {last} ({:?})",
        out.epoch_losses
    );

    let encoder = Encoder::from_set(config, &out.params).unwrap();
    let w_w = out.params.get(W_W).unwrap();
    let embed = |seq: &TokenSequence| encoder.encode(seq, w_w).unwrap();
    let mut para = 0.0;
    let mut random = 0.0;
    for (i, (s1, s2)) in held_out.iter().enumerate() {
        para += cosine(&embed(s1), &embed(s2)).unwrap().to_f64();
        let other = &held_out[(i + 7) % held_out.len()].1;
        random += cosine(&embed(s1), &embed(other)).unwrap().to_f64();
    }
    para /= held_out.len() as f64;
    random /= held_out.len() as f64;
    let gap = para - random;
    assert!(
        gap >= 0.2,
        "paraphrase/random cosine gap {gap:.3} (para {para:.3}, random {random:.3})"
    );

    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 300,
        "transfer run took {elapsed:?}, budget is 5 minutes"
    );
    println!(
        "acceptance 6 (desk-scale transfer): PASS (loss {first:.4} -> {last:.4}, gap {gap:.3}, {elapsed:.1?})"
    );
}

fn toy_scored_pairs(
    n: usize,
    vocab: usize,
    rng: &mut RandomSource,
) -> Vec<ScoredPair> {
    // gold score follows token overlap, so the data is learnable
    (0..n)
        .map(|_| {
            let len = 3 + rng.below(4) as usize;
            let base: Vec<usize> = (0..len).map(|_| rng.below(vocab as u64) as usize).collect();
            let keep = rng.below(len as u64 + 1) as usize;
            let mut other = base.clone();
            for slot in other.iter_mut().skip(keep) {
                *slot = rng.below(vocab as u64) as usize;
            }
            let overlap = keep as f64 / len as f64;
            let mk = |ids: &[usize]| TokenSequence {
                surface: ids.iter().map(|i| format!("w{i:03}")).collect(),
                indices: ids.to_vec(),
            };
            ScoredPair {
                s1: mk(&base),
                s2: mk(&other),
                gold: 1.0 + 4.0 * overlap,
            }
        })
        .collect()
}

/// Criterion 7: the supervised objective overfits 50 toy pairs past
/// Pearson 0.95 in 200 epochs, and warm-started training with a strong
/// drift penalty stays closer to its checkpoint than without one.
#[test]
fn criterion_7_desk_scale_supervised() {
    let dim = 8;
    let vocab = 30;
    let table = random_table(vocab, dim, 15);
    let mut rng = RandomSource::new(16);
    let trainset = toy_scored_pairs(50, vocab, &mut rng);

    let config = EncoderConfig::new(EncoderKind::Avg, dim);
    let tcfg = TrainConfig {
        epochs: 200,
        batch_size: 100,
        seed: 17,
        adam: AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let out = train_supervised(
        &trainset,
        &[],
        &table,
        &config,
        50,
        5,
        &tcfg,
        InitMode::Fresh,
    )
    .unwrap();
    let preds = parasent_core::train::supervised::predict_scores(
        &trainset, &table, &config, &out.params, false, false,
    )
    .unwrap();
    let golds: Vec<f64> = trainset.iter().map(|p| p.gold).collect();
    let r = pearson_r(&preds, &golds).unwrap();
    assert!(r > 0.95, "training-set pearson {r:.4}");

    // universal warm start: checkpoint from a short transfer run
    let ck_pairs: Vec<(TokenSequence, TokenSequence)> = trainset
        .iter()
        .take(20)
        .map(|p| (p.s1.clone(), p.s2.clone()))
        .collect();
    let ck_cfg = TrainConfig {
        epochs: 1,
        batch_size: 10,
        seed: 18,
        ..TrainConfig::default()
    };
    let ck = train_transfer(
        &ck_pairs,
        &table,
        &config,
        &ck_cfg,
        init_params(&config, &table, 19).unwrap(),
    )
    .unwrap()
    .params;

    let drift = |lambda_w: f64| -> f64 {
        let tcfg = TrainConfig {
            epochs: 30,
            batch_size: 100,
            seed: 20,
            lambda_w,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        let out = train_supervised(
            &trainset,
            &[],
            &table,
            &config,
            50,
            5,
            &tcfg,
            InitMode::Universal(&ck),
        )
        .unwrap();
        let diff = parasent_core::numeric::sub(
            out.params.get(W_W).unwrap(),
            ck.get(W_W).unwrap(),
        )
        .unwrap();
        parasent_core::numeric::sum_sq(&diff).sqrt()
    };
    let anchored = drift(10.0);
    let free = drift(0.0);
    assert!(
        anchored < free,
        "drift with lambda_w=10 ({anchored:.6}) should be below lambda_w=0 ({free:.6})"
    );
    println!(
        "acceptance 7 (desk-scale supervised): PASS (train r {r:.4}, drift {anchored:.4} < {free:.4})"
    );
}

/// Criterion 8: identical configuration and seed reproduce training
/// trajectories and checkpoints bitwise.
#[test]
fn criterion_8_determinism() {
    let dim = 8;
    let vocab = 40;
    let table = random_table_f32(vocab, dim, 21);
    let mut rng = RandomSource::new(22);
    let pairs = synthetic_corpus(60, vocab, &mut rng);

    let config = EncoderConfig::new(EncoderKind::Gran1, dim);
    let tcfg = TrainConfig {
        epochs: 2,
        batch_size: 20,
        seed: 23,
        dropout_rate: 0.2,
        word_dropout_rate: 0.2,
        scramble_rate: 0.5,
        lambda_w: 1e-5,
        add_eos: true,
        ..TrainConfig::default()
    };
    let run = || {
        train_transfer(
            &pairs,
            &table,
            &config,
            &tcfg,
            init_params(&config, &table, 24).unwrap(),
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert!(a.params.bits_eq(&b.params), "transfer trajectories diverged");
    assert_eq!(a.epoch_losses, b.epoch_losses);

    // checkpoints serialize identically byte for byte
    let meta = parasent_core::checkpoint::CkptMeta {
        dim,
        hidden: dim,
        kind: EncoderKind::Gran1,
        bidirectional: false,
        combine: CombineMode::Sum,
        add_sos: false,
        add_eos: true,
        head_hidden: 0,
        head_k: 0,
    };
    let mut buf_a = Vec::new();
    parasent_core::checkpoint::save_checkpoint(&mut buf_a, &a.params, &meta).unwrap();
    let mut buf_b = Vec::new();
    parasent_core::checkpoint::save_checkpoint(&mut buf_b, &b.params, &meta).unwrap();
    assert_eq!(buf_a, buf_b);
    let (reloaded, _) = parasent_core::checkpoint::load_checkpoint::<f32>(buf_a.as_slice()).unwrap();
    assert!(reloaded.bits_eq(&a.params));

    // supervised runs reproduce too
    let table64 = random_table(vocab, dim, 21);
    let mut rng = RandomSource::new(25);
    let scored = toy_scored_pairs(20, vocab, &mut rng);
    let sup_cfg = TrainConfig {
        epochs: 3,
        batch_size: 10,
        seed: 26,
        dropout_rate: 0.1,
        scramble_rate: 0.25,
        ..TrainConfig::default()
    };
    let sup_config = EncoderConfig::new(EncoderKind::LstmAvg, dim);
    let run_sup = || {
        train_supervised(
            &scored,
            &scored,
            &table64,
            &sup_config,
            10,
            5,
            &sup_cfg,
            InitMode::Fresh,
        )
        .unwrap()
    };
    let sa = run_sup();
    let sb = run_sup();
    assert!(sa.params.bits_eq(&sb.params), "supervised trajectories diverged");
    assert_eq!(sa.dev_pearson, sb.dev_pearson);

    println!("acceptance 8 (determinism): PASS");
}

/// Criterion 9: gate-norm aggregation conserves total norm mass across
/// groupings, and the zero-parameter gate yields mean norm d/2 for every
/// key.
#[test]
fn criterion_9_gate_analysis_bookkeeping() {
    let dim = 6;
    let table = random_table(50, dim, 27);
    let mut rng = RandomSource::new(28);

    // random tagged corpus over the table's vocabulary
    let pos_tags = ["NN", "VB", "JJ", "DT", "IN", "RB"];
    let dep_tags = ["nsubj", "dobj", "det", "amod", "root", "prep"];
    let sentences: Vec<TaggedSentence> = (0..50)
        .map(|_| {
            let len = 2 + rng.below(9) as usize;
            let tokens = (0..len)
                .map(|i| TaggedToken {
                    form: format!("w{:03}", rng.below(50)),
                    pos: pos_tags[rng.below(pos_tags.len() as u64) as usize].to_string(),
                    head: if i == 0 { 0 } else { rng.below(len as u64) as usize },
                    deprel: dep_tags[rng.below(dep_tags.len() as u64) as usize].to_string(),
                })
                .collect();
            TaggedSentence { tokens }
        })
        .collect();

    let config = EncoderConfig::new(EncoderKind::Gran1, dim);
    let mut params = init_params(&config, &table, 29).unwrap();
    params.randomize(&mut rng, 0.5);
    params.insert(W_W, table.w_w.clone());
    let encoder = Encoder::from_set(config, &params).unwrap();
    let w_w = params.get(W_W).unwrap();

    let mut masses = Vec::new();
    for group_by in [GroupBy::Pos, GroupBy::Dep, GroupBy::PosXDep] {
        let t = aggregate_norms(&sentences, &encoder, &table, w_w, group_by, false, false).unwrap();
        masses.push(t.total_mass());
    }
    for w in masses.windows(2) {
        assert!(
            (w[0] - w[1]).abs() < 1e-9,
            "norm mass differs across groupings: {masses:?}"
        );
    }

    // zero gate parameters: sigma(0) = 0.5 per coordinate
    let mut zero_params = init_params(&config, &table, 30).unwrap();
    for name in [
        "enc.gate1.w_x",
        "enc.gate1.w_h",
        "enc.gate1.b",
    ] {
        zero_params.get_mut(name).unwrap().fill(0.0);
    }
    let lstm_names: Vec<String> = zero_params
        .names()
        .filter(|n| n.starts_with("enc.lstm."))
        .cloned()
        .collect();
    for n in lstm_names {
        zero_params.get_mut(&n).unwrap().fill(0.0);
    }
    let zero_encoder = Encoder::from_set(config, &zero_params).unwrap();
    let zw = zero_params.get(W_W).unwrap();
    let t = aggregate_norms(&sentences, &zero_encoder, &table, zw, GroupBy::Pos, false, false)
        .unwrap();
    for row in &t.rows {
        assert!(
            (row.mean - 0.5 * dim as f64).abs() < 1e-9,
            "key {} mean {} != d/2",
            row.key,
            row.mean
        );
    }
    println!("acceptance 9 (gate-analysis bookkeeping): PASS");
}
