//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers. Run with `cargo test --test acceptance -- --nocapture`
//! to see them; the training-based criteria take minutes each.

mod common;

use common::*;
use hifn::data::{
    extract_causal_subsequences, BehaviorEvent, BehaviorType, CausalSubsequences, RankingSample,
};
use hifn::disentangle::freeze_proxies;
use hifn::gradcheck::check_gradients;
use hifn::metrics::{auc, average_precision, mrr, ndcg_at, RankedList};
use hifn::model::{attention_pool, HifnModel, ModelConfig, ShortWindow, VocabSizes};
use hifn::tape::Tape;
use hifn::tensor::GradStore;
use hifn::train::sample_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn event(ts: i64, item: u32, cat: u32, behavior: BehaviorType) -> BehaviorEvent {
    BehaviorEvent {
        user_id: 1,
        item_id: item,
        category_id: cat,
        behavior,
        timestamp: ts,
    }
}

/// Criterion 1 — gradient integrity: the full joint loss (λ = 0.1) on a
/// 2-sample batch at reduced dims (embedding 4, hidden 4, Ts = 3); every
/// parameter's reverse-mode gradient matches central finite differences
/// (step 1e-4) with max relative error < 1e-4, in under 60 s.
#[test]
fn acceptance_1_gradient_integrity() {
    let started = Instant::now();
    let sizes = VocabSizes {
        users: 4,
        items: 24,
        categories: 4,
        query_tokens: 5,
        contexts: 4,
    };
    let model = HifnModel::new(ModelConfig::tiny(), sizes, 99);
    let ts = 3;
    let lambda = 0.1;
    let proxy_cfg = hifn::disentangle::ProxyConfig {
        ts,
        beta: 0.55,
        mode: hifn::disentangle::ProxyMode::Updating,
    };

    // Sample A: long and short windows populated, proxy streams two windows.
    let sample_a = RankingSample {
        user_id: 1,
        timestamp: 100,
        list_id: 0,
        query_tokens: vec![1, 3],
        target_item: 7,
        target_category: 3,
        context_id: 2,
        long_seq: vec![
            event(10, 1, 1, BehaviorType::Click),
            event(20, 6, 2, BehaviorType::Purchase),
            event(30, 9, 1, BehaviorType::Favorite),
        ],
        short_seq: vec![
            event(40, 3, 3, BehaviorType::Click),
            event(50, 7, 3, BehaviorType::Click),
            event(60, 11, 3, BehaviorType::Purchase),
        ],
        label: 1,
    };
    // Sample B: empty long window (exercises the learned default), exactly
    // one full proxy window, negative label.
    let sample_b = RankingSample {
        user_id: 2,
        timestamp: 200,
        list_id: 1,
        query_tokens: vec![2],
        target_item: 13,
        target_category: 1,
        context_id: 1,
        long_seq: vec![],
        short_seq: vec![
            event(40, 5, 1, BehaviorType::Click),
            event(50, 13, 1, BehaviorType::Favorite),
            event(60, 17, 1, BehaviorType::Click),
        ],
        label: 0,
    };
    let samples = [sample_a, sample_b];
    let frozen: Vec<_> = samples
        .iter()
        .map(|s| freeze_proxies(&model, s, &proxy_cfg))
        .collect();

    let mut store = GradStore::new(&model.params);
    for (sample, fz) in samples.iter().zip(&frozen) {
        let mut tape = Tape::new(&model.params);
        let parts = sample_loss(&mut tape, &model, sample, &proxy_cfg, lambda, Some(fz)).unwrap();
        assert!(parts.contrastive.is_some(), "both samples must carry Eq.18");
        tape.backward(parts.loss, 1.0 / samples.len() as f64, &mut store)
            .unwrap();
    }

    let mut probe = model.clone();
    let mut fd_params = model.params.clone();
    let checks = check_gradients(&mut fd_params, &store, 1e-4, 1e-7, |p| {
        probe.params = p.clone();
        samples
            .iter()
            .zip(&frozen)
            .map(|(s, fz)| {
                let mut tape = Tape::new(&probe.params);
                let parts = sample_loss(&mut tape, &probe, s, &proxy_cfg, lambda, Some(fz)).unwrap();
                tape.value(parts.loss)[0]
            })
            .sum::<f64>()
            / samples.len() as f64
    });
    let elapsed = started.elapsed();
    let worst = &checks[0];
    let n_params: usize = model.params.total_values();
    assert!(
        worst.max_rel_error < 1e-4,
        "worst gradient mismatch at {}: {}",
        worst.name,
        worst.max_rel_error
    );
    // the check must not be vacuous: real gradient mass reached the tensors
    let grad_linf = (0..model.params.len())
        .flat_map(|i| store.get(hifn::tensor::ParamId(i)).iter().copied())
        .fold(0.0f64, |m, g| m.max(g.abs()));
    assert!(grad_linf > 1e-3, "gradients suspiciously small: {grad_linf}");
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 1 (gradient integrity): PASS — {} parameter values, \
         worst rel err {:.3e} at {}, |grad|_inf {:.3}, {:.2?}",
        n_params, worst.max_rel_error, worst.name, grad_linf, elapsed
    );
}

/// Criterion 2 — metric oracles: AUC equals O(n²) pair counting within 1e-12
/// on 100 random fixtures; MRR/MAP/NDCG@10 reproduce the hand-computed
/// fixtures exactly.
#[test]
fn acceptance_2_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE17);
    for round in 0..100 {
        let n = rng.gen_range(5..300);
        let quantized = rng.gen_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if quantized {
                    (rng.gen_range(0..15) as f64) / 15.0
                } else {
                    rng.gen_range(0.0..1.0)
                }
            })
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.3))).collect();
        labels[0] = 1;
        labels[1] = 0;
        let fast = auc(&scores, &labels).unwrap();
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..n {
            if labels[i] != 1 {
                continue;
            }
            for j in 0..n {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let brute = wins / pairs;
        assert!(
            (fast - brute).abs() < 1e-12,
            "fixture {round}: {fast} vs {brute}"
        );
    }

    let list_with_positive_at = |rank: usize| {
        let scores: Vec<f64> = (0..11).map(|i| 1.0 - i as f64 * 0.05).collect();
        let mut labels = vec![0u8; 11];
        labels[rank - 1] = 1;
        RankedList {
            list_id: 0,
            scores,
            labels,
        }
    };
    let first = list_with_positive_at(1);
    assert_eq!(mrr(&first), 1.0);
    assert_eq!(ndcg_at(&first, 10), 1.0);
    assert_eq!(average_precision(&first), 1.0);
    let third = list_with_positive_at(3);
    assert_eq!(mrr(&third), 1.0 / 3.0);
    assert_eq!(average_precision(&third), 1.0 / 3.0);
    let second = list_with_positive_at(2);
    assert!((ndcg_at(&second, 10) - 1.0 / 3f64.log2()).abs() < 1e-15);

    println!(
        "ACCEPTANCE 2 (metric oracles): PASS — 100 AUC fixtures within 1e-12, \
         ranking fixtures exact"
    );
}

/// Criterion 3 — structural invariants: gate weights sum to 1 (±1e-9),
/// alpha ∈ (0,1), convex-combination bounds, padding-permutation invariance,
/// attention loop-oracle agreement (1e-12), CDIE brute-force agreement on
/// 1000 random sequences. Under 2 minutes.
#[test]
fn acceptance_3_structural_invariants() {
    let started = Instant::now();
    let (model, samples, _vocab) = pipeline_fixture(61, 40);
    assert!(samples.len() >= 300, "fixture produced {}", samples.len());

    // Bundle invariants + convexity over pipeline samples.
    for sample in &samples {
        let mut tape = Tape::new(&model.params);
        let fwd = model.forward(&mut tape, sample).unwrap();
        let bundle = model.bundle(&tape, &fwd);
        let gate_total: f64 = bundle.gate_weights.iter().sum();
        assert!((gate_total - 1.0).abs() < 1e-9);
        let alpha = bundle.alpha_fuse.unwrap();
        assert!(alpha > 0.0 && alpha < 1.0);
        assert!(bundle.y_hat > 0.0 && bundle.y_hat < 1.0);
        let (u_t, u_q, u_c) = (
            bundle.u_t.as_ref().unwrap(),
            bundle.u_q.as_ref().unwrap(),
            bundle.u_c.as_ref().unwrap(),
        );
        let fused = tape.value(fwd.fused);
        for i in 0..bundle.u_short.len() {
            let lo = u_t[i].min(u_q[i]).min(u_c[i]) - 1e-12;
            let hi = u_t[i].max(u_q[i]).max(u_c[i]) + 1e-12;
            assert!(bundle.u_short[i] >= lo && bundle.u_short[i] <= hi);
            let lo = bundle.u_short[i].min(bundle.u_long[i]) - 1e-12;
            let hi = bundle.u_short[i].max(bundle.u_long[i]) + 1e-12;
            assert!(fused[i] >= lo && fused[i] <= hi);
        }
    }

    // Padding-permutation invariance on a real sample.
    let sample = samples
        .iter()
        .find(|s| s.short_seq.len() >= 3)
        .expect("sample with history");
    let clean = ShortWindow::padded(&sample.short_seq, sample.short_seq.len() + 3);
    let mut corrupted = clean.clone();
    for slot in corrupted.events.iter_mut().skip(sample.short_seq.len()) {
        *slot = event(7, 3, 2, BehaviorType::Purchase);
    }
    let mut tape_a = Tape::new(&model.params);
    let fwd_a = model
        .forward_with_window(&mut tape_a, sample, &clean)
        .unwrap();
    let mut tape_b = Tape::new(&model.params);
    let fwd_b = model
        .forward_with_window(&mut tape_b, sample, &corrupted)
        .unwrap();
    assert_eq!(
        tape_a.value(fwd_a.y_hat),
        tape_b.value(fwd_b.y_hat),
        "masked positions leaked into the output"
    );

    // Attention loop oracle at double precision.
    let h = model.config.dims.hidden_dim;
    let a_dim = model.config.dims.attn_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..25 {
        let n_keys = rng.gen_range(1..8);
        let keys_data: Vec<Vec<f64>> = (0..n_keys)
            .map(|_| (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let probe_data: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new(&model.params);
        let keys: Vec<_> = keys_data
            .iter()
            .map(|k| tape.constant_vec(k.clone()))
            .collect();
        let probe = tape.constant_vec(probe_data.clone());
        let (pooled, weights) =
            attention_pool(&mut tape, &model.ids.attn_tdie, &keys, None, probe).unwrap();

        let wf = model.params.get(model.ids.attn_tdie.wf).data();
        let bf = model.params.get(model.ids.attn_tdie.bf).data();
        let wh = model.params.get(model.ids.attn_tdie.wh).data();
        let mut scored = vec![0.0; h * a_dim];
        for i in 0..h {
            for j in 0..a_dim {
                let mut acc = bf[i * a_dim + j];
                for c in 0..h {
                    acc += wf[(i * a_dim + j) * h + c] * probe_data[c];
                }
                scored[i * a_dim + j] = acc.tanh();
            }
        }
        let scores: Vec<f64> = keys_data
            .iter()
            .map(|key| {
                (0..a_dim)
                    .map(|j| {
                        let m: f64 = (0..h).map(|i| key[i] * scored[i * a_dim + j]).sum();
                        m * wh[j]
                    })
                    .sum()
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (got, want) in tape.value(weights).iter().zip(exps.iter().map(|e| e / total)) {
            assert!((got - want).abs() < 1e-12);
        }
        let mut expect = vec![0.0; h];
        for (w, key) in tape.value(weights).iter().zip(&keys_data) {
            for i in 0..h {
                expect[i] += w * key[i];
            }
        }
        for (got, want) in tape.value(pooled).iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    // CDIE sub-sequence extraction vs brute force on 1000 random sequences.
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..1000 {
        let len = rng.gen_range(1..25);
        let seq: Vec<BehaviorEvent> = (0..len)
            .map(|i| {
                let behavior = match rng.gen_range(0..3) {
                    0 => BehaviorType::Click,
                    1 => BehaviorType::Favorite,
                    _ => BehaviorType::Purchase,
                };
                event(i as i64, rng.gen_range(1..6), rng.gen_range(1..5), behavior)
            })
            .collect();
        let focal = rng.gen_range(0..len);
        let fast = extract_causal_subsequences(&seq, focal);
        let mut slow = CausalSubsequences::default();
        for pos in 0..len {
            if pos == focal || seq[pos].category_id != seq[focal].category_id {
                continue;
            }
            match (pos < focal, seq[pos].behavior) {
                (true, BehaviorType::Click) => slow.clicks_before.push(pos),
                (true, BehaviorType::Purchase) => slow.purchases_before.push(pos),
                (false, BehaviorType::Click) => slow.clicks_after.push(pos),
                (false, BehaviorType::Purchase) => slow.purchases_after.push(pos),
                _ => {}
            }
        }
        assert_eq!(fast, slow);
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 3 (structural invariants): PASS — {} samples audited, \
         attention oracle ≤ 1e-12, 1000 causal sequences, {:.2?}",
        samples.len(),
        elapsed
    );
}

/// Criterion 4 — learning sanity on the standard synthetic config
/// (1,000 users, 2,000 items, 20 categories): 5 epochs cut the train logloss
/// by ≥ 20% from epoch 0 and reach test AUC ≥ 0.65, under 15 minutes
/// single-threaded. The ground-truth scorer confirms the generator's signal
/// supports that bar.
#[test]
fn acceptance_4_learning_sanity() {
    use hifn::data::{ingest_log, prepare_leave_one_out, PrepareConfig};
    use hifn::metrics::logloss;
    use hifn::model::HifnModel as Model;
    use hifn::synth::{generate, SynthConfig};
    use hifn::train::{score_samples, train};
    use std::io::Cursor;

    let started = Instant::now();
    let synth_cfg = SynthConfig {
        rng_seed: 404,
        ..SynthConfig::default()
    };
    assert_eq!(
        (synth_cfg.n_users, synth_cfg.n_items, synth_cfg.n_categories),
        (1000, 2000, 20),
        "standard config"
    );
    let out = generate(&synth_cfg).unwrap();
    let log = ingest_log(Cursor::new(out.tsv.as_str()), 20).unwrap();
    let prepared = prepare_leave_one_out(&log, &PrepareConfig::default()).unwrap();

    let cfg = hifn::train::TrainConfig {
        epochs: 5,
        rng_seed: 404,
        batch_size: 256,
        ..desk_train_config(10, 50)
    };
    let mut model = Model::new(cfg.model.clone(), VocabSizes::of(&log.vocab), cfg.rng_seed);
    let outcome = train(&mut model, &prepared.train, &prepared.valid, &cfg).unwrap();
    assert_eq!(outcome.metrics.len(), 5, "no early stop expected here");

    let first = outcome.metrics.first().unwrap().train_ctr;
    let last = outcome.metrics.last().unwrap().train_ctr;
    let reduction = (first - last) / first;

    let scores = score_samples(&model, &prepared.test).unwrap();
    let labels: Vec<u8> = prepared.test.iter().map(|s| s.label).collect();
    let test_auc = auc(&scores, &labels).unwrap();
    let test_logloss = logloss(&scores, &labels).unwrap();

    let oracle = oracle_scores(&prepared.test, &log.vocab, &out.truth, &synth_cfg);
    let oracle_auc = auc(&oracle, &labels).unwrap();

    let elapsed = started.elapsed();
    assert!(
        reduction >= 0.20,
        "train logloss fell only {:.1}% ({first:.4} → {last:.4})",
        reduction * 100.0
    );
    assert!(test_auc >= 0.65, "test AUC {test_auc:.4} below 0.65");
    assert!(
        oracle_auc >= 0.65,
        "generator signal too weak: oracle AUC {oracle_auc:.4}"
    );
    assert!(elapsed.as_secs() < 900, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 4 (learning sanity): PASS — logloss {first:.4} → {last:.4} \
         (−{:.1}%), test AUC {test_auc:.4} (logloss {test_logloss:.4}), \
         oracle AUC {oracle_auc:.4}, {:.1?}",
        reduction * 100.0,
        elapsed
    );
}

/// Criterion 8 — reproducibility: identical seeds and configs twice produce
/// byte-identical checkpoints and metrics logs.
#[test]
fn acceptance_8_reproducibility() {
    use hifn::checkpoint;
    use hifn::model::HifnModel as Model;
    use hifn::train::train;

    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let (_, _, vocab) = pipeline_fixture(808, 24);
        let out = hifn::synth::generate(&hifn::synth::SynthConfig {
            n_users: 24,
            n_items: 160,
            n_categories: 6,
            events_per_user: (25, 40),
            rng_seed: 808,
            ..hifn::synth::SynthConfig::default()
        })
        .unwrap();
        let log =
            hifn::data::ingest_log(std::io::Cursor::new(out.tsv.as_str()), 20).unwrap();
        let prepared = hifn::data::prepare_leave_one_out(
            &log,
            &hifn::data::PrepareConfig {
                window: hifn::data::WindowSpec { ts: 6, l_max: 20 },
                ..hifn::data::PrepareConfig::default()
            },
        )
        .unwrap();
        let cfg = hifn::train::TrainConfig {
            epochs: 2,
            rng_seed: 3,
            batch_size: 32,
            ..desk_train_config(6, 20)
        };
        let mut model = Model::new(cfg.model.clone(), VocabSizes::of(&log.vocab), cfg.rng_seed);
        let outcome = train(&mut model, &prepared.train, &prepared.valid, &cfg).unwrap();
        let path = dir.path().join(format!("run-{tag}.ckpt"));
        checkpoint::save(&path, &model.params).unwrap();
        let metrics: Vec<String> = outcome
            .metrics
            .iter()
            .map(|m| serde_json::to_string(m).unwrap())
            .collect();
        let _ = vocab;
        (std::fs::read(&path).unwrap(), metrics.join("\n"))
    };
    let (bytes_a, log_a) = run("a");
    let (bytes_b, log_b) = run("b");
    assert_eq!(bytes_a, bytes_b, "checkpoints differ between identical runs");
    assert_eq!(log_a, log_b, "metrics logs differ between identical runs");
    println!(
        "ACCEPTANCE 8 (reproducibility): PASS — {} checkpoint bytes and \
         metrics logs byte-identical across two runs",
        bytes_a.len()
    );
}
