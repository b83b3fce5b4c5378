//! End-to-end training on a small synthetic log: generate, prepare, train,
//! and report test metrics.
//!
//! ```text
//! cargo run --release --example train_small
//! ```

use std::io::Cursor;
use std::time::Instant;

use hifn::data::{ingest_log, prepare_leave_one_out, PrepareConfig, WindowSpec};
use hifn::metrics::{auc, lists_from_samples, logloss, ranking_report};
use hifn::model::{HifnModel, ModelConfig, ModelDims, VocabSizes};
use hifn::synth::{generate, SynthConfig};
use hifn::train::{score_samples, train, TrainConfig};

fn main() {
    let started = Instant::now();
    let synth_cfg = SynthConfig {
        n_users: 200,
        n_items: 800,
        n_categories: 10,
        events_per_user: (30, 50),
        rng_seed: 11,
        ..SynthConfig::default()
    };
    let out = generate(&synth_cfg).expect("generate");
    println!(
        "generated {} events for {} users in {:.2?}",
        out.tsv.lines().count(),
        synth_cfg.n_users,
        started.elapsed()
    );

    let log = ingest_log(Cursor::new(out.tsv.as_str()), 20).expect("ingest");
    let prepared = prepare_leave_one_out(
        &log,
        &PrepareConfig {
            window: WindowSpec { ts: 8, l_max: 30 },
            k_train_negatives: 2,
            k_eval_negatives: 10,
            ..PrepareConfig::default()
        },
    )
    .expect("prepare");
    println!(
        "prepared {} train / {} valid / {} test samples",
        prepared.train.len(),
        prepared.valid.len(),
        prepared.test.len()
    );

    let cfg = TrainConfig {
        model: ModelConfig {
            dims: ModelDims {
                embed_dim: 8,
                hidden_dim: 8,
                attn_dim: 16,
            },
            cdie_widths: vec![32, 16],
            gate_widths: vec![32, 16],
            fusion_widths: vec![32],
            predict_widths: vec![32, 16],
            proxy_widths: vec![32, 16],
            ..ModelConfig::default()
        },
        batch_size: 64,
        learning_rate: 0.003,
        ts: 8,
        l_max: 30,
        epochs: 6,
        rng_seed: 11,
        ..TrainConfig::default()
    };
    let mut model = HifnModel::new(cfg.model.clone(), VocabSizes::of(&log.vocab), cfg.rng_seed);
    println!(
        "model has {} parameter values; training {} epochs…",
        model.params.total_values(),
        cfg.epochs
    );
    let train_started = Instant::now();
    let outcome = train(&mut model, &prepared.train, &prepared.valid, &cfg).expect("train");
    for m in &outcome.metrics {
        println!(
            "  epoch {}: train_loss {:.4}  valid_auc {:.4}  valid_logloss {:.4}",
            m.epoch, m.train_loss, m.valid_auc, m.valid_logloss
        );
    }
    println!("training took {:.2?}", train_started.elapsed());

    let scores = score_samples(&model, &prepared.test).expect("score");
    let labels: Vec<u8> = prepared.test.iter().map(|s| s.label).collect();
    let report = ranking_report(&lists_from_samples(&prepared.test, &scores));
    println!(
        "test: auc {:.4}  logloss {:.4}  mrr {:.4}  ndcg@10 {:.4}  map {:.4}",
        auc(&scores, &labels).unwrap(),
        logloss(&scores, &labels).unwrap(),
        report.mrr,
        report.ndcg_at_10,
        report.map
    );

    // Ceiling check: score candidates with the generator's own factors.
    let dense_to_raw: std::collections::HashMap<u32, u32> = log
        .vocab
        .items
        .iter()
        .map(|(raw, &dense)| (dense, raw.parse::<u32>().unwrap()))
        .collect();
    let raw_user: std::collections::HashMap<u32, usize> = log
        .vocab
        .users
        .iter()
        .map(|(raw, &dense)| (dense, raw.parse::<usize>().unwrap()))
        .collect();
    let oracle: Vec<f64> = prepared
        .test
        .iter()
        .map(|s| {
            let raw_item = dense_to_raw[&s.target_item];
            let user = raw_user[&s.user_id];
            let pools = &out.truth.user_pools[user];
            let cat = hifn::synth::item_category(raw_item, synth_cfg.n_categories) as usize;
            let pool = &pools[cat];
            let in_pool = if pool.contains(&raw_item) && !pool.is_empty() {
                out.truth.repeat_prob / pool.len() as f64
            } else {
                0.0
            };
            let z: f64 = (1..=synth_cfg.n_items as u32)
                .filter(|&i| hifn::synth::item_category(i, synth_cfg.n_categories) as usize == cat)
                .map(|i| out.truth.item_popularity[i as usize])
                .sum();
            in_pool
                + (1.0 - out.truth.repeat_prob) * out.truth.item_popularity[raw_item as usize] / z
        })
        .collect();
    println!(
        "oracle ceiling: auc {:.4}",
        auc(&oracle, &labels).unwrap()
    );
    println!("total {:.2?}", started.elapsed());
}
