//! Shared fixtures for the integration suites.
#![allow(dead_code)]

use hifn::data::{
    ingest_log, prepare_leave_one_out, PrepareConfig, RankingSample, Vocabulary, WindowSpec,
};
use hifn::model::{HifnModel, ModelConfig, ModelDims, VocabSizes};
use hifn::synth::{generate, item_category, GroundTruth, SynthConfig};
use hifn::train::TrainConfig;
use std::collections::HashMap;
use std::io::Cursor;

/// Small synth → ingest → prepare pipeline plus a tiny-dims model over its
/// vocabulary. Returns the model, the prepared test samples and the
/// vocabulary.
pub fn pipeline_fixture(seed: u64, n_users: usize) -> (HifnModel, Vec<RankingSample>, Vocabulary) {
    let out = generate(&SynthConfig {
        n_users,
        n_items: 160,
        n_categories: 6,
        events_per_user: (25, 40),
        rng_seed: seed,
        ..SynthConfig::default()
    })
    .expect("valid config");
    let log = ingest_log(Cursor::new(out.tsv.as_str()), 20).expect("clean log");
    let prepared = prepare_leave_one_out(
        &log,
        &PrepareConfig {
            window: WindowSpec { ts: 6, l_max: 20 },
            ..PrepareConfig::default()
        },
    )
    .expect("prepare");
    let model = HifnModel::new(ModelConfig::tiny(), VocabSizes::of(&log.vocab), seed ^ 0xF00D);
    let mut samples = prepared.test;
    samples.extend(prepared.valid);
    (model, samples, log.vocab)
}

/// Desk-sized model/optimizer settings used by the training-based criteria:
/// small dims keep single-threaded runtimes in minutes while leaving every
/// architectural element in place.
pub fn desk_train_config(ts: usize, l_max: usize) -> TrainConfig {
    TrainConfig {
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
        ts,
        l_max,
        ..TrainConfig::default()
    }
}

/// Scores test candidates with the generator's own factors: personal-pool
/// membership mixed with within-category popularity. The model never sees any
/// of these quantities.
pub fn oracle_scores(
    samples: &[RankingSample],
    vocab: &Vocabulary,
    truth: &GroundTruth,
    synth_cfg: &SynthConfig,
) -> Vec<f64> {
    let dense_to_raw: HashMap<u32, u32> = vocab
        .items
        .iter()
        .map(|(raw, &dense)| (dense, raw.parse::<u32>().expect("synth item ids are numeric")))
        .collect();
    let dense_to_user: HashMap<u32, usize> = vocab
        .users
        .iter()
        .map(|(raw, &dense)| (dense, raw.parse::<usize>().expect("synth user ids are numeric")))
        .collect();
    // per-category popularity normalizers
    let mut z_cat = vec![0.0; synth_cfg.n_categories + 1];
    for item in 1..=synth_cfg.n_items as u32 {
        z_cat[item_category(item, synth_cfg.n_categories) as usize] +=
            truth.item_popularity[item as usize];
    }
    samples
        .iter()
        .map(|sample| {
            let raw_item = dense_to_raw[&sample.target_item];
            let user = dense_to_user[&sample.user_id];
            let cat = item_category(raw_item, synth_cfg.n_categories) as usize;
            let pool = &truth.user_pools[user][cat];
            let from_pool = if pool.contains(&raw_item) {
                truth.repeat_prob / pool.len() as f64
            } else {
                0.0
            };
            from_pool
                + (1.0 - truth.repeat_prob) * truth.item_popularity[raw_item as usize]
                    / z_cat[cat]
        })
        .collect()
}
