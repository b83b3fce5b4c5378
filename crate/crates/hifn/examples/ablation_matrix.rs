//! Trains a small ablation matrix — every arm on identical data and seeds —
//! and prints the comparison table.
//!
//! ```text
//! cargo run --release --example ablation_matrix
//! ```
//!
//! Generator and schedule knobs can be overridden through environment
//! variables (`ABL_USERS`, `ABL_EPOCHS`, `ABL_REPEATS`, `ABL_REPEAT_PROB`,
//! `ABL_POOL`, `ABL_POP_EXP`, `ABL_DRIFT_EVERY`, `ABL_SESSION`,
//! `ABL_SHORT_DRIFT`, `ABL_LR`, `ABL_HIDDEN`, `ABL_ARMS`) for quick
//! experiments.

use std::io::Cursor;
use std::time::Instant;

use hifn::data::{ingest_log, prepare_leave_one_out, PrepareConfig, WindowSpec};
use hifn::model::{ModelConfig, ModelDims, VocabSizes};
use hifn::report::{run_ablation, DataBundle};
use hifn::synth::{generate, SynthConfig};
use hifn::train::TrainConfig;

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() {
    let started = Instant::now();
    let bias: Vec<f64> = std::env::var("ABL_BIAS")
        .unwrap_or_else(|_| "0.2,0.5,0.8".into())
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    let types: Vec<f64> = std::env::var("ABL_TYPES")
        .unwrap_or_else(|_| "0.6,0.2,0.2".into())
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    let events: Vec<usize> = std::env::var("ABL_EVENTS")
        .unwrap_or_else(|_| "30,50".into())
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    let synth_cfg = SynthConfig {
        n_users: env_or("ABL_USERS", 250),
        n_items: env_or("ABL_ITEMS", 900),
        n_categories: env_or("ABL_CATS", 12),
        events_per_user: (events[0], events[1]),
        long_drift_every: env_or("ABL_DRIFT_EVERY", 25),
        short_session_length: env_or("ABL_SESSION", 6),
        short_drift_prob: env_or("ABL_SHORT_DRIFT", 0.7),
        item_repeat_prob: env_or("ABL_REPEAT_PROB", 0.65),
        personal_pool_size: env_or("ABL_POOL", 3),
        popularity_exponent: env_or("ABL_POP_EXP", 1.0),
        type_probs: (types[0], types[1], types[2]),
        behavior_cost_bias: hifn::synth::CostBias {
            click: bias[0],
            favorite: bias[1],
            purchase: bias[2],
        },
        rng_seed: env_or("ABL_SEED", 1),
        ..SynthConfig::default()
    };
    let out = generate(&synth_cfg).expect("generate");
    let log = ingest_log(Cursor::new(out.tsv.as_str()), 20).expect("ingest");
    let ts = env_or("ABL_TS", 8);
    let prepared = prepare_leave_one_out(
        &log,
        &PrepareConfig {
            window: WindowSpec { ts, l_max: 30 },
            k_train_negatives: env_or("ABL_KTRAIN", 1),
            k_eval_negatives: 10,
            ..PrepareConfig::default()
        },
    )
    .expect("prepare");
    println!(
        "data: {} train / {} valid / {} test samples ({:.2?})",
        prepared.train.len(),
        prepared.valid.len(),
        prepared.test.len(),
        started.elapsed()
    );
    let bundle = DataBundle {
        train: prepared.train,
        valid: prepared.valid,
        test: prepared.test,
        vocab_sizes: VocabSizes::of(&log.vocab),
    };
    let hidden = env_or("ABL_HIDDEN", 8);
    let base = TrainConfig {
        model: ModelConfig {
            dims: ModelDims {
                embed_dim: hidden,
                hidden_dim: hidden,
                attn_dim: 2 * hidden,
            },
            cdie_widths: vec![32, 16],
            gate_widths: vec![32, 16],
            fusion_widths: vec![32],
            predict_widths: if env_or("ABL_SMALL_MLP", 0) == 1 {
                vec![16]
            } else {
                vec![32, 16]
            },
            proxy_widths: vec![32, 16],
            ..ModelConfig::default()
        },
        batch_size: 64,
        learning_rate: env_or("ABL_LR", 0.003),
        ts,
        l_max: 30,
        epochs: env_or("ABL_EPOCHS", 4),
        rng_seed: 1,
        ..TrainConfig::default()
    };
    let arms: Vec<String> = std::env::var("ABL_ARMS")
        .unwrap_or_else(|_| {
            "full,no-qdie,no-tdie,no-cdie,gate-mean,ifm-concat,ifm-fixed-0.45,\
             proxy-whole-history,lambda-0"
                .to_string()
        })
        .split(',')
        .map(str::to_string)
        .collect();
    let repeats = env_or("ABL_REPEATS", 2);
    let table = run_ablation(&bundle, &base, &arms, repeats).expect("ablation");
    println!("{}", table.render_text());
    if let Some(full) = table.rows.iter().find(|r| r.arm == "full") {
        for row in &table.rows {
            if row.arm != "full" {
                println!("margin full − {}: {:+.4}", row.arm, full.auc_mean - row.auc_mean);
            }
        }
    }
    println!("total {:.2?}", started.elapsed());
}
