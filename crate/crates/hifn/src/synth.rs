//! Synthetic behavior-log generator with known long/short-term factors.
//!
//! Every user gets a stable (slowly driftable) long-term category affinity;
//! events arrive in sessions that share a short-term focus category. Each
//! event's category is drawn from the long-term affinity with probability
//! `behavior_cost_bias[type]`, otherwise from the session focus — so costlier
//! behavior types lean on the long-term factor by construction, and the
//! fusion-weight and disentanglement claims become measurable properties.
//!
//! Items inside a category carry structure too, otherwise same-category
//! ranking would be unlearnable noise: draws mix a Zipf-like global
//! popularity with a small personal pool per (user, category), and a
//! purchase retires the bought item from the pool (the need is satisfied).
//! The generating factor of every event is written to a ground-truth sidecar,
//! never into the log itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::derive_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("degenerate config: {0}")]
    Config(String),
}

/// Long-term weight per behavior type; must respect the cost ordering
/// purchase ≥ favorite ≥ click.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostBias {
    pub click: f64,
    pub favorite: f64,
    pub purchase: f64,
}

impl CostBias {
    pub fn of(&self, type_index: usize) -> f64 {
        [self.click, self.favorite, self.purchase][type_index]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    /// Inclusive range of events per user.
    pub events_per_user: (usize, usize),
    /// Dimension of the latent factors behind the category affinity.
    pub long_factor_dim: usize,
    pub short_session_length: usize,
    /// Probability that the session focus moves at a session boundary.
    pub short_drift_prob: f64,
    pub behavior_cost_bias: CostBias,
    pub rng_seed: u64,
    /// Sampling probabilities of (click, favorite, purchase).
    #[serde(default = "default_type_probs")]
    pub type_probs: (f64, f64, f64),
    /// Probability an event's item comes from the personal pool rather than
    /// global popularity.
    #[serde(default = "default_repeat_prob")]
    pub item_repeat_prob: f64,
    /// Personal pool size per (user, category).
    #[serde(default = "default_pool_size")]
    pub personal_pool_size: usize,
    /// Zipf exponent of within-category item popularity.
    #[serde(default = "default_popularity_exponent")]
    pub popularity_exponent: f64,
    /// Every this many events the long-term factors drift a little;
    /// 0 disables drift.
    #[serde(default)]
    pub long_drift_every: usize,
    /// Scale of the affinity logits; larger = more peaked preferences.
    #[serde(default = "default_affinity_scale")]
    pub affinity_scale: f64,
}

fn default_type_probs() -> (f64, f64, f64) {
    (0.6, 0.2, 0.2)
}
fn default_repeat_prob() -> f64 {
    0.65
}
fn default_pool_size() -> usize {
    3
}
fn default_popularity_exponent() -> f64 {
    1.0
}
fn default_affinity_scale() -> f64 {
    2.5
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 1000,
            n_items: 2000,
            n_categories: 20,
            events_per_user: (40, 80),
            long_factor_dim: 4,
            short_session_length: 6,
            short_drift_prob: 0.7,
            behavior_cost_bias: CostBias {
                click: 0.2,
                favorite: 0.5,
                purchase: 0.8,
            },
            rng_seed: 7,
            type_probs: default_type_probs(),
            item_repeat_prob: default_repeat_prob(),
            personal_pool_size: default_pool_size(),
            popularity_exponent: default_popularity_exponent(),
            long_drift_every: 0,
            affinity_scale: default_affinity_scale(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_users == 0 || self.n_items == 0 || self.n_categories == 0 {
            return Err(SynthError::Config(
                "n_users, n_items and n_categories must be positive".into(),
            ));
        }
        if self.n_items < self.n_categories {
            return Err(SynthError::Config("fewer items than categories".into()));
        }
        let b = &self.behavior_cost_bias;
        if !(b.purchase >= b.favorite && b.favorite >= b.click) {
            return Err(SynthError::Config(format!(
                "behavior_cost_bias must satisfy purchase >= favorite >= click, \
                 got purchase={} favorite={} click={}",
                b.purchase, b.favorite, b.click
            )));
        }
        for v in [b.click, b.favorite, b.purchase, self.short_drift_prob] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::Config(format!("probability {v} out of [0,1]")));
            }
        }
        if self.events_per_user.0 == 0 || self.events_per_user.0 > self.events_per_user.1 {
            return Err(SynthError::Config("bad events_per_user range".into()));
        }
        if self.short_session_length == 0 {
            return Err(SynthError::Config(
                "short_session_length must be ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Which latent factor generated an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorTag {
    Long,
    Short,
}

/// Per-event ground truth, one JSON line per event in log order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRecord {
    pub user_id: String,
    pub event_index: usize,
    pub factor_tag: FactorTag,
    pub session_id: usize,
}

/// Generator internals exposed for oracle scoring in tests: the model never
/// sees any of this.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub records: Vec<TruthRecord>,
    /// Final per-user category distribution (after any drift).
    pub user_affinity: Vec<Vec<f64>>,
    /// Final personal pools: `user → category → items`.
    pub user_pools: Vec<Vec<Vec<u32>>>,
    /// Within-category popularity weight of every item (global).
    pub item_popularity: Vec<f64>,
    pub repeat_prob: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub tsv: String,
    pub sidecar: String,
    pub truth: GroundTruth,
}

/// Category of a 1-based item id: items are striped round-robin.
pub fn item_category(item: u32, n_categories: usize) -> u32 {
    (item - 1) % n_categories as u32 + 1
}

/// Within-category popularity rank of a 1-based item id.
fn popularity_rank(item: u32, n_categories: usize) -> usize {
    ((item - 1) as usize) / n_categories
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if draw < *w {
            return i;
        }
        draw -= w;
    }
    weights.len() - 1
}

fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

struct UserState {
    factors: Vec<f64>,
    affinity: Vec<f64>,
    focus: usize,
    pools: Vec<Vec<u32>>,
    /// Items already purchased: the need is met, they are never drawn again.
    owned: std::collections::BTreeSet<u32>,
    session_id: usize,
}

pub fn generate(config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    let n_cat = config.n_categories;

    // Shared category factor vectors.
    let mut cat_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, u64::MAX));
    let cat_factors: Vec<Vec<f64>> = (0..n_cat)
        .map(|_| {
            (0..config.long_factor_dim)
                .map(|_| box_muller(&mut cat_rng))
                .collect()
        })
        .collect();

    // Per-category item lists with Zipf popularity weights.
    let mut items_by_cat: Vec<Vec<u32>> = vec![Vec::new(); n_cat + 1];
    let mut item_popularity = vec![0.0; config.n_items + 1];
    for item in 1..=config.n_items as u32 {
        let cat = item_category(item, n_cat);
        items_by_cat[cat as usize].push(item);
        let rank = popularity_rank(item, n_cat);
        item_popularity[item as usize] = 1.0 / ((rank + 1) as f64).powf(config.popularity_exponent);
    }

    let affinity_of = |factors: &[f64]| -> Vec<f64> {
        let logits: Vec<f64> = cat_factors
            .iter()
            .map(|cf| {
                let dot: f64 = cf.iter().zip(factors).map(|(a, b)| a * b).sum();
                config.affinity_scale * dot / (config.long_factor_dim as f64).sqrt()
            })
            .collect();
        softmax(&logits)
    };

    let mut tsv = String::new();
    let mut sidecar = String::new();
    let mut records = Vec::new();
    let mut user_affinity = vec![Vec::new()];
    let mut user_pools = vec![Vec::new()];

    for user in 1..=config.n_users {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, user as u64));
        let factors: Vec<f64> = (0..config.long_factor_dim)
            .map(|_| box_muller(&mut rng))
            .collect();
        let mut state = UserState {
            affinity: affinity_of(&factors),
            factors,
            focus: rng.gen_range(0..n_cat),
            pools: vec![Vec::new(); n_cat + 1],
            owned: std::collections::BTreeSet::new(),
            session_id: 0,
        };
        let n_events = rng.gen_range(config.events_per_user.0..=config.events_per_user.1);
        let base_ts = 1_600_000_000_i64 + user as i64 * 97_000;

        for j in 0..n_events {
            if j > 0 && j % config.short_session_length == 0 {
                state.session_id += 1;
                if rng.gen_bool(config.short_drift_prob) {
                    state.focus = rng.gen_range(0..n_cat);
                }
            }
            if config.long_drift_every > 0 && j > 0 && j % config.long_drift_every == 0 {
                for f in &mut state.factors {
                    *f = 0.8 * *f + 0.6 * box_muller(&mut rng);
                }
                state.affinity = affinity_of(&state.factors);
            }

            let (p_click, p_fav, _) = config.type_probs;
            let roll: f64 = rng.gen_range(0.0..1.0);
            let type_index = if roll < p_click {
                0
            } else if roll < p_click + p_fav {
                1
            } else {
                2
            };
            let behavior = ["click", "favorite", "purchase"][type_index];

            let tag = if rng.gen_bool(config.behavior_cost_bias.of(type_index)) {
                FactorTag::Long
            } else {
                FactorTag::Short
            };
            let cat = match tag {
                FactorTag::Long => sample_index(&mut rng, &state.affinity) + 1,
                FactorTag::Short => state.focus + 1,
            };

            // Item draw: personal pool (what the user is actively weighing)
            // or global popularity. Purchases lean harder on the pool — one
            // finally buys what one has been clicking — and owned items are
            // never drawn again.
            let repeat_prob = if behavior == "purchase" {
                (config.item_repeat_prob + 0.2).min(0.92)
            } else {
                config.item_repeat_prob
            };
            let owned = &state.owned;
            let pool = &mut state.pools[cat];
            let from_pool = rng.gen_bool(repeat_prob);
            let candidates = &items_by_cat[cat];
            let weights: Vec<f64> = candidates
                .iter()
                .map(|&i| {
                    if owned.contains(&i) {
                        0.0
                    } else {
                        item_popularity[i as usize]
                    }
                })
                .collect();
            let exhausted = weights.iter().all(|&w| w == 0.0);
            if from_pool && pool.len() < config.personal_pool_size && !exhausted {
                while pool.len() < config.personal_pool_size {
                    let pick = candidates[sample_index(&mut rng, &weights)];
                    if !pool.contains(&pick) {
                        pool.push(pick);
                    }
                    if pool.len() + owned.len() >= candidates.len() {
                        break;
                    }
                }
            }
            let item = if from_pool && !pool.is_empty() {
                pool[rng.gen_range(0..pool.len())]
            } else if !exhausted {
                candidates[sample_index(&mut rng, &weights)]
            } else {
                candidates[rng.gen_range(0..candidates.len())]
            };
            if behavior == "purchase" {
                // The need is satisfied: retire the item for good.
                state.pools[cat].retain(|&i| i != item);
                state.owned.insert(item);
            }

            let timestamp = base_ts + j as i64 * 18_000;
            tsv.push_str(&format!(
                "{user}\t{timestamp}\t{item}\tc{cat}\t{behavior}\n"
            ));
            let record = TruthRecord {
                user_id: user.to_string(),
                event_index: j,
                factor_tag: tag,
                session_id: state.session_id,
            };
            sidecar.push_str(&serde_json::to_string(&record).expect("serializable"));
            sidecar.push('\n');
            records.push(record);
        }
        user_affinity.push(state.affinity);
        user_pools.push(state.pools);
    }

    Ok(SynthOutput {
        tsv,
        sidecar,
        truth: GroundTruth {
            records,
            user_affinity,
            user_pools,
            item_popularity,
            repeat_prob: config.item_repeat_prob,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ingest_log, BehaviorType};
    use std::io::Cursor;

    fn small_config() -> SynthConfig {
        SynthConfig {
            n_users: 60,
            n_items: 200,
            n_categories: 8,
            events_per_user: (25, 40),
            rng_seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn invalid_bias_ordering_is_rejected() {
        let config = SynthConfig {
            behavior_cost_bias: CostBias {
                click: 0.9,
                favorite: 0.5,
                purchase: 0.2,
            },
            ..small_config()
        };
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("purchase >= favorite >= click"));
    }

    #[test]
    fn zero_users_is_rejected() {
        let config = SynthConfig {
            n_users: 0,
            ..small_config()
        };
        assert!(generate(&config).is_err());
    }

    #[test]
    fn purchase_bias_one_tags_every_purchase_long() {
        let config = SynthConfig {
            behavior_cost_bias: CostBias {
                click: 0.2,
                favorite: 0.5,
                purchase: 1.0,
            },
            ..small_config()
        };
        let out = generate(&config).unwrap();
        for (line, record) in out.tsv.lines().zip(&out.truth.records) {
            if line.ends_with("purchase") {
                assert_eq!(record.factor_tag, FactorTag::Long);
            }
        }
    }

    #[test]
    fn zero_drift_keeps_one_focus_per_user() {
        let config = SynthConfig {
            short_drift_prob: 0.0,
            behavior_cost_bias: CostBias {
                click: 0.0,
                favorite: 0.0,
                purchase: 0.0,
            },
            ..small_config()
        };
        // With zero cost bias every event is session-driven, so a fixed focus
        // means exactly one category per user.
        let out = generate(&config).unwrap();
        let mut per_user: std::collections::BTreeMap<&str, std::collections::BTreeSet<&str>> =
            Default::default();
        for line in out.tsv.lines() {
            let fields: Vec<&str> = line.split('\t').collect();
            per_user.entry(fields[0]).or_default().insert(fields[3]);
        }
        for (user, cats) in per_user {
            assert_eq!(cats.len(), 1, "user {user} drifted: {cats:?}");
        }
    }

    #[test]
    fn long_tag_frequency_tracks_cost_bias() {
        let config = SynthConfig {
            n_users: 1000,
            n_items: 2000,
            n_categories: 20,
            behavior_cost_bias: CostBias {
                click: 0.2,
                favorite: 0.5,
                purchase: 0.8,
            },
            rng_seed: 3,
            ..SynthConfig::default()
        };
        let out = generate(&config).unwrap();
        let mut counts = [(0usize, 0usize); 3]; // (long, total) per type
        for (line, record) in out.tsv.lines().zip(&out.truth.records) {
            let behavior = line.rsplit('\t').next().unwrap();
            let idx = match behavior {
                "click" => 0,
                "favorite" => 1,
                _ => 2,
            };
            counts[idx].1 += 1;
            if record.factor_tag == FactorTag::Long {
                counts[idx].0 += 1;
            }
        }
        for (idx, expected) in [(0, 0.2), (1, 0.5), (2, 0.8)] {
            let (long, total) = counts[idx];
            let frac = long as f64 / total as f64;
            let sigma = (expected * (1.0 - expected) / total as f64).sqrt();
            assert!(
                (frac - expected).abs() <= (3.0 * sigma).max(0.001),
                "type {idx}: fraction {frac:.4} vs expected {expected} (3σ = {:.4})",
                3.0 * sigma
            );
            assert!((frac - expected).abs() < 0.03);
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let config = small_config();
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.tsv, b.tsv);
        assert_eq!(a.sidecar, b.sidecar);
    }

    #[test]
    fn generated_log_passes_ingestion() {
        let config = small_config();
        let out = generate(&config).unwrap();
        let log = ingest_log(Cursor::new(out.tsv.as_str()), 20).unwrap();
        assert_eq!(log.report.users_kept, config.n_users);
        for events in log.user_events.iter().skip(1) {
            assert!(events.len() >= 20);
            for pair in events.windows(2) {
                assert!(pair[0].timestamp < pair[1].timestamp);
            }
            // a healthy majority of users can seed leave-one-out splits
            let purchases = events
                .iter()
                .filter(|e| e.behavior == BehaviorType::Purchase)
                .count();
            assert!(purchases >= 1);
        }
    }

    #[test]
    fn sidecar_lines_match_tsv_lines() {
        let out = generate(&small_config()).unwrap();
        assert_eq!(out.tsv.lines().count(), out.sidecar.lines().count());
        let first: TruthRecord = serde_json::from_str(out.sidecar.lines().next().unwrap()).unwrap();
        assert_eq!(first.event_index, 0);
        assert_eq!(first.session_id, 0);
    }
}
