//! Behavior-log domain model: events, vocabularies, ranking samples, dataset
//! splits, negative sampling, and the causal sub-sequence extraction used by
//! the causal-dependent interest encoder.
//!
//! The on-disk interfaces are
//! - a behavior-log TSV, one event per line:
//!   `user_id \t timestamp \t item_id \t category_string \t behavior_type`
//!   with `behavior_type ∈ {click, favorite, purchase}` and an optional
//!   header line detected by a leading `user_id` token;
//! - prepared samples as JSON lines, ids only (vocabulary-resolved);
//! - a vocabulary JSON mapping raw strings to dense ids, id 0 reserved as the
//!   padding sentinel everywhere.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("item {item} has no category")]
    MissingCategory { item: u32 },
    #[error("no negative candidates in category {category}")]
    EmptyNegativePool { category: u32 },
    #[error("unknown id {id} for {kind}")]
    UnknownId { kind: &'static str, id: u32 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Interaction kind, ordered by cost: click < favorite < purchase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorType {
    Click,
    Favorite,
    Purchase,
}

impl BehaviorType {
    pub const ALL: [BehaviorType; 3] = [
        BehaviorType::Click,
        BehaviorType::Favorite,
        BehaviorType::Purchase,
    ];

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "click" => Some(BehaviorType::Click),
            "favorite" => Some(BehaviorType::Favorite),
            "purchase" => Some(BehaviorType::Purchase),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorType::Click => "click",
            BehaviorType::Favorite => "favorite",
            BehaviorType::Purchase => "purchase",
        }
    }

    /// Embedding-table row (0 is padding).
    pub fn id(self) -> u32 {
        match self {
            BehaviorType::Click => 1,
            BehaviorType::Favorite => 2,
            BehaviorType::Purchase => 3,
        }
    }
}

impl fmt::Display for BehaviorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One timestamped user–item interaction; the atom of all sequences.
///
/// Serialized inside samples as the compact tuple
/// `[user_id, timestamp, item_id, category_id, behavior_code]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BehaviorEvent {
    pub user_id: u32,
    pub item_id: u32,
    pub category_id: u32,
    pub behavior: BehaviorType,
    pub timestamp: i64,
}

impl Serialize for BehaviorEvent {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        (
            self.user_id,
            self.timestamp,
            self.item_id,
            self.category_id,
            self.behavior.id(),
        )
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BehaviorEvent {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let (user_id, timestamp, item_id, category_id, code) =
            <(u32, i64, u32, u32, u32)>::deserialize(deserializer)?;
        let behavior = match code {
            1 => BehaviorType::Click,
            2 => BehaviorType::Favorite,
            3 => BehaviorType::Purchase,
            other => {
                return Err(serde::de::Error::custom(format!(
                    "unknown behavior code {other}"
                )))
            }
        };
        Ok(BehaviorEvent {
            user_id,
            item_id,
            category_id,
            behavior,
            timestamp,
        })
    }
}

/// One (user, query, target item, context, label) instance with its behavior
/// windows. `short_seq` holds the most recent events before `timestamp`,
/// `long_seq` the older remainder; both are chronologically ordered and both
/// strictly precede `timestamp`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankingSample {
    pub user_id: u32,
    pub timestamp: i64,
    pub list_id: u64,
    pub query_tokens: Vec<u32>,
    pub target_item: u32,
    pub target_category: u32,
    pub context_id: u32,
    pub long_seq: Vec<BehaviorEvent>,
    pub short_seq: Vec<BehaviorEvent>,
    pub label: u8,
}

/// Bidirectional string↔id maps for every entity family. Id 0 is never
/// assigned: it is the padding sentinel.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    pub users: IndexMap<String, u32>,
    pub items: IndexMap<String, u32>,
    pub categories: IndexMap<String, u32>,
    pub query_tokens: IndexMap<String, u32>,
    pub contexts: IndexMap<String, u32>,
    /// Category of each item, indexed by item id (slot 0 unused).
    pub item_category: Vec<u32>,
    /// Pre-tokenized query for each category, indexed by category id.
    pub category_tokens: Vec<Vec<u32>>,
}

fn intern(map: &mut IndexMap<String, u32>, key: &str) -> u32 {
    if let Some(&id) = map.get(key) {
        return id;
    }
    let id = map.len() as u32 + 1;
    map.insert(key.to_string(), id);
    id
}

impl Vocabulary {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn n_query_tokens(&self) -> usize {
        self.query_tokens.len()
    }

    pub fn n_contexts(&self) -> usize {
        self.contexts.len()
    }

    /// Query token ids for an item: the tokenized category string.
    pub fn build_query(&self, item_id: u32) -> Result<Vec<u32>, DataError> {
        let category = *self
            .item_category
            .get(item_id as usize)
            .ok_or(DataError::UnknownId {
                kind: "item",
                id: item_id,
            })?;
        if category == 0 {
            return Err(DataError::MissingCategory { item: item_id });
        }
        Ok(self.category_tokens[category as usize].clone())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        Ok(fs::write(path, serde_json::to_string_pretty(self)?)?)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Lowercase, split on non-alphanumerics, drop empty tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Time-of-day bucket (six-hour granularity) used as the context feature.
pub fn context_bucket(timestamp: i64) -> u32 {
    (timestamp.rem_euclid(86_400) / 21_600) as u32
}

/// An ingested behavior log: vocabulary plus per-user ordered event lists,
/// indexed by user id (slot 0 empty).
#[derive(Debug, Clone)]
pub struct Log {
    pub vocab: Vocabulary,
    pub user_events: Vec<Vec<BehaviorEvent>>,
    pub report: IngestReport,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub users_total: usize,
    pub users_kept: usize,
    pub users_dropped_min_events: usize,
    pub events_kept: usize,
}

struct RawEvent {
    user: String,
    timestamp: i64,
    item: String,
    category: String,
    behavior: BehaviorType,
}

/// Parses a behavior-log TSV and drops users with fewer than `min_events`
/// interactions. Events of each user end up ordered by timestamp, ties broken
/// by input order (the vector position then serves as the strict order).
pub fn ingest_log<R: BufRead>(reader: R, min_events: usize) -> Result<Log, DataError> {
    let mut raw: Vec<RawEvent> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let number = idx + 1;
        if line.is_empty() {
            continue;
        }
        if idx == 0 && line.starts_with("user_id") {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(DataError::Parse {
                line: number,
                message: format!("expected 5 tab-separated fields, got {}", fields.len()),
            });
        }
        let timestamp: i64 = fields[1].parse().map_err(|_| DataError::Parse {
            line: number,
            message: format!("bad timestamp {:?}", fields[1]),
        })?;
        let behavior = BehaviorType::parse(fields[4]).ok_or_else(|| DataError::Parse {
            line: number,
            message: format!("unknown behavior_type {:?}", fields[4]),
        })?;
        raw.push(RawEvent {
            user: fields[0].to_string(),
            timestamp,
            item: fields[2].to_string(),
            category: fields[3].to_string(),
            behavior,
        });
    }
    ingest_records(raw, min_events)
}

pub fn ingest_log_file(path: &Path, min_events: usize) -> Result<Log, DataError> {
    ingest_log(BufReader::new(fs::File::open(path)?), min_events)
}

fn ingest_records(raw: Vec<RawEvent>, min_events: usize) -> Result<Log, DataError> {
    // First pass: count events per user so dropped users never pollute the
    // vocabulary.
    let mut counts: IndexMap<&str, usize> = IndexMap::new();
    for event in &raw {
        *counts.entry(event.user.as_str()).or_insert(0) += 1;
    }
    let users_total = counts.len();
    let kept: IndexMap<&str, ()> = counts
        .iter()
        .filter(|(_, &c)| c >= min_events)
        .map(|(&u, _)| (u, ()))
        .collect();

    let mut vocab = Vocabulary {
        item_category: vec![0],
        category_tokens: vec![Vec::new()],
        ..Vocabulary::default()
    };
    let mut user_events: Vec<Vec<BehaviorEvent>> = vec![Vec::new()];
    let mut events_kept = 0usize;
    for event in &raw {
        if !kept.contains_key(event.user.as_str()) {
            continue;
        }
        let user_id = intern(&mut vocab.users, &event.user);
        if user_id as usize >= user_events.len() {
            user_events.push(Vec::new());
        }
        let category_id = intern(&mut vocab.categories, &event.category);
        if category_id as usize >= vocab.category_tokens.len() {
            let tokens = tokenize(&event.category)
                .iter()
                .map(|t| intern(&mut vocab.query_tokens, t))
                .collect();
            vocab.category_tokens.push(tokens);
        }
        let item_id = intern(&mut vocab.items, &event.item);
        if item_id as usize >= vocab.item_category.len() {
            vocab.item_category.push(category_id);
        }
        let _ = intern(
            &mut vocab.contexts,
            &format!("tod{}", context_bucket(event.timestamp)),
        );
        user_events[user_id as usize].push(BehaviorEvent {
            user_id,
            item_id,
            category_id,
            behavior: event.behavior,
            timestamp: event.timestamp,
        });
        events_kept += 1;
    }
    for events in &mut user_events {
        events.sort_by_key(|e| e.timestamp); // stable: input order breaks ties
    }
    let users_kept = vocab.users.len();
    Ok(Log {
        vocab,
        user_events,
        report: IngestReport {
            users_total,
            users_kept,
            users_dropped_min_events: users_total - users_kept,
            events_kept,
        },
    })
}

/// Positions of the same-category click/purchase events around a focal
/// position, split by (before/after) × (click/purchase). Favorite events are
/// never included. "Before" and "after" follow the strict sequence order
/// (timestamp, ties already resolved by position).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CausalSubsequences {
    pub clicks_before: Vec<usize>,
    pub purchases_before: Vec<usize>,
    pub clicks_after: Vec<usize>,
    pub purchases_after: Vec<usize>,
}

pub fn extract_causal_subsequences(
    seq: &[BehaviorEvent],
    focal_index: usize,
) -> CausalSubsequences {
    let focal = &seq[focal_index];
    let mut out = CausalSubsequences::default();
    for (pos, event) in seq.iter().enumerate() {
        if pos == focal_index || event.category_id != focal.category_id {
            continue;
        }
        match (pos < focal_index, event.behavior) {
            (true, BehaviorType::Click) => out.clicks_before.push(pos),
            (true, BehaviorType::Purchase) => out.purchases_before.push(pos),
            (false, BehaviorType::Click) => out.clicks_after.push(pos),
            (false, BehaviorType::Purchase) => out.purchases_after.push(pos),
            (_, BehaviorType::Favorite) => {}
        }
    }
    out
}

/// Window sizes: the most recent `ts` events form the short window, up to
/// `l_max` older events form the long window.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WindowSpec {
    pub ts: usize,
    pub l_max: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { ts: 10, l_max: 50 }
    }
}

/// Splits the strictly-earlier history of `seed_index` into (long, short).
pub fn behavior_windows(
    events: &[BehaviorEvent],
    seed_index: usize,
    spec: WindowSpec,
) -> (Vec<BehaviorEvent>, Vec<BehaviorEvent>) {
    let history = &events[..seed_index];
    let short_start = history.len().saturating_sub(spec.ts);
    let short = history[short_start..].to_vec();
    let long_start = short_start.saturating_sub(spec.l_max);
    let long = history[long_start..short_start].to_vec();
    (long, short)
}

/// Builds the positive sample seeded at `events[seed_index]`.
pub fn build_sample(
    vocab: &Vocabulary,
    events: &[BehaviorEvent],
    seed_index: usize,
    spec: WindowSpec,
    list_id: u64,
) -> Result<RankingSample, DataError> {
    let seed = &events[seed_index];
    let (long_seq, short_seq) = behavior_windows(events, seed_index, spec);
    let context_key = format!("tod{}", context_bucket(seed.timestamp));
    let context_id = *vocab
        .contexts
        .get(&context_key)
        .expect("context bucket interned at ingestion");
    Ok(RankingSample {
        user_id: seed.user_id,
        timestamp: seed.timestamp,
        list_id,
        query_tokens: vocab.build_query(seed.item_id)?,
        target_item: seed.item_id,
        target_category: seed.category_id,
        context_id,
        long_seq,
        short_seq,
        label: 1,
    })
}

/// Per-category candidate pools for negative sampling.
#[derive(Debug, Clone)]
pub struct CategoryIndex {
    by_category: Vec<Vec<u32>>,
}

impl CategoryIndex {
    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        let mut by_category = vec![Vec::new(); vocab.n_categories() + 1];
        for (item, &category) in vocab.item_category.iter().enumerate().skip(1) {
            by_category[category as usize].push(item as u32);
        }
        CategoryIndex { by_category }
    }

    pub fn items_of(&self, category: u32) -> &[u32] {
        &self.by_category[category as usize]
    }
}

/// SplitMix64: cheap stateless seed derivation for per-list generators.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `k` same-category negatives for a positive sample: uniform without
/// replacement when the pool is large enough, with replacement otherwise.
/// Deterministic given `rng_seed`.
pub fn sample_negatives(
    positive: &RankingSample,
    catalog: &CategoryIndex,
    k: usize,
    rng_seed: u64,
) -> Result<Vec<RankingSample>, DataError> {
    let pool: Vec<u32> = catalog
        .items_of(positive.target_category)
        .iter()
        .copied()
        .filter(|&item| item != positive.target_item)
        .collect();
    if pool.is_empty() {
        return Err(DataError::EmptyNegativePool {
            category: positive.target_category,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let chosen: Vec<u32> = if pool.len() >= k {
        let mut pool = pool;
        for i in 0..k {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    } else {
        (0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    };
    Ok(chosen
        .into_iter()
        .map(|item| {
            let mut sample = positive.clone();
            sample.target_item = item;
            sample.label = 0;
            sample
        })
        .collect())
}

/// A positive with its negatives, shuffled into scoring order.
pub fn build_list(
    vocab: &Vocabulary,
    catalog: &CategoryIndex,
    events: &[BehaviorEvent],
    seed_index: usize,
    spec: WindowSpec,
    list_id: u64,
    k_negatives: usize,
    base_seed: u64,
) -> Result<Vec<RankingSample>, DataError> {
    let positive = build_sample(vocab, events, seed_index, spec, list_id)?;
    let seed = derive_seed(base_seed, list_id);
    let mut list = sample_negatives(&positive, catalog, k_negatives, seed)?;
    list.push(positive);
    // Shuffle so ties in model scores cannot silently favor the positive.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    for i in (1..list.len()).rev() {
        list.swap(i, rng.gen_range(0..=i));
    }
    Ok(list)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PrepareCounts {
    pub users_total: usize,
    pub users_kept: usize,
    pub users_dropped_min_events: usize,
    /// Users with fewer than 3 purchases: all their purchases went to train.
    pub users_without_holdout: usize,
    pub train_lists: usize,
    pub valid_lists: usize,
    pub test_lists: usize,
    pub train_samples: usize,
    pub valid_samples: usize,
    pub test_samples: usize,
}

#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub train: Vec<RankingSample>,
    pub valid: Vec<RankingSample>,
    pub test: Vec<RankingSample>,
    pub counts: PrepareCounts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub min_events: usize,
    pub window: WindowSpec,
    /// Negatives per training positive.
    pub k_train_negatives: usize,
    /// Negatives per validation/test positive.
    pub k_eval_negatives: usize,
    pub rng_seed: u64,
    /// Cap on training seeds per user (most recent kept); 0 = unlimited.
    #[serde(default)]
    pub max_train_seeds_per_user: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            min_events: 20,
            window: WindowSpec::default(),
            k_train_negatives: 2,
            k_eval_negatives: 10,
            rng_seed: 17,
            max_train_seeds_per_user: 0,
        }
    }
}

/// Leave-one-out seeds over a user's purchases: last purchase → test,
/// second-last → validation, remainder → train. Users with fewer than three
/// purchases contribute train seeds only.
pub fn split_leave_one_out(events: &[BehaviorEvent]) -> LeaveOneOut {
    let purchases: Vec<usize> = events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.behavior == BehaviorType::Purchase)
        .map(|(i, _)| i)
        .collect();
    match purchases.len() {
        n if n >= 3 => LeaveOneOut {
            train: purchases[..n - 2].to_vec(),
            valid: Some(purchases[n - 2]),
            test: Some(purchases[n - 1]),
        },
        _ => LeaveOneOut {
            train: purchases,
            valid: None,
            test: None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaveOneOut {
    pub train: Vec<usize>,
    pub valid: Option<usize>,
    pub test: Option<usize>,
}

/// Runs the full leave-one-out preparation over an ingested log.
pub fn prepare_leave_one_out(log: &Log, cfg: &PrepareConfig) -> Result<PreparedDataset, DataError> {
    let catalog = CategoryIndex::from_vocab(&log.vocab);
    let mut out = PreparedDataset {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        counts: PrepareCounts {
            users_total: log.report.users_total,
            users_kept: log.report.users_kept,
            users_dropped_min_events: log.report.users_dropped_min_events,
            ..PrepareCounts::default()
        },
    };
    let mut list_id = 0u64;
    for events in log.user_events.iter().skip(1) {
        let split = split_leave_one_out(events);
        if split.test.is_none() {
            out.counts.users_without_holdout += 1;
        }
        let mut train_seeds = split.train;
        if cfg.max_train_seeds_per_user > 0 && train_seeds.len() > cfg.max_train_seeds_per_user {
            train_seeds = train_seeds[train_seeds.len() - cfg.max_train_seeds_per_user..].to_vec();
        }
        for seed_index in train_seeds {
            let list = build_list(
                &log.vocab,
                &catalog,
                events,
                seed_index,
                cfg.window,
                list_id,
                cfg.k_train_negatives,
                cfg.rng_seed,
            )?;
            list_id += 1;
            out.counts.train_lists += 1;
            out.counts.train_samples += list.len();
            out.train.extend(list);
        }
        for (seed, split_name) in [(split.valid, "valid"), (split.test, "test")] {
            let Some(seed_index) = seed else { continue };
            let list = build_list(
                &log.vocab,
                &catalog,
                events,
                seed_index,
                cfg.window,
                list_id,
                cfg.k_eval_negatives,
                cfg.rng_seed,
            )?;
            list_id += 1;
            if split_name == "valid" {
                out.counts.valid_lists += 1;
                out.counts.valid_samples += list.len();
                out.valid.extend(list);
            } else {
                out.counts.test_lists += 1;
                out.counts.test_samples += list.len();
                out.test.extend(list);
            }
        }
    }
    Ok(out)
}

/// Chronological holdout used by the counterfactual fusion-weight protocol:
/// events before the per-user split point seed training lists (one behavior
/// type only), later events seed per-behavior-type evaluation slices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceConfig {
    pub train_fraction: f64,
    pub train_seed_type: BehaviorType,
    pub base: PrepareConfig,
}

#[derive(Debug, Clone)]
pub struct SlicedDataset {
    pub train: Vec<RankingSample>,
    /// Evaluation lists per behavior type, in `BehaviorType::ALL` order.
    pub slices: Vec<(BehaviorType, Vec<RankingSample>)>,
    pub counts: PrepareCounts,
}

pub fn prepare_behavior_slices(log: &Log, cfg: &SliceConfig) -> Result<SlicedDataset, DataError> {
    let catalog = CategoryIndex::from_vocab(&log.vocab);
    let mut train = Vec::new();
    let mut slices: Vec<(BehaviorType, Vec<RankingSample>)> =
        BehaviorType::ALL.iter().map(|&b| (b, Vec::new())).collect();
    let mut counts = PrepareCounts {
        users_total: log.report.users_total,
        users_kept: log.report.users_kept,
        users_dropped_min_events: log.report.users_dropped_min_events,
        ..PrepareCounts::default()
    };
    let mut list_id = 0u64;
    for events in log.user_events.iter().skip(1) {
        let cut = ((events.len() as f64) * cfg.train_fraction).floor() as usize;
        for (seed_index, event) in events.iter().enumerate() {
            let in_train = seed_index < cut;
            if in_train && event.behavior != cfg.train_seed_type {
                continue;
            }
            // Seeds need at least one prior event to carry any history.
            if seed_index == 0 {
                continue;
            }
            let k = if in_train {
                cfg.base.k_train_negatives
            } else {
                cfg.base.k_eval_negatives
            };
            let list = build_list(
                &log.vocab,
                &catalog,
                events,
                seed_index,
                cfg.base.window,
                list_id,
                k,
                cfg.base.rng_seed,
            )?;
            list_id += 1;
            if in_train {
                counts.train_lists += 1;
                counts.train_samples += list.len();
                train.extend(list);
            } else {
                let slot = slices
                    .iter_mut()
                    .find(|(b, _)| *b == event.behavior)
                    .expect("slice for every behavior type");
                counts.test_lists += 1;
                counts.test_samples += list.len();
                slot.1.extend(list);
            }
        }
    }
    Ok(SlicedDataset {
        train,
        slices,
        counts,
    })
}

pub fn write_samples(path: &Path, samples: &[RankingSample]) -> Result<(), DataError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for sample in samples {
        serde_json::to_writer(&mut out, sample)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<RankingSample>, DataError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut samples = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        samples.push(serde_json::from_str(&line)?);
    }
    Ok(samples)
}
