//! Analysis runners: the per-behavior-type fusion-weight report and the
//! ablation matrix.
//!
//! Every ablation arm is a named configuration switch applied to a base
//! training config; arms train on identical data with identical seeds, so a
//! table row differs from the baseline only through its structural change.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BehaviorType, RankingSample};
use crate::disentangle::ProxyMode;
use crate::metrics::{auc, lists_from_samples, logloss, ranking_report, MetricError};
use crate::model::{GateMode, HifnModel, IfmMode, LieProbe, VocabSizes};
use crate::train::{score_samples, train, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown ablation switch {0:?}")]
    UnknownArm(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Per-behavior-type slice of the counterfactual evaluation. `mean_alpha`
/// averages the fusion weight over the slice's positive samples (the items
/// the user actually interacted with); AUC and logloss use the whole slice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaSlice {
    pub behavior: BehaviorType,
    pub count: usize,
    pub positives: usize,
    pub mean_alpha: Option<f64>,
    pub auc: Option<f64>,
    pub logloss: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaReport {
    pub slices: Vec<AlphaSlice>,
    pub total_samples: usize,
}

pub fn alpha_report(
    model: &HifnModel,
    slices: &[(BehaviorType, Vec<RankingSample>)],
) -> Result<AlphaReport, ReportError> {
    let mut report = AlphaReport {
        slices: Vec::new(),
        total_samples: 0,
    };
    for (behavior, samples) in slices {
        report.total_samples += samples.len();
        if samples.is_empty() {
            report.slices.push(AlphaSlice {
                behavior: *behavior,
                count: 0,
                positives: 0,
                mean_alpha: None,
                auc: None,
                logloss: None,
            });
            continue;
        }
        let mut alpha_sum = 0.0;
        let mut positives = 0usize;
        let mut scores = Vec::with_capacity(samples.len());
        for sample in samples {
            let mut tape = crate::tape::Tape::new(&model.params);
            let fwd = model.forward(&mut tape, sample)?;
            scores.push(tape.value(fwd.y_hat)[0]);
            if sample.label == 1 {
                if let Some(alpha) = fwd.alpha {
                    alpha_sum += tape.value(alpha)[0];
                    positives += 1;
                }
            }
        }
        let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
        report.slices.push(AlphaSlice {
            behavior: *behavior,
            count: samples.len(),
            positives,
            mean_alpha: (positives > 0).then(|| alpha_sum / positives as f64),
            auc: auc(&scores, &labels).ok(),
            logloss: logloss(&scores, &labels).ok(),
        });
    }
    Ok(report)
}

/// A structural experiment arm.
#[derive(Debug, Clone, PartialEq)]
pub enum Arm {
    Full,
    NoQdie,
    NoTdie,
    NoCdie,
    SieNone,
    SieQdieOnly,
    SieTdieOnly,
    SieCdieOnly,
    GateMean,
    LieProbe(LieProbe),
    IfmConcat,
    IfmFixed(f64),
    ProxyWholeHistory,
    Lambda(f64),
}

impl Arm {
    pub fn parse(name: &str) -> Result<Arm, ReportError> {
        let arm = match name {
            "full" => Arm::Full,
            "no-qdie" => Arm::NoQdie,
            "no-tdie" => Arm::NoTdie,
            "no-cdie" => Arm::NoCdie,
            "sie-none" => Arm::SieNone,
            "sie-qdie-only" => Arm::SieQdieOnly,
            "sie-tdie-only" => Arm::SieTdieOnly,
            "sie-cdie-only" => Arm::SieCdieOnly,
            "gate-mean" => Arm::GateMean,
            "lie-probe-short-interest" => Arm::LieProbe(LieProbe::ShortInterest),
            "lie-probe-query" => Arm::LieProbe(LieProbe::Query),
            "lie-probe-target" => Arm::LieProbe(LieProbe::Target),
            "lie-probe-mean" => Arm::LieProbe(LieProbe::Mean),
            "ifm-concat" => Arm::IfmConcat,
            "proxy-whole-history" => Arm::ProxyWholeHistory,
            other => {
                if let Some(value) = other.strip_prefix("ifm-fixed-") {
                    Arm::IfmFixed(
                        value
                            .parse()
                            .map_err(|_| ReportError::UnknownArm(other.to_string()))?,
                    )
                } else if let Some(value) = other.strip_prefix("lambda-") {
                    Arm::Lambda(
                        value
                            .parse()
                            .map_err(|_| ReportError::UnknownArm(other.to_string()))?,
                    )
                } else {
                    return Err(ReportError::UnknownArm(other.to_string()));
                }
            }
        };
        Ok(arm)
    }

    pub fn name(&self) -> String {
        match self {
            Arm::Full => "full".into(),
            Arm::NoQdie => "no-qdie".into(),
            Arm::NoTdie => "no-tdie".into(),
            Arm::NoCdie => "no-cdie".into(),
            Arm::SieNone => "sie-none".into(),
            Arm::SieQdieOnly => "sie-qdie-only".into(),
            Arm::SieTdieOnly => "sie-tdie-only".into(),
            Arm::SieCdieOnly => "sie-cdie-only".into(),
            Arm::GateMean => "gate-mean".into(),
            Arm::LieProbe(LieProbe::ShortInterest) => "lie-probe-short-interest".into(),
            Arm::LieProbe(LieProbe::Query) => "lie-probe-query".into(),
            Arm::LieProbe(LieProbe::Target) => "lie-probe-target".into(),
            Arm::LieProbe(LieProbe::Mean) => "lie-probe-mean".into(),
            Arm::IfmConcat => "ifm-concat".into(),
            Arm::IfmFixed(alpha) => format!("ifm-fixed-{alpha}"),
            Arm::ProxyWholeHistory => "proxy-whole-history".into(),
            Arm::Lambda(value) => format!("lambda-{value}"),
        }
    }

    /// The base config with this arm's switch applied.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Arm::Full => {}
            Arm::NoQdie => cfg.model.use_qdie = false,
            Arm::NoTdie => cfg.model.use_tdie = false,
            Arm::NoCdie => cfg.model.use_cdie = false,
            Arm::SieNone => {
                cfg.model.use_qdie = false;
                cfg.model.use_tdie = false;
                cfg.model.use_cdie = false;
            }
            Arm::SieQdieOnly => {
                cfg.model.use_tdie = false;
                cfg.model.use_cdie = false;
            }
            Arm::SieTdieOnly => {
                cfg.model.use_qdie = false;
                cfg.model.use_cdie = false;
            }
            Arm::SieCdieOnly => {
                cfg.model.use_qdie = false;
                cfg.model.use_tdie = false;
            }
            Arm::GateMean => cfg.model.gate = GateMode::Mean,
            Arm::LieProbe(probe) => cfg.model.lie_probe = *probe,
            Arm::IfmConcat => cfg.model.ifm = IfmMode::Concat,
            Arm::IfmFixed(alpha) => cfg.model.ifm = IfmMode::Fixed(*alpha),
            Arm::ProxyWholeHistory => cfg.proxy_mode = ProxyMode::WholeHistoryMean,
            Arm::Lambda(value) => cfg.lambda = *value,
        }
        cfg
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Test metrics of one arm across the repeat seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub auc_runs: Vec<f64>,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub logloss_mean: f64,
    pub logloss_std: f64,
    pub mrr_mean: f64,
    pub ndcg10_mean: f64,
    pub map_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub repeats: usize,
    pub rows: Vec<ArmResult>,
}

impl AblationTable {
    /// Aligned plain-text rendering, one row per arm.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<26} {:>16} {:>16} {:>8} {:>8} {:>8}\n",
            "arm", "auc", "logloss", "mrr", "ndcg@10", "map"
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<26} {:>7.4} ±{:>6.4} {:>7.4} ±{:>6.4} {:>8.4} {:>8.4} {:>8.4}\n",
                row.arm,
                row.auc_mean,
                row.auc_std,
                row.logloss_mean,
                row.logloss_std,
                row.mrr_mean,
                row.ndcg10_mean,
                row.map_mean,
            ));
        }
        out
    }
}

/// Everything an experiment needs: prepared splits plus the vocabulary
/// geometry for building models.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub train: Vec<RankingSample>,
    pub valid: Vec<RankingSample>,
    pub test: Vec<RankingSample>,
    pub vocab_sizes: VocabSizes,
}

/// Trains one configuration with one seed and returns test metrics
/// (auc, logloss, mrr, ndcg@10, map).
pub fn train_and_test(
    data: &DataBundle,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(f64, f64, f64, f64, f64), ReportError> {
    let mut cfg = cfg.clone();
    cfg.rng_seed = seed;
    let mut model = HifnModel::new(cfg.model.clone(), data.vocab_sizes, seed);
    train(&mut model, &data.train, &data.valid, &cfg)?;
    let scores = score_samples(&model, &data.test).map_err(TrainError::from)?;
    let labels: Vec<u8> = data.test.iter().map(|s| s.label).collect();
    let test_auc = auc(&scores, &labels)?;
    let test_logloss = logloss(&scores, &labels)?;
    let lists = lists_from_samples(&data.test, &scores);
    let ranking = ranking_report(&lists);
    Ok((
        test_auc,
        test_logloss,
        ranking.mrr,
        ranking.ndcg_at_10,
        ranking.map,
    ))
}

/// Trains every arm on identical data with identical seeds
/// (`base_seed + 1 ..= base_seed + repeats`) and tabulates the test metrics.
pub fn run_ablation(
    data: &DataBundle,
    base: &TrainConfig,
    arm_names: &[String],
    repeats: usize,
) -> Result<AblationTable, ReportError> {
    let arms: Vec<Arm> = arm_names
        .iter()
        .map(|n| Arm::parse(n))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for arm in &arms {
        let cfg = arm.apply(base);
        let mut aucs = Vec::new();
        let mut loglosses = Vec::new();
        let mut mrrs = Vec::new();
        let mut ndcgs = Vec::new();
        let mut maps = Vec::new();
        for r in 1..=repeats {
            let seed = base.rng_seed + r as u64;
            let (a, l, m, n, p) = train_and_test(data, &cfg, seed)?;
            aucs.push(a);
            loglosses.push(l);
            mrrs.push(m);
            ndcgs.push(n);
            maps.push(p);
        }
        let (auc_mean, auc_std) = mean_std(&aucs);
        let (logloss_mean, logloss_std) = mean_std(&loglosses);
        log::info!("arm {}: auc {auc_mean:.4} ± {auc_std:.4}", arm.name());
        rows.push(ArmResult {
            arm: arm.name(),
            auc_runs: aucs,
            auc_mean,
            auc_std,
            logloss_mean,
            logloss_std,
            mrr_mean: mean_std(&mrrs).0,
            ndcg10_mean: mean_std(&ndcgs).0,
            map_mean: mean_std(&maps).0,
        });
    }
    Ok(AblationTable { repeats, rows })
}
