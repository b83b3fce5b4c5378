//! Batch construction, the joint objective, Adam, and the training loop.
//!
//! The batch gradient is accumulated sample by sample: each sample gets its
//! own tape, backward is seeded with `1/N`, and contributions sum in a shared
//! [`GradStore`]. That makes gradient accumulation over sub-batches exactly
//! equal to one full-batch pass, keeps memory flat, and keeps the whole loop
//! deterministic under a fixed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{derive_seed, RankingSample};
use crate::disentangle::{
    contrastive_loss, freeze_proxies, long_proxy_on_tape, short_proxy_from_mean, FrozenProxies,
    ProxyConfig, ProxyMode,
};
use crate::metrics::{auc, logloss, MetricError};
use crate::model::{HifnModel, ModelConfig, ModelError};
use crate::tape::{KernelError, Tape, Var};
use crate::tensor::{GradStore, Params};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}; first non-finite tensor: {tensor}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        tensor: String,
    },
    #[error("empty training set")]
    EmptyDataset,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the contrastive objective; 0 disables disentanglement.
    pub lambda: f64,
    /// Session length driving the long-proxy updates (and the data pipeline's
    /// short window).
    pub ts: usize,
    pub beta: f64,
    /// Long-window cap used by the data pipeline; recorded here so a config
    /// file describes the full experiment geometry.
    pub l_max: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    pub proxy_mode: ProxyMode,
    /// Early stopping: epochs without validation-AUC improvement.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            batch_size: 512,
            learning_rate: 0.001,
            lambda: 0.1,
            ts: 10,
            beta: 0.55,
            l_max: 50,
            epochs: 5,
            rng_seed: 7,
            proxy_mode: ProxyMode::Updating,
            patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.lambda < 0.0 {
            return Err(format!("lambda must be ≥ 0, got {}", self.lambda));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(format!("beta must be in (0, 1], got {}", self.beta));
        }
        if self.ts == 0 {
            return Err("ts must be ≥ 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be ≥ 1".into());
        }
        Ok(())
    }

    pub fn proxy_config(&self) -> ProxyConfig {
        ProxyConfig {
            ts: self.ts,
            beta: self.beta,
            mode: self.proxy_mode,
        }
    }
}

/// `softplus(z) − y·z`: the negative log-likelihood of label `y` under
/// `sigmoid(z)`, computed from the logit so perfect predictions cannot
/// produce `log 0`.
pub fn bce_from_logit(tape: &mut Tape, logit: Var, label: f64) -> Result<Var, KernelError> {
    let sp = tape.softplus_op(logit)?;
    if label == 0.0 {
        Ok(sp)
    } else {
        let yz = tape.scale(logit, label);
        tape.sub(sp, yz)
    }
}

/// Mean binary cross-entropy of a batch of logits.
pub fn ctr_loss(tape: &mut Tape, logits: &[Var], labels: &[f64]) -> Result<Var, KernelError> {
    debug_assert_eq!(logits.len(), labels.len());
    let mut acc: Option<Var> = None;
    for (&logit, &label) in logits.iter().zip(labels) {
        let term = bce_from_logit(tape, logit, label)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
    }
    Ok(tape.scale(acc.expect("non-empty batch"), 1.0 / logits.len() as f64))
}

/// `ctr + λ · contrastive`.
pub fn joint_loss(tape: &mut Tape, ctr: Var, contrastive: Var, lambda: f64) -> Var {
    let weighted = tape.scale(contrastive, lambda);
    tape.add(ctr, weighted).expect("scalar shapes")
}

/// Loss graph of one sample on its own tape.
pub struct SampleLoss {
    pub loss: Var,
    pub ctr: Var,
    pub contrastive: Option<Var>,
    pub y_hat: f64,
}

/// Builds forward + losses for one sample. The contrastive part is skipped
/// (counted by the caller) when the proxies are unavailable. Passing a
/// pre-captured `frozen` keeps the detached constants fixed across calls;
/// `None` captures them from the current parameter values.
pub fn sample_loss(
    tape: &mut Tape,
    model: &HifnModel,
    sample: &RankingSample,
    proxy_cfg: &ProxyConfig,
    lambda: f64,
    frozen: Option<&FrozenProxies>,
) -> Result<SampleLoss, ModelError> {
    let fwd = model.forward(tape, sample)?;
    let ctr = bce_from_logit(tape, fwd.logit, sample.label as f64)?;
    let mut contrastive = None;
    if lambda > 0.0 {
        let fresh;
        let frozen = match frozen {
            Some(given) => given,
            None => {
                fresh = freeze_proxies(model, sample, proxy_cfg);
                &fresh
            }
        };
        let p_long = long_proxy_on_tape(tape, model, &frozen.long_state, proxy_cfg.beta)?;
        if let (Some(mean), Some(p_long)) = (&frozen.short_mean, p_long) {
            let p_short = short_proxy_from_mean(tape, model, mean)?;
            contrastive = Some(contrastive_loss(
                tape, fwd.u_long, fwd.u_short, p_long, p_short,
            )?);
        }
    }
    let loss = match contrastive {
        Some(con) => {
            let weighted = tape.scale(con, lambda);
            tape.add(ctr, weighted)?
        }
        None => ctr,
    };
    Ok(SampleLoss {
        loss,
        ctr,
        contrastive,
        y_hat: tape.value(fwd.y_hat)[0],
    })
}

#[derive(Debug, Clone, Default)]
pub struct BatchStats {
    pub mean_loss: f64,
    /// CTR component of the mean loss (the joint loss minus λ·contrastive).
    pub mean_ctr: f64,
    pub skipped_contrastive: usize,
}

/// Accumulates the mean-loss gradient of `samples` into `store`.
/// `weight_denominator` is the N of the mean (callers accumulating a large
/// batch in slices pass the full batch size).
pub fn accumulate_batch(
    model: &HifnModel,
    samples: &[&RankingSample],
    cfg: &TrainConfig,
    weight_denominator: usize,
    store: &mut GradStore,
) -> Result<BatchStats, TrainError> {
    let proxy_cfg = cfg.proxy_config();
    let weight = 1.0 / weight_denominator as f64;
    let mut stats = BatchStats::default();
    for sample in samples {
        let mut tape = Tape::new(&model.params);
        let parts = sample_loss(&mut tape, model, sample, &proxy_cfg, cfg.lambda, None)?;
        if parts.contrastive.is_none() && cfg.lambda > 0.0 {
            stats.skipped_contrastive += 1;
        }
        let value = tape.value(parts.loss)[0];
        if !value.is_finite() {
            return Err(TrainError::NonFinite {
                epoch: 0,
                batch: 0,
                tensor: tape
                    .first_non_finite()
                    .unwrap_or_else(|| "loss".to_string()),
            });
        }
        stats.mean_loss += weight * value;
        stats.mean_ctr += weight * tape.value(parts.ctr)[0];
        tape.backward(parts.loss, weight, store)?;
    }
    Ok(stats)
}

/// Adam with the conventional constants (β₁ 0.9, β₂ 0.999, ε 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &Params, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
        }
    }

    /// One update from the gradients stored on the tensors.
    pub fn step(&mut self, params: &mut Params) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for index in 0..params.len() {
            let id = crate::tensor::ParamId(index);
            let Some(grad) = params.get(id).grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let (m, v) = (&mut self.m[index], &mut self.v[index]);
            let data = params.get_mut(id).data_mut();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// One line of the per-epoch metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// CTR part of the train loss, before the λ-weighted contrastive term.
    pub train_ctr: f64,
    pub valid_auc: f64,
    pub valid_logloss: f64,
    pub skipped_contrastive_count: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_valid_auc: f64,
}

/// Scores samples with frozen parameters.
pub fn score_samples(model: &HifnModel, samples: &[RankingSample]) -> Result<Vec<f64>, ModelError> {
    samples
        .iter()
        .map(|sample| {
            let mut tape = Tape::new(&model.params);
            let fwd = model.forward(&mut tape, sample)?;
            Ok(tape.value(fwd.y_hat)[0])
        })
        .collect()
}

/// Full training loop: shuffled mini-batches, Adam, per-epoch validation,
/// best-checkpoint retention (in memory) and early stopping. The model is
/// left holding the best-validation parameters.
pub fn train(
    model: &mut HifnModel,
    train_data: &[RankingSample],
    valid_data: &[RankingSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if train_data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let mut store = GradStore::new(&model.params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, 0x5u64));
    let mut metrics = Vec::new();
    let mut best: Option<(usize, f64, Params)> = None;
    let mut since_improvement = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle_rng.gen_range(0..=i));
        }
        let mut epoch_loss = 0.0;
        let mut epoch_ctr = 0.0;
        let mut skipped = 0usize;
        let mut batches = 0usize;
        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&RankingSample> = chunk.iter().map(|&i| &train_data[i]).collect();
            store.reset();
            let stats = accumulate_batch(model, &samples, cfg, samples.len(), &mut store)
                .map_err(|e| match e {
                    TrainError::NonFinite { tensor, .. } => TrainError::NonFinite {
                        epoch,
                        batch: batch_index,
                        tensor,
                    },
                    other => other,
                })?;
            model.params.set_grads_from(&store);
            adam.step(&mut model.params);
            epoch_loss += stats.mean_loss;
            epoch_ctr += stats.mean_ctr;
            skipped += stats.skipped_contrastive;
            batches += 1;
        }
        let train_loss = epoch_loss / batches as f64;
        let train_ctr = epoch_ctr / batches as f64;

        let scores = score_samples(model, valid_data)?;
        let labels: Vec<u8> = valid_data.iter().map(|s| s.label).collect();
        let valid_auc = auc(&scores, &labels)?;
        let valid_logloss = logloss(&scores, &labels)?;
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            train_ctr,
            valid_auc,
            valid_logloss,
            skipped_contrastive_count: skipped,
        });
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.5} valid_auc {valid_auc:.4} \
             valid_logloss {valid_logloss:.5} skipped_contrastive {skipped}"
        );

        let improved = best.as_ref().map_or(true, |(_, auc, _)| valid_auc > *auc);
        if improved {
            best = Some((epoch, valid_auc, model.params.clone()));
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement > cfg.patience {
                break;
            }
        }
    }
    let (best_epoch, best_valid_auc, best_params) = best.expect("at least one epoch ran");
    model.params = best_params;
    Ok(TrainOutcome {
        metrics,
        best_epoch,
        best_valid_auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VocabSizes;
    use crate::tape::sigmoid;

    fn logit_of(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn ctr_loss_at_half_probability_is_ln2() {
        let params = Params::new();
        let mut tape = Tape::new(&params);
        let logits: Vec<Var> = (0..4).map(|_| tape.constant_scalar(0.0)).collect();
        let loss = ctr_loss(&mut tape, &logits, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((tape.value(loss)[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn ctr_loss_vanishes_for_perfect_predictions() {
        let params = Params::new();
        let mut tape = Tape::new(&params);
        let hot = tape.constant_scalar(40.0);
        let cold = tape.constant_scalar(-40.0);
        let loss = ctr_loss(&mut tape, &[hot, cold], &[1.0, 0.0]).unwrap();
        assert!(tape.value(loss)[0] < 1e-12);
    }

    #[test]
    fn ctr_loss_hand_batch() {
        let params = Params::new();
        let mut tape = Tape::new(&params);
        let a = tape.constant_scalar(logit_of(0.9));
        let b = tape.constant_scalar(logit_of(0.1));
        let loss = ctr_loss(&mut tape, &[a, b], &[1.0, 0.0]).unwrap();
        assert!((tape.value(loss)[0] - 0.10536051565782628).abs() < 1e-12);
        let _ = sigmoid(0.0);
    }

    #[test]
    fn joint_loss_arithmetic_and_lambda_zero() {
        let params = Params::new();
        let mut tape = Tape::new(&params);
        let ctr = tape.constant_scalar(0.7);
        let con = tape.constant_scalar(2.0);
        let joint = joint_loss(&mut tape, ctr, con, 0.1);
        assert!((tape.value(joint)[0] - 0.9).abs() < 1e-15);
        let disabled = joint_loss(&mut tape, ctr, con, 0.0);
        assert_eq!(tape.value(disabled)[0], 0.7);
    }

    #[test]
    fn joint_gradient_is_linear_combination() {
        use crate::tensor::Tensor;
        let mut params = Params::new();
        let id = params.register("w", Tensor::new(vec![3], vec![0.4, -0.2, 0.9]).unwrap());
        let mut tape = Tape::new(&params);
        let w = tape.watch(id);
        let ctr = tape.dot(w, w).unwrap();
        let s = tape.sum(w);
        let con = tape.softplus_op(s).unwrap();
        let joint = joint_loss(&mut tape, ctr, con, 0.1);

        let mut g_ctr = GradStore::new(&params);
        tape.backward(ctr, 1.0, &mut g_ctr).unwrap();
        let mut g_con = GradStore::new(&params);
        tape.backward(con, 1.0, &mut g_con).unwrap();
        let mut g_joint = GradStore::new(&params);
        tape.backward(joint, 1.0, &mut g_joint).unwrap();
        for i in 0..3 {
            let expected = g_ctr.get(id)[i] + 0.1 * g_con.get(id)[i];
            assert!((g_joint.get(id)[i] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters_bit_identical() {
        use crate::tensor::Tensor;
        let mut params = Params::new();
        let id = params.register("w", Tensor::new(vec![2], vec![0.123, -4.56]).unwrap());
        let before = params.get(id).data().to_vec();
        params.get_mut(id).set_grad(vec![1.0, -2.0]);
        let mut adam = Adam::new(&params, 0.0);
        adam.step(&mut params);
        assert_eq!(params.get(id).data(), before.as_slice());
    }

    fn toy_model_and_data() -> (HifnModel, Vec<RankingSample>) {
        use crate::data::{ingest_log, prepare_leave_one_out, PrepareConfig, WindowSpec};
        use crate::synth::{generate, SynthConfig};
        use std::io::Cursor;
        let out = generate(&SynthConfig {
            n_users: 12,
            n_items: 60,
            n_categories: 4,
            events_per_user: (22, 30),
            rng_seed: 21,
            ..SynthConfig::default()
        })
        .unwrap();
        let log = ingest_log(Cursor::new(out.tsv.as_str()), 20).unwrap();
        let prepared = prepare_leave_one_out(
            &log,
            &PrepareConfig {
                window: WindowSpec { ts: 5, l_max: 15 },
                ..PrepareConfig::default()
            },
        )
        .unwrap();
        let model = HifnModel::new(ModelConfig::tiny(), VocabSizes::of(&log.vocab), 5);
        (model, prepared.train)
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            model: ModelConfig::tiny(),
            batch_size: 8,
            ts: 5,
            epochs: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batch_loss_invariant_under_sample_permutation() {
        let (model, data) = toy_model_and_data();
        let cfg = tiny_cfg();
        let batch: Vec<&RankingSample> = data.iter().rev().take(8).collect();
        let mut reversed = batch.clone();
        reversed.reverse();
        let mut store = GradStore::new(&model.params);
        let forward = accumulate_batch(&model, &batch, &cfg, 8, &mut store).unwrap();
        store.reset();
        let backward = accumulate_batch(&model, &reversed, &cfg, 8, &mut store).unwrap();
        assert!((forward.mean_loss - backward.mean_loss).abs() < 1e-12);
    }

    #[test]
    fn half_batch_accumulation_equals_full_batch() {
        let (model, data) = toy_model_and_data();
        let cfg = tiny_cfg();
        let batch: Vec<&RankingSample> = data.iter().rev().take(8).collect();
        let mut full = GradStore::new(&model.params);
        accumulate_batch(&model, &batch, &cfg, 8, &mut full).unwrap();
        let mut halves = GradStore::new(&model.params);
        accumulate_batch(&model, &batch[..4], &cfg, 8, &mut halves).unwrap();
        accumulate_batch(&model, &batch[4..], &cfg, 8, &mut halves).unwrap();
        for index in 0..model.params.len() {
            let id = crate::tensor::ParamId(index);
            for (a, b) in full.get(id).iter().zip(halves.get(id)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lambda_only_touches_contrastive_reachable_parameters() {
        let (model_a, data) = toy_model_and_data();
        let model_b = model_a.clone();
        let batch: Vec<&RankingSample> = data.iter().rev().take(8).collect();
        let step = |mut model: HifnModel, lambda: f64| -> HifnModel {
            let cfg = TrainConfig {
                lambda,
                ..tiny_cfg()
            };
            let mut store = GradStore::new(&model.params);
            accumulate_batch(&model, &batch, &cfg, 8, &mut store).unwrap();
            model.params.set_grads_from(&store);
            let mut adam = Adam::new(&model.params, 0.001);
            adam.step(&mut model.params);
            model
        };
        let with = step(model_a, 0.1);
        let without = step(model_b, 0.0);
        // prediction and fusion heads sit outside the contrastive graph
        for name in ["mlp.out.w", "mlp.0.w", "fusion.out.w", "embed.context"] {
            assert_eq!(
                with.params.by_name(name).unwrap().data(),
                without.params.by_name(name).unwrap().data(),
                "{name} must not feel lambda after one step"
            );
        }
        // the proxy tower exists only in the contrastive graph
        for name in ["proxy.out.w", "proj.proxy_short.w"] {
            assert_ne!(
                with.params.by_name(name).unwrap().data(),
                without.params.by_name(name).unwrap().data(),
                "{name} should be trained by the contrastive loss"
            );
        }
    }

    #[test]
    fn training_runs_and_improves_on_toy_data() {
        let (mut model, data) = toy_model_and_data();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 32,
            ..tiny_cfg()
        };
        let (train_part, valid_part) = data.split_at(data.len() * 3 / 4);
        let outcome = train(&mut model, train_part, valid_part, &cfg).unwrap();
        assert_eq!(outcome.metrics.len(), 3);
        assert!(
            outcome.metrics.last().unwrap().train_loss < outcome.metrics[0].train_loss,
            "{:?}",
            outcome.metrics
        );
    }

    #[test]
    fn same_seed_gives_identical_training_runs() {
        let (model, data) = toy_model_and_data();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..tiny_cfg()
        };
        let (train_part, valid_part) = data.split_at(data.len() * 3 / 4);
        let run = |mut model: HifnModel| {
            train(&mut model, train_part, valid_part, &cfg).unwrap();
            model
        };
        let a = run(model.clone());
        let b = run(model);
        for ((_, ta), (_, tb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(ta.data(), tb.data());
        }
    }
}
