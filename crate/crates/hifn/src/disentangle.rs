//! Interest disentanglement: long/short proxies and the contrastive loss.
//!
//! Proxies act as labels. The short proxy is the mean of the short window's
//! raw event embeddings (a constant — no gradient reaches the embeddings
//! through it) pushed through a trainable projection. The long proxy streams
//! over the user's visible history in windows of `ts` events: the first full
//! window initializes it, every further full window applies
//! `p ← (1−β)·p + β·net(h)` where `h` is the window's mean embedding. Older
//! stream states enter the loss as constants; the final window's network
//! application is rebuilt on the tape, which is where the proxy network gets
//! its gradient.
//!
//! Four pairwise terms tie extractor outputs to their own proxies:
//! `softplus(⟨a,q⟩ − ⟨a,p⟩)` for (a, p, q) in
//! (u_long, p_long, p_short), (p_long, u_long, u_short),
//! (u_short, p_short, p_long), (p_short, u_short, u_long).

use serde::{Deserialize, Serialize};

use crate::data::{BehaviorEvent, RankingSample};
use crate::model::{apply_ffn, HifnModel, ModelError, ShortWindow};
use crate::tape::{linear, Tape, UnaryKind, Var};

/// How the long proxy is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyMode {
    /// Session-windowed exponential updating.
    Updating,
    /// One network application on the whole visible history's mean
    /// (the "without updating" ablation arm).
    WholeHistoryMean,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProxyConfig {
    pub ts: usize,
    pub beta: f64,
    pub mode: ProxyMode,
}

/// Streamed long-proxy state. Before initialization the proxy takes part in
/// no loss.
#[derive(Debug, Clone)]
pub struct ProxyState {
    pub p_long: Vec<f64>,
    pub sessions_consumed: usize,
    pub initialized: bool,
    /// State before the most recent update; `None` right after initialization.
    pub prev: Option<Vec<f64>>,
    /// Mean embedding of the most recent complete window.
    pub last_window_mean: Option<Vec<f64>>,
}

impl ProxyState {
    pub fn new(dim: usize) -> Self {
        ProxyState {
            p_long: vec![0.0; dim],
            sessions_consumed: 0,
            initialized: false,
            prev: None,
            last_window_mean: None,
        }
    }
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let dim = rows[0].len();
    let mut out = vec![0.0; dim];
    for row in rows {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= rows.len() as f64);
    out
}

/// One streaming update from a window of event embeddings. Windows shorter
/// than `ts` never update the state.
pub fn update_long_proxy<F>(
    state: &mut ProxyState,
    window: &[Vec<f64>],
    ts: usize,
    beta: f64,
    net: F,
) where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if window.len() != ts {
        return;
    }
    let h = mean_rows(window);
    let fresh = net(&h);
    if state.initialized {
        state.prev = Some(state.p_long.clone());
        state.p_long = state
            .p_long
            .iter()
            .zip(&fresh)
            .map(|(p, f)| (1.0 - beta) * p + beta * f)
            .collect();
    } else {
        state.prev = None;
        state.p_long = fresh;
        state.initialized = true;
    }
    state.last_window_mean = Some(h);
    state.sessions_consumed += 1;
}

impl HifnModel {
    /// Plain-value event embedding (table lookups, no tape).
    pub fn embed_event_values(&self, event: &BehaviorEvent) -> Vec<f64> {
        let d = self.config.dims.embed_dim;
        let mut out = Vec::with_capacity(3 * d);
        for (table, id) in [
            (self.ids.embed_item, event.item_id),
            (self.ids.embed_category, event.category_id),
            (self.ids.embed_behavior, event.behavior.id()),
        ] {
            let data = self.params.get(table).data();
            out.extend_from_slice(&data[id as usize * d..][..d]);
        }
        out
    }

    /// Plain-value run of an FFN registered on this model (ReLU hidden
    /// layers, linear final layer).
    pub fn ffn_values(&self, layers: &[crate::model::LinearIds], input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            let w = self.params.get(layer.w);
            let b = self.params.get(layer.b);
            let (rows, cols) = (w.shape()[0], w.shape()[1]);
            let mut y = vec![0.0; rows];
            for r in 0..rows {
                let mut acc = b.data()[r];
                for c in 0..cols {
                    acc += w.data()[r * cols + c] * x[c];
                }
                y[r] = if i + 1 < layers.len() {
                    acc.max(0.0)
                } else {
                    acc
                };
            }
            x = y;
        }
        x
    }
}

/// Streams the long proxy over a sample's visible history (long then short
/// window, chronological) with the model's current parameter values.
pub fn proxy_state_for_sample(
    model: &HifnModel,
    sample: &RankingSample,
    cfg: &ProxyConfig,
) -> ProxyState {
    let mut state = ProxyState::new(model.config.dims.hidden_dim);
    let events: Vec<&BehaviorEvent> = sample.long_seq.iter().chain(&sample.short_seq).collect();
    let net = |h: &[f64]| model.ffn_values(&model.ids.proxy, h);
    match cfg.mode {
        ProxyMode::Updating => {
            for window in events.chunks(cfg.ts) {
                let embeds: Vec<Vec<f64>> =
                    window.iter().map(|e| model.embed_event_values(e)).collect();
                update_long_proxy(&mut state, &embeds, cfg.ts, cfg.beta, net);
            }
        }
        ProxyMode::WholeHistoryMean => {
            if events.len() >= cfg.ts {
                let embeds: Vec<Vec<f64>> =
                    events.iter().map(|e| model.embed_event_values(e)).collect();
                let h = mean_rows(&embeds);
                state.p_long = net(&h);
                state.prev = None;
                state.last_window_mean = Some(h);
                state.initialized = true;
                state.sessions_consumed = 1;
            }
        }
    }
    state
}

/// Rebuilds the final proxy-network application on the tape so its parameters
/// receive gradients; the older stream state enters as a constant. Returns
/// `None` when the proxy is uninitialized.
pub fn long_proxy_on_tape(
    tape: &mut Tape,
    model: &HifnModel,
    state: &ProxyState,
    beta: f64,
) -> Result<Option<Var>, ModelError> {
    if !state.initialized {
        return Ok(None);
    }
    let h = tape.constant_vec(state.last_window_mean.clone().expect("initialized state"));
    let fresh = apply_ffn(tape, &model.ids.proxy, h)?;
    Ok(Some(match &state.prev {
        None => fresh,
        Some(prev) => {
            let carried = tape.constant_vec(prev.iter().map(|p| (1.0 - beta) * p).collect());
            let scaled = tape.scale(fresh, beta);
            tape.add(carried, scaled)?
        }
    }))
}

/// Mean of the unmasked raw event embeddings, as plain values. `None` for an
/// empty window: the sample carries no contrastive loss.
pub fn short_proxy_mean(model: &HifnModel, window: &ShortWindow) -> Option<Vec<f64>> {
    let events: Vec<&BehaviorEvent> = window
        .events
        .iter()
        .zip(&window.mask)
        .filter(|(_, &m)| m)
        .map(|(e, _)| e)
        .collect();
    if events.is_empty() {
        return None;
    }
    let embeds: Vec<Vec<f64>> = events.iter().map(|e| model.embed_event_values(e)).collect();
    Some(mean_rows(&embeds))
}

/// The (detached) embedding mean through the trainable projection.
pub fn short_proxy_from_mean(
    tape: &mut Tape,
    model: &HifnModel,
    mean: &[f64],
) -> Result<Var, ModelError> {
    let mean = tape.constant_vec(mean.to_vec());
    let w = tape.watch(model.ids.proj_proxy_short.w);
    let b = tape.watch(model.ids.proj_proxy_short.b);
    Ok(linear(tape, w, mean, b)?)
}

/// Mean of the unmasked raw event embeddings (detached) through the trainable
/// projection. `None` for an empty window: the sample carries no contrastive
/// loss.
pub fn short_proxy_on_tape(
    tape: &mut Tape,
    model: &HifnModel,
    window: &ShortWindow,
) -> Result<Option<Var>, ModelError> {
    match short_proxy_mean(model, window) {
        Some(mean) => Ok(Some(short_proxy_from_mean(tape, model, &mean)?)),
        None => Ok(None),
    }
}

/// Everything the contrastive loss treats as a constant, captured at one
/// parameter state. Reusing a frozen capture across loss evaluations keeps
/// the loss a fixed function of the parameters, which is what makes the
/// finite-difference check of the full objective well-posed.
#[derive(Debug, Clone)]
pub struct FrozenProxies {
    pub short_mean: Option<Vec<f64>>,
    pub long_state: ProxyState,
}

pub fn freeze_proxies(
    model: &HifnModel,
    sample: &RankingSample,
    cfg: &ProxyConfig,
) -> FrozenProxies {
    FrozenProxies {
        short_mean: short_proxy_mean(model, &ShortWindow::from_events(&sample.short_seq)),
        long_state: proxy_state_for_sample(model, sample, cfg),
    }
}

/// `softplus(⟨a,q⟩ − ⟨a,p⟩)`: small when `a` is closer to `p` than to `q`.
pub fn bpr_term(tape: &mut Tape, a: Var, p: Var, q: Var) -> Result<Var, ModelError> {
    let aq = tape.dot(a, q)?;
    let ap = tape.dot(a, p)?;
    let gap = tape.sub(aq, ap)?;
    Ok(tape.unary(UnaryKind::Softplus, gap)?)
}

/// The four-term contrastive total.
pub fn contrastive_loss(
    tape: &mut Tape,
    u_long: Var,
    u_short: Var,
    p_long: Var,
    p_short: Var,
) -> Result<Var, ModelError> {
    let t1 = bpr_term(tape, u_long, p_long, p_short)?;
    let t2 = bpr_term(tape, p_long, u_long, u_short)?;
    let t3 = bpr_term(tape, u_short, p_short, p_long)?;
    let t4 = bpr_term(tape, p_short, u_short, u_long)?;
    let s1 = tape.add(t1, t2)?;
    let s2 = tape.add(t3, t4)?;
    Ok(tape.add(s1, s2)?)
}
