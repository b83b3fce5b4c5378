//! The HIFN forward network.
//!
//! Per sample: embed the behavior windows, run a GRU over the short window,
//! pool it three ways (query-dependent, target-dependent, causal-dependent
//! attention), fuse those with a learned gate into the short-term interest,
//! attend over the long window with the short-term interest as probe for the
//! long-term interest, adaptively fuse both horizons, and score the target
//! through a ReLU MLP. Every intermediate is exposed in an [`InterestBundle`]
//! for analysis.
//!
//! Structural ablation switches (dropping an encoder, mean gate, alternative
//! long-term probes, concat or fixed-weight fusion) live in [`ModelConfig`] so
//! that every experiment arm is a configuration, not a fork of the code.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{extract_causal_subsequences, BehaviorEvent, RankingSample, Vocabulary};
use crate::gru::{gru_step, GruParams};
use crate::tape::{linear, matvec, vecmat, KernelError, Tape, Var};
use crate::tensor::{ParamId, Params, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("id {id} not covered by the {table} embedding table")]
    Vocabulary { table: &'static str, id: u32 },
    #[error("sample has an empty query")]
    EmptyQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    Learned,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LieProbe {
    ShortInterest,
    Query,
    Target,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IfmMode {
    Adaptive,
    Concat,
    Fixed(f64),
}

/// Where the causal encoder's sub-sequences come from: the short window
/// itself, or the full visible history (long ++ short).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdieSource {
    ShortWindow,
    FullHistory,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelDims {
    /// Embedding size of each id field (item, category, behavior, token,
    /// context, user).
    pub embed_dim: usize,
    /// GRU state and interest-vector size; also the attention probe size.
    pub hidden_dim: usize,
    /// Width of the attention scoring space.
    pub attn_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            embed_dim: 16,
            hidden_dim: 16,
            attn_dim: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: ModelDims,
    pub use_qdie: bool,
    pub use_tdie: bool,
    pub use_cdie: bool,
    pub gate: GateMode,
    pub lie_probe: LieProbe,
    pub ifm: IfmMode,
    pub cdie_source: CdieSource,
    /// Hidden widths; the final layer of each head is implied (1 for scoring
    /// heads, 3 for the gate, hidden_dim for the proxy network).
    pub cdie_widths: Vec<usize>,
    pub gate_widths: Vec<usize>,
    pub fusion_widths: Vec<usize>,
    pub predict_widths: Vec<usize>,
    pub proxy_widths: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dims: ModelDims::default(),
            use_qdie: true,
            use_tdie: true,
            use_cdie: true,
            gate: GateMode::Learned,
            lie_probe: LieProbe::ShortInterest,
            ifm: IfmMode::Adaptive,
            cdie_source: CdieSource::ShortWindow,
            cdie_widths: vec![128, 64, 32],
            gate_widths: vec![128, 64, 32],
            fusion_widths: vec![64, 32],
            predict_widths: vec![64, 32],
            proxy_widths: vec![128, 64, 32],
        }
    }
}

impl ModelConfig {
    /// Shrunken dimensions for gradient checking and quick tests.
    pub fn tiny() -> Self {
        ModelConfig {
            dims: ModelDims {
                embed_dim: 4,
                hidden_dim: 4,
                attn_dim: 4,
            },
            cdie_widths: vec![8],
            gate_widths: vec![8],
            fusion_widths: vec![8],
            predict_widths: vec![8],
            proxy_widths: vec![8],
            ..ModelConfig::default()
        }
    }

    pub fn event_dim(&self) -> usize {
        3 * self.dims.embed_dim
    }

    pub fn target_dim(&self) -> usize {
        2 * self.dims.embed_dim
    }
}

/// Embedding-table row counts (entities + the padding row).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VocabSizes {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub query_tokens: usize,
    pub contexts: usize,
}

impl VocabSizes {
    pub fn of(vocab: &Vocabulary) -> Self {
        VocabSizes {
            users: vocab.n_users(),
            items: vocab.n_items(),
            categories: vocab.n_categories(),
            query_tokens: vocab.n_query_tokens(),
            contexts: vocab.n_contexts(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnIds {
    /// Order-3 tensor `[hidden, attn, hidden]`; contracts with the probe over
    /// its last index.
    pub wf: ParamId,
    pub bf: ParamId,
    pub wh: ParamId,
}

#[derive(Debug, Clone)]
pub struct ModelIds {
    pub embed_item: ParamId,
    pub embed_category: ParamId,
    pub embed_behavior: ParamId,
    pub embed_token: ParamId,
    pub embed_context: ParamId,
    pub embed_user: ParamId,
    pub no_history_event: ParamId,
    pub u_long_default: ParamId,
    pub gru_short: GruParams,
    pub gru_long: GruParams,
    pub attn_qdie: AttnIds,
    pub attn_tdie: AttnIds,
    pub attn_lie: AttnIds,
    pub proj_query: LinearIds,
    pub proj_target: LinearIds,
    pub proj_lie_key: LinearIds,
    pub proj_lie_probe_query: LinearIds,
    pub proj_lie_probe_target: LinearIds,
    pub proj_proxy_short: LinearIds,
    pub cdie: Vec<LinearIds>,
    pub gate: Vec<LinearIds>,
    pub fusion: Vec<LinearIds>,
    pub predict: Vec<LinearIds>,
    pub proxy: Vec<LinearIds>,
}

fn register_embedding<R: rand::Rng>(
    params: &mut Params,
    name: &str,
    rows: usize,
    dim: usize,
    rng: &mut R,
) -> ParamId {
    let bound = 1.0 / (dim as f64).sqrt();
    let mut tensor = Tensor::uniform(vec![rows, dim], bound, rng);
    // Row 0 is the padding sentinel: zero and (because it is never gathered)
    // permanently frozen.
    tensor.data_mut()[..dim].iter_mut().for_each(|v| *v = 0.0);
    params.register(name, tensor)
}

fn register_linear<R: rand::Rng>(
    params: &mut Params,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
    rng: &mut R,
) -> LinearIds {
    let bound = 1.0 / (in_dim as f64).sqrt();
    LinearIds {
        w: params.register(
            &format!("{prefix}.w"),
            Tensor::uniform(vec![out_dim, in_dim], bound, rng),
        ),
        b: params.register(&format!("{prefix}.b"), Tensor::zeros(vec![out_dim])),
    }
}

fn register_ffn<R: rand::Rng>(
    params: &mut Params,
    prefix: &str,
    in_dim: usize,
    hidden: &[usize],
    out_dim: usize,
    rng: &mut R,
) -> Vec<LinearIds> {
    let mut layers = Vec::new();
    let mut dim = in_dim;
    for (i, &width) in hidden.iter().enumerate() {
        layers.push(register_linear(
            params,
            &format!("{prefix}.{i}"),
            dim,
            width,
            rng,
        ));
        dim = width;
    }
    layers.push(register_linear(
        params,
        &format!("{prefix}.out"),
        dim,
        out_dim,
        rng,
    ));
    layers
}

fn register_attention<R: rand::Rng>(
    params: &mut Params,
    prefix: &str,
    hidden: usize,
    attn: usize,
    rng: &mut R,
) -> AttnIds {
    AttnIds {
        wf: params.register(
            &format!("{prefix}.wf"),
            Tensor::uniform(
                vec![hidden, attn, hidden],
                1.0 / (hidden as f64).sqrt(),
                rng,
            ),
        ),
        bf: params.register(&format!("{prefix}.bf"), Tensor::zeros(vec![hidden, attn])),
        wh: params.register(
            &format!("{prefix}.wh"),
            Tensor::uniform(vec![attn], 1.0 / (attn as f64).sqrt(), rng),
        ),
    }
}

/// The model: configuration, named parameters, and resolved handles.
#[derive(Debug, Clone)]
pub struct HifnModel {
    pub config: ModelConfig,
    pub vocab_sizes: VocabSizes,
    pub params: Params,
    pub ids: ModelIds,
}

impl HifnModel {
    pub fn new(config: ModelConfig, vocab_sizes: VocabSizes, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let d = config.dims.embed_dim;
        let h = config.dims.hidden_dim;
        let a = config.dims.attn_dim;
        let event_dim = config.event_dim();
        let target_dim = config.target_dim();
        let rng = &mut rng;

        let ids = ModelIds {
            embed_item: register_embedding(
                &mut params,
                "embed.item",
                vocab_sizes.items + 1,
                d,
                rng,
            ),
            embed_category: register_embedding(
                &mut params,
                "embed.category",
                vocab_sizes.categories + 1,
                d,
                rng,
            ),
            embed_behavior: register_embedding(&mut params, "embed.behavior", 4, d, rng),
            embed_token: register_embedding(
                &mut params,
                "embed.token",
                vocab_sizes.query_tokens + 1,
                d,
                rng,
            ),
            embed_context: register_embedding(
                &mut params,
                "embed.context",
                vocab_sizes.contexts + 1,
                d,
                rng,
            ),
            embed_user: register_embedding(
                &mut params,
                "embed.user",
                vocab_sizes.users + 1,
                d,
                rng,
            ),
            no_history_event: params.register(
                "no_history_event",
                Tensor::uniform(vec![event_dim], 1.0 / (event_dim as f64).sqrt(), rng),
            ),
            u_long_default: params.register(
                "u_long_default",
                Tensor::uniform(vec![h], 1.0 / (h as f64).sqrt(), rng),
            ),
            gru_short: GruParams::register(&mut params, "gru.short", event_dim, h, rng),
            gru_long: GruParams::register(&mut params, "gru.long", event_dim, h, rng),
            attn_qdie: register_attention(&mut params, "attn.qdie", h, a, rng),
            attn_tdie: register_attention(&mut params, "attn.tdie", h, a, rng),
            attn_lie: register_attention(&mut params, "attn.lie", h, a, rng),
            proj_query: register_linear(&mut params, "proj.query", d, h, rng),
            proj_target: register_linear(&mut params, "proj.target", target_dim, h, rng),
            proj_lie_key: register_linear(&mut params, "proj.lie_key", event_dim, h, rng),
            proj_lie_probe_query: register_linear(&mut params, "proj.lie_probe_query", d, h, rng),
            proj_lie_probe_target: register_linear(
                &mut params,
                "proj.lie_probe_target",
                target_dim,
                h,
                rng,
            ),
            proj_proxy_short: register_linear(&mut params, "proj.proxy_short", event_dim, h, rng),
            cdie: register_ffn(
                &mut params,
                "cdie",
                4 * event_dim,
                &config.cdie_widths,
                1,
                rng,
            ),
            gate: register_ffn(&mut params, "gate", 3 * h, &config.gate_widths, 3, rng),
            fusion: register_ffn(
                &mut params,
                "fusion",
                target_dim + d + 3 * h,
                &config.fusion_widths,
                1,
                rng,
            ),
            predict: register_ffn(
                &mut params,
                "mlp",
                match config.ifm {
                    IfmMode::Concat => 2 * h,
                    _ => h,
                } + target_dim
                    + 2 * d,
                &config.predict_widths,
                1,
                rng,
            ),
            proxy: register_ffn(
                &mut params,
                "proxy",
                event_dim,
                &config.proxy_widths,
                h,
                rng,
            ),
        };
        HifnModel {
            config,
            vocab_sizes,
            params,
            ids,
        }
    }

    fn gather(
        &self,
        tape: &mut Tape,
        table: ParamId,
        table_name: &'static str,
        id: u32,
    ) -> Result<Var, ModelError> {
        if id == 0 {
            let d = self.params.get(table).shape()[1];
            return Ok(tape.constant(vec![d], vec![0.0; d])?);
        }
        tape.gather_row(table, id as usize)
            .map_err(|_| ModelError::Vocabulary {
                table: table_name,
                id,
            })
    }

    /// Concatenated item, category and behavior-type embeddings. Padding ids
    /// contribute frozen zero rows.
    pub fn embed_event(&self, tape: &mut Tape, event: &BehaviorEvent) -> Result<Var, ModelError> {
        let item = self.gather(tape, self.ids.embed_item, "item", event.item_id)?;
        let category = self.gather(tape, self.ids.embed_category, "category", event.category_id)?;
        let behavior = self.gather(
            tape,
            self.ids.embed_behavior,
            "behavior",
            event.behavior.id(),
        )?;
        Ok(tape.concat(&[item, category, behavior]))
    }

    fn embed_target(&self, tape: &mut Tape, sample: &RankingSample) -> Result<Var, ModelError> {
        let item = self.gather(tape, self.ids.embed_item, "item", sample.target_item)?;
        let category = self.gather(
            tape,
            self.ids.embed_category,
            "category",
            sample.target_category,
        )?;
        Ok(tape.concat(&[item, category]))
    }

    fn embed_query(&self, tape: &mut Tape, sample: &RankingSample) -> Result<Var, ModelError> {
        if sample.query_tokens.is_empty() {
            return Err(ModelError::EmptyQuery);
        }
        let mut acc: Option<Var> = None;
        for &token in &sample.query_tokens {
            let e = self.gather(tape, self.ids.embed_token, "query_token", token)?;
            acc = Some(match acc {
                Some(prev) => tape.add(prev, e)?,
                None => e,
            });
        }
        Ok(tape.scale(acc.unwrap(), 1.0 / sample.query_tokens.len() as f64))
    }
}

/// Fixed-capacity short window with an explicit mask. The events at masked
/// positions are never read by the forward pass.
#[derive(Debug, Clone)]
pub struct ShortWindow {
    pub events: Vec<BehaviorEvent>,
    pub mask: Vec<bool>,
}

impl ShortWindow {
    pub fn from_events(events: &[BehaviorEvent]) -> Self {
        ShortWindow {
            events: events.to_vec(),
            mask: vec![true; events.len()],
        }
    }

    /// Pads with sentinel events (all ids 0) up to `capacity`.
    pub fn padded(events: &[BehaviorEvent], capacity: usize) -> Self {
        let mut window = Self::from_events(events);
        while window.events.len() < capacity {
            window.events.push(BehaviorEvent {
                user_id: 0,
                item_id: 0,
                category_id: 0,
                behavior: crate::data::BehaviorType::Click,
                timestamp: 0,
            });
            window.mask.push(false);
        }
        window
    }

    fn compact(&self) -> Vec<BehaviorEvent> {
        self.events
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(e, _)| *e)
            .collect()
    }
}

/// Tape handles of every intermediate of one forward pass.
pub struct ForwardVars {
    pub u_q: Option<Var>,
    pub u_t: Option<Var>,
    pub u_c: Option<Var>,
    /// Gate weights over (u_t, u_q, u_c); zero at dropped slots.
    pub gate_weights: Option<Var>,
    pub u_short: Var,
    pub u_long: Var,
    pub tau_long: Var,
    pub alpha: Option<Var>,
    pub fused: Var,
    pub logit: Var,
    pub y_hat: Var,
    /// GRU states of the unmasked short-window positions, oldest first.
    pub short_states: Vec<Var>,
    /// Causal position weights produced by the causal encoder.
    pub causal_weights: Vec<Var>,
    /// True when the short window was empty and the learned no-history
    /// pseudo-event stood in.
    pub used_no_history: bool,
}

/// Plain-value snapshot of the per-sample intermediates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterestBundle {
    pub u_q: Option<Vec<f64>>,
    pub u_t: Option<Vec<f64>>,
    pub u_c: Option<Vec<f64>>,
    /// (w_t, w_q, w_c); zeros at dropped slots.
    pub gate_weights: [f64; 3],
    pub u_short: Vec<f64>,
    pub u_long: Vec<f64>,
    pub tau_long: Vec<f64>,
    pub alpha_fuse: Option<f64>,
    pub y_hat: f64,
}

/// Scores every key as `(key · tanh(W_f · probe + b_f)) · W_h`, softmaxes the
/// unmasked scores and returns (weighted key sum, weights).
pub fn attention_pool(
    tape: &mut Tape,
    attn: &AttnIds,
    keys: &[Var],
    mask: Option<&[bool]>,
    probe: Var,
) -> Result<(Var, Var), KernelError> {
    let wf = tape.watch(attn.wf);
    let bf = tape.watch(attn.bf);
    let wh = tape.watch(attn.wh);
    let shape = tape.shape(wf).to_vec();
    let (h, a) = (shape[0], shape[1]);
    let flat = tape.reshape(wf, vec![h * a, h])?;
    let contracted = matvec(tape, flat, probe)?;
    let mat = tape.reshape(contracted, vec![h, a])?;
    let pre = tape.add(mat, bf)?;
    let scored_space = tape.tanh_op(pre)?;

    let mut scores = Vec::with_capacity(keys.len());
    for &key in keys {
        let proj = vecmat(tape, key, scored_space)?;
        scores.push(tape.dot(proj, wh)?);
    }
    let logits = tape.concat(&scores);
    let weights = tape.softmax(logits, mask)?;

    let stacked = tape.concat(keys);
    let key_matrix = tape.reshape(stacked, vec![keys.len(), h])?;
    let pooled = vecmat(tape, weights, key_matrix)?;
    Ok((pooled, weights))
}

/// ReLU MLP: hidden layers activated, final layer linear.
pub fn apply_ffn(tape: &mut Tape, layers: &[LinearIds], input: Var) -> Result<Var, KernelError> {
    let mut x = input;
    for (i, layer) in layers.iter().enumerate() {
        let w = tape.watch(layer.w);
        let b = tape.watch(layer.b);
        x = linear(tape, w, x, b)?;
        if i + 1 < layers.len() {
            x = tape.relu(x)?;
        }
    }
    Ok(x)
}

fn mean_of(tape: &mut Tape, vars: &[Var]) -> Result<Var, KernelError> {
    debug_assert!(!vars.is_empty());
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(tape.scale(acc, 1.0 / vars.len() as f64))
}

impl HifnModel {
    /// Runs the full forward pass for one sample.
    pub fn forward(
        &self,
        tape: &mut Tape,
        sample: &RankingSample,
    ) -> Result<ForwardVars, ModelError> {
        let window = ShortWindow::from_events(&sample.short_seq);
        self.forward_with_window(tape, sample, &window)
    }

    /// Forward pass with an explicit short window (used to verify that masked
    /// positions cannot influence any output).
    pub fn forward_with_window(
        &self,
        tape: &mut Tape,
        sample: &RankingSample,
        window: &ShortWindow,
    ) -> Result<ForwardVars, ModelError> {
        debug_assert!(
            std::ptr::eq(tape.params(), &self.params),
            "tape built over foreign parameters"
        );
        let h = self.config.dims.hidden_dim;

        // Short window: unmasked events only, oldest first. An empty window is
        // replaced by the learned no-history pseudo-event.
        let compact = window.compact();
        let used_no_history = compact.is_empty();
        let short_embeds: Vec<Var> = if used_no_history {
            vec![tape.watch(self.ids.no_history_event)]
        } else {
            compact
                .iter()
                .map(|e| self.embed_event(tape, e))
                .collect::<Result<_, _>>()?
        };

        // GRU encoding from a zero initial state.
        let mut state = tape.constant(vec![h], vec![0.0; h])?;
        let mut short_states = Vec::with_capacity(short_embeds.len());
        for &x in &short_embeds {
            state = gru_step(tape, &self.ids.gru_short, x, state)?;
            short_states.push(state);
        }

        let e_query = self.embed_query(tape, sample)?;
        let e_target = self.embed_target(tape, sample)?;
        let e_context = self.gather(tape, self.ids.embed_context, "context", sample.context_id)?;

        // Query-dependent interest.
        let u_q = if self.config.use_qdie {
            let w = tape.watch(self.ids.proj_query.w);
            let b = tape.watch(self.ids.proj_query.b);
            let probe = linear(tape, w, e_query, b)?;
            let (pooled, _) =
                attention_pool(tape, &self.ids.attn_qdie, &short_states, None, probe)?;
            Some(pooled)
        } else {
            None
        };

        // Target-dependent interest.
        let u_t = if self.config.use_tdie {
            let w = tape.watch(self.ids.proj_target.w);
            let b = tape.watch(self.ids.proj_target.b);
            let probe = linear(tape, w, e_target, b)?;
            let (pooled, _) =
                attention_pool(tape, &self.ids.attn_tdie, &short_states, None, probe)?;
            Some(pooled)
        } else {
            None
        };

        // Causal-dependent interest.
        let mut causal_weights = Vec::new();
        let u_c = if self.config.use_cdie {
            let (causal_events, offset): (Vec<BehaviorEvent>, usize) = match self.config.cdie_source
            {
                CdieSource::ShortWindow => (compact.clone(), 0),
                CdieSource::FullHistory => {
                    let mut all = sample.long_seq.clone();
                    let offset = all.len();
                    all.extend(compact.iter().copied());
                    (all, offset)
                }
            };
            let causal_embeds: Vec<Var> = causal_events
                .iter()
                .map(|e| self.embed_event(tape, e))
                .collect::<Result<_, _>>()?;
            let event_dim = self.config.event_dim();
            let n_positions = short_states.len();
            for i in 0..n_positions {
                if used_no_history {
                    // The pseudo-event has no category; all sub-sequences are empty.
                    let zeros = tape.constant(vec![4 * event_dim], vec![0.0; 4 * event_dim])?;
                    let score = apply_ffn(tape, &self.ids.cdie, zeros)?;
                    causal_weights.push(tape.sigmoid_op(score)?);
                    continue;
                }
                let subs = extract_causal_subsequences(&causal_events, offset + i);
                let mut pools = Vec::with_capacity(4);
                for positions in [
                    &subs.clicks_before,
                    &subs.purchases_before,
                    &subs.clicks_after,
                    &subs.purchases_after,
                ] {
                    pools.push(if positions.is_empty() {
                        tape.constant(vec![event_dim], vec![0.0; event_dim])?
                    } else {
                        let mut acc = causal_embeds[positions[0]];
                        for &p in &positions[1..] {
                            acc = tape.add(acc, causal_embeds[p])?;
                        }
                        acc
                    });
                }
                let concat = tape.concat(&pools);
                let score = apply_ffn(tape, &self.ids.cdie, concat)?;
                causal_weights.push(tape.sigmoid_op(score)?);
            }
            let alphas = tape.concat(&causal_weights);
            let stacked = tape.concat(&short_states);
            let key_matrix = tape.reshape(stacked, vec![short_states.len(), h])?;
            Some(vecmat(tape, alphas, key_matrix)?)
        } else {
            None
        };

        // Gate fusion of the active short-term encoders.
        let zero_h = tape.constant(vec![h], vec![0.0; h])?;
        let slots = [u_t, u_q, u_c];
        let active: Vec<bool> = slots.iter().map(Option::is_some).collect();
        let n_active = active.iter().filter(|&&a| a).count();
        let (u_short, gate_weights) = if n_active == 0 {
            // No encoders: plain mean pooling of the GRU states.
            (mean_of(tape, &short_states)?, None)
        } else {
            let inputs: Vec<Var> = slots.iter().map(|s| s.unwrap_or(zero_h)).collect();
            let weights = match self.config.gate {
                GateMode::Learned => {
                    let gate_in = tape.concat(&inputs);
                    let logits = apply_ffn(tape, &self.ids.gate, gate_in)?;
                    tape.softmax(logits, Some(&active))?
                }
                GateMode::Mean => {
                    let uniform: Vec<f64> = active
                        .iter()
                        .map(|&a| if a { 1.0 / n_active as f64 } else { 0.0 })
                        .collect();
                    tape.constant(vec![3], uniform)?
                }
            };
            let stacked = tape.concat(&inputs);
            let matrix = tape.reshape(stacked, vec![3, h])?;
            (vecmat(tape, weights, matrix)?, Some(weights))
        };

        // Long-term interest over projected raw long-window embeddings.
        let long_embeds: Vec<Var> = sample
            .long_seq
            .iter()
            .map(|e| self.embed_event(tape, e))
            .collect::<Result<_, _>>()?;
        let (u_long, tau_long) = if long_embeds.is_empty() {
            let default = tape.watch(self.ids.u_long_default);
            let tau = tape.constant(vec![h], vec![0.0; h])?;
            (default, tau)
        } else {
            let kw = tape.watch(self.ids.proj_lie_key.w);
            let kb = tape.watch(self.ids.proj_lie_key.b);
            let keys: Vec<Var> = long_embeds
                .iter()
                .map(|&e| linear(tape, kw, e, kb))
                .collect::<Result<_, _>>()?;
            let u_long = match self.config.lie_probe {
                LieProbe::Mean => mean_of(tape, &keys)?,
                probe_kind => {
                    let probe = match probe_kind {
                        LieProbe::ShortInterest => u_short,
                        LieProbe::Query => {
                            let w = tape.watch(self.ids.proj_lie_probe_query.w);
                            let b = tape.watch(self.ids.proj_lie_probe_query.b);
                            linear(tape, w, e_query, b)?
                        }
                        LieProbe::Target => {
                            let w = tape.watch(self.ids.proj_lie_probe_target.w);
                            let b = tape.watch(self.ids.proj_lie_probe_target.b);
                            linear(tape, w, e_target, b)?
                        }
                        LieProbe::Mean => unreachable!(),
                    };
                    let (pooled, _) = attention_pool(tape, &self.ids.attn_lie, &keys, None, probe)?;
                    pooled
                }
            };
            // Long-horizon GRU summary, consumed only by the fusion head.
            let mut state = tape.constant(vec![h], vec![0.0; h])?;
            for &x in &long_embeds {
                state = gru_step(tape, &self.ids.gru_long, x, state)?;
            }
            (u_long, state)
        };

        // Interest fusion.
        let (fused, alpha) = match self.config.ifm {
            IfmMode::Adaptive => {
                let fusion_in = tape.concat(&[e_target, e_query, u_short, u_long, tau_long]);
                let logit = apply_ffn(tape, &self.ids.fusion, fusion_in)?;
                let alpha = tape.sigmoid_op(logit)?;
                (convex_mix(tape, alpha, u_short, u_long)?, Some(alpha))
            }
            IfmMode::Fixed(value) => {
                let alpha = tape.constant_scalar(value);
                (convex_mix(tape, alpha, u_short, u_long)?, Some(alpha))
            }
            IfmMode::Concat => (tape.concat(&[u_short, u_long]), None),
        };

        // Prediction head.
        let mlp_in = tape.concat(&[fused, e_target, e_query, e_context]);
        let logit_vec = apply_ffn(tape, &self.ids.predict, mlp_in)?;
        let logit = tape.reshape(logit_vec, vec![1])?;
        let y_hat = tape.sigmoid_op(logit)?;

        Ok(ForwardVars {
            u_q,
            u_t,
            u_c,
            gate_weights,
            u_short,
            u_long,
            tau_long,
            alpha,
            fused,
            logit,
            y_hat,
            short_states,
            causal_weights,
            used_no_history,
        })
    }

    /// Extracts the plain-value bundle from a finished forward pass.
    pub fn bundle(&self, tape: &Tape, fwd: &ForwardVars) -> InterestBundle {
        let grab = |v: &Option<Var>| v.map(|v| tape.value_vec(v));
        let gate_weights = match fwd.gate_weights {
            Some(w) => {
                let vals = tape.value(w);
                [vals[0], vals[1], vals[2]]
            }
            None => [0.0; 3],
        };
        InterestBundle {
            u_q: grab(&fwd.u_q),
            u_t: grab(&fwd.u_t),
            u_c: grab(&fwd.u_c),
            gate_weights,
            u_short: tape.value_vec(fwd.u_short),
            u_long: tape.value_vec(fwd.u_long),
            tau_long: tape.value_vec(fwd.tau_long),
            alpha_fuse: fwd.alpha.map(|a| tape.value(a)[0]),
            y_hat: tape.value(fwd.y_hat)[0],
        }
    }
}

/// `alpha · a + (1 − alpha) · b` with a scalar alpha.
fn convex_mix(tape: &mut Tape, alpha: Var, a: Var, b: Var) -> Result<Var, KernelError> {
    let one = tape.constant_scalar(1.0);
    let beta = tape.sub(one, alpha)?;
    let wa = tape.mul(a, alpha)?;
    let wb = tape.mul(b, beta)?;
    tape.add(wa, wb)
}
