//! Gated recurrent unit built from tape primitives.
//!
//! Two-gate formulation with the reset gate applied to the hidden state
//! before the candidate projection:
//!
//! ```text
//! z = sigmoid(Wz x + Uz h + bz)
//! r = sigmoid(Wr x + Ur h + br)
//! c = tanh(Wh x + Uh (r ⊙ h) + bh)
//! h' = (1 − z) ⊙ h + z ⊙ c
//! ```

use rand::Rng;

use crate::tape::{matvec, KernelError, Tape, Var};
use crate::tensor::{ParamId, Params, Tensor};

/// Handles to one GRU layer's nine parameter tensors.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wh: ParamId,
    pub uh: ParamId,
    pub bh: ParamId,
}

impl GruParams {
    /// Registers a GRU layer under `prefix`. Input weights are uniform on
    /// ±1/√in_dim, recurrent weights on ±1/√hidden_dim, biases zero.
    pub fn register<R: Rng>(
        params: &mut Params,
        prefix: &str,
        in_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let wb = 1.0 / (in_dim as f64).sqrt();
        let ub = 1.0 / (hidden_dim as f64).sqrt();
        let mut w = |name: &str, bound: f64, rows: usize, cols: usize, rng: &mut R| {
            params.register(
                &format!("{prefix}.{name}"),
                Tensor::uniform(vec![rows, cols], bound, rng),
            )
        };
        let wz = w("wz", wb, hidden_dim, in_dim, rng);
        let uz = w("uz", ub, hidden_dim, hidden_dim, rng);
        let wr = w("wr", wb, hidden_dim, in_dim, rng);
        let ur = w("ur", ub, hidden_dim, hidden_dim, rng);
        let wh = w("wh", wb, hidden_dim, in_dim, rng);
        let uh = w("uh", ub, hidden_dim, hidden_dim, rng);
        let bz = params.register(&format!("{prefix}.bz"), Tensor::zeros(vec![hidden_dim]));
        let br = params.register(&format!("{prefix}.br"), Tensor::zeros(vec![hidden_dim]));
        let bh = params.register(&format!("{prefix}.bh"), Tensor::zeros(vec![hidden_dim]));
        GruParams {
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wh,
            uh,
            bh,
        }
    }

    /// Looks the layer up again from an existing registry.
    pub fn resolve(params: &Params, prefix: &str) -> Self {
        let id = |name: &str| {
            params
                .id(&format!("{prefix}.{name}"))
                .unwrap_or_else(|| panic!("missing GRU parameter {prefix}.{name}"))
        };
        GruParams {
            wz: id("wz"),
            uz: id("uz"),
            bz: id("bz"),
            wr: id("wr"),
            ur: id("ur"),
            br: id("br"),
            wh: id("wh"),
            uh: id("uh"),
            bh: id("bh"),
        }
    }
}

/// One GRU transition. `h' = h + z ⊙ (c − h)`, algebraically equal to
/// `(1 − z) ⊙ h + z ⊙ c`.
pub fn gru_step(
    tape: &mut Tape,
    layer: &GruParams,
    x: Var,
    h_prev: Var,
) -> Result<Var, KernelError> {
    let gate = |tape: &mut Tape, w, u, b| -> Result<Var, KernelError> {
        let w = tape.watch(w);
        let u = tape.watch(u);
        let b = tape.watch(b);
        let wx = matvec(tape, w, x)?;
        let uh = matvec(tape, u, h_prev)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, b)
    };
    let z_pre = gate(tape, layer.wz, layer.uz, layer.bz)?;
    let z = tape.sigmoid_op(z_pre)?;
    let r_pre = gate(tape, layer.wr, layer.ur, layer.br)?;
    let r = tape.sigmoid_op(r_pre)?;

    let wh = tape.watch(layer.wh);
    let uh = tape.watch(layer.uh);
    let bh = tape.watch(layer.bh);
    let wx = matvec(tape, wh, x)?;
    let rh = tape.mul(r, h_prev)?;
    let urh = matvec(tape, uh, rh)?;
    let pre = tape.add(wx, urh)?;
    let pre = tape.add(pre, bh)?;
    let cand = tape.tanh_op(pre)?;

    let delta = tape.sub(cand, h_prev)?;
    let zd = tape.mul(z, delta)?;
    tape.add(h_prev, zd)
}
