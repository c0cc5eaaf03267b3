//! Multi-view feature fusion: a stack of co-attention + FFN layers whose
//! queries come from the image views (or the previous layer's fused
//! features) and whose keys and values come from the text tokens.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Binding, Dropout, Init, LinearParams, NormParams, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct CoAttentionLayer {
    pub heads: usize,
    /// `d×d` each; head `h` owns columns `h*d_h .. (h+1)*d_h`.
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
    pub attn_norm: NormParams,
    pub ffn_in: LinearParams,
    pub ffn_out: LinearParams,
    pub ffn_norm: NormParams,
}

impl CoAttentionLayer {
    pub fn init(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        d: usize,
        heads: usize,
        ffn_hidden: usize,
    ) -> Self {
        let mut proj = |name: &str, init: &mut Init| {
            store.add(format!("{prefix}.{name}"), init.xavier(&[d, d], d, d))
        };
        let query = proj("wq", init);
        let key = proj("wk", init);
        let value = proj("wv", init);
        let output = proj("wo", init);
        let attn_norm = NormParams {
            gain: store.add(format!("{prefix}.ln1.gain"), Tensor::filled(&[d], 1.0)),
            shift: store.add(format!("{prefix}.ln1.shift"), Tensor::zeros(&[d])),
        };
        let ffn_in = LinearParams {
            weight: store.add(
                format!("{prefix}.ffn1.weight"),
                init.he(&[d, ffn_hidden], d),
            ),
            bias: store.add(format!("{prefix}.ffn1.bias"), Tensor::zeros(&[ffn_hidden])),
        };
        let ffn_out = LinearParams {
            weight: store.add(
                format!("{prefix}.ffn2.weight"),
                init.xavier(&[ffn_hidden, d], ffn_hidden, d),
            ),
            bias: store.add(format!("{prefix}.ffn2.bias"), Tensor::zeros(&[d])),
        };
        let ffn_norm = NormParams {
            gain: store.add(format!("{prefix}.ln2.gain"), Tensor::filled(&[d], 1.0)),
            shift: store.add(format!("{prefix}.ln2.shift"), Tensor::zeros(&[d])),
        };
        Self {
            heads,
            query,
            key,
            value,
            output,
            attn_norm,
            ffn_in,
            ffn_out,
            ffn_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionStack {
    pub layers: Vec<CoAttentionLayer>,
}

impl FusionStack {
    pub fn init(
        store: &mut ParamStore,
        init: &mut Init,
        layers: usize,
        d: usize,
        heads: usize,
        ffn_hidden: usize,
    ) -> Self {
        Self {
            layers: (0..layers)
                .map(|l| {
                    CoAttentionLayer::init(store, init, &format!("mvff.{l}"), d, heads, ffn_hidden)
                })
                .collect(),
        }
    }
}

/// Output of [`scaled_dot_attention`].
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    /// `N×m`, rows sum to one.
    pub weights: Var,
    /// `N×d_h`
    pub output: Var,
}

/// `softmax(Q·Kᵀ/√d_h)·V` with the softmax over keys.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Attention> {
    let dh = tape.value(q).dims2()?.1;
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let scaled = tape.scale(logits, 1.0 / (dh as f64).sqrt());
    let weights = tape.softmax(scaled, 1)?;
    let output = tape.matmul(weights, v)?;
    Ok(Attention { weights, output })
}

/// Intermediate values of [`co_attention`].
#[derive(Clone, Debug)]
pub struct CoAttentionOutput {
    /// Per-head attention weights, each `N×m`.
    pub weights: Vec<Var>,
    /// Concatenated head outputs before `W^O`, `N×d`.
    pub heads: Var,
    /// `layer_norm(dropout(heads·W^O) + X_q)`, `N×d`.
    pub output: Var,
}

/// Multi-head attention from `x_q` (`N×d`) over text tokens `t` (`m×d`),
/// with the residual taken from the query side.
pub fn co_attention(
    tape: &mut Tape,
    bind: &Binding,
    layer: &CoAttentionLayer,
    x_q: Var,
    t: Var,
    dropout: &mut Dropout,
) -> Result<CoAttentionOutput> {
    let d = tape.value(x_q).dims2()?.1;
    if tape.value(t).dims2()?.1 != d {
        return Err(Error::dim(
            "co_attention",
            format!("query width {d}, text shape {:?}", tape.value(t).shape()),
        ));
    }
    if layer.heads == 0 || d % layer.heads != 0 {
        return Err(Error::Config(format!(
            "d = {d} not divisible by {} heads",
            layer.heads
        )));
    }
    let dh = d / layer.heads;
    let q = tape.matmul(x_q, bind.var(layer.query))?;
    let k = tape.matmul(t, bind.var(layer.key))?;
    let v = tape.matmul(t, bind.var(layer.value))?;
    let mut weights = Vec::with_capacity(layer.heads);
    let mut outs = Vec::with_capacity(layer.heads);
    for h in 0..layer.heads {
        let qh = tape.narrow(q, 1, h * dh, dh)?;
        let kh = tape.narrow(k, 1, h * dh, dh)?;
        let vh = tape.narrow(v, 1, h * dh, dh)?;
        let att = scaled_dot_attention(tape, qh, kh, vh)?;
        weights.push(att.weights);
        outs.push(att.output);
    }
    let heads = tape.concat(&outs, 1)?;
    let projected = tape.matmul(heads, bind.var(layer.output))?;
    let projected = dropout.apply(tape, projected)?;
    let residual = tape.add(projected, x_q)?;
    let output = layer.attn_norm.forward(tape, bind, residual)?;
    Ok(CoAttentionOutput {
        weights,
        heads,
        output,
    })
}

/// Co-attention followed by `layer_norm(FFN(A) + A)`.
pub fn fusion_layer(
    tape: &mut Tape,
    bind: &Binding,
    layer: &CoAttentionLayer,
    x_q: Var,
    t: Var,
    dropout: &mut Dropout,
) -> Result<Var> {
    let a = co_attention(tape, bind, layer, x_q, t, dropout)?.output;
    let hidden = layer.ffn_in.forward(tape, bind, a)?;
    let hidden = tape.relu(hidden);
    let f = layer.ffn_out.forward(tape, bind, hidden)?;
    let f = dropout.apply(tape, f)?;
    let sum = tape.add(f, a)?;
    layer.ffn_norm.forward(tape, bind, sum)
}

/// Runs the stack; the raw text features feed keys and values at every layer.
pub fn fuse(
    tape: &mut Tape,
    bind: &Binding,
    stack: &FusionStack,
    views: Var,
    t: Var,
    dropout: &mut Dropout,
) -> Result<Var> {
    if stack.layers.is_empty() {
        return Err(Error::Config(
            "fusion stack needs at least one layer".into(),
        ));
    }
    stack.layers.iter().try_fold(views, |x, layer| {
        fusion_layer(tape, bind, layer, x, t, dropout)
    })
}
