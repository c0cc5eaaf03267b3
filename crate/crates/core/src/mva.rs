//! Multi-view aggregation: learned-query pooling of the fused views and
//! the text tokens, a per-view two-class decision head, and the rule that
//! collapses per-view probabilities into one fake probability.

use crate::autodiff::{Tape, Tensor, Var};
use crate::config::{AggregatorKind, DecisionRule};
use crate::error::{Error, Result};
use crate::nn::{Binding, Init, LinearParams, ParamId, ParamStore};

/// Index of the fake class in every probability pair.
pub const FAKE: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct MvaParams {
    pub kind: AggregatorKind,
    /// `N×d`, one learned query per view. Absent for mean pooling and
    /// when views are not aggregated at all.
    pub view_queries: Option<ParamId>,
    /// `1×d`
    pub text_query: Option<ParamId>,
    pub head: DecisionHead,
}

/// `W_f: 2d×d_z`, `W_l: d_z×2`, each with a bias.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecisionHead {
    pub hidden: LinearParams,
    pub logits: LinearParams,
}

impl DecisionHead {
    pub fn init(store: &mut ParamStore, init: &mut Init, d: usize, hidden: usize) -> Self {
        Self {
            hidden: LinearParams {
                weight: store.add("mva.head.wf", init.he(&[2 * d, hidden], 2 * d)),
                bias: store.add("mva.head.bf", Tensor::zeros(&[hidden])),
            },
            logits: LinearParams {
                weight: store.add("mva.head.wl", init.xavier(&[hidden, 2], hidden, 2)),
                bias: store.add("mva.head.bl", Tensor::zeros(&[2])),
            },
        }
    }
}

impl MvaParams {
    pub fn init(
        store: &mut ParamStore,
        init: &mut Init,
        kind: AggregatorKind,
        views: Option<usize>,
        d: usize,
        hidden: usize,
    ) -> Self {
        let (view_queries, text_query) = match kind {
            AggregatorKind::Attention => (
                views.map(|n| store.add("mva.view_queries", init.query(&[n, d], d))),
                Some(store.add("mva.text_query", init.query(&[1, d], d))),
            ),
            AggregatorKind::Mean => (None, None),
        };
        Self {
            kind,
            view_queries,
            text_query,
            head: DecisionHead::init(store, init, d, hidden),
        }
    }
}

/// `softmax(Q·Xᵀ/√d)·X`: each query row pools the rows of `x`.
pub fn attention_pool(tape: &mut Tape, queries: Var, x: Var) -> Result<Var> {
    let d = tape.value(x).dims2()?.1;
    let xt = tape.transpose(x)?;
    let logits = tape.matmul(queries, xt)?;
    let scaled = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let weights = tape.softmax(scaled, 1)?;
    tape.matmul(weights, x)
}

/// One semantic cue embedding per view, `N×d`.
pub fn aggregate_views(
    tape: &mut Tape,
    bind: &Binding,
    params: &MvaParams,
    x: Var,
    views: usize,
) -> Result<Var> {
    match params.view_queries {
        Some(q) => attention_pool(tape, bind.var(q), x),
        None => {
            let mean = tape.mean_rows(x)?;
            tape.repeat_rows(mean, views)
        }
    }
}

/// Pooled text embedding, `1×d`.
pub fn text_embed(tape: &mut Tape, bind: &Binding, params: &MvaParams, t: Var) -> Result<Var> {
    match params.text_query {
        Some(q) => attention_pool(tape, bind.var(q), t),
        None => tape.mean_rows(t),
    }
}

/// Per-view class probabilities, `N×2`, from cue embeddings `N×d` and a `1×d` text embedding.
pub fn view_logits(
    tape: &mut Tape,
    bind: &Binding,
    head: &DecisionHead,
    cues: Var,
    text: Var,
) -> Result<Var> {
    let n = tape.value(cues).dims2()?.0;
    let text_rows = tape.repeat_rows(text, n)?;
    let joint = tape.concat(&[cues, text_rows], 1)?;
    let z = head.hidden.forward(tape, bind, joint)?;
    let z = tape.relu(z);
    let logits = head.logits.forward(tape, bind, z)?;
    tape.softmax(logits, 1)
}

/// Differentiable `ŷ` from per-view probabilities `N×2`.
pub fn decide(tape: &mut Tape, probs: Var, rule: DecisionRule) -> Result<Var> {
    let (n, c) = tape.value(probs).dims2()?;
    if c != 2 {
        return Err(Error::dim(
            "decide",
            format!("expected N×2 probabilities, got {n}×{c}"),
        ));
    }
    Ok(match rule {
        DecisionRule::MaxFake => {
            let fake = tape.narrow(probs, 1, FAKE, 1)?;
            tape.max_all(fake)
        }
        DecisionRule::MaxReal => {
            let real = tape.narrow(probs, 1, 1 - FAKE, 1)?;
            let m = tape.max_all(real);
            let neg = tape.scale(m, -1.0);
            tape.add_scalar(neg, 1.0)
        }
        DecisionRule::Average => {
            let fake = tape.narrow(probs, 1, FAKE, 1)?;
            tape.mean_all(fake)
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionOutput {
    /// `N×2`, columns real then fake.
    pub per_view_probs: Tensor,
    pub fake_prob: f64,
    /// View selected by the rule; for `average`, the view with the highest fake probability.
    pub verdict_view: usize,
}

fn first_argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
}

/// Applies `rule` to a concrete probability table.
pub fn decide_values(per_view_probs: &Tensor, rule: DecisionRule) -> Result<DecisionOutput> {
    let (n, c) = per_view_probs.dims2()?;
    if c != 2 {
        return Err(Error::dim(
            "decide",
            format!("expected N×2 probabilities, got {n}×{c}"),
        ));
    }
    if n == 0 {
        return Err(Error::Usage("decide needs at least one view".into()));
    }
    let fake = || (0..n).map(|i| per_view_probs.at2(i, FAKE));
    let (fake_view, max_fake) = first_argmax(fake());
    let (verdict_view, fake_prob) = match rule {
        DecisionRule::MaxFake => (fake_view, max_fake),
        DecisionRule::MaxReal => {
            let (i, p) = first_argmax((0..n).map(|i| per_view_probs.at2(i, 1 - FAKE)));
            (i, 1.0 - p)
        }
        DecisionRule::Average => (fake_view, fake().sum::<f64>() / n as f64),
    };
    Ok(DecisionOutput {
        per_view_probs: per_view_probs.clone(),
        fake_prob,
        verdict_view,
    })
}
