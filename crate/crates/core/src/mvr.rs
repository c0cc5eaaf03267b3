//! Multi-view representation: pyramid dilated convolution over image
//! regions, per-view region scoring, and summarization of the regions
//! into `N` view vectors.

use crate::autodiff::{Tape, Tensor, Var};
use crate::config::{PyramidConfig, ScoreAxis};
use crate::error::{Error, Result};
use crate::nn::{Binding, Init, LinearParams, ParamId, ParamStore};

/// Kernel (`w×d×s`) and bias (`s`) of one pyramid branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvParams {
    pub kernel: ParamId,
    pub bias: ParamId,
}

/// `W_s: total_channels×N` and `b_s: N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewScorer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub views: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MvrParams {
    pub pyramid: PyramidConfig,
    pub kernels: Vec<ConvParams>,
    pub scorer: ViewScorer,
    pub score_axis: ScoreAxis,
}

impl MvrParams {
    pub fn init(
        store: &mut ParamStore,
        init: &mut Init,
        pyramid: &PyramidConfig,
        d: usize,
        views: usize,
        score_axis: ScoreAxis,
    ) -> Self {
        let kernels = pyramid
            .entries
            .iter()
            .enumerate()
            .map(|(k, e)| ConvParams {
                kernel: store.add(
                    format!("mvr.pyramid.{k}.kernel"),
                    init.he(&[e.width, d, e.channels], e.width * d),
                ),
                bias: store.add(
                    format!("mvr.pyramid.{k}.bias"),
                    Tensor::zeros(&[e.channels]),
                ),
            })
            .collect();
        let total = pyramid.total_channels();
        let scorer = ViewScorer {
            weight: store.add(
                "mvr.scorer.weight",
                init.xavier(&[total, views], total, views),
            ),
            bias: store.add("mvr.scorer.bias", Tensor::zeros(&[views])),
            views,
        };
        Self {
            pyramid: pyramid.clone(),
            kernels,
            scorer,
            score_axis,
        }
    }
}

/// Runs every pyramid branch over the region axis and concatenates the
/// outputs along channels in configuration order.
pub fn pyramid_forward(
    tape: &mut Tape,
    v: Var,
    cfg: &PyramidConfig,
    kernels: &[(Var, Var)],
) -> Result<Var> {
    if kernels.len() != cfg.entries.len() {
        return Err(Error::Config(format!(
            "pyramid has {} entries but {} kernels",
            cfg.entries.len(),
            kernels.len()
        )));
    }
    let mut outs = Vec::with_capacity(kernels.len());
    for (k, (entry, &(kernel, bias))) in cfg.entries.iter().zip(kernels).enumerate() {
        let ks = tape.value(kernel).shape();
        if ks.len() != 3 || ks[0] != entry.width || ks[2] != entry.channels {
            return Err(Error::Config(format!(
                "pyramid entry {k} expects width {} and {} channels, kernel is {ks:?}",
                entry.width, entry.channels
            )));
        }
        outs.push(tape.dilated_conv1d(v, kernel, bias, entry.dilation)?);
    }
    tape.concat(&outs, 1)
}

/// `softmax(features·W_s + b_s)`, normalized per view over regions by default.
pub fn view_scores(
    tape: &mut Tape,
    features: Var,
    weight: Var,
    bias: Var,
    axis: ScoreAxis,
) -> Result<Var> {
    let logits = tape.linear(features, weight, bias)?;
    let axis = match axis {
        ScoreAxis::Regions => 0,
        ScoreAxis::Views => 1,
    };
    tape.softmax(logits, axis)
}

/// `V* = Ŝᵀ·V`.
pub fn summarize(tape: &mut Tape, v: Var, scores: Var) -> Result<Var> {
    let st = tape.transpose(scores)?;
    tape.matmul(st, v)
}

/// Intermediate values of one MVR pass.
#[derive(Clone, Copy, Debug)]
pub struct MvrOutput {
    /// `r × total_channels`
    pub features: Var,
    /// `r × N`
    pub scores: Var,
    /// `N × d`
    pub summary: Var,
}

/// Pyramid, scoring and summarization over already projected regions `v` (`r×d`).
pub fn mvr_forward(
    tape: &mut Tape,
    bind: &Binding,
    params: &MvrParams,
    v: Var,
) -> Result<MvrOutput> {
    let kernels: Vec<(Var, Var)> = params
        .kernels
        .iter()
        .map(|c| (bind.var(c.kernel), bind.var(c.bias)))
        .collect();
    let features = pyramid_forward(tape, v, &params.pyramid, &kernels)?;
    let scores = view_scores(
        tape,
        features,
        bind.var(params.scorer.weight),
        bind.var(params.scorer.bias),
        params.score_axis,
    )?;
    let summary = summarize(tape, v, scores)?;
    Ok(MvrOutput {
        features,
        scores,
        summary,
    })
}

/// Projects raw region features (`r×c_img`) to width `d`, then runs [`mvr_forward`].
/// Returns the projected regions alongside the stage outputs.
pub fn mvr_forward_raw(
    tape: &mut Tape,
    bind: &Binding,
    projection: &LinearParams,
    params: &MvrParams,
    v_raw: Var,
) -> Result<(Var, MvrOutput)> {
    let v = projection.forward(tape, bind, v_raw)?;
    Ok((v, mvr_forward(tape, bind, params, v)?))
}

/// Region-to-view importance matrix `Ŝ` (`r×N`).
#[derive(Clone, Debug, PartialEq)]
pub struct ViewScoreMatrix(pub Tensor);

impl ViewScoreMatrix {
    pub fn column_sums(&self) -> Vec<f64> {
        let (r, n) = self.0.dims2().expect("matrix");
        (0..n)
            .map(|j| (0..r).map(|i| self.0.at2(i, j)).sum())
            .collect()
    }
}

/// `N×d` view vectors, each a convex combination of region rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewSummary(pub Tensor);

/// Eager [`view_scores`] on plain tensors.
pub fn compute_view_scores(
    features: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    axis: ScoreAxis,
) -> Result<ViewScoreMatrix> {
    let mut tape = Tape::new();
    let (f, w, b) = (tape.leaf(features), tape.leaf(weight), tape.leaf(bias));
    let s = view_scores(&mut tape, f, w, b, axis)?;
    Ok(ViewScoreMatrix(tape.value(s).clone()))
}

/// Eager [`summarize`] on plain tensors.
pub fn compute_summary(v: &Tensor, scores: &ViewScoreMatrix) -> Result<MultiViewSummary> {
    let mut tape = Tape::new();
    let (vv, sv) = (tape.leaf(v), tape.leaf(&scores.0));
    let out = summarize(&mut tape, vv, sv)?;
    Ok(MultiViewSummary(tape.value(out).clone()))
}
