//! Full classifier: input projections, multi-view representation, fusion,
//! aggregation and decision, plus the batch objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::autodiff::{Tensor, PROB_CLAMP};
use crate::config::{ModelConfig, Variant};
use crate::data::FeatureRecord;
use crate::error::{Error, InModule, Result};
use crate::mva::{self, decide_values, DecisionOutput, MvaParams};
use crate::mvff::{self, FusionStack};
use crate::mvr::{self, MvrParams};
use crate::nn::{Binding, Dropout, Init, LinearParams, ParamStore};

/// Which parameters exist and how they are wired, per variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub image_proj: LinearParams,
    pub text_proj: LinearParams,
    /// Absent for `no_mvr`.
    pub mvr: Option<MvrParams>,
    /// Absent for `no_mvff`.
    pub fusion: Option<FusionStack>,
    pub mva: MvaParams,
}

#[derive(Clone, Debug)]
pub struct MvirModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub layout: Layout,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// `N×2` (`1×2` for `no_mva`)
    pub probs: Var,
    /// Scalar `ŷ` under the configured rule.
    pub fake_prob: Var,
}

impl MvirModel {
    /// Initializes every parameter from a generator seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let mut init = Init::new(ChaCha8Rng::seed_from_u64(seed));
        let mut projection = |name: &str, fan_in: usize, init: &mut Init| LinearParams {
            weight: store.add(
                format!("{name}.weight"),
                init.xavier(&[fan_in, c.d], fan_in, c.d),
            ),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[c.d])),
        };
        let image_proj = projection("proj.image", c.image_channels, &mut init);
        let text_proj = projection("proj.text", c.text_channels, &mut init);
        let mvr = (c.variant != Variant::NoMvr).then(|| {
            MvrParams::init(
                &mut store,
                &mut init,
                &c.pyramid,
                c.d,
                c.views,
                c.score_axis,
            )
        });
        let fusion = (c.variant != Variant::NoMvff).then(|| {
            FusionStack::init(&mut store, &mut init, c.layers, c.d, c.heads, c.ffn_hidden)
        });
        let views = (c.variant != Variant::NoMva).then_some(c.views);
        let mva = MvaParams::init(
            &mut store,
            &mut init,
            c.aggregator,
            views,
            c.d,
            c.decision_hidden,
        );
        Ok(Self {
            config,
            store,
            layout: Layout {
                image_proj,
                text_proj,
                mvr,
                fusion,
                mva,
            },
        })
    }

    /// Total number of scalar parameters.
    pub fn census(&self) -> usize {
        self.store.census()
    }

    fn check_record(&self, record: &FeatureRecord) -> Result<()> {
        let (_, ci) = record.image_features.dims2()?;
        let (m, ct) = record.text_features.dims2()?;
        if ci != self.config.image_channels || ct != self.config.text_channels || m == 0 {
            return Err(Error::dim(
                "forward",
                format!(
                    "record {:?} has image {:?} and text {:?}; model expects {} image and {} text channels",
                    record.id,
                    record.image_features.shape(),
                    record.text_features.shape(),
                    self.config.image_channels,
                    self.config.text_channels
                ),
            ));
        }
        Ok(())
    }

    /// Records one forward pass on `tape`, with parameters already bound.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        record: &FeatureRecord,
        dropout: &mut Dropout,
    ) -> Result<ForwardVars> {
        self.check_record(record).in_module("project")?;
        let l = &self.layout;
        let images = tape.constant(record.image_features.clone());
        let text = tape.constant(record.text_features.clone());
        let v = l
            .image_proj
            .forward(tape, bind, images)
            .in_module("project")?;
        let t = l.text_proj.forward(tape, bind, text).in_module("project")?;

        let views = match &l.mvr {
            Some(p) => mvr::mvr_forward(tape, bind, p, v).in_module("mvr")?.summary,
            None => {
                let mean = tape.mean_rows(v).in_module("mvr")?;
                tape.repeat_rows(mean, self.config.views).in_module("mvr")?
            }
        };
        let fused = match &l.fusion {
            Some(stack) => mvff::fuse(tape, bind, stack, views, t, dropout).in_module("mvff")?,
            None => views,
        };

        let probs = (|| {
            let cues = match self.config.variant {
                Variant::NoMva => tape.mean_rows(fused)?,
                _ => mva::aggregate_views(tape, bind, &l.mva, fused, self.config.views)?,
            };
            let text_emb = mva::text_embed(tape, bind, &l.mva, t)?;
            mva::view_logits(tape, bind, &l.mva.head, cues, text_emb)
        })()
        .in_module("mva")?;
        let fake_prob = mva::decide(tape, probs, self.config.decision).in_module("mva")?;
        Ok(ForwardVars { probs, fake_prob })
    }

    /// Evaluation-mode forward pass.
    pub fn forward(&self, record: &FeatureRecord) -> Result<DecisionOutput> {
        let mut tape = Tape::new();
        let bind = self.store.bind(&mut tape);
        let out = self.forward_with(&mut tape, &bind, record, &mut Dropout::eval())?;
        decide_values(tape.value(out.probs), self.config.decision)
    }

    /// Fake probabilities for every record, in order.
    pub fn predict(&self, records: &[FeatureRecord]) -> Result<Vec<f64>> {
        records
            .iter()
            .map(|r| self.forward(r).map(|o| o.fake_prob))
            .collect()
    }

    /// Summed binary cross-entropy over `records`, recorded on `tape`.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        records: &[&FeatureRecord],
        dropout: &mut Dropout,
    ) -> Result<Var> {
        if records.is_empty() {
            return Err(Error::Usage("batch_loss on an empty batch".into()));
        }
        let mut losses = Vec::with_capacity(records.len());
        for rec in records {
            let out = self.forward_with(tape, bind, rec, dropout)?;
            losses.push(tape.bce(out.fake_prob, rec.label.as_f64())?);
        }
        tape.add_n(&losses)
    }
}

/// `−Σ [y·ln ŷ + (1−y)·ln(1−ŷ)]` with `ŷ` clamped to `[1e-7, 1−1e-7]`.
pub fn bce_loss(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Usage(format!(
            "bce_loss: {} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum())
}
