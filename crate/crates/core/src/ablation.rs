//! Structural ablations, decision-rule variants and hyperparameter sweeps.
//! Every run trains from the same seed and is scored on the test split.

use std::str::FromStr;

use crate::config::{DecisionRule, ModelConfig, TrainConfig, Variant};
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::metrics::{metrics_csv, MetricsReport};
use crate::train::{evaluate, train};

/// One ablation cell: either a structural variant or a decision rule swap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationVariant {
    Structure(Variant),
    Decision(DecisionRule),
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 6] = [
        AblationVariant::Structure(Variant::Full),
        AblationVariant::Structure(Variant::NoMvr),
        AblationVariant::Structure(Variant::NoMvff),
        AblationVariant::Structure(Variant::NoMva),
        AblationVariant::Decision(DecisionRule::MaxReal),
        AblationVariant::Decision(DecisionRule::Average),
    ];

    pub fn label(self) -> String {
        match self {
            AblationVariant::Structure(v) => v.name().to_owned(),
            AblationVariant::Decision(r) => format!("decision={}", r.name()),
        }
    }

    /// `base` with this variant applied; structure variants keep the base rule.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        match self {
            AblationVariant::Structure(variant) => ModelConfig {
                variant,
                ..base.clone()
            },
            AblationVariant::Decision(decision) => ModelConfig {
                variant: Variant::Full,
                decision,
                ..base.clone()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub label: String,
    pub census: usize,
    pub best_epoch: usize,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunTable {
    pub rows: Vec<RunRow>,
}

impl RunTable {
    pub fn to_csv(&self) -> String {
        metrics_csv(self.rows.iter().map(|r| (r.label.as_str(), &r.report)))
    }

    pub fn get(&self, label: &str) -> Option<&RunRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

fn run_one(
    dataset: &SplitDataset,
    label: String,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<RunRow> {
    let out = train(dataset, model, train_cfg)?;
    let (_, report) = evaluate(&out.model, &dataset.test)?;
    Ok(RunRow {
        label,
        census: out.model.census(),
        best_epoch: out.best_epoch,
        report,
    })
}

pub fn run_ablation(
    dataset: &SplitDataset,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    variants: &[AblationVariant],
) -> Result<RunTable> {
    let rows = variants
        .iter()
        .map(|v| run_one(dataset, v.label(), &v.apply(base), train_cfg))
        .collect::<Result<_>>()?;
    Ok(RunTable { rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Layers,
    Views,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Layers => "layers",
            SweepAxis::Views => "views",
        }
    }

    pub fn apply(self, base: &ModelConfig, value: usize) -> ModelConfig {
        match self {
            SweepAxis::Layers => ModelConfig {
                layers: value,
                ..base.clone()
            },
            SweepAxis::Views => ModelConfig {
                views: value,
                ..base.clone()
            },
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layers" => Ok(SweepAxis::Layers),
            "views" => Ok(SweepAxis::Views),
            _ => Err(Error::Config(format!(
                "unknown sweep axis {s:?} (layers|views)"
            ))),
        }
    }
}

/// One run per value; rows are labeled `axis=value`.
pub fn run_sweep(
    dataset: &SplitDataset,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    axis: SweepAxis,
    values: &[usize],
) -> Result<RunTable> {
    if values.is_empty() {
        return Err(Error::Usage("sweep needs at least one value".into()));
    }
    let configs: Vec<ModelConfig> = values.iter().map(|&v| axis.apply(base, v)).collect();
    for c in &configs {
        c.validate()?;
    }
    let rows = values
        .iter()
        .zip(&configs)
        .map(|(v, c)| run_one(dataset, format!("{}={v}", axis.name()), c, train_cfg))
        .collect::<Result<_>>()?;
    Ok(RunTable { rows })
}
