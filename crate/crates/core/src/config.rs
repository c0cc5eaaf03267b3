//! Model, training and run configuration, all serializable as JSON.
//!
//! Every struct rejects unknown keys and falls back to defaults for
//! missing ones. Validation collects every violated field instead of
//! stopping at the first.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::synth::SyntheticSpec;
use crate::error::{Error, Result};

/// One branch of the pyramid: an odd-width dilated convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PyramidEntry {
    pub width: usize,
    pub dilation: usize,
    pub channels: usize,
}

/// Parallel dilated convolutions whose outputs are channel-concatenated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PyramidConfig {
    pub entries: Vec<PyramidEntry>,
}

impl PyramidConfig {
    /// Widths 1,3,3,3,5,5,5; dilations 1,1,2,3,1,2,3; channels 256 then 6×128.
    pub fn standard() -> Self {
        let widths = [1, 3, 3, 3, 5, 5, 5];
        let dilations = [1, 1, 2, 3, 1, 2, 3];
        let channels = [256, 128, 128, 128, 128, 128, 128];
        Self {
            entries: (0..7)
                .map(|k| PyramidEntry {
                    width: widths[k],
                    dilation: dilations[k],
                    channels: channels[k],
                })
                .collect(),
        }
    }

    pub fn total_channels(&self) -> usize {
        self.entries.iter().map(|e| e.channels).sum()
    }

    pub fn validate(&self, prefix: &str, issues: &mut Vec<String>) {
        if self.entries.is_empty() {
            issues.push(format!("{prefix}: needs at least one entry"));
        }
        for (k, e) in self.entries.iter().enumerate() {
            if e.width % 2 == 0 {
                issues.push(format!("{prefix}[{k}].width: {} is not odd", e.width));
            }
            if e.dilation == 0 {
                issues.push(format!("{prefix}[{k}].dilation: must be at least 1"));
            }
            if e.channels == 0 {
                issues.push(format!("{prefix}[{k}].channels: must be positive"));
            }
        }
    }
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self::standard()
    }
}

/// Axis over which view scores are normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAxis {
    /// Each view is a distribution over regions.
    #[default]
    Regions,
    /// Each region is a distribution over views.
    Views,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    /// Learned-query attention pooling.
    #[default]
    Attention,
    /// Plain mean pooling, no parameters.
    Mean,
}

/// How per-view probabilities collapse into the fake probability.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    #[default]
    MaxFake,
    MaxReal,
    Average,
}

impl DecisionRule {
    pub const ALL: [DecisionRule; 3] = [
        DecisionRule::MaxFake,
        DecisionRule::MaxReal,
        DecisionRule::Average,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DecisionRule::MaxFake => "max_fake",
            DecisionRule::MaxReal => "max_real",
            DecisionRule::Average => "average",
        }
    }
}

impl std::str::FromStr for DecisionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DecisionRule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown decision rule {s:?} (max_fake|max_real|average)"
                ))
            })
    }
}

/// Structural ablation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Views are the mean projected region, repeated.
    NoMvr,
    /// Fusion stack bypassed.
    NoMvff,
    /// One mean-pooled fused vector through a single decision head.
    NoMva,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMvr => "no_mvr",
            Variant::NoMvff => "no_mvff",
            Variant::NoMva => "no_mva",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_channels: usize,
    pub text_channels: usize,
    /// Shared feature width `d`.
    pub d: usize,
    pub heads: usize,
    pub views: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    pub decision_hidden: usize,
    pub dropout: f64,
    pub pyramid: PyramidConfig,
    pub score_axis: ScoreAxis,
    pub aggregator: AggregatorKind,
    pub decision: DecisionRule,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_channels: 512,
            text_channels: 768,
            d: 256,
            heads: 4,
            views: 12,
            layers: 3,
            ffn_hidden: 1024,
            decision_hidden: 256,
            dropout: 0.5,
            pyramid: PyramidConfig::standard(),
            score_axis: ScoreAxis::Regions,
            aggregator: AggregatorKind::Attention,
            decision: DecisionRule::MaxFake,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient checks: d=8, H=2, N=2, l=1, K=2.
    pub fn tiny(image_channels: usize, text_channels: usize) -> Self {
        Self {
            image_channels,
            text_channels,
            d: 8,
            heads: 2,
            views: 2,
            layers: 1,
            ffn_hidden: 32,
            decision_hidden: 8,
            dropout: 0.0,
            pyramid: PyramidConfig {
                entries: vec![
                    PyramidEntry {
                        width: 1,
                        dilation: 1,
                        channels: 4,
                    },
                    PyramidEntry {
                        width: 3,
                        dilation: 2,
                        channels: 4,
                    },
                ],
            },
            ..Self::default()
        }
    }

    pub fn head_width(&self) -> usize {
        self.d / self.heads.max(1)
    }

    pub fn validate_into(&self, prefix: &str, issues: &mut Vec<String>) {
        let positive = [
            ("image_channels", self.image_channels),
            ("text_channels", self.text_channels),
            ("d", self.d),
            ("heads", self.heads),
            ("views", self.views),
            ("layers", self.layers),
            ("ffn_hidden", self.ffn_hidden),
            ("decision_hidden", self.decision_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                issues.push(format!("{prefix}.{name}: must be positive"));
            }
        }
        if self.heads > 0 && !self.d.is_multiple_of(self.heads) {
            issues.push(format!(
                "{prefix}.heads: d = {} is not divisible by {}",
                self.d, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            issues.push(format!("{prefix}.dropout: {} outside [0, 1)", self.dropout));
        }
        self.pyramid.validate(&format!("{prefix}.pyramid"), issues);
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        self.validate_into("model", &mut issues);
        finish(issues)
    }

    /// 64-bit FNV-1a hash of the canonical JSON of every field that
    /// determines parameter shapes and the forward graph. Dropout and the
    /// decision rule are excluded: they do not change the parameter set.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::Hasher;

        #[derive(Serialize)]
        struct Structural<'a> {
            image_channels: usize,
            text_channels: usize,
            d: usize,
            heads: usize,
            views: usize,
            layers: usize,
            ffn_hidden: usize,
            decision_hidden: usize,
            pyramid: &'a PyramidConfig,
            score_axis: ScoreAxis,
            aggregator: AggregatorKind,
            variant: Variant,
        }
        let s = Structural {
            image_channels: self.image_channels,
            text_channels: self.text_channels,
            d: self.d,
            heads: self.heads,
            views: self.views,
            layers: self.layers,
            ffn_hidden: self.ffn_hidden,
            decision_hidden: self.decision_hidden,
            pyramid: &self.pyramid,
            score_axis: self.score_axis,
            aggregator: self.aggregator,
            variant: self.variant,
        };
        let canonical = serde_json::to_string(&s).expect("config serializes");
        let mut h = fnv::FnvHasher::default();
        h.write(canonical.as_bytes());
        h.finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaBeliefConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdaBeliefConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: AdaBeliefConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-4,
            seed: 42,
            optimizer: AdaBeliefConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate_into(&self, prefix: &str, issues: &mut Vec<String>) {
        if self.epochs == 0 {
            issues.push(format!("{prefix}.epochs: must be positive"));
        }
        if self.batch_size == 0 {
            issues.push(format!("{prefix}.batch_size: must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            issues.push(format!(
                "{prefix}.learning_rate: {} must be finite and non-negative",
                self.learning_rate
            ));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) {
            issues.push(format!(
                "{prefix}.optimizer.beta1: {} outside [0, 1)",
                o.beta1
            ));
        }
        if !(0.0..1.0).contains(&o.beta2) {
            issues.push(format!(
                "{prefix}.optimizer.beta2: {} outside [0, 1)",
                o.beta2
            ));
        }
        if o.eps.is_nan() || o.eps <= 0.0 {
            issues.push(format!("{prefix}.optimizer.eps: must be positive"));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub fixture: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub split_seed: u64,
    pub ratios: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            fixture: None,
            manifest: None,
            split_seed: 42,
            ratios: [0.7, 0.15, 0.15],
        }
    }
}

/// Everything a CLI invocation needs, as one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub synth: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            output_dir: PathBuf::from("runs"),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            synth: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Checks every field; the error lists all violations separated by `; `.
    pub fn validate(&self) -> Result<()> {
        finish(self.issues())
    }

    pub fn issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            issues.push(format!(
                "name: {:?} must be a non-empty single path component",
                self.name
            ));
        }
        self.model.validate_into("model", &mut issues);
        self.train.validate_into("train", &mut issues);
        let r = self.data.ratios;
        if r.iter().any(|v| v.is_nan() || *v < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            issues.push(format!(
                "data.ratios: {r:?} must be non-negative and sum to 1"
            ));
        }
        self.synth.validate_into("synth", &mut issues);
        if self.synth.image_channels != self.model.image_channels {
            issues.push(format!(
                "synth.image_channels: {} differs from model.image_channels {}",
                self.synth.image_channels, self.model.image_channels
            ));
        }
        if self.synth.text_channels != self.model.text_channels {
            issues.push(format!(
                "synth.text_channels: {} differs from model.text_channels {}",
                self.synth.text_channels, self.model.text_channels
            ));
        }
        issues
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }
}

fn finish(issues: Vec<String>) -> Result<()> {
    if issues.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(issues.join("; ")))
    }
}
