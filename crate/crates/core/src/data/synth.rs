//! Synthetic feature generator with a planted fake-news signal.
//!
//! Real records are pure Gaussian noise. Fake records add a fixed
//! direction to every region row of one randomly chosen contiguous
//! "view cluster" and to a random non-empty subset of text rows, so one
//! attended region subset carries the label.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::fixture::{FeatureRecord, Fixture, Label};
use crate::autodiff::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub fake_count: usize,
    pub real_count: usize,
    pub regions: usize,
    /// Number of contiguous region blocks the planted signal can land in.
    pub view_clusters: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub image_channels: usize,
    pub text_channels: usize,
    pub signal_strength: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            fake_count: 400,
            real_count: 400,
            regions: 49,
            view_clusters: 7,
            min_tokens: 4,
            max_tokens: 16,
            image_channels: 512,
            text_channels: 768,
            signal_strength: 3.0,
            noise_scale: 1.0,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    /// Small-dimension preset for desk-scale training runs.
    pub fn desk() -> Self {
        Self {
            regions: 9,
            view_clusters: 3,
            min_tokens: 4,
            max_tokens: 8,
            image_channels: 16,
            text_channels: 16,
            ..Self::default()
        }
    }

    pub fn with_strength(mut self, strength: f64) -> Self {
        self.signal_strength = strength;
        self
    }

    pub fn validate_into(&self, prefix: &str, issues: &mut Vec<String>) {
        let positive = [
            ("regions", self.regions),
            ("view_clusters", self.view_clusters),
            ("min_tokens", self.min_tokens),
            ("image_channels", self.image_channels),
            ("text_channels", self.text_channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                issues.push(format!("{prefix}.{name}: must be positive"));
            }
        }
        if self.view_clusters > self.regions {
            issues.push(format!(
                "{prefix}.view_clusters: more clusters than regions"
            ));
        }
        if self.max_tokens < self.min_tokens {
            issues.push(format!("{prefix}.max_tokens: below min_tokens"));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            issues.push(format!(
                "{prefix}.signal_strength: must be finite and non-negative"
            ));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            issues.push(format!(
                "{prefix}.noise_scale: must be finite and non-negative"
            ));
        }
    }

    /// Region rows `[start, end)` of cluster `c`.
    pub fn cluster_rows(&self, c: usize) -> std::ops::Range<usize> {
        let size = self.regions.div_ceil(self.view_clusters);
        (c * size).min(self.regions)..((c + 1) * size).min(self.regions)
    }
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn noise(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Rounds through `f32` so generated records survive a fixture round trip unchanged.
fn quantize(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

/// Planted image and text directions for `spec`.
pub fn planted_directions(spec: &SyntheticSpec) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let img = unit_direction(&mut rng, spec.image_channels);
    let txt = unit_direction(&mut rng, spec.text_channels);
    (img, txt)
}

pub fn synth_generate(spec: &SyntheticSpec) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let u_img = unit_direction(&mut rng, spec.image_channels);
    let u_txt = unit_direction(&mut rng, spec.text_channels);

    let mut labels: Vec<Label> = std::iter::repeat_n(Label::Fake, spec.fake_count)
        .chain(std::iter::repeat_n(Label::Real, spec.real_count))
        .collect();
    labels.shuffle(&mut rng);

    let (r, ci, ct) = (spec.regions, spec.image_channels, spec.text_channels);
    let records = labels
        .into_iter()
        .enumerate()
        .map(|(idx, label)| {
            let mut image = noise(&mut rng, r * ci, spec.noise_scale);
            let m = rng.random_range(spec.min_tokens..=spec.max_tokens);
            let mut text = noise(&mut rng, m * ct, spec.noise_scale);
            if label == Label::Fake {
                let cluster = rng.random_range(0..spec.view_clusters);
                for row in spec.cluster_rows(cluster) {
                    for (x, u) in image[row * ci..(row + 1) * ci].iter_mut().zip(&u_img) {
                        *x += spec.signal_strength * u;
                    }
                }
                let mut rows: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.5)).collect();
                if rows.is_empty() {
                    rows.push(rng.random_range(0..m));
                }
                for row in rows {
                    for (x, u) in text[row * ct..(row + 1) * ct].iter_mut().zip(&u_txt) {
                        *x += spec.signal_strength * u;
                    }
                }
            }
            quantize(&mut image);
            quantize(&mut text);
            FeatureRecord {
                id: format!("synth-{idx:05}"),
                label,
                image_features: Tensor::new(vec![r, ci], image).expect("image shape"),
                text_features: Tensor::new(vec![m, ct], text).expect("text shape"),
            }
        })
        .collect();

    Fixture {
        regions: r,
        image_channels: ci,
        text_channels: ct,
        records,
    }
}
