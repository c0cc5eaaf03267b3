//! Independent reference implementations shared by the integration tests.
//! Everything here works on plain nested vectors and never touches the tape.

#![allow(dead_code)]

use std::collections::HashMap;

use mvir_core::autodiff::Tensor;
use mvir_core::config::{DecisionRule, PyramidConfig};
use mvir_core::data::{FeatureRecord, Label};
use mvir_core::model::MvirModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    let (r, _) = t.dims2().unwrap();
    (0..r).map(|i| t.row(i).to_vec()).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

pub fn random_record(seed: u64, r: usize, m: usize, ci: usize, ct: usize) -> FeatureRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureRecord {
        id: format!("rec{seed}"),
        label: if seed.is_multiple_of(2) {
            Label::Fake
        } else {
            Label::Real
        },
        image_features: random_tensor(&mut rng, &[r, ci]),
        text_features: random_tensor(&mut rng, &[m, ct]),
    }
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let inner = b.len();
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

fn transpose(a: &Mat) -> Mat {
    (0..a[0].len())
        .map(|j| a.iter().map(|row| row[j]).collect())
        .collect()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn softmax_rows(a: &Mat) -> Mat {
    a.iter().map(|r| softmax(r)).collect()
}

fn affine(x: &Mat, w: &Tensor, b: &Tensor) -> Mat {
    let mut out = matmul(x, &to_mat(w));
    for row in &mut out {
        for (o, bias) in row.iter_mut().zip(b.data()) {
            *o += bias;
        }
    }
    out
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

fn relu(a: &Mat) -> Mat {
    a.iter()
        .map(|r| r.iter().map(|v| v.max(0.0)).collect())
        .collect()
}

fn layer_norm(a: &Mat, gain: &Tensor, shift: &Tensor) -> Mat {
    a.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * gain.data()[j] + shift.data()[j])
                .collect()
        })
        .collect()
}

fn columns(a: &Mat, start: usize, len: usize) -> Mat {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

/// Sliding-window convolution with zero padding, reading the kernel as `[tap][c_in][c_out]`.
pub fn naive_conv(x: &Mat, kernel: &Tensor, bias: &[f64], dilation: usize) -> Mat {
    let (w, c_in, c_out) = match kernel.shape() {
        [w, ci, co] => (*w, *ci, *co),
        _ => panic!("kernel rank"),
    };
    let k = kernel.data();
    let len = x.len() as isize;
    let half = ((w - 1) / 2) as isize;
    (0..len)
        .map(|i| {
            (0..c_out)
                .map(|o| {
                    let mut acc = bias[o];
                    for tap in 0..w {
                        let src = i + (tap as isize - half) * dilation as isize;
                        if src < 0 || src >= len {
                            continue;
                        }
                        for c in 0..c_in {
                            acc += x[src as usize][c] * k[(tap * c_in + c) * c_out + o];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Per-view weighted sum of region rows: `out[n] = Σ_i s[i][n]·v[i]`.
pub fn weighted_sum(v: &Mat, scores: &Mat) -> Mat {
    let n = scores[0].len();
    (0..n)
        .map(|view| {
            (0..v[0].len())
                .map(|c| (0..v.len()).map(|i| scores[i][view] * v[i][c]).sum())
                .collect()
        })
        .collect()
}

fn pool(queries: &Mat, x: &Mat) -> Mat {
    let d = x[0].len() as f64;
    let logits: Mat = matmul(queries, &transpose(x))
        .into_iter()
        .map(|r| r.into_iter().map(|v| v / d.sqrt()).collect())
        .collect();
    matmul(&softmax_rows(&logits), x)
}

/// Brute-force scan of a per-view probability table.
pub fn scan_decision(table: &Mat, rule: DecisionRule) -> (f64, usize) {
    let mut best = 0;
    match rule {
        DecisionRule::MaxFake | DecisionRule::Average => {
            for i in 1..table.len() {
                if table[i][1] > table[best][1] {
                    best = i;
                }
            }
        }
        DecisionRule::MaxReal => {
            for i in 1..table.len() {
                if table[i][0] > table[best][0] {
                    best = i;
                }
            }
        }
    }
    let y = match rule {
        DecisionRule::MaxFake => table[best][1],
        DecisionRule::MaxReal => 1.0 - table[best][0],
        DecisionRule::Average => {
            let mut s = 0.0;
            for row in table {
                s += row[1];
            }
            s / table.len() as f64
        }
    };
    (y, best)
}

/// Hand-unrolled forward pass of a full-variant model with attention
/// aggregators and region-axis scores. Returns the per-view table and `ŷ`.
pub fn unrolled_forward(model: &MvirModel, record: &FeatureRecord) -> (Mat, f64) {
    let p: HashMap<&str, &Tensor> = model.store.iter().collect();
    let cfg = &model.config;
    let v = affine(
        &to_mat(&record.image_features),
        p["proj.image.weight"],
        p["proj.image.bias"],
    );
    let t = affine(
        &to_mat(&record.text_features),
        p["proj.text.weight"],
        p["proj.text.bias"],
    );

    let pyramid: &PyramidConfig = &cfg.pyramid;
    let mut features: Mat = vec![Vec::new(); v.len()];
    for (k, entry) in pyramid.entries.iter().enumerate() {
        let out = naive_conv(
            &v,
            p[format!("mvr.pyramid.{k}.kernel").as_str()],
            p[format!("mvr.pyramid.{k}.bias").as_str()].data(),
            entry.dilation,
        );
        for (row, o) in features.iter_mut().zip(out) {
            row.extend(o);
        }
    }
    let logits = affine(&features, p["mvr.scorer.weight"], p["mvr.scorer.bias"]);
    let scores = transpose(&softmax_rows(&transpose(&logits)));
    let mut x = weighted_sum(&v, &scores);

    let dh = cfg.d / cfg.heads;
    for l in 0..cfg.layers {
        let name = |s: &str| format!("mvff.{l}.{s}");
        let q = matmul(&x, &to_mat(p[name("wq").as_str()]));
        let k = matmul(&t, &to_mat(p[name("wk").as_str()]));
        let vv = matmul(&t, &to_mat(p[name("wv").as_str()]));
        let mut heads: Mat = vec![Vec::new(); x.len()];
        for h in 0..cfg.heads {
            let (qh, kh, vh) = (
                columns(&q, h * dh, dh),
                columns(&k, h * dh, dh),
                columns(&vv, h * dh, dh),
            );
            let att: Mat = matmul(&qh, &transpose(&kh))
                .into_iter()
                .map(|r| r.into_iter().map(|s| s / (dh as f64).sqrt()).collect())
                .collect();
            for (row, o) in heads.iter_mut().zip(matmul(&softmax_rows(&att), &vh)) {
                row.extend(o);
            }
        }
        let projected = matmul(&heads, &to_mat(p[name("wo").as_str()]));
        let a = layer_norm(
            &add(&projected, &x),
            p[name("ln1.gain").as_str()],
            p[name("ln1.shift").as_str()],
        );
        let hidden = relu(&affine(
            &a,
            p[name("ffn1.weight").as_str()],
            p[name("ffn1.bias").as_str()],
        ));
        let f = affine(
            &hidden,
            p[name("ffn2.weight").as_str()],
            p[name("ffn2.bias").as_str()],
        );
        x = layer_norm(
            &add(&f, &a),
            p[name("ln2.gain").as_str()],
            p[name("ln2.shift").as_str()],
        );
    }

    let cues = pool(&to_mat(p["mva.view_queries"]), &x);
    let text = pool(&to_mat(p["mva.text_query"]), &t).remove(0);
    let table: Mat = cues
        .iter()
        .map(|cue| {
            let joint = vec![cue.iter().chain(&text).copied().collect::<Vec<f64>>()];
            let z = relu(&affine(&joint, p["mva.head.wf"], p["mva.head.bf"]));
            softmax(&affine(&z, p["mva.head.wl"], p["mva.head.bl"])[0])
        })
        .collect();
    let (y, _) = scan_decision(&table, cfg.decision);
    (table, y)
}

/// Per-item counting of the confusion matrix, fake positive, `ŷ ≥ threshold`.
pub fn count_confusion(
    preds: &[f64],
    labels: &[f64],
    threshold: f64,
) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for i in 0..preds.len() {
        let predicted_fake = preds[i] >= threshold;
        let is_fake = labels[i] == 1.0;
        if predicted_fake && is_fake {
            tp += 1;
        } else if predicted_fake {
            fp += 1;
        } else if is_fake {
            fn_ += 1;
        } else {
            tn += 1;
        }
    }
    (tp, fp, tn, fn_)
}

fn mean_pooled(r: &FeatureRecord) -> Vec<f64> {
    let mut f = Vec::new();
    for t in [&r.image_features, &r.text_features] {
        let (n, c) = t.dims2().unwrap();
        f.extend((0..c).map(|j| (0..n).map(|i| t.at2(i, j)).sum::<f64>() / n as f64));
    }
    f.push(1.0);
    f
}

/// Full-batch L2-regularized logistic regression on mean-pooled image and
/// text features; returns accuracy on `held_out`.
pub fn linear_probe(train: &[FeatureRecord], held_out: &[FeatureRecord]) -> f64 {
    let x: Vec<Vec<f64>> = train.iter().map(mean_pooled).collect();
    let y: Vec<f64> = train.iter().map(|r| r.label.as_f64()).collect();
    let mut w = vec![0.0; x[0].len()];
    for _ in 0..2000 {
        let mut g = vec![0.0; w.len()];
        for (xi, yi) in x.iter().zip(&y) {
            let z: f64 = xi.iter().zip(&w).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            for (gk, xk) in g.iter_mut().zip(xi) {
                *gk += (p - yi) * xk;
            }
        }
        for (wk, gk) in w.iter_mut().zip(&g) {
            *wk -= 0.5 * gk / x.len() as f64 + 1e-3 * *wk;
        }
    }
    let correct = held_out
        .iter()
        .filter(|r| {
            let z: f64 = mean_pooled(r).iter().zip(&w).map(|(a, b)| a * b).sum();
            (z >= 0.0) == (r.label == Label::Fake)
        })
        .count();
    correct as f64 / held_out.len() as f64
}

/// The pinned AdaBelief recurrence for one scalar, written out longhand.
pub struct ScalarAdaBelief {
    pub m: f64,
    pub s: f64,
    pub t: i32,
}

impl ScalarAdaBelief {
    pub fn update(&mut self, theta: f64, g: f64, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.s = b2 * self.s + (1.0 - b2) * (g - self.m) * (g - self.m) + eps;
        let m_hat = self.m / (1.0 - b1.powi(self.t));
        let s_hat = self.s / (1.0 - b2.powi(self.t));
        theta - lr * m_hat / (s_hat.sqrt() + eps)
    }
}
