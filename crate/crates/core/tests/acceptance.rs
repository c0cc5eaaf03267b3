//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use mvir_core::ablation::{run_sweep, SweepAxis};
use mvir_core::autodiff::{grad_check, Tape, Tensor, Var, DEFAULT_STEP};
use mvir_core::checkpoint::model_bytes;
use mvir_core::config::{
    DecisionRule, ModelConfig, PyramidConfig, PyramidEntry, RunConfig, ScoreAxis,
};
use mvir_core::data::{synth_generate, SplitDataset};
use mvir_core::metrics::{
    compute_metrics, metrics_csv, MetricsReport, CSV_HEADER, DEFAULT_THRESHOLD,
};
use mvir_core::model::MvirModel;
use mvir_core::mva::{decide, decide_values};
use mvir_core::mvff::scaled_dot_attention;
use mvir_core::mvr::{compute_summary, compute_view_scores, ViewScoreMatrix};
use mvir_core::nn::{Binding, Dropout};
use mvir_core::optim::AdaBeliefState;
use mvir_core::train::{evaluate, train};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_config(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    RunConfig::load(path).expect("shipped config")
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let mut t = random_tensor(rng, shape);
    t.data_mut().iter_mut().for_each(|v| *v *= scale);
    t
}

/// Reduces any output to a scalar through fixed random weights so every
/// output element carries a distinct upstream gradient.
fn weighted_total(tape: &mut Tape, out: Var, seed: u64) -> mvir_core::Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &shape);
    let wv = tape.constant(w);
    let prod = tape.mul(out, wv)?;
    Ok(tape.sum_all(prod))
}

type OpGraph = Box<dyn Fn(&mut Tape, &[Var]) -> mvir_core::Result<Var>>;

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, OpGraph, Vec<Tensor>)> {
    let mut r = |shape: &[usize]| random_tensor(rng, shape);
    let away_from_zero = {
        let mut t = r(&[3, 4]);
        t.data_mut().iter_mut().for_each(|v| *v += v.signum() * 0.2);
        t
    };
    let distinct = Tensor::new(vec![2, 3], vec![0.3, -0.7, 1.1, 0.2, 0.9, -0.4]).unwrap();
    let mask = vec![2.0, 0.0, 2.0, 2.0, 0.0, 2.0, 0.0, 2.0, 2.0, 2.0, 2.0, 0.0];
    let prob = Tensor::scalar(0.37);
    vec![
        (
            "matmul",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.matmul(v[0], v[1])?;
                weighted_total(t, o, 1)
            }),
            vec![r(&[3, 4]), r(&[4, 2])],
        ),
        (
            "transpose",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.transpose(v[0])?;
                weighted_total(t, o, 2)
            }),
            vec![r(&[3, 4])],
        ),
        (
            "add",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.add(v[0], v[1])?;
                weighted_total(t, o, 3)
            }),
            vec![r(&[3, 4]), r(&[3, 4])],
        ),
        (
            "add_n",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.add_n(v)?;
                weighted_total(t, o, 4)
            }),
            vec![r(&[2, 3]), r(&[2, 3]), r(&[2, 3])],
        ),
        (
            "add_row",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.add_row(v[0], v[1])?;
                weighted_total(t, o, 5)
            }),
            vec![r(&[3, 4]), r(&[4])],
        ),
        (
            "linear",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.linear(v[0], v[1], v[2])?;
                weighted_total(t, o, 6)
            }),
            vec![r(&[3, 4]), r(&[4, 5]), r(&[5])],
        ),
        (
            "mul",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.mul(v[0], v[1])?;
                weighted_total(t, o, 7)
            }),
            vec![r(&[3, 4]), r(&[3, 4])],
        ),
        (
            "scale",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.scale(v[0], -1.7);
                weighted_total(t, o, 8)
            }),
            vec![r(&[3, 4])],
        ),
        (
            "add_scalar",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.add_scalar(v[0], 0.4);
                let sq = t.mul(o, o)?;
                weighted_total(t, sq, 9)
            }),
            vec![r(&[3, 4])],
        ),
        (
            "relu",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.relu(v[0]);
                weighted_total(t, o, 10)
            }),
            vec![away_from_zero],
        ),
        (
            "softmax_rows",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.softmax(v[0], 1)?;
                weighted_total(t, o, 11)
            }),
            vec![r(&[3, 4])],
        ),
        (
            "softmax_cols",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.softmax(v[0], 0)?;
                weighted_total(t, o, 12)
            }),
            vec![r(&[3, 4])],
        ),
        (
            "layer_norm",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.layer_norm(v[0], v[1], v[2])?;
                weighted_total(t, o, 13)
            }),
            vec![r(&[3, 5]), r(&[5]), r(&[5])],
        ),
        (
            "concat_rows",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.concat(v, 0)?;
                weighted_total(t, o, 14)
            }),
            vec![r(&[2, 3]), r(&[1, 3])],
        ),
        (
            "concat_cols",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.concat(v, 1)?;
                weighted_total(t, o, 15)
            }),
            vec![r(&[2, 3]), r(&[2, 2])],
        ),
        (
            "narrow",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.narrow(v[0], 1, 1, 2)?;
                weighted_total(t, o, 16)
            }),
            vec![r(&[3, 4])],
        ),
        (
            "dilated_conv1d",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.dilated_conv1d(v[0], v[1], v[2], 2)?;
                weighted_total(t, o, 17)
            }),
            vec![r(&[5, 3]), r(&[3, 3, 2]), r(&[2])],
        ),
        (
            "dropout",
            Box::new(move |t: &mut Tape, v: &[Var]| {
                let o = t.dropout_with_mask(v[0], mask.clone())?;
                weighted_total(t, o, 18)
            }),
            vec![r(&[3, 4])],
        ),
        (
            "sum_all",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum_all(sq))
            }),
            vec![r(&[3, 4])],
        ),
        (
            "mean_all",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.mean_all(sq))
            }),
            vec![r(&[3, 4])],
        ),
        (
            "mean_rows",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.mean_rows(v[0])?;
                weighted_total(t, o, 19)
            }),
            vec![r(&[3, 4])],
        ),
        (
            "repeat_rows",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.repeat_rows(v[0], 3)?;
                weighted_total(t, o, 20)
            }),
            vec![r(&[1, 4])],
        ),
        (
            "max_all",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let m = t.max_all(v[0]);
                Ok(t.scale(m, 2.5))
            }),
            vec![distinct],
        ),
        (
            "bce_fake",
            Box::new(|t: &mut Tape, v: &[Var]| t.bce(v[0], 1.0)),
            vec![prob.clone()],
        ),
        (
            "bce_real",
            Box::new(|t: &mut Tape, v: &[Var]| t.bce(v[0], 0.0)),
            vec![prob],
        ),
    ]
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst_op = ("", 0.0f64);
    for (name, graph, params) in op_cases(&mut rng) {
        let report =
            grad_check(graph, &params, DEFAULT_STEP).map_err(|e| format!("{name}: {e}"))?;
        if report.max_rel_error > worst_op.1 {
            worst_op = (name, report.max_rel_error);
        }
    }

    let config = ModelConfig {
        decision: DecisionRule::Average,
        ..ModelConfig::tiny(5, 6)
    };
    let model = MvirModel::new(config, 11).map_err(|e| e.to_string())?;
    let rec = random_record(12, 3, 4, 5, 6);
    let f = |tape: &mut Tape, vars: &[Var]| {
        let bind = Binding::from_vars(vars.to_vec());
        let out = model.forward_with(tape, &bind, &rec, &mut Dropout::eval())?;
        tape.bce(out.fake_prob, 1.0)
    };
    let full = grad_check(f, model.store.tensors(), DEFAULT_STEP).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        full.max_rel_error < 1e-4 && worst_op.1 < 1e-6 && secs < 60.0,
        format!(
            "full model max_rel {:.2e} over {} elements (< 1e-4); worst op {} {:.2e} (< 1e-6); {secs:.1}s (< 60s)",
            full.max_rel_error, full.elements_checked, worst_op.0, worst_op.1
        ),
    )
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut worst = [0.0f64; 3];
    for draw in 0..10_000u64 {
        let r = rng.random_range(1..=12);
        let n = rng.random_range(1..=8);
        let c = rng.random_range(1..=6);
        let scale = [0.1, 1.0, 10.0][rng.random_range(0..3)];
        let scores = compute_view_scores(
            &rand_tensor(&mut rng, &[r, c], scale),
            &rand_tensor(&mut rng, &[c, n], scale),
            &rand_tensor(&mut rng, &[n], scale),
            ScoreAxis::Regions,
        )
        .map_err(|e| e.to_string())?;
        for s in scores.column_sums() {
            worst[0] = worst[0].max((s - 1.0).abs());
        }

        let (q_rows, k_rows, dh) = (
            rng.random_range(1..=8),
            rng.random_range(1..=8),
            rng.random_range(1..=6),
        );
        let mut tape = Tape::new();
        let q = tape.constant(rand_tensor(&mut rng, &[q_rows, dh], scale));
        let k = tape.constant(rand_tensor(&mut rng, &[k_rows, dh], scale));
        let v = tape.constant(rand_tensor(&mut rng, &[k_rows, dh], 1.0));
        let att = scaled_dot_attention(&mut tape, q, k, v).map_err(|e| e.to_string())?;
        for row in to_mat(tape.value(att.weights)) {
            worst[1] = worst[1].max((row.iter().sum::<f64>() - 1.0).abs());
        }

        if draw % 10 == 0 {
            let cfg = ModelConfig {
                views: n,
                ..ModelConfig::tiny(3, 4)
            };
            let model = MvirModel::new(cfg, draw).map_err(|e| e.to_string())?;
            let mut rec = random_record(draw, r, rng.random_range(1..=6), 3, 4);
            rec.image_features
                .data_mut()
                .iter_mut()
                .for_each(|x| *x *= scale);
            let out = model.forward(&rec).map_err(|e| e.to_string())?;
            for row in to_mat(&out.per_view_probs) {
                worst[2] = worst[2].max((row.iter().sum::<f64>() - 1.0).abs());
            }
        } else {
            let mut tape = Tape::new();
            let logits = tape.constant(rand_tensor(&mut rng, &[n, 2], scale * 5.0));
            let probs = tape.softmax(logits, 1).map_err(|e| e.to_string())?;
            for row in to_mat(tape.value(probs)) {
                worst[2] = worst[2].max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    check(
        worst.iter().all(|&w| w <= 1e-9),
        format!(
            "10000 draws; max |sum-1|: view scores {:.1e}, attention {:.1e}, decision rows {:.1e} (<= 1e-9)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn integer_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-5i32..=5) as f64).collect(),
    )
    .unwrap()
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut conv_mismatch = 0;
    for _ in 0..500 {
        let len = rng.random_range(1..=12);
        let (w, dil) = ([1, 3, 5][rng.random_range(0..3)], rng.random_range(1..=4));
        let (ci, co) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let x = integer_tensor(&mut rng, &[len, ci]);
        let kernel = integer_tensor(&mut rng, &[w, ci, co]);
        let bias = integer_tensor(&mut rng, &[co]);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.leaf(&x), tape.leaf(&kernel), tape.leaf(&bias));
        let out = tape
            .dilated_conv1d(xv, kv, bv, dil)
            .map_err(|e| e.to_string())?;
        if to_mat(tape.value(out)) != naive_conv(&to_mat(&x), &kernel, bias.data(), dil) {
            conv_mismatch += 1;
        }
    }

    let mut summary_err = 0.0f64;
    for _ in 0..500 {
        let (r, n, d) = (
            rng.random_range(1..=12),
            rng.random_range(1..=8),
            rng.random_range(1..=8),
        );
        let v = random_tensor(&mut rng, &[r, d]);
        let mut scores = random_tensor(&mut rng, &[r, n]);
        scores.data_mut().iter_mut().for_each(|s| *s = s.abs());
        let out =
            compute_summary(&v, &ViewScoreMatrix(scores.clone())).map_err(|e| e.to_string())?;
        let oracle = weighted_sum(&to_mat(&v), &to_mat(&scores));
        for (a, b) in to_mat(&out.0).iter().flatten().zip(oracle.iter().flatten()) {
            summary_err = summary_err.max((a - b).abs());
        }
    }

    let single = PyramidConfig {
        entries: vec![PyramidEntry {
            width: 3,
            dilation: 1,
            channels: 4,
        }],
    };
    let mut forward_err = 0.0f64;
    for seed in 0..60u64 {
        let mut cfg = ModelConfig::tiny(5, 6);
        cfg.decision = DecisionRule::ALL[seed as usize % 3];
        if seed % 2 == 0 {
            cfg.pyramid = single.clone();
        }
        let model = MvirModel::new(cfg, 1000 + seed).map_err(|e| e.to_string())?;
        let rec = random_record(seed, 3, 4, 5, 6);
        let (table, y) = unrolled_forward(&model, &rec);
        let out = model.forward(&rec).map_err(|e| e.to_string())?;
        forward_err = forward_err.max((out.fake_prob - y).abs());
        for (a, b) in to_mat(&out.per_view_probs)
            .iter()
            .flatten()
            .zip(table.iter().flatten())
        {
            forward_err = forward_err.max((a - b).abs());
        }
    }
    check(
        conv_mismatch == 0 && summary_err < 1e-12 && forward_err < 1e-9,
        format!(
            "conv integer mismatches {conv_mismatch}/500 (exact); summarize {summary_err:.1e} (< 1e-12); \
             end-to-end |Δŷ| {forward_err:.1e} over 60 models, K=1 and K=2 (< 1e-9)"
        ),
    )
}

fn random_table(rng: &mut ChaCha8Rng) -> Mat {
    let n = rng.random_range(1..=12);
    let coarse = rng.random_bool(0.3);
    (0..n)
        .map(|_| {
            let fake: f64 = if coarse {
                rng.random_range(0..=4) as f64 / 4.0
            } else {
                rng.random_range(0.0..1.0)
            };
            vec![1.0 - fake, fake]
        })
        .collect()
}

fn decision_rules() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let table = random_table(&mut rng);
        let tensor = Tensor::from_rows(&table).unwrap();
        for rule in DecisionRule::ALL {
            let (y, view) = scan_decision(&table, rule);
            let eager = decide_values(&tensor, rule).map_err(|e| e.to_string())?;
            let mut tape = Tape::new();
            let p = tape.constant(tensor.clone());
            let out = decide(&mut tape, p, rule).map_err(|e| e.to_string())?;
            if eager.fake_prob != y || eager.verdict_view != view || tape.scalar(out) != y {
                mismatches += 1;
            }
        }
    }

    let mut violations = 0;
    for _ in 0..1000 {
        let table = random_table(&mut rng);
        let before =
            decide_values(&Tensor::from_rows(&table).unwrap(), DecisionRule::MaxFake).unwrap();
        let mut raised = table.clone();
        let i = rng.random_range(0..raised.len());
        let fake = raised[i][1] + rng.random_range(0.0..=1.0 - raised[i][1]);
        raised[i] = vec![1.0 - fake, fake];
        let after =
            decide_values(&Tensor::from_rows(&raised).unwrap(), DecisionRule::MaxFake).unwrap();
        if after.fake_prob < before.fake_prob {
            violations += 1;
        }
    }
    check(
        mismatches == 0 && violations == 0,
        format!("brute-force mismatches {mismatches}/3000 (exact); max_fake monotonicity violations {violations}/1000"),
    )
}

fn optimizer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let config = run_config("default.json").train.optimizer;
    let mut params = vec![
        random_tensor(&mut rng, &[3, 4]),
        random_tensor(&mut rng, &[5]),
    ];
    let mut state = AdaBeliefState::new(config, &params);
    let names = vec!["a".to_string(), "b".to_string()];
    let mut reference: Vec<(f64, ScalarAdaBelief)> = params
        .iter()
        .flat_map(|p| p.data().to_vec())
        .map(|v| {
            (
                v,
                ScalarAdaBelief {
                    m: 0.0,
                    s: 0.0,
                    t: 0,
                },
            )
        })
        .collect();
    let mut err = 0.0f64;
    for _ in 0..100 {
        let grads: Vec<Vec<f64>> = params
            .iter()
            .map(|p| {
                (0..p.numel())
                    .map(|_| rng.random_range(-2.0..2.0))
                    .collect()
            })
            .collect();
        state
            .step(&mut params, &grads, 1e-2, &names)
            .map_err(|e| e.to_string())?;
        for ((theta, r), g) in reference.iter_mut().zip(grads.iter().flatten()) {
            *theta = r.update(*theta, *g, 1e-2);
        }
        for (a, (b, _)) in params
            .iter()
            .flat_map(|p| p.data().to_vec())
            .zip(&reference)
        {
            err = err.max((a - b).abs());
        }
    }

    let mut theta = vec![Tensor::vector(vec![1.0])];
    let mut state = AdaBeliefState::new(config, &theta);
    for _ in 0..200 {
        let g = vec![vec![2.0 * theta[0].data()[0]]];
        state
            .step(&mut theta, &g, 0.1, &["theta".to_string()])
            .map_err(|e| e.to_string())?;
    }
    let last = theta[0].data()[0].abs();
    check(
        err < 1e-12 && last < 1e-2,
        format!("100-step reference max |Δθ| {err:.1e} (< 1e-12); quadratic |θ_200| {last:.2e} (< 1e-2)"),
    )
}

fn desk_learning() -> Outcome {
    let start = Instant::now();
    let cfg = run_config("desk.json");
    let fixture = synth_generate(&cfg.synth);
    let ds = SplitDataset::split(&fixture, cfg.data.split_seed, cfg.data.ratios)
        .map_err(|e| e.to_string())?;
    let out = train(&ds, &cfg.model, &cfg.train).map_err(|e| e.to_string())?;
    let best = out
        .log
        .iter()
        .filter_map(|e| e.val.as_ref().map(|m| m.accuracy))
        .fold(0.0, f64::max);

    let null_spec = cfg.synth.clone().with_strength(0.0);
    let null_ds = SplitDataset::split(
        &synth_generate(&null_spec),
        cfg.data.split_seed,
        cfg.data.ratios,
    )
    .map_err(|e| e.to_string())?;
    let null_model = train(&null_ds, &cfg.model, &cfg.train)
        .map_err(|e| e.to_string())?
        .model;
    let mut fresh = null_spec;
    fresh.seed += 1;
    fresh.fake_count = 200;
    fresh.real_count = 200;
    let (_, null_report) =
        evaluate(&null_model, &synth_generate(&fresh).records).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        best >= 0.95 && cfg.train.epochs <= 30 && (0.4..=0.6).contains(&null_report.accuracy) && secs < 600.0,
        format!(
            "best val accuracy {best:.4} in {} epochs (>= 0.95); strength-0 accuracy {:.4} on 400 fresh records \
             ([0.4, 0.6]); {secs:.1}s (< 600s)",
            cfg.train.epochs, null_report.accuracy
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = run_config("tiny.json");
    let run = || -> mvir_core::Result<(String, Vec<u8>, String)> {
        let fixture = synth_generate(&cfg.synth);
        let ds = SplitDataset::split(&fixture, cfg.data.split_seed, cfg.data.ratios)?;
        let out = train(&ds, &cfg.model, &cfg.train)?;
        let (_, report) = evaluate(&out.model, &ds.test)?;
        Ok((
            metrics_csv([("full", &report)]),
            model_bytes(&out.model),
            out.log_text(),
        ))
    };
    let a = run().map_err(|e| e.to_string())?;
    let b = run().map_err(|e| e.to_string())?;
    check(
        a == b,
        format!(
            "metrics CSV {} bytes, checkpoint {} bytes, log {} bytes; identical: {}",
            a.0.len(),
            a.1.len(),
            a.2.len(),
            a == b
        ),
    )
}

fn well_formed(csv: &str, axis: &str, values: &[usize]) -> bool {
    let lines: Vec<&str> = csv.lines().collect();
    if lines.first() != Some(&CSV_HEADER) || lines.len() != values.len() + 1 {
        return false;
    }
    lines[1..].iter().zip(values).all(|(line, v)| {
        let fields: Vec<&str> = line.split(',').collect();
        fields.len() == 8
            && fields[0] == format!("{axis}={v}")
            && fields[1..]
                .iter()
                .all(|f| f.parse::<f64>().is_ok_and(|x| (0.0..=1.0).contains(&x)))
    })
}

fn sweeps() -> Outcome {
    let cfg = run_config("tiny.json");
    let ds = SplitDataset::split(
        &synth_generate(&cfg.synth),
        cfg.data.split_seed,
        cfg.data.ratios,
    )
    .map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut detail = Vec::new();
    for (axis, values) in [
        (SweepAxis::Layers, vec![2, 3, 4]),
        (SweepAxis::Views, vec![2, 4, 8, 12]),
    ] {
        let table =
            run_sweep(&ds, &cfg.model, &cfg.train, axis, &values).map_err(|e| e.to_string())?;
        let good = well_formed(&table.to_csv(), axis.name(), &values);
        ok &= good;
        detail.push(format!("{} {:?} well-formed: {good}", axis.name(), values));
    }
    check(ok, detail.join("; "))
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=60);
        let preds: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.1) {
                    0.5
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        let labels: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        let got = compute_metrics(&preds, &labels, DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
        let (tp, fp, tn, fn_) = count_confusion(&preds, &labels, DEFAULT_THRESHOLD);
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let f1 = |tp: usize, fp: usize, fn_: usize| ratio(2 * tp, 2 * tp + fp + fn_);
        let exact = (got.tp, got.fp, got.tn, got.fn_) == (tp, fp, tn, fn_)
            && got.accuracy == (tp + tn) as f64 / n as f64
            && got.fake.precision == ratio(tp, tp + fp)
            && got.fake.recall == ratio(tp, tp + fn_)
            && got.real.precision == ratio(tn, tn + fn_)
            && got.real.recall == ratio(tn, tn + fp);
        let f1_close = (got.fake.f1 - f1(tp, fp, fn_)).abs() < 1e-12
            && (got.real.f1 - f1(tn, fn_, fp)).abs() < 1e-12;
        if !exact || !f1_close {
            mismatches += 1;
        }
    }
    let hand = MetricsReport::from_confusion(3, 1, 4, 2).map_err(|e| e.to_string())?;
    let row = hand.csv_row("hand");
    check(
        mismatches == 0 && row.starts_with("hand,0.7000,0.7500,0.6000,0.6667,"),
        format!("counting-oracle mismatches {mismatches}/1000; hand confusion row {row}"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("gradient fidelity", gradient_fidelity),
        ("normalization invariants", normalization),
        ("oracle equivalence", oracle_equivalence),
        ("decision-rule semantics", decision_rules),
        ("optimizer", optimizer),
        ("desk-scale learning", desk_learning),
        ("determinism", determinism),
        ("sweep machinery", sweeps),
        ("metrics", metrics),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
