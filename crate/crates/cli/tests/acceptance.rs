//! End-to-end acceptance checks. Each test prints one `criterion N ... PASS|FAIL`
//! line with the measured numbers before asserting.

use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use mcdbn::checkpoint::TrainedModel;
use mcdbn::data::{
    bars_and_stripes, impute_baseline, AlignedDataset, ImputeMethod, MinMaxScaler, Timestamp,
};
use mcdbn::dbn::{pretrain_greedy, DbnStack};
use mcdbn::decoders::DecoderKind;
use mcdbn::eval::{f1_accuracy, mape, movement_labels, rmse, ComparisonTable, Method, MAPE_EPS};
use mcdbn::fusion::{attention_dbn_weighted, multi_head_heads, FusionParams};
use mcdbn::numerics::layer_norm_rows;
use mcdbn::rbm::{cd_k_update, reconstruction_error, RbmParams, VisibleKind};
use mcdbn::training::{randomize, McDbn, TaskKind, TrainConfig};
use mcdbn::{Mask, Matrix, Rng};

fn report(n: u32, name: &str, pass: bool, detail: String) {
    println!(
        "criterion {n:>2} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} {name} failed: {detail}");
}

fn mcdbn(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_mcdbn"))
        .args(args)
        .env_remove("MCDBN_SEED")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "mcdbn {args:?} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn table(out: &Output) -> ComparisonTable {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn within(elapsed: Duration, limit: u64) -> bool {
    elapsed < Duration::from_secs(limit)
}

#[test]
fn criterion_01_evaluate_is_deterministic() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "{}");
    let run = dir.path().join("run");
    mcdbn(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    let model = run.join("model.ckpt");
    let eval = || {
        mcdbn(&[
            "evaluate",
            "--config",
            &cfg,
            "--model",
            model.to_str().unwrap(),
        ])
        .stdout
    };
    let t0 = Instant::now();
    let (a, b) = (eval(), eval());
    let eval_time = t0.elapsed();
    let json: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let pass = a == b
        && json.get("seed").is_some()
        && json.get("config_hash").is_some()
        && within(eval_time, 60);
    report(
        1,
        "determinism",
        pass,
        format!(
            "identical={} evaluate x2 {:.1}s, with training {:.1}s",
            a == b,
            eval_time.as_secs_f64(),
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_gradient_suite() {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_mcdbn"))
        .arg("gradcheck")
        .env_remove("MCDBN_SEED")
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let errors: Vec<f64> = text
        .lines()
        .filter(|l| !l.starts_with("max"))
        .filter_map(|l| l.split_whitespace().nth(1)?.parse().ok())
        .collect();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let pass =
        out.status.success() && errors.len() >= 7 && worst <= 1e-4 && within(start.elapsed(), 120);
    report(
        2,
        "gradient suite",
        pass,
        format!(
            "{} paths, max relative error {worst:.2e}, {:.1}s",
            errors.len(),
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_03_rbm_learning() {
    let start = Instant::now();
    let data = bars_and_stripes(3);
    let mut rng = Rng::new(1);
    let mut params = RbmParams::new(9, 8, VisibleKind::BernoulliProb, &mut rng);
    let initial = reconstruction_error(&params, &data).unwrap();
    for _ in 0..2000 {
        params = cd_k_update(&params, &data, 1, 0.1, &mut rng).unwrap().0;
    }
    let last = reconstruction_error(&params, &data).unwrap();
    let pass = last <= 0.5 * initial && within(start.elapsed(), 60);
    report(
        3,
        "rbm learning",
        pass,
        format!("recon error {initial:.4} -> {last:.4}"),
    );
}

#[test]
fn criterion_04_dbn_pretraining() {
    let start = Instant::now();
    let data = bars_and_stripes(3);
    let mut rng = Rng::new(1);
    let stack = DbnStack::new(&[9, 8, 4], VisibleKind::BernoulliProb, &mut rng).unwrap();
    let (_, traces) = pretrain_greedy(&stack, &data, 2000, 0.1, 1, &mut rng).unwrap();
    let pass = traces.len() == 2
        && traces.iter().all(|t| t.last < t.initial)
        && within(start.elapsed(), 60);
    let detail = traces
        .iter()
        .enumerate()
        .map(|(i, t)| format!("layer {i} {:.4} -> {:.4}", t.initial, t.last))
        .collect::<Vec<_>>()
        .join(", ");
    report(4, "dbn pretraining", pass, detail);
}

#[test]
fn criterion_05_metric_examples() {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    check(
        "rmse identical",
        rmse(&[1.5, -2.0], &[1.5, -2.0]).unwrap() == 0.0,
    );
    check(
        "rmse hand",
        close(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt()),
    );
    check("rmse single", close(rmse(&[2.0], &[-0.5]).unwrap(), 2.5));
    check(
        "mape identical",
        mape(&[1.0, 2.0], &[1.0, 2.0], MAPE_EPS).unwrap().value == 0.0,
    );
    check(
        "mape hand",
        close(mape(&[2.0, 2.0], &[1.0, 2.0], MAPE_EPS).unwrap().value, 0.5),
    );
    let m = mape(&[1.0, 2.0], &[0.0, 4.0], MAPE_EPS).unwrap();
    check("mape exclusion", m.excluded == 1 && close(m.value, 0.5));
    check(
        "f1 perfect",
        f1_accuracy(&[0, 1, 1], &[0, 1, 1], 2).unwrap() == (1.0, 1.0),
    );
    let (f1, acc) = f1_accuracy(&[1, 1, 1, 0], &[1, 1, 0, 1], 2).unwrap();
    check("f1 hand", close(f1, 2.0 / 3.0) && close(acc, 0.5));
    check(
        "f1 one class",
        close(f1_accuracy(&[1, 1, 1, 1], &[0, 1, 0, 1], 2).unwrap().1, 0.5),
    );
    check(
        "movement increasing",
        movement_labels(&[1.0, 2.0, 5.0]).unwrap() == [1, 1],
    );
    check(
        "movement constant",
        movement_labels(&[2.0, 2.0, 2.0]).unwrap() == [1, 1],
    );
    check(
        "movement hand",
        movement_labels(&[3.0, 1.0, 2.0]).unwrap() == [0, 1],
    );
    report(
        5,
        "metric exactness",
        failures.is_empty(),
        format!("12 examples, failing: {failures:?}"),
    );
}

fn reference_fill(column: &[Option<f64>], method: ImputeMethod) -> Vec<f64> {
    let obs: Vec<f64> = column.iter().flatten().copied().collect();
    if obs.is_empty() {
        return vec![0.0; column.len()];
    }
    let mut mean = 0.0;
    for v in &obs {
        mean += v;
    }
    mean /= obs.len() as f64;
    (0..column.len())
        .map(|i| {
            if let Some(v) = column[i] {
                return v;
            }
            let prev = (0..i).rev().find_map(|j| column[j].map(|v| (j, v)));
            let next = (i + 1..column.len()).find_map(|j| column[j].map(|v| (j, v)));
            match method {
                ImputeMethod::Zero => 0.0,
                ImputeMethod::Mean => mean,
                ImputeMethod::Locf => prev.map_or(mean, |p| p.1),
                ImputeMethod::Nocb => next.map_or(mean, |n| n.1),
                ImputeMethod::Interp => match (prev, next) {
                    (Some((i0, v0)), Some((i1, v1))) => {
                        v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
                    }
                    (Some((_, v)), None) | (None, Some((_, v))) => v,
                    (None, None) => unreachable!(),
                },
                ImputeMethod::Rolling(w) => {
                    let before: Vec<f64> = column[..i].iter().flatten().copied().collect();
                    let tail = &before[before.len().saturating_sub(w)..];
                    if tail.is_empty() {
                        return mean;
                    }
                    let mut s = 0.0;
                    for v in tail {
                        s += v;
                    }
                    s / tail.len() as f64
                }
            }
        })
        .collect()
}

#[test]
fn criterion_06_imputer_oracle() {
    let start = Instant::now();
    let methods = [
        ImputeMethod::Zero,
        ImputeMethod::Locf,
        ImputeMethod::Nocb,
        ImputeMethod::Mean,
        ImputeMethod::Interp,
        ImputeMethod::Rolling(3),
    ];
    let mut rng = Rng::new(6);
    let mut mismatches = 0;
    for method in methods {
        for _ in 0..100 {
            let t = 1 + rng.below(40) as usize;
            let observed_rate = rng.uniform();
            let column: Vec<Option<f64>> = (0..t)
                .map(|_| (rng.uniform() < observed_rate).then(|| 10.0 * rng.gaussian()))
                .collect();
            let data = AlignedDataset {
                timestamps: (0..t as i64).map(Timestamp::Index).collect(),
                x: Matrix::from_fn(t, 1, |i, _| column[i].unwrap_or(0.0)),
                x_mask: Mask::from_vec(t, 1, column.iter().map(Option::is_some).collect()),
                y: Matrix::zeros(t, 1),
                y_mask: Mask::all(t, 1, true),
                x_names: vec!["a".into()],
                y_names: vec!["b".into()],
            };
            let got = impute_baseline(&data, method).unwrap().data.x.column(0);
            if got != reference_fill(&column, method) {
                mismatches += 1;
            }
        }
    }
    let pass = mismatches == 0 && within(start.elapsed(), 30);
    report(
        6,
        "imputer oracle",
        pass,
        format!("600 series, {mismatches} mismatches"),
    );
}

struct Scores {
    rmse: Vec<f64>,
    f1: Vec<f64>,
}

fn scores(table: &ComparisonTable, method: &str) -> Scores {
    let runs = table.runs(&method.parse::<Method>().unwrap().label());
    Scores {
        rmse: runs.iter().filter_map(|r| r.metrics.rmse).collect(),
        f1: runs.iter().map(|r| r.metrics.f1).collect(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_07_regression_benchmark() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#"{"methods": ["zero", "mean", "mcdbn"]}"#);
    let t = table(&mcdbn(&["evaluate", "--config", &cfg]));
    let elapsed = start.elapsed();
    let (mc, zero, mean_fill) = (scores(&t, "mcdbn"), scores(&t, "zero"), scores(&t, "mean"));
    let n = mc.rmse.len();
    let wins = (0..n)
        .filter(|&i| {
            mc.rmse[i] < zero.rmse[i].min(mean_fill.rmse[i])
                && mc.f1[i] > zero.f1[i].max(mean_fill.f1[i])
        })
        .count();
    let rmse_wins = (0..n)
        .filter(|&i| mc.rmse[i] < zero.rmse[i].min(mean_fill.rmse[i]))
        .count();
    let f1_wins = (0..n)
        .filter(|&i| mc.f1[i] > zero.f1[i].max(mean_fill.f1[i]))
        .count();
    let means_ok = mean(&mc.rmse) < mean(&zero.rmse).min(mean(&mean_fill.rmse))
        && mean(&mc.f1) > mean(&zero.f1).max(mean(&mean_fill.f1));
    let pass = n == 10 && means_ok && wins >= 8 && within(elapsed, 600);
    report(
        7,
        "regression benchmark",
        pass,
        format!(
            "mean RMSE mcdbn {:.4} zero {:.4} mean {:.4}; mean F1 mcdbn {:.4} zero {:.4} mean {:.4}; \
             instruments with both orderings {wins}/{n} (RMSE {rmse_wins}, F1 {f1_wins}); {:.0}s",
            mean(&mc.rmse),
            mean(&zero.rmse),
            mean(&mean_fill.rmse),
            mean(&mc.f1),
            mean(&zero.f1),
            mean(&mean_fill.f1),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_08_classification_benchmark() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        r#"{"train": {"task": "classification"}, "methods": ["mean", "mcdbn"]}"#,
    );
    let t = table(&mcdbn(&["evaluate", "--config", &cfg]));
    let elapsed = start.elapsed();
    let (mc, mean_fill) = (scores(&t, "mcdbn"), scores(&t, "mean"));
    let n = mc.f1.len();
    let wins = (0..n).filter(|&i| mc.f1[i] >= mean_fill.f1[i]).count();
    let pass = n == 10 && wins >= 8 && within(elapsed, 600);
    report(
        8,
        "classification benchmark",
        pass,
        format!(
            "F1 >= mean fill on {wins}/{n}; mean F1 mcdbn {:.4} mean fill {:.4}; {:.0}s",
            mean(&mc.f1),
            mean(&mean_fill.f1),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_09_loss_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "{}");
    let t = table(&mcdbn(&["ablate", "--which", "loss", "--config", &cfg]));
    let completion = |name: &str| -> Vec<f64> {
        t.runs(name)
            .iter()
            .map(|r| r.completion_rmse.unwrap())
            .collect()
    };
    let (both, y_only, x_only) = (
        completion("L_modal_x + L_modal_y"),
        completion("L_modal_y"),
        completion("L_modal_x"),
    );
    let n = both.len();
    let wins = (0..n)
        .filter(|&i| both[i] <= y_only[i] && both[i] <= x_only[i])
        .count();
    report(
        9,
        "loss ablation",
        n == 10 && wins >= 7,
        format!(
            "both <= each single-loss variant on {wins}/{n}; mean masked RMSE both {:.4}, y only {:.4}, x only {:.4}",
            mean(&both),
            mean(&y_only),
            mean(&x_only)
        ),
    );
}

#[test]
fn criterion_10_decoder_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "{}");
    let t = table(&mcdbn(&["ablate", "--which", "decoder", "--config", &cfg]));
    let names: Vec<&str> = t.summary.iter().map(|r| r.method.as_str()).collect();
    let expected = [
        "Both Linear",
        "Only Transformer",
        "Only LSTM",
        "LSTM + Transformer",
    ];
    let well_formed = t.summary.iter().all(|r| {
        r.instruments == 10
            && r.rmse.is_some_and(f64::is_finite)
            && r.f1.is_finite()
            && r.accuracy.is_finite()
    }) && t.detail.len() == 40;
    let rows = t
        .summary
        .iter()
        .map(|r| format!("{} RMSE {:.4}", r.method, r.rmse.unwrap_or(f64::NAN)))
        .collect::<Vec<_>>()
        .join("; ");
    report(
        10,
        "decoder ablation",
        names == expected && well_formed,
        rows,
    );
}

#[test]
fn criterion_11_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(11);
    let kinds = [
        DecoderKind::Linear,
        DecoderKind::Lstm,
        DecoderKind::Transformer,
    ];
    let mut identical = 0;
    for n in 0..100 {
        let cfg = TrainConfig {
            task: if n % 2 == 0 {
                TaskKind::Regression
            } else {
                TaskKind::Classification
            },
            hidden_sizes: (0..1 + rng.below(2))
                .map(|_| 1 + rng.below(6) as usize)
                .collect(),
            decoder_x: kinds[rng.below(3) as usize],
            decoder_y: kinds[rng.below(3) as usize],
            d_decoder: 4,
            decoder_heads: 2,
            heads: 2,
            d_k: 2,
            d_fusion: 3,
            seed: n,
            ..TrainConfig::default()
        };
        let (d_x, d_y) = (1 + rng.below(5) as usize, 1 + rng.below(5) as usize);
        let mut model = McDbn::new(&cfg, d_x, d_y, 2 + rng.below(4) as usize, &mut rng).unwrap();
        randomize(&mut model, 1.0, &mut rng);
        let scaler = |d: usize, rng: &mut Rng| {
            let min: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
            MinMaxScaler {
                max: min.iter().map(|m| m + 1.0 + rng.uniform()).collect(),
                min,
            }
        };
        let trained = TrainedModel {
            model,
            scaler_x: scaler(d_x, &mut rng),
            scaler_y: scaler(d_y, &mut rng),
        };
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        trained.save(&a).unwrap();
        TrainedModel::load(&a, &cfg).unwrap().save(&b).unwrap();
        if std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap() {
            identical += 1;
        }
    }
    report(
        11,
        "checkpoint round trip",
        identical == 100,
        format!("{identical}/100 byte-identical"),
    );
}

#[test]
fn criterion_12_attention_invariants() {
    let mut rng = Rng::new(12);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let t = 1 + rng.below(8) as usize;
        let heads = 1 + rng.below(3) as usize;
        let d_k = 1 + rng.below(4) as usize;
        let params = FusionParams::new(heads * d_k, heads, d_k, 3, 4, &mut rng).unwrap();
        let complete = Matrix::randn(t, heads * d_k, 3.0, &mut rng);
        let missing = Matrix::randn(t, heads * d_k, 3.0, &mut rng);
        let (_, weights) = multi_head_heads(&complete, &missing, &params).unwrap();
        for w in &weights {
            for i in 0..w.rows() {
                worst = worst.max((w.row(i).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    let v = Matrix::randn(5, 3, 2.0, &mut rng);
    let k = Matrix::randn(5, 4, 1.0, &mut rng);
    let (out, _) = attention_dbn_weighted(&Matrix::zeros(3, 4), &k, &v, 1e-5).unwrap();
    let col_mean = layer_norm_rows(&v, 1e-5).mean_rows();
    let symmetry = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| (out[(i, j)] - col_mean[(0, j)]).abs())
        .fold(0.0, f64::max);
    report(
        12,
        "attention invariants",
        worst <= 1e-12 && symmetry <= 1e-12,
        format!("max row-sum deviation {worst:.1e} over 1000 evaluations, uniform-score deviation {symmetry:.1e}"),
    );
}
