//! Acceptance suite: one PASS/FAIL line per criterion, written straight to
//! stderr so it shows up even when test output is captured.

mod common;

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use scoreq_cli::protocol::{run_protocol, summarize, ProtocolConfig};
use scoreq_core::eval::{
    average_ranks, bootstrap_compare, nmi, pearson, rmse_mapped, spearman, BootstrapConfig,
};
use scoreq_core::loss::{
    adaptive_grad_condition, scoreq_adaptive, scoreq_fixed, scoreq_on_graph, triplet_list_on_graph,
    MarginMode, MarginSpec, Reduction, SignMode, TripletMask,
};
use scoreq_core::model::{Batch, EncoderConfig, ModelParams, Trainable};
use scoreq_core::numerics::{finite_diff_check, Graph, Matrix, Parameter, Var};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn report(id: u32, name: &str, v: &Verdict) {
    let status = if v.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id:>2} [{name}]: {status} ({})", v.detail);
}

fn naive_valid(y: &[f64], i: usize, j: usize, k: usize) -> bool {
    i != j && j != k && i != k && (y[i] - y[j]).abs() < (y[i] - y[k]).abs()
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    if rng.random_bool(0.5) {
        // coarse grid so ties are common
        (0..n).map(|_| 1.0 + 0.5 * rng.random_range(0..9) as f64).collect()
    } else {
        (0..n).map(|_| rng.random_range(1.0..5.0)).collect()
    }
}

fn c1_mask() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    let mut ties = 0;
    for _ in 0..100 {
        let n = rng.random_range(3..=12);
        let y = random_labels(&mut rng, n);
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            ties += 1;
        }
        let m = TripletMask::build(&y).unwrap();
        let mut count = 0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let want = naive_valid(&y, i, j, k);
                    count += want as usize;
                    if m.get(i, j, k) != want {
                        mismatches += 1;
                    }
                }
            }
        }
        if m.count() != count {
            mismatches += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        mismatches == 0 && ties > 0 && secs < 5.0,
        format!("{mismatches} mismatches over 100 vectors ({ties} with ties), {secs:.3}s"),
    )
}

fn brute_loss(z: &Matrix, y: &[f64], spec: &MarginSpec, reduction: Reduction) -> f64 {
    let n = y.len();
    let d = |a: usize, b: usize| {
        z.row(a)
            .iter()
            .zip(z.row(b))
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt()
    };
    let (mut sum, mut active) = (0.0, 0usize);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if !naive_valid(y, i, j, k) {
                    continue;
                }
                let gap = (y[i] - y[k]).abs() - (y[i] - y[j]).abs();
                let margin = match (spec.mode, spec.sign_mode) {
                    (MarginMode::Fixed, _) => spec.m,
                    (_, SignMode::Intuitive) => gap / spec.kappa,
                    (_, SignMode::Literal) => -gap / spec.kappa,
                };
                let t = d(i, j) - d(i, k) + margin;
                if t > 0.0 {
                    sum += t;
                    active += 1;
                }
            }
        }
    }
    match reduction {
        Reduction::Sum => sum,
        Reduction::MeanActive if active > 0 => sum / active as f64,
        Reduction::MeanActive => 0.0,
    }
}

fn c2_loss() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for _ in 0..50 {
        let n = rng.random_range(3..=8);
        let dim = rng.random_range(1..=4);
        let y = random_labels(&mut rng, n);
        let z = Matrix::from_vec(n, dim, (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        for reduction in [Reduction::MeanActive, Reduction::Sum] {
            let fixed = MarginSpec::fixed(0.2);
            let got = scoreq_fixed(&z, &y, &fixed, reduction).unwrap().value;
            worst = worst.max((got - brute_loss(&z, &y, &fixed, reduction)).abs());
            checks += 1;
            for sign in [SignMode::Intuitive, SignMode::Literal] {
                let spec = MarginSpec::adaptive(4.0).with_sign_mode(sign);
                let got = scoreq_adaptive(&z, &y, &spec, reduction).unwrap().value;
                worst = worst.max((got - brute_loss(&z, &y, &spec, reduction)).abs());
                checks += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-10 && secs < 10.0,
        format!("max |diff| {worst:.2e} over {checks} evaluations, {secs:.3}s"),
    )
}

enum Objective {
    Fixed,
    Adaptive,
    L2,
}

fn model_loss(m: &ModelParams, batch: &Batch, y: &[f64], obj: &Objective) -> scoreq_core::Result<f64> {
    let mut g = Graph::new();
    let l = model_graph(m, &mut g, batch, y, obj)?;
    Ok(g.value(l)[(0, 0)])
}

fn model_graph(
    m: &ModelParams,
    g: &mut Graph,
    batch: &Batch,
    y: &[f64],
    obj: &Objective,
) -> scoreq_core::Result<Var> {
    let l2 = matches!(obj, Objective::L2);
    let f = m.forward(g, batch, Trainable::ALL, !l2, l2)?;
    let l = match obj {
        Objective::Fixed => scoreq_on_graph(g, f.z.unwrap(), y, &MarginSpec::fixed(0.2), Reduction::MeanActive)?.0,
        Objective::Adaptive => {
            scoreq_on_graph(g, f.z.unwrap(), y, &MarginSpec::adaptive(4.0), Reduction::MeanActive)?.0
        }
        Objective::L2 => g.mse(f.mos.unwrap(), Matrix::column_vector(y))?,
    };
    Ok(l)
}

fn c3_gradients() -> Verdict {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let n = rng.random_range(4..=6);
        let seqs: Vec<Matrix> = (0..n)
            .map(|_| {
                let t = rng.random_range(2..=4);
                Matrix::from_vec(t, 3, (0..t * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
        let batch = Batch::from_sequences(&seqs).unwrap();
        let config = EncoderConfig {
            input_dim: 3,
            hidden_dims: vec![5, 4],
            embed_dim: 3,
            mos_head: true,
        };
        let mut model = ModelParams::init(config.clone(), seed).unwrap();
        for p in model.params.iter_mut().filter(|p| p.name.ends_with("bias")) {
            p.value = p.value.map(|_| rng.random_range(0.05..0.2));
        }
        for obj in [Objective::Fixed, Objective::Adaptive, Objective::L2] {
            let mut m = model.clone();
            m.zero_grad();
            let mut g = Graph::new();
            let l = model_graph(&m, &mut g, &batch, &y, &obj).unwrap();
            g.backward(l).unwrap().accumulate_into(&mut m.params).unwrap();
            let err = finite_diff_check(&mut m.params, 1e-6, |params: &[Parameter]| {
                let probe = ModelParams {
                    config: config.clone(),
                    params: params.to_vec(),
                };
                model_loss(&probe, &batch, &y, &obj)
            })
            .unwrap();
            worst = worst.max(err);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let spec = MarginSpec::adaptive(4.0);
    let (mut mismatches, mut active) = (0, 0);
    for _ in 0..200 {
        let y = loop {
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(1.0..5.0)).collect();
            if naive_valid(&y, 0, 1, 2) {
                break y;
            }
        };
        let z = Matrix::from_vec(3, 2, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let predicted = adaptive_grad_condition(z.row(0), z.row(1), z.row(2), (y[0], y[1], y[2]), &spec);
        let mut params = [Parameter::new("z", z.clone())];
        let mut g = Graph::new();
        let zv = g.param(0, &z);
        let margin = spec.margin(y[0], y[1], y[2]);
        let (l, _) = triplet_list_on_graph(&mut g, zv, &[(0, 1, 2)], margin, Reduction::Sum).unwrap();
        g.backward(l).unwrap().accumulate_into(&mut params).unwrap();
        let nonzero = params[0].grad.data().iter().any(|v| *v != 0.0);
        active += nonzero as usize;
        if predicted != nonzero {
            mismatches += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && mismatches == 0 && secs < 60.0,
        format!(
            "max relative error {worst:.2e} over 50 configs x 3 objectives; grad condition {mismatches} mismatches on 200 triplets ({active} active); {secs:.2}s"
        ),
    )
}

fn c4_worked_example() -> Verdict {
    let y = [4.5, 2.0, 1.5];
    let m = TripletMask::build(&y).unwrap();
    let got: Vec<(usize, usize, usize)> = m.triplets().map(|(i, j, k)| (i + 1, j + 1, k + 1)).collect();
    let want = vec![(1, 2, 3), (2, 3, 1), (3, 2, 1)];
    verdict(got == want, format!("valid set (1-based) {got:?}"))
}

fn c8_statistics() -> Verdict {
    let t0 = Instant::now();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let sims = 500;
    let mut rejections = 0;
    for s in 0..sims {
        let mut rng = ChaCha8Rng::seed_from_u64(8_000 + s);
        let n = 150;
        let mos: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let a: Vec<f64> = mos.iter().map(|m| m + normal.sample(&mut rng)).collect();
        let b: Vec<f64> = mos.iter().map(|m| m + normal.sample(&mut rng)).collect();
        let r = bootstrap_compare(
            &mos,
            &a,
            &b,
            &BootstrapConfig {
                iterations: 2000,
                seed: s,
                ..Default::default()
            },
        )
        .unwrap();
        rejections += r.significant as usize;
    }
    let rate = rejections as f64 / sims as f64;
    let calibrated = (0.02..=0.08).contains(&rate);

    let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol;
    let a = [1.0, 2.0, 3.0, 4.0];
    let mut checks: Vec<(&str, bool)> = vec![
        ("pearson affine", close(pearson(&a, &a.map(|v| 2.0 * v + 1.0)).unwrap(), 1.0, 1e-12)),
        ("pearson negated", close(pearson(&a, &a.map(|v| -v)).unwrap(), -1.0, 1e-12)),
        ("pearson 0.8", close(pearson(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap(), 0.8, 1e-12)),
        ("spearman exp", close(spearman(&a, &a.map(f64::exp)).unwrap(), 1.0, 1e-12)),
        ("spearman reversed", close(spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0, 1e-12)),
        ("average ranks", average_ranks(&[1.0, 2.0, 2.0, 3.0]) == vec![1.0, 2.5, 2.5, 4.0]),
        ("pearson zero variance", pearson(&a, &[1.0; 4]).is_err()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mos: Vec<f64> = (0..1000).map(|_| 3.0 + normal.sample(&mut rng)).collect();
    let noise: Vec<f64> = (0..1000).map(|_| normal.sample(&mut rng)).collect();
    let mean = mos.iter().sum::<f64>() / 1000.0;
    let sd = (mos.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / 1000.0).sqrt();
    let affine: Vec<f64> = mos.iter().map(|m| 0.5 * m - 2.0).collect();
    let r_noise = rmse_mapped(&noise, &mos).unwrap().rmse;
    let r_scaled = rmse_mapped(&noise.iter().map(|v| 3.0 * v + 7.0).collect::<Vec<_>>(), &mos).unwrap().rmse;
    checks.push(("rmse affine", rmse_mapped(&affine, &mos).unwrap().rmse < 1e-9));
    checks.push(("rmse noise ~ sd", (r_noise - sd).abs() <= 0.1 * sd));
    checks.push(("rmse rescale invariant", close(r_noise, r_scaled, 1e-9)));
    let blocks: Vec<u8> = (0..100).map(|i| (i / 50) as u8).collect();
    let mixed: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
    checks.push(("nmi identical", close(nmi(&blocks, &blocks).unwrap(), 1.0, 1e-12)));
    checks.push(("nmi one class", nmi(&[0u8; 100], &blocks).unwrap() == 0.0));
    checks.push(("nmi 2x2 diagonal", close(nmi(&blocks, &blocks.clone()).unwrap(), 1.0, 1e-12)));
    checks.push(("nmi 2x2 uniform", nmi(&blocks, &mixed).unwrap() < 1e-12));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        calibrated && failed.is_empty(),
        format!(
            "null CI-excludes-0 rate {:.1}% ({rejections}/{sims}); unit examples {}/{} passed{}; {secs:.1}s",
            100.0 * rate,
            checks.len() - failed.len(),
            checks.len(),
            if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") }
        ),
    )
}

fn c10_bench(dir: &Path) -> Verdict {
    common::ok(&["bench", "--batch-sizes", "128", "--out", "bench.json"], dir);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("bench.json")).unwrap()).unwrap();
    let row = &v["rows"][0];
    let ratio = row["ratio"].as_f64().unwrap();
    let reps = row["scoreq"]["reps"].as_u64().unwrap();
    verdict(
        ratio <= 3.0 && reps >= 20,
        format!(
            "N=128 scoreq/l2 step ratio {ratio:.3} (l2 {:.2} ms, scoreq {:.2} ms, median of {reps}, {} valid triplets)",
            row["l2"]["median_seconds"].as_f64().unwrap() * 1e3,
            row["scoreq"]["median_seconds"].as_f64().unwrap() * 1e3,
            row["scoreq"]["valid_triplets"]
        ),
    )
}

const TINY_PROTOCOL: &str = r#"
folds = ["A"]
seeds = [0]
bootstrap_iterations = 200

[corpus]
samples_per_family = 40
frames = 8

[scoreq]
batch_size = 32
max_epochs = 2

[head]
batch_size = 32
max_epochs = 2

[l2]
batch_size = 32
max_epochs = 2

[offline]
batch_size = 32
max_epochs = 2
"#;

/// Runs every subcommand in `dir` and returns their stdout, bench excluded.
fn run_all_commands(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut run = |args: &[&str]| out.push(common::ok(args, dir));
    run(&["gen-data", "--out", "data", "--samples-per-family", "40", "--frames", "8", "--seed", "3"]);
    let m = "data/manifest.csv";
    run(&["train", "--manifest", m, "--loss", "l2", "--batch-size", "32", "--max-epochs", "2", "--out", "runs/l2"]);
    run(&[
        "train", "--manifest", m, "--loss", "scoreq_adaptive", "--nr", "--batch-size", "32", "--max-epochs", "2",
        "--out", "runs/sq",
    ]);
    run(&[
        "train", "--manifest", m, "--loss", "offline_triplet", "--batch-size", "32", "--max-epochs", "2", "--out",
        "runs/off",
    ]);
    run(&[
        "eval", "--checkpoint", "runs/sq/nr_head/final.json", "--manifest", m, "--predictions", "pred_sq.csv",
        "--splits", "test", "--out", "eval_sq.json",
    ]);
    run(&[
        "eval", "--checkpoint", "runs/l2/final.json", "--manifest", m, "--predictions", "pred_l2.csv", "--splits",
        "test", "--out", "eval_l2.json",
    ]);
    run(&["eval", "--checkpoint", "runs/sq/best.json", "--manifest", m, "--mode", "nmr", "--out", "eval_nmr.json"]);
    run(&[
        "bootstrap", "--mos", m, "--pred-a", "pred_sq.csv", "--pred-b", "pred_l2.csv", "--iterations", "500",
        "--out", "boot.json",
    ]);
    run(&["diagnose", "--checkpoint", "runs/sq/best.json", "--manifest", m, "--out", "diag"]);
    std::fs::write(dir.join("protocol.toml"), TINY_PROTOCOL).unwrap();
    run(&["protocol", "--config", "protocol.toml", "--out", "proto"]);
    out
}

fn bench_shape(dir: &Path) -> Vec<(u64, u64, u64)> {
    common::ok(&["bench", "--batch-sizes", "16,32", "--out", "bench.json", "--force"], dir);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("bench.json")).unwrap()).unwrap();
    v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            (
                r["batch_size"].as_u64().unwrap(),
                r["scoreq"]["valid_triplets"].as_u64().unwrap(),
                r["scoreq"]["active_triplets"].as_u64().unwrap(),
            )
        })
        .collect()
}

fn c11_determinism() -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out_a = run_all_commands(a.path());
    let out_b = run_all_commands(b.path());
    let bench_a = bench_shape(a.path());
    let bench_b = bench_shape(b.path());
    let mut snap_a = common::snapshot(a.path());
    let mut snap_b = common::snapshot(b.path());
    snap_a.remove("bench.json");
    snap_b.remove("bench.json");
    let differing: Vec<&String> = snap_a
        .keys()
        .chain(snap_b.keys())
        .filter(|k| snap_a.get(*k) != snap_b.get(*k))
        .collect();
    let stdout_same = out_a == out_b;
    verdict(
        differing.is_empty() && stdout_same && bench_a == bench_b,
        format!(
            "{} files compared across two full reruns, {} differ{}; stdout identical: {stdout_same}; bench counts identical: {}",
            snap_a.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" {differing:?}") },
            bench_a == bench_b
        ),
    )
}

#[test]
fn acceptance() {
    let mut verdicts: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |id, name, v: Verdict| {
        report(id, name, &v);
        verdicts.push((id, name, v));
    };
    record(1, "mask oracle", c1_mask());
    record(2, "loss oracle", c2_loss());
    record(3, "gradients", c3_gradients());
    record(4, "worked example", c4_worked_example());

    let t0 = Instant::now();
    let cfg = ProtocolConfig::default();
    let runs = run_protocol(&cfg, |r| {
        let _ = writeln!(
            std::io::stderr(),
            "  protocol fold {} seed {}: scoreq {:.4} l2 {:.4} offline {:.4} CI [{:.4}, {:.4}] nmi {:.3}/{:.3} |pc| {:.3}/{:.3} sev {:.3} ({:.0}s)",
            r.holdout,
            r.seed,
            r.scoreq.heldout_pc,
            r.l2.heldout_pc,
            r.offline.as_ref().map_or(f64::NAN, |o| o.heldout_pc),
            r.bootstrap.ci_low,
            r.bootstrap.ci_high,
            r.scoreq.in_domain_nmi,
            r.l2.in_domain_nmi,
            r.scoreq.in_domain_pc_dist_mos.abs(),
            r.l2.in_domain_pc_dist_mos.abs(),
            r.nmr_severity_sc,
            r.seconds
        );
    })
    .expect("protocol runs");
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    let s = summarize(&runs);
    record(
        5,
        "generalization",
        verdict(
            s.runs == 15 && s.scoreq_beats_l2 >= 10 && s.scoreq_significant >= 5 && minutes < 30.0,
            format!(
                "scoreq > l2 in {}/{} runs, significantly better in {}, l2 significantly better in {}; mean PC {:.4} vs {:.4}; {minutes:.1} min",
                s.scoreq_beats_l2, s.runs, s.scoreq_significant, s.l2_significant, s.mean_heldout_pc_scoreq, s.mean_heldout_pc_l2
            ),
        ),
    );
    record(
        6,
        "embedding diagnostics",
        verdict(
            s.mean_nmi_scoreq < s.mean_nmi_l2 && s.mean_abs_pc_dist_mos_scoreq > s.mean_abs_pc_dist_mos_l2,
            format!(
                "mean NMI scoreq {:.4} vs l2 {:.4}; mean |pc_dist_mos| scoreq {:.4} vs l2 {:.4}",
                s.mean_nmi_scoreq, s.mean_nmi_l2, s.mean_abs_pc_dist_mos_scoreq, s.mean_abs_pc_dist_mos_l2
            ),
        ),
    );
    let ge = s.scoreq_ge_offline.unwrap_or(0);
    record(
        7,
        "offline baseline",
        verdict(
            ge >= 8,
            format!(
                "scoreq >= offline in {ge}/{} runs; mean offline PC {:.4}",
                s.runs,
                s.mean_heldout_pc_offline.unwrap_or(f64::NAN)
            ),
        ),
    );
    record(8, "statistics calibration", c8_statistics());
    record(
        9,
        "nmr sanity",
        verdict(
            s.min_abs_nmr_severity_sc >= 0.8,
            format!("min |SC(distance, severity)| over {} runs {:.4}", s.runs, s.min_abs_nmr_severity_sc),
        ),
    );
    let bench_dir = tempfile::tempdir().unwrap();
    record(10, "performance envelope", c10_bench(bench_dir.path()));
    record(11, "determinism", c11_determinism());

    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.2.pass).map(|v| v.0).collect();
    let _ = writeln!(
        std::io::stderr(),
        "acceptance: {}/{} criteria passed",
        verdicts.len() - failed.len(),
        verdicts.len()
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
