//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use catgranger::bench::{bench_projection, log_log_slope, BenchConfig};
use catgranger::evaluation::{lambda_max, quantile, run_experiment, ExperimentConfig, ExperimentRow, LAMBDA_MAX_MARGIN};
use catgranger::mltd::{fit_mltd, free_mask, mltd_cond_prob, mltd_grad, mltd_nll};
use catgranger::mtd::{
    canonicalize_mtd, fit_mtd, mtd_cond_prob, mtd_grad, mtd_nll, mtd_penalty, DEFAULT_EPSILON,
};
use catgranger::projection::{dykstra_project, qp_reference_project, DEFAULT_DYKSTRA_MAX_ITER, DEFAULT_DYKSTRA_TOL};
use catgranger::simulate::{random_mltd_params, random_mtd_params, simulate, Regime, SimSpec};
use catgranger::{
    transition_pairs, CategoricalDataset, MltdFitConfig, MltdParams, ModelKind, MtdConstraintSet, MtdFitConfig,
    MtdParams, ParamLayout,
    PenaltyKind, TransitionSet,
};

type Check = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("projection correctness", projection_correctness),
        ("projection scaling", projection_scaling),
        ("gradient checks", gradient_checks),
        ("identifiability", identifiability),
        ("convexity", convexity),
        ("graph recovery", graph_recovery),
        ("solver sanity", solver_sanity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}: {name} ({detail}; {secs:.1}s)", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}: {name} ({detail}; {secs:.1}s)", k + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < budget, || format!("took {took:.1?}, budget {budget:?}"))
}

fn projection_correctness() -> Check {
    let start = Instant::now();
    let normal = Normal::new(0.0, 0.7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for d in [5, 10] {
        for m in [3, 5] {
            let layout = ParamLayout::new(m, &vec![m; d]);
            let set = MtdConstraintSet::new(layout.clone(), DEFAULT_EPSILON).map_err(|e| e.to_string())?;
            for _ in 0..10 {
                let z: Vec<f64> = (0..layout.len()).map(|_| normal.sample(&mut rng)).collect();
                let a = dykstra_project(&z, &set, DEFAULT_DYKSTRA_TOL, DEFAULT_DYKSTRA_MAX_ITER)
                    .map_err(|e| e.to_string())?;
                let b = qp_reference_project(&z, &set).map_err(|e| e.to_string())?;
                let diff = a.point.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                worst = worst.max(diff);
            }
        }
    }
    ensure(worst <= 1e-6, || format!("max |dykstra − qp| = {worst:e}"))?;
    within(start, Duration::from_secs(5))?;
    Ok(format!("40 inputs, max |dykstra − qp| = {worst:.1e}"))
}

fn projection_scaling() -> Check {
    let start = Instant::now();
    let cfg = BenchConfig {
        dims: vec![10, 20, 40, 60],
        m: 5,
        reps: 10,
        sd: 0.7,
        seed: 2,
        qp_reps: Some(3),
        ..BenchConfig::default()
    };
    let rows = bench_projection(&cfg).map_err(|e| e.to_string())?;
    let median = |d: usize, method: &str| {
        rows.iter()
            .find(|r| r.d == d && r.method == method)
            .map(|r| r.median_ms)
            .ok_or_else(|| format!("no {method} row for d={d}"))
    };
    let dims: Vec<f64> = cfg.dims.iter().map(|&d| d as f64).collect();
    let dyk: Vec<f64> = cfg.dims.iter().map(|&d| median(d, "dykstra")).collect::<Result<_, _>>()?;
    let slope = log_log_slope(&dims, &dyk);
    ensure(slope < 1.5, || format!("Dykstra log-log slope {slope:.2}"))?;
    let mut min_speedup = f64::INFINITY;
    for &d in cfg.dims.iter().filter(|&&d| d >= 20) {
        min_speedup = min_speedup.min(median(d, "qp")? / median(d, "dykstra")?);
    }
    ensure(min_speedup >= 10.0, || format!("QP/Dykstra speedup only {min_speedup:.1}x"))?;
    let worst = rows.iter().filter_map(|r| r.max_abs_diff).fold(0.0, f64::max);
    ensure(worst <= 1e-6, || format!("bench agreement {worst:e}"))?;
    within(start, Duration::from_secs(120))?;
    Ok(format!("slope {slope:.2}, min speedup {min_speedup:.0}x at d ≥ 20"))
}

fn small_data(seed: u64) -> CategoricalDataset {
    simulate(&SimSpec::new(Regime::sparse_mtd(), 4, 3, 300, seed)).unwrap().data
}

/// Relative error `‖a − b‖ / max(‖b‖, 1e-12)`.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

fn mtd_objective(p: &MtdParams, trans: &TransitionSet, lambda: f64, kind: PenaltyKind) -> f64 {
    mtd_nll(p, trans).unwrap() + lambda * mtd_penalty(p, kind)
}

fn mltd_objective(p: &MltdParams, trans: &TransitionSet, lambda: f64) -> f64 {
    mltd_nll(p, trans) + lambda * p.pair_mats.iter().map(|z| z.frobenius_norm()).sum::<f64>()
}

fn gradient_checks() -> Check {
    let data = small_data(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    let mut worst_mtd: f64 = 0.0;
    let mut worst_mltd: f64 = 0.0;
    for k in 0..20 {
        let target = k % 4;
        let trans = transition_pairs(&data, target);
        let kind = if k % 2 == 0 { PenaltyKind::L1 } else { PenaltyKind::GroupLasso };
        let lambda = 0.7;
        let p: MtdParams = random_mtd_params(&mut rng, target, 3, &[3; 4], DEFAULT_EPSILON);
        let g = mtd_grad(&p, &trans, lambda, kind).map_err(|e| e.to_string())?;
        let analytic: Vec<f64> = MtdParams { target, intercept: g.intercept, pair_mats: g.pair_mats }.to_stacked();
        let layout = p.layout();
        let z = p.to_stacked();
        let fd: Vec<f64> = (0..z.len())
            .map(|i| {
                let mut up = z.clone();
                let mut dn = z.clone();
                up[i] += h;
                dn[i] -= h;
                let f = |v: &[f64]| mtd_objective(&MtdParams::from_stacked(target, &layout, v), &trans, lambda, kind);
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect();
        worst_mtd = worst_mtd.max(rel_err(&analytic, &fd));

        let q: MltdParams = random_mltd_params(&mut rng, target, 3, &[3; 4], 1.0);
        let g = mltd_grad(&q, &trans).map_err(|e| e.to_string())?;
        let analytic = MltdParams { target, intercept: g.intercept, pair_mats: g.pair_mats }.to_stacked();
        let layout = q.layout();
        let mask = free_mask(&layout);
        let z = q.to_stacked();
        let fd: Vec<f64> = (0..z.len())
            .map(|i| {
                if !mask[i] {
                    return 0.0;
                }
                let mut up = z.clone();
                let mut dn = z.clone();
                up[i] += h;
                dn[i] -= h;
                let f = |v: &[f64]| mltd_nll(&MltdParams::from_stacked(target, &layout, v), &trans);
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect();
        worst_mltd = worst_mltd.max(rel_err(&analytic, &fd));
    }
    ensure(worst_mtd <= 1e-5 && worst_mltd <= 1e-5, || {
        format!("relative error mtd {worst_mtd:.1e}, mltd {worst_mltd:.1e}")
    })?;
    Ok(format!("20+20 points, max rel. error mtd {worst_mtd:.1e}, mltd {worst_mltd:.1e}"))
}

/// Every context of the parents, in lexicographic order.
fn all_contexts(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &m in sizes {
        out = out
            .into_iter()
            .flat_map(|c| (0..m).map(move |v| [c.clone(), vec![v]].concat()))
            .collect();
    }
    out
}

fn identifiability() -> Check {
    let mut worst_row_min: f64 = 0.0;
    let mut worst_prob: f64 = 0.0;
    for k in 0..10 {
        let data = small_data(40 + k as u64);
        let kind = if k % 2 == 0 { PenaltyKind::L1 } else { PenaltyKind::GroupLasso };
        let lambda = [0.5, 2.0, 8.0, 20.0, 50.0][k / 2];
        let fit = fit_mtd(&data, k % 4, &MtdFitConfig::with_lambda(lambda, kind)).map_err(|e| e.to_string())?;
        for z in &fit.params.pair_mats {
            for r in 0..z.rows() {
                let row_min = z.row(r).iter().copied().fold(f64::INFINITY, f64::min);
                worst_row_min = worst_row_min.max(row_min - DEFAULT_EPSILON);
            }
        }
        let canon = canonicalize_mtd(&fit.params);
        for ctx in all_contexts(data.alphabet_sizes()) {
            let a = mtd_cond_prob(&fit.params, &ctx);
            let b = mtd_cond_prob(&canon, &ctx);
            let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            worst_prob = worst_prob.max(diff);
        }
    }
    ensure(worst_row_min <= 1e-6, || format!("row minimum exceeds ε by {worst_row_min:e}"))?;
    ensure(worst_prob <= 1e-10, || format!("canonicalization moved a probability by {worst_prob:e}"))?;
    Ok(format!(
        "10 fits, max row-min excess {worst_row_min:.1e}, max probability change {worst_prob:.1e}"
    ))
}

fn convexity() -> Check {
    let data = small_data(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = f64::NEG_INFINITY;
    for k in 0..100 {
        let target = k % 4;
        let trans = transition_pairs(&data, target);
        let lambda = rng.random_range(0.0..20.0);
        let kind = if k % 2 == 0 { PenaltyKind::L1 } else { PenaltyKind::GroupLasso };
        let a: MtdParams = random_mtd_params(&mut rng, target, 3, &[3; 4], DEFAULT_EPSILON);
        let b: MtdParams = random_mtd_params(&mut rng, target, 3, &[3; 4], DEFAULT_EPSILON);
        let mid = midpoint(&a.to_stacked(), &b.to_stacked());
        let mid = MtdParams::from_stacked(target, &a.layout(), &mid);
        let gap = mtd_objective(&mid, &trans, lambda, kind)
            - 0.5 * (mtd_objective(&a, &trans, lambda, kind) + mtd_objective(&b, &trans, lambda, kind));
        worst = worst.max(gap);

        let a: MltdParams = random_mltd_params(&mut rng, target, 3, &[3; 4], 2.0);
        let b: MltdParams = random_mltd_params(&mut rng, target, 3, &[3; 4], 2.0);
        let mid = midpoint(&a.to_stacked(), &b.to_stacked());
        let mid = MltdParams::from_stacked(target, &a.layout(), &mid);
        let gap = mltd_objective(&mid, &trans, lambda)
            - 0.5 * (mltd_objective(&a, &trans, lambda) + mltd_objective(&b, &trans, lambda));
        worst = worst.max(gap);
    }
    ensure(worst <= 1e-9, || format!("midpoint violation {worst:e}"))?;
    Ok(format!("100 pairs per model, max f(mid) − mean f = {worst:.2e}"))
}

fn midpoint(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

fn median_auc(rows: &[ExperimentRow], method: ModelKind) -> Result<(f64, Vec<f64>), String> {
    let mut aucs = Vec::new();
    for r in rows.iter().filter(|r| r.method == method) {
        match r.auc {
            Some(a) => aucs.push(a),
            None => return Err(format!("{method} rep {} failed: {}", r.rep, r.error.clone().unwrap_or_default())),
        }
    }
    let mut sorted = aucs.clone();
    sorted.sort_by(f64::total_cmp);
    let med = quantile(&sorted, 0.5).ok_or_else(|| format!("no {method} rows"))?;
    Ok((med, aucs))
}

fn graph_recovery() -> Check {
    let start = Instant::now();
    let run = |regime: Regime, methods: &[ModelKind], seed: u64| {
        let mut cfg = ExperimentConfig::new(regime, 10, 4, 400, 10, seed);
        cfg.methods = methods.to_vec();
        run_experiment(&cfg).map_err(|e| e.to_string())
    };
    let mtd_rows = run(Regime::sparse_mtd(), &[ModelKind::MtdL1, ModelKind::MtdGroup], 61)?;
    let (mtd_group, per_seed) = median_auc(&mtd_rows, ModelKind::MtdGroup)?;
    let (mtd_l1, _) = median_auc(&mtd_rows, ModelKind::MtdL1)?;
    let mltd_rows = run(Regime::sparse_mltd(), &[ModelKind::MltdGroup], 62)?;
    let (mltd_group, _) = median_auc(&mltd_rows, ModelKind::MltdGroup)?;
    let var_rows = run(Regime::latent_var(), &[ModelKind::MtdGroup, ModelKind::MltdGroup], 63)?;
    let (var_mtd, _) = median_auc(&var_rows, ModelKind::MtdGroup)?;
    let (var_mltd, _) = median_auc(&var_rows, ModelKind::MltdGroup)?;
    let summary = format!(
        "median AUC: mtd data group {mtd_group:.3} / l1 {mtd_l1:.3}, mltd data {mltd_group:.3}, \
         var data mtd {var_mtd:.3} / mltd {var_mltd:.3}"
    );
    let worst_seed = per_seed.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(mtd_group >= 0.70, || format!("MTD-group median {mtd_group:.3}; {summary}"))?;
    ensure(worst_seed > 0.5, || format!("an MTD-group seed scored {worst_seed:.3}; {summary}"))?;
    ensure(mltd_group >= 0.70, || format!("mLTD-group median {mltd_group:.3}; {summary}"))?;
    ensure(var_mtd > 0.6 && var_mltd > 0.6, || format!("VAR medians too low; {summary}"))?;
    ensure(mtd_l1 >= mtd_group - 0.05, || format!("L1 behind group by more than 0.05; {summary}"))?;
    within(start, Duration::from_secs(15 * 60))?;
    Ok(summary)
}

fn solver_sanity() -> Check {
    let data = simulate(&SimSpec::new(Regime::sparse_mtd().with_delta(0.3), 5, 3, 400, 7)).unwrap().data;
    let mut worst_floor: f64 = 0.0;
    for kind in ModelKind::ALL {
        let top: f64 = LAMBDA_MAX_MARGIN * lambda_max::<f64>(&data, kind);
        for i in 0..data.n_series() {
            match kind.mtd_penalty() {
                Some(penalty) => {
                    let fit = fit_mtd(&data, i, &MtdFitConfig::with_lambda(top, penalty)).map_err(|e| e.to_string())?;
                    for z in &fit.params.pair_mats {
                        let excess = z.as_slice().iter().map(|v| v - DEFAULT_EPSILON).fold(0.0, f64::max);
                        worst_floor = worst_floor.max(excess);
                    }
                }
                None => {
                    let fit = fit_mltd(&data, i, &MltdFitConfig::with_lambda(top)).map_err(|e| e.to_string())?;
                    let nonzero = fit.params.pair_mats.iter().flat_map(|z| z.as_slice()).any(|&v| v != 0.0);
                    ensure(!nonzero, || format!("mLTD target {i} has a nonzero block at λ_max"))?;
                }
            }
        }
    }
    ensure(worst_floor <= 1e-6, || format!("MTD block entry {worst_floor:e} above ε at λ_max"))?;

    // One series, no penalty: both models reproduce the empirical transition table.
    let one = simulate(&SimSpec::new(Regime::sparse_mtd(), 1, 3, 5000, 8)).unwrap().data;
    let mut counts = vec![vec![0.0f64; 3]; 3];
    for t in 1..one.n_times() {
        counts[one.value(t - 1, 0)][one.value(t, 0)] += 1.0;
    }
    let mtd = fit_mtd(&one, 0, &MtdFitConfig::with_lambda(0.0, PenaltyKind::L1)).map_err(|e| e.to_string())?;
    let mltd = fit_mltd(&one, 0, &MltdFitConfig::with_lambda(0.0)).map_err(|e| e.to_string())?;
    let mut worst_freq: f64 = 0.0;
    for prev in 0..3 {
        let n: f64 = counts[prev].iter().sum();
        let a = mtd_cond_prob(&mtd.params, &[prev]);
        let b = mltd_cond_prob(&mltd.params, &[prev]);
        for next in 0..3 {
            let freq = counts[prev][next] / n;
            worst_freq = worst_freq.max((a[next] - freq).abs()).max((b[next] - freq).abs());
        }
    }
    ensure(worst_freq <= 0.05, || format!("λ=0 fit off empirical frequencies by {worst_freq:.3}"))?;
    Ok(format!(
        "λ_max: mLTD blocks exactly 0, MTD max excess over ε {worst_floor:.1e}; λ=0 max frequency error {worst_freq:.1e}"
    ))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_catgranger"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim())
    })
}

/// Runs every seeded subcommand into `dir`.
fn pipeline(dir: &Path, seed: &str) -> Result<(), String> {
    let d = dir.to_str().unwrap();
    let sim = format!("{d}/sim");
    let data = format!("{sim}/data.csv");
    let truth = format!("{sim}/truth.json");
    cli(&["simulate", "--regime", "mtd", "--d", "5", "--m", "3", "--T", "300", "--seed", seed, "--output-dir", &sim])?;
    cli(&["simulate", "--regime", "var", "--d", "4", "--m", "3", "--T", "200", "--seed", seed, "--output-dir", &format!("{d}/var")])?;
    for fmt in ["json", "csv", "dot"] {
        cli(&["fit", "--data", &data, "--lambda", "3", "--format", fmt, "--seed", seed, "--output-dir", &format!("{d}/fit")])?;
    }
    cli(&["fit", "--data", &data, "--model", "mltd", "--lambda", "3", "--output-dir", &format!("{d}/fit-mltd")])?;
    cli(&["path", "--data", &data, "--penalty", "l1", "--n-lambdas", "6", "--output-dir", &format!("{d}/path")])?;
    cli(&["eval-auc", "--truth", &truth, "--path", &format!("{d}/path/path.json"), "--output-dir", &format!("{d}/path")])?;
    cli(&["cv", "--data", &data, "--model", "mltd", "--n-lambdas", "4", "--folds", "3", "--output-dir", &format!("{d}/cv")])?;
    cli(&["export", "--models", &format!("{d}/fit/model.json"), "--format", "dot", "--output-dir", &format!("{d}/export")])?;
    cli(&[
        "experiment", "--regime", "mltd", "--d", "4", "--m", "2", "--T", "150", "--reps", "3", "--n-lambdas", "5",
        "--seed", seed, "--output-dir", &format!("{d}/experiment"),
    ])
}

/// Relative path and contents of every CSV/JSON/DOT file under `dir`, sorted.
fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        for entry in fs::read_dir(&p).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if matches!(path.extension().and_then(|e| e.to_str()), Some("csv" | "json" | "dot")) {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let c = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(a.path(), "17")?;
    pipeline(b.path(), "17")?;
    pipeline(c.path(), "18")?;
    let (fa, fb, fc) = (outputs(a.path()), outputs(b.path()), outputs(c.path()));
    ensure(fa.len() >= 15, || format!("only {} output files", fa.len()))?;
    let names: Vec<&String> = fa.iter().map(|(n, _)| n).collect();
    ensure(names == fb.iter().map(|(n, _)| n).collect::<Vec<_>>(), || "file sets differ".into())?;
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        ensure(x == y, || format!("{name} differs between identical seeds"))?;
    }
    let data = |f: &[(String, Vec<u8>)]| f.iter().find(|(n, _)| n.ends_with("data.csv")).map(|(_, v)| v.clone());
    ensure(data(&fa) != data(&fc), || "a different seed gave the same data".into())?;
    Ok(format!("{} files byte-identical across two runs", fa.len()))
}
