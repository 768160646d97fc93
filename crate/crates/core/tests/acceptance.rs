//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use minn::data::{gen_counting_task, gen_fig2_pairs, CountingTaskConfig};
use minn::eval::{
    aggregate_ci, auc, check_train_only_normalization, cross_validate, cross_validate_audited,
    delong_variance, CvConfig, Method, NormalizationScope,
};
use minn::linalg::{max_abs_diff, Matrix};
use minn::network::{NetworkConfig, TrainConfig};
use minn::pooling::{injectivity_report, pool, AttentionParams, PoolingKind};
use minn::baseline::{fit_l1_logreg, lasso_objective, LassoConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    for kind in PoolingKind::ALL {
        let (err, at) = common::max_relative_error(kind, 0);
        if err > worst.0 {
            worst = (err, format!("{kind}: {at}"));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst.0 < 1e-5 && elapsed < Duration::from_secs(10),
        format!("max relative error {:.2e} ({}) in {:.2}s", worst.0, worst.1, elapsed.as_secs_f64()),
    )
}

fn injectivity() -> Outcome {
    let start = Instant::now();
    let pairs = gen_fig2_pairs(8, 0).unwrap();
    let params = AttentionParams::random(8, 8, 0.5, 1);
    let report = injectivity_report(&PoolingKind::ALL, &pairs, &params).unwrap();
    let elapsed = start.elapsed();
    let min_injective_gap = [PoolingKind::Sum, PoolingKind::Uatt]
        .iter()
        .flat_map(|k| report.results[k].values().map(|o| o.gap))
        .fold(f64::INFINITY, f64::min);
    outcome(
        report.claims_hold && min_injective_gap > 1e-6 && elapsed < Duration::from_secs(1),
        format!(
            "violations {:?}, smallest sum/uatt gap {:.3e}, {:.1}ms",
            report.violations,
            min_injective_gap,
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn permutation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = AttentionParams::random(6, 8, 1.0, 3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=12);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..8).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0).collect())
            .collect();
        let bag = Matrix::from_rows(&rows).unwrap();
        for kind in PoolingKind::ALL {
            let z = pool(kind, &bag, Some(&params)).unwrap().z;
            for _ in 0..5 {
                let mut shuffled = rows.clone();
                shuffled.shuffle(&mut rng);
                let zp = pool(kind, &Matrix::from_rows(&shuffled).unwrap(), Some(&params)).unwrap().z;
                worst = worst.max(max_abs_diff(&z, &zp));
            }
        }
    }
    outcome(worst <= 1e-12, format!("largest deviation {worst:.2e} over 2500 permutations"))
}

fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(4..=200);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        // coarse grid so ties occur
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..40)) / 40.0).collect();
        worst = worst.max((auc(&scores, &labels).unwrap() - brute_force_auc(&scores, &labels)).abs());
    }
    let separated = delong_variance(&[0.9, 0.8, 0.7, 0.3, 0.2, 0.1], &[1, 1, 1, 0, 0, 0]).unwrap();
    // positives {3, 2} each beat both negatives and the negatives lose to both
    // positives, so every placement value is constant: variance 0.
    let hand = 0.0;
    let four = delong_variance(&[3.0, 1.0, 2.0, 0.0], &[1, 0, 1, 0]).unwrap();
    outcome(
        worst <= 1e-12 && separated == 0.0 && (four - hand).abs() <= 1e-12,
        format!("brute-force gap {worst:.1e}, separated variance {separated}, 4-point variance {four}"),
    )
}

fn ci_arithmetic() -> Outcome {
    let ci = aggregate_ci(&[0.7], &[0.0025]).unwrap();
    let ok = (ci.ci_low - 0.602).abs() <= 1e-9 && (ci.ci_high - 0.798).abs() <= 1e-9 && ci.mean_auc == 0.7;
    outcome(ok, format!("({:.12}, {:.12})", ci.ci_low, ci.ci_high))
}

fn counting_ordering() -> Outcome {
    let start = Instant::now();
    let task = gen_counting_task(&CountingTaskConfig::default()).unwrap();
    let cv = CvConfig {
        runs: 3,
        folds: 10,
        base_seed: 0,
        workers: workers(),
        normalization: NormalizationScope::TrainOnly,
    };
    let mut medians = std::collections::BTreeMap::new();
    for kind in [PoolingKind::Sum, PoolingKind::Uatt, PoolingKind::Max] {
        let method = Method::Mil {
            network: NetworkConfig::new(task.dataset.width(), kind),
            training: TrainConfig::default(),
        };
        let report = cross_validate(&task.dataset, &method, &cv).unwrap();
        medians.insert(kind, report.median_run_auc);
    }
    let elapsed = start.elapsed();
    let (sum, uatt, max) = (medians[&PoolingKind::Sum], medians[&PoolingKind::Uatt], medians[&PoolingKind::Max]);
    outcome(
        sum >= 0.85 && uatt >= 0.85 && sum > max + 0.03 && elapsed < Duration::from_secs(300),
        format!(
            "median AUC sum {sum:.4}, uatt {uatt:.4}, max {max:.4} (need sum, uatt >= 0.85 and sum > max + 0.03) in {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Independent objective: mean logistic loss plus L1 on the weights.
fn oracle_objective(x: &[Vec<f64>], y: &[u8], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = x.len() as f64;
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &yi)| {
            let s = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            s.max(0.0) + (-s.abs()).exp().ln_1p() - f64::from(yi) * s
        })
        .sum::<f64>()
        / n;
    loss + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Plain subgradient descent with diminishing steps, keeping the best iterate.
fn subgradient_oracle(x: &[Vec<f64>], y: &[u8], lambda: f64) -> f64 {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut best = oracle_objective(x, y, &w, b, lambda);
    for t in 0..2_000_000u64 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (row, &yi) in x.iter().zip(y) {
            let s = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let r = 1.0 / (1.0 + (-s).exp()) - f64::from(yi);
            gb += r / n;
            for j in 0..d {
                gw[j] += r * row[j] / n;
            }
        }
        for j in 0..d {
            gw[j] += lambda * if w[j] > 0.0 { 1.0 } else if w[j] < 0.0 { -1.0 } else { 0.0 };
        }
        let step = 1.0 / (1.0 + t as f64).sqrt();
        for j in 0..d {
            w[j] -= step * gw[j];
        }
        b -= step * gb;
        if t % 16 == 0 {
            best = best.min(oracle_objective(x, y, &w, b, lambda));
        }
    }
    best
}

fn lasso_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let truth = [1.5, -1.0, 0.0];
    let x: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let y: Vec<u8> = x
        .iter()
        .map(|row| {
            let s: f64 = row.iter().zip(&truth).map(|(a, c)| a * c).sum();
            u8::from(rng.gen::<f64>() < 1.0 / (1.0 + (-s).exp()))
        })
        .collect();
    let lambda = 0.1;
    let model = fit_l1_logreg(&x, &y, &LassoConfig { lambda, ..LassoConfig::default() }).unwrap();
    let fitted = lasso_objective(&x, &y, &model.weights, model.bias, lambda);
    let oracle = subgradient_oracle(&x, &y, lambda);

    let ybar = y.iter().map(|&v| f64::from(v)).sum::<f64>() / 20.0;
    let kill = (0..3)
        .map(|j| x.iter().zip(&y).map(|(row, &yi)| row[j] * (f64::from(yi) - ybar)).sum::<f64>().abs() / 20.0)
        .fold(0.0, f64::max);
    let dead = fit_l1_logreg(&x, &y, &LassoConfig { lambda: kill * 1.01, ..LassoConfig::default() }).unwrap();
    let all_zero = dead.weights.iter().all(|&w| w == 0.0);
    outcome(
        (fitted - oracle).abs() <= 1e-4 && all_zero,
        format!(
            "objective {fitted:.8} vs oracle {oracle:.8}, weights above kill threshold {:?}",
            dead.weights
        ),
    )
}

fn small_counting_config() -> CountingTaskConfig {
    CountingTaskConfig { n_bags: 60, ..CountingTaskConfig::default() }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "counting_task": small_counting_config(),
        "pooling": "sum",
        "runs": 2,
        "folds": 3,
        "epochs": 3,
        "seed": 11,
    });
    let config_path = dir.path().join("exp.json");
    std::fs::write(&config_path, config.to_string()).unwrap();
    let mut reports = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let code = minn::cli::run([
            "minn".as_ref(),
            "cv".as_ref(),
            "--config".as_ref(),
            config_path.as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
        ]);
        if code != 0 {
            return outcome(false, format!("cv exited with {code}"));
        }
        reports.push(std::fs::read(out.join("report.json")).unwrap());
    }
    outcome(
        reports[0] == reports[1],
        format!("report.json {} bytes, identical: {}", reports[0].len(), reports[0] == reports[1]),
    )
}

fn leakage_guard() -> Outcome {
    let task = gen_counting_task(&small_counting_config()).unwrap();
    let method = Method::Mil {
        network: NetworkConfig::new(task.dataset.width(), PoolingKind::Mean),
        training: TrainConfig { epochs: 2, ..TrainConfig::default() },
    };
    let audit = |normalization| {
        let cv = CvConfig { runs: 2, folds: 5, base_seed: 3, workers: workers(), normalization };
        cross_validate_audited(&task.dataset, &method, &cv).unwrap().1
    };
    let clean = check_train_only_normalization(&task.dataset, &audit(NormalizationScope::TrainOnly));
    let leaky = check_train_only_normalization(&task.dataset, &audit(NormalizationScope::AllBags));
    outcome(
        clean.is_ok() && leaky.is_err(),
        format!("train-only: {:?}; all-bags variant rejected: {}", clean.err(), leaky.is_err()),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", gradient_check),
        ("injectivity suite", injectivity),
        ("permutation invariance", permutation_invariance),
        ("AUC oracle", auc_oracle),
        ("aggregate_ci arithmetic", ci_arithmetic),
        ("counting-task ordering", counting_ordering),
        ("baseline oracle", lasso_oracle),
        ("end-to-end determinism", determinism),
        ("leakage guard", leakage_guard),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failures += 1;
        }
        println!("{} {}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
