//! AUC, DeLong variance, confidence intervals and the repeated stratified
//! cross-validation driver.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::baseline::{fit_baseline, largest_lesion_design, predict_logreg, BaselineConfig};
use crate::data::{fit_zscore, stratified_folds, Bag, Dataset, FoldPlan, Normalizer};
use crate::error::{Error, Result};
use crate::network::{predict, train_bags, NetworkConfig, TrainConfig};

/// 97.5% standard normal quantile.
pub const Z_975: f64 = 1.96;

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    (pos, labels.len() - pos)
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Evaluation(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Evaluation("labels must be 0 or 1".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Evaluation("scores contain NaN".into()));
    }
    Ok(())
}

/// 1-based ranks with ties replaced by their average rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney AUC: probability that a random positive outranks a random
/// negative, ties counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (m, n) = class_counts(labels);
    if m == 0 || n == 0 {
        return Err(Error::Evaluation("AUC needs both classes".into()));
    }
    let ranks = midranks(scores);
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let (m, n) = (m as f64, n as f64);
    Ok((pos_rank_sum - m * (m + 1.0) / 2.0) / (m * n))
}

fn sample_variance(values: &[f64]) -> f64 {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0)
}

/// Structural-component placement values `(V10, V01)`: for each positive,
/// the fraction of negatives it outranks; for each negative, the fraction
/// of positives that outrank it. Ties count one half.
pub fn placement_values(scores: &[f64], labels: &[u8]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_inputs(scores, labels)?;
    let (m, n) = class_counts(labels);
    if m == 0 || n == 0 {
        return Err(Error::Evaluation("placement values need both classes".into()));
    }
    let split = |want: u8| -> (Vec<usize>, Vec<f64>) {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == want).collect();
        let vals = idx.iter().map(|&i| scores[i]).collect();
        (idx, vals)
    };
    let all = midranks(scores);
    let (pos_idx, pos_vals) = split(1);
    let (neg_idx, neg_vals) = split(0);
    let pos_ranks = midranks(&pos_vals);
    let neg_ranks = midranks(&neg_vals);
    let v10 = pos_idx
        .iter()
        .zip(&pos_ranks)
        .map(|(&i, r)| (all[i] - r) / n as f64)
        .collect();
    let v01 = neg_idx
        .iter()
        .zip(&neg_ranks)
        .map(|(&i, r)| 1.0 - (all[i] - r) / m as f64)
        .collect();
    Ok((v10, v01))
}

/// DeLong variance of the AUC: `var(V10)/m + var(V01)/n`, sample variances.
pub fn delong_variance(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (m, n) = class_counts(labels);
    if m < 2 || n < 2 {
        return Err(Error::Evaluation(format!(
            "DeLong variance needs at least 2 positives and 2 negatives, got {m} and {n}"
        )));
    }
    let (v10, v01) = placement_values(scores, labels)?;
    Ok((sample_variance(&v10) / m as f64 + sample_variance(&v01) / n as f64).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSummary {
    pub mean_auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Mean AUC with a normal interval of half-width `1.96 * sqrt(mean variance)`,
/// clipped to [0, 1].
pub fn aggregate_ci(run_aucs: &[f64], run_variances: &[f64]) -> Result<ConfidenceSummary> {
    if run_aucs.is_empty() || run_aucs.len() != run_variances.len() {
        return Err(Error::Evaluation(format!(
            "need matching non-empty AUC and variance lists, got {} and {}",
            run_aucs.len(),
            run_variances.len()
        )));
    }
    let r = run_aucs.len() as f64;
    let mean_auc = run_aucs.iter().sum::<f64>() / r;
    let mean_var = run_variances.iter().sum::<f64>() / r;
    let half = Z_975 * mean_var.max(0.0).sqrt();
    Ok(ConfidenceSummary {
        mean_auc,
        ci_low: (mean_auc - half).clamp(0.0, 1.0),
        ci_high: (mean_auc + half).clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points for every distinct score threshold, from (0, 0) to (1, 1).
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    check_inputs(scores, labels)?;
    let (m, n) = class_counts(labels);
    if m == 0 || n == 0 {
        return Err(Error::Evaluation("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / m as f64,
        });
    }
    Ok(points)
}

/// What to evaluate under cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mil {
        network: NetworkConfig,
        training: TrainConfig,
    },
    Baseline(BaselineConfig),
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Mil { network, .. } => format!("MINN + {}", network.pooling),
            Method::Baseline(_) => "LASSO LR".into(),
        }
    }
}

/// Which bags the per-fold normalizer is fitted on. `AllBags` leaks test
/// statistics into training and exists so leakage checks can be exercised.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScope {
    #[default]
    TrainOnly,
    AllBags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub runs: usize,
    pub folds: usize,
    pub base_seed: u64,
    pub workers: usize,
    pub normalization: NormalizationScope,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            runs: 10,
            folds: 10,
            base_seed: 0,
            workers: 1,
            normalization: NormalizationScope::TrainOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OofPrediction {
    pub patient_id: String,
    pub fold: usize,
    pub label: u8,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub run_seed: u64,
    pub auc: f64,
    pub delong_variance: f64,
    pub predictions: Vec<OofPrediction>,
}

impl RunResult {
    fn scores_and_labels(&self) -> (Vec<f64>, Vec<u8>) {
        self.predictions.iter().map(|p| (p.probability, p.label)).unzip()
    }

    pub fn roc(&self) -> Result<Vec<RocPoint>> {
        let (s, l) = self.scores_and_labels();
        roc_curve(&s, &l)
    }
}

pub const AGGREGATION_NOTE: &str = "per-run AUC from out-of-fold predictions pooled across folds; \
mean AUC over runs with 95% CI = mean +/- 1.96*sqrt(mean per-run DeLong variance), clipped to [0,1]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub aggregation: String,
    pub folds: usize,
    pub base_seed: u64,
    pub mean_auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub median_run_auc: f64,
    pub excluded_bags: usize,
    pub runs: Vec<RunResult>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per run.
    pub fn write_runs_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["run", "run_seed", "auc", "delong_variance", "n_patients"])?;
        for r in &self.runs {
            wtr.write_record([
                r.run.to_string(),
                r.run_seed.to_string(),
                r.auc.to_string(),
                r.delong_variance.to_string(),
                r.predictions.len().to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<runs csv>", e))?;
        Ok(())
    }

    /// Single summary row: method, mean AUC, CI bounds.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["method", "mean_auc", "ci_low", "ci_high"])?;
        wtr.write_record([
            self.method.clone(),
            format!("{:.3}", self.mean_auc),
            format!("{:.3}", self.ci_low),
            format!("{:.3}", self.ci_high),
        ])?;
        wtr.flush().map_err(|e| Error::io("<summary csv>", e))?;
        Ok(())
    }
}

pub fn write_roc_csv<W: Write>(points: &[RocPoint], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["threshold", "fpr", "tpr"])?;
    for p in points {
        wtr.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<roc csv>", e))?;
    Ok(())
}

/// Normalizer and split of one (run, fold), recorded for auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldAudit {
    pub run: usize,
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub normalizer: Normalizer,
}

/// splitmix64 finalizer over the combined inputs.
fn mix_seed(parts: &[u64]) -> u64 {
    let mut x = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        x ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(x << 6).wrapping_add(x >> 2);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

struct FoldOutput {
    predictions: Vec<OofPrediction>,
    audit: FoldAudit,
}

fn run_fold(
    dataset: &Dataset,
    plan: &FoldPlan,
    method: &Method,
    cv: &CvConfig,
    run: usize,
    fold: usize,
) -> Result<FoldOutput> {
    let (train, test) = plan.split(dataset, fold);
    let train: Vec<Bag> = train.into_iter().cloned().collect();
    let test: Vec<Bag> = test.into_iter().cloned().collect();
    let normalizer = match cv.normalization {
        NormalizationScope::TrainOnly => fit_zscore(&train)?,
        NormalizationScope::AllBags => {
            let all: Vec<Bag> = train.iter().chain(&test).cloned().collect();
            fit_zscore(&all)?
        }
    };
    let train_n = normalizer.apply(&train)?;
    let test_n = normalizer.apply(&test)?;
    let run_seed = cv.base_seed + run as u64;

    let probabilities: Vec<f64> = match method {
        Method::Mil { network, training } => {
            let net = NetworkConfig {
                input_dim: dataset.width(),
                seed: mix_seed(&[network.seed, run_seed, fold as u64, 1]),
                ..network.clone()
            };
            let opt = TrainConfig {
                seed: mix_seed(&[training.seed, run_seed, fold as u64, 2]),
                ..training.clone()
            };
            let outcome = train_bags(&train_n, &net, &opt)?;
            predict(&outcome.params, &test_n, &net)?
                .into_iter()
                .map(|p| p.probability)
                .collect()
        }
        Method::Baseline(cfg) => {
            let seed = mix_seed(&[run_seed, fold as u64, 3]);
            let model = fit_baseline(&train_n, &dataset.feature_names, cfg, seed)?;
            let col = dataset
                .feature_index(&cfg.volume_feature)
                .ok_or_else(|| Error::Config(format!("unknown volume feature '{}'", cfg.volume_feature)))?;
            let (x, _) = largest_lesion_design(&test_n, col)?;
            predict_logreg(&model, &x)?
        }
    };

    let predictions = test
        .iter()
        .zip(probabilities)
        .map(|(bag, probability)| OofPrediction {
            patient_id: bag.patient_id.clone(),
            fold,
            label: bag.label.expect("fold plans only hold labeled bags"),
            probability,
        })
        .collect();
    Ok(FoldOutput {
        predictions,
        audit: FoldAudit {
            run,
            fold,
            train_ids: train.iter().map(|b| b.patient_id.clone()).collect(),
            test_ids: test.iter().map(|b| b.patient_id.clone()).collect(),
            normalizer,
        },
    })
}

pub fn cross_validate(dataset: &Dataset, method: &Method, cv: &CvConfig) -> Result<EvalReport> {
    Ok(cross_validate_audited(dataset, method, cv)?.0)
}

/// Runs `cv.runs` repetitions of `cv.folds`-fold stratified cross-validation.
/// Folds run on up to `cv.workers` threads; results are merged by
/// (run, fold) index so the report does not depend on scheduling.
pub fn cross_validate_audited(
    dataset: &Dataset,
    method: &Method,
    cv: &CvConfig,
) -> Result<(EvalReport, Vec<FoldAudit>)> {
    if cv.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    dataset.validate()?;
    if dataset.labeled().next().is_none() {
        return Err(Error::Evaluation("dataset has no labeled bags".into()));
    }
    match method {
        Method::Mil { network, training } => {
            NetworkConfig {
                input_dim: dataset.width(),
                ..network.clone()
            }
            .validate()?;
            training.validate()?;
        }
        Method::Baseline(cfg) => {
            if dataset.feature_index(&cfg.volume_feature).is_none() {
                return Err(Error::Config(format!(
                    "volume feature '{}' is not in the schema",
                    cfg.volume_feature
                )));
            }
        }
    }

    let plans = (0..cv.runs)
        .map(|r| stratified_folds(dataset, cv.folds, cv.base_seed + r as u64))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> = (0..cv.runs)
        .flat_map(|r| (0..cv.folds).map(move |f| (r, f)))
        .collect();

    let exec = |&(r, f): &(usize, usize)| {
        run_fold(dataset, &plans[r], method, cv, r, f).map_err(|e| Error::Fold {
            run: r,
            fold: f,
            source: Box::new(e),
        })
    };
    let outputs: Vec<Result<FoldOutput>> = if cv.workers <= 1 {
        tasks.iter().map(exec).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cv.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(exec).collect())
    };
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;

    let mut runs = Vec::with_capacity(cv.runs);
    let mut audits = Vec::with_capacity(outputs.len());
    let mut per_run = outputs.into_iter();
    for run in 0..cv.runs {
        let mut predictions = Vec::new();
        for fold_out in per_run.by_ref().take(cv.folds) {
            predictions.extend(fold_out.predictions);
            audits.push(fold_out.audit);
        }
        // Report predictions in dataset order.
        let position: std::collections::HashMap<&str, usize> = dataset
            .bags
            .iter()
            .enumerate()
            .map(|(i, b)| (b.patient_id.as_str(), i))
            .collect();
        predictions.sort_by_key(|p| position[p.patient_id.as_str()]);
        let (scores, labels): (Vec<f64>, Vec<u8>) =
            predictions.iter().map(|p| (p.probability, p.label)).unzip();
        let run_auc = auc(&scores, &labels)?;
        let variance = delong_variance(&scores, &labels)?;
        runs.push(RunResult {
            run,
            run_seed: cv.base_seed + run as u64,
            auc: run_auc,
            delong_variance: variance,
            predictions,
        });
    }

    let aucs: Vec<f64> = runs.iter().map(|r| r.auc).collect();
    let vars: Vec<f64> = runs.iter().map(|r| r.delong_variance).collect();
    let summary = aggregate_ci(&aucs, &vars)?;
    Ok((
        EvalReport {
            method: method.label(),
            aggregation: AGGREGATION_NOTE.into(),
            folds: cv.folds,
            base_seed: cv.base_seed,
            mean_auc: summary.mean_auc,
            ci_low: summary.ci_low,
            ci_high: summary.ci_high,
            median_run_auc: median(&aucs),
            excluded_bags: 0,
            runs,
        },
        audits,
    ))
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// Confirms every audited fold fitted its normalizer on training bags only,
/// kept train and test disjoint, and that each run predicts every labeled
/// patient exactly once.
pub fn check_train_only_normalization(dataset: &Dataset, audits: &[FoldAudit]) -> Result<()> {
    let labeled: BTreeSet<&str> = dataset.labeled().map(|b| b.patient_id.as_str()).collect();
    let mut runs: std::collections::BTreeMap<usize, Vec<&str>> = Default::default();
    for audit in audits {
        let train: BTreeSet<&str> = audit.train_ids.iter().map(String::as_str).collect();
        if audit.test_ids.iter().any(|t| train.contains(t.as_str())) {
            return Err(Error::Evaluation(format!(
                "run {}, fold {}: a test patient is also in training",
                audit.run, audit.fold
            )));
        }
        let train_bags: Vec<Bag> = dataset
            .bags
            .iter()
            .filter(|b| train.contains(b.patient_id.as_str()))
            .cloned()
            .collect();
        let expected = fit_zscore(&train_bags)?;
        if expected != audit.normalizer {
            return Err(Error::Evaluation(format!(
                "run {}, fold {}: normalizer statistics differ from train-only statistics",
                audit.run, audit.fold
            )));
        }
        runs.entry(audit.run)
            .or_default()
            .extend(audit.test_ids.iter().map(String::as_str));
    }
    for (run, tested) in runs {
        let unique: BTreeSet<&str> = tested.iter().copied().collect();
        if unique.len() != tested.len() || unique != labeled {
            return Err(Error::Evaluation(format!(
                "run {run}: out-of-fold predictions do not cover each labeled patient exactly once"
            )));
        }
    }
    Ok(())
}
