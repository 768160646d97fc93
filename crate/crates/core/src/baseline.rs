//! Unifocal comparator: L1-penalized logistic regression on the largest
//! lesion of each patient.

use serde::{Deserialize, Serialize};

use crate::data::{stratified_folds, Bag, Dataset, Instance};
use crate::error::{Error, Result};
use crate::linalg::{dot, sigmoid, softplus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

impl LinearModel {
    pub fn nonzero_count(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }
}

/// The instance with the largest value of `volume_feature`; ties go to the
/// lexicographically smallest tumor id.
pub fn select_largest_lesion<'a>(
    bag: &'a Bag,
    feature_names: &[String],
    volume_feature: &str,
) -> Result<&'a Instance> {
    let col = feature_names
        .iter()
        .position(|f| f == volume_feature)
        .ok_or_else(|| Error::Config(format!("volume feature '{volume_feature}' is not in the schema")))?;
    select_by_column(bag, col)
}

pub(crate) fn select_by_column(bag: &Bag, col: usize) -> Result<&Instance> {
    bag.instances
        .iter()
        .reduce(|best, cand| {
            let (b, c) = (best.features[col], cand.features[col]);
            if c > b || (c == b && cand.tumor_id < best.tumor_id) {
                cand
            } else {
                best
            }
        })
        .ok_or_else(|| Error::Domain(format!("bag {} is empty", bag.patient_id)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            max_iter: 10_000,
            tolerance: 1e-9,
        }
    }
}

/// Mean logistic loss of `(weights, bias)` on `(x, y)`.
pub fn mean_logistic_loss(x: &[Vec<f64>], y: &[u8], weights: &[f64], bias: f64) -> f64 {
    let total: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &label)| {
            let s = bias + dot(weights, row);
            softplus(s) - f64::from(label) * s
        })
        .sum();
    total / x.len() as f64
}

/// Mean logistic loss plus `lambda * ||weights||_1` (bias unpenalized).
pub fn lasso_objective(x: &[Vec<f64>], y: &[u8], weights: &[f64], bias: f64, lambda: f64) -> f64 {
    mean_logistic_loss(x, y, weights, bias) + lambda * weights.iter().map(|w| w.abs()).sum::<f64>()
}

fn smooth_gradient(x: &[Vec<f64>], y: &[u8], weights: &[f64], bias: f64) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let r = sigmoid(bias + dot(weights, row)) - f64::from(label);
        gb += r;
        for (g, v) in gw.iter_mut().zip(row) {
            *g += r * v;
        }
    }
    gw.iter_mut().for_each(|g| *g /= n);
    (gw, gb / n)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn check_problem(x: &[Vec<f64>], y: &[u8], config: &LassoConfig) -> Result<usize> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 rows with matching labels, got {} rows and {} labels",
            x.len(),
            y.len()
        )));
    }
    let width = x[0].len();
    if x.iter().any(|r| r.len() != width) {
        return Err(Error::Shape("ragged design matrix".into()));
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::Fit("labels must be 0 or 1".into()));
    }
    let positives = y.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::Fit("both classes must be present".into()));
    }
    if !(config.lambda >= 0.0 && config.lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be non-negative, got {}", config.lambda)));
    }
    Ok(width)
}

pub fn fit_l1_logreg(x: &[Vec<f64>], y: &[u8], config: &LassoConfig) -> Result<LinearModel> {
    Ok(fit_l1_logreg_traced(x, y, config)?.0)
}

/// Proximal gradient descent with backtracking; also returns the objective
/// after every accepted iterate (starting with the initial point).
///
/// Weights start at zero and the bias at the log-odds of the positive rate,
/// which is the exact minimizer when every weight is zero. For `lambda` above
/// `max_j |x_jᵀ(y - ȳ)| / n` the first proximal step therefore keeps all
/// weights at exactly zero.
pub fn fit_l1_logreg_traced(x: &[Vec<f64>], y: &[u8], config: &LassoConfig) -> Result<(LinearModel, Vec<f64>)> {
    let width = check_problem(x, y, config)?;
    let lambda = config.lambda;
    let rate = y.iter().map(|&l| f64::from(l)).sum::<f64>() / y.len() as f64;
    let mut weights = vec![0.0; width];
    let mut bias = (rate / (1.0 - rate)).ln();
    let mut step = 1.0;
    let mut smooth = mean_logistic_loss(x, y, &weights, bias);
    let mut trace = vec![smooth];

    for _ in 0..config.max_iter {
        let (gw, gb) = smooth_gradient(x, y, &weights, bias);
        let (new_w, new_b, new_smooth) = loop {
            let cand_w: Vec<f64> = weights
                .iter()
                .zip(&gw)
                .map(|(w, g)| soft_threshold(w - step * g, step * lambda))
                .collect();
            let cand_b = bias - step * gb;
            let dw: Vec<f64> = cand_w.iter().zip(&weights).map(|(a, b)| a - b).collect();
            let db = cand_b - bias;
            let lin = dot(&gw, &dw) + gb * db;
            let quad = (dot(&dw, &dw) + db * db) / (2.0 * step);
            let cand_smooth = mean_logistic_loss(x, y, &cand_w, cand_b);
            if cand_smooth <= smooth + lin + quad || step < 1e-12 {
                break (cand_w, cand_b, cand_smooth);
            }
            step *= 0.5;
        };
        let change = new_w
            .iter()
            .zip(&weights)
            .map(|(a, b)| (a - b).abs())
            .fold((new_b - bias).abs(), f64::max);
        weights = new_w;
        bias = new_b;
        smooth = new_smooth;
        trace.push(smooth + lambda * weights.iter().map(|w| w.abs()).sum::<f64>());
        if change < config.tolerance {
            break;
        }
    }
    if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
        return Err(Error::Numeric {
            block: "lasso".into(),
            detail: "non-finite coefficients".into(),
        });
    }
    Ok((LinearModel { weights, bias, lambda }, trace))
}

pub fn predict_logreg(model: &LinearModel, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    x.iter()
        .map(|row| {
            if row.len() != model.weights.len() {
                return Err(Error::Shape(format!(
                    "row width {} != model width {}",
                    row.len(),
                    model.weights.len()
                )));
            }
            Ok(sigmoid(model.bias + dot(&model.weights, row)))
        })
        .collect()
}

/// Smallest lambda at which every weight is exactly zero:
/// `max_j |x_jᵀ(y - ȳ)| / n`.
pub fn lambda_max(x: &[Vec<f64>], y: &[u8]) -> f64 {
    let n = x.len() as f64;
    let ybar = y.iter().map(|&l| f64::from(l)).sum::<f64>() / n;
    let width = x.first().map_or(0, Vec::len);
    (0..width)
        .map(|j| {
            x.iter()
                .zip(y)
                .map(|(r, &l)| r[j] * (f64::from(l) - ybar))
                .sum::<f64>()
                .abs()
                / n
        })
        .fold(0.0, f64::max)
}

/// How the penalty strength is chosen for each training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    /// Pick the grid value with the best pooled inner cross-validation AUC.
    Grid { values: Vec<f64>, inner_folds: usize },
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::Fixed(0.01)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub volume_feature: String,
    pub lambda: LambdaChoice,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            volume_feature: "volume".into(),
            lambda: LambdaChoice::default(),
            max_iter: 10_000,
            tolerance: 1e-9,
        }
    }
}

/// Largest-lesion design matrix and labels for labeled bags.
pub fn largest_lesion_design(bags: &[Bag], volume_col: usize) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    let mut x = Vec::with_capacity(bags.len());
    let mut y = Vec::with_capacity(bags.len());
    for bag in bags {
        let label = bag
            .label
            .ok_or_else(|| Error::Training(format!("bag {} is unlabeled", bag.patient_id)))?;
        x.push(select_by_column(bag, volume_col)?.features.clone());
        y.push(label);
    }
    Ok((x, y))
}

/// Fits the baseline on training bags, resolving the lambda choice.
pub fn fit_baseline(bags: &[Bag], feature_names: &[String], config: &BaselineConfig, seed: u64) -> Result<LinearModel> {
    let col = feature_names
        .iter()
        .position(|f| *f == config.volume_feature)
        .ok_or_else(|| {
            Error::Config(format!("volume feature '{}' is not in the schema", config.volume_feature))
        })?;
    let (x, y) = largest_lesion_design(bags, col)?;
    let lambda = match &config.lambda {
        LambdaChoice::Fixed(l) => *l,
        LambdaChoice::Grid { values, inner_folds } => select_lambda(bags, feature_names, col, values, *inner_folds, config, seed)?,
    };
    fit_l1_logreg(
        &x,
        &y,
        &LassoConfig {
            lambda,
            max_iter: config.max_iter,
            tolerance: config.tolerance,
        },
    )
}

fn select_lambda(
    bags: &[Bag],
    feature_names: &[String],
    col: usize,
    grid: &[f64],
    inner_folds: usize,
    config: &BaselineConfig,
    seed: u64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    let inner = Dataset {
        bags: bags.to_vec(),
        feature_names: feature_names.to_vec(),
        horizon_days: None,
    };
    let plan = stratified_folds(&inner, inner_folds, seed)?;
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &lambda in grid {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for fold in 0..plan.k {
            let (train, test) = plan.split(&inner, fold);
            let train: Vec<Bag> = train.into_iter().cloned().collect();
            let test: Vec<Bag> = test.into_iter().cloned().collect();
            let (x, y) = largest_lesion_design(&train, col)?;
            let model = fit_l1_logreg(
                &x,
                &y,
                &LassoConfig {
                    lambda,
                    max_iter: config.max_iter,
                    tolerance: config.tolerance,
                },
            )?;
            let (tx, ty) = largest_lesion_design(&test, col)?;
            scores.extend(predict_logreg(&model, &tx)?);
            labels.extend(ty);
        }
        let score = crate::eval::auc(&scores, &labels)?;
        if score > best.0 {
            best = (score, lambda);
        }
    }
    Ok(best.1)
}
