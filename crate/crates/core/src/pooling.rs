//! Multiple-instance pooling over instance embeddings.
//!
//! `max`, `mean` and softmax attention (`att`) are permutation invariant but
//! not injective on multisets: some distinct bags map to the same
//! representation. `sum` and sigmoid-gated attention (`uatt`) keep bag size
//! and multiplicity visible in the output.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Fig2Case, Fig2Pair};
use crate::error::{Error, Result};
use crate::linalg::{dot, max_abs_diff, sigmoid, Matrix};

/// Infinity-norm gap below which two bag representations count as collapsed.
pub const COLLAPSE_THRESHOLD: f64 = 1e-9;

pub const DEFAULT_ATTENTION_DIM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingKind {
    Max,
    Mean,
    Att,
    Sum,
    Uatt,
}

impl PoolingKind {
    pub const ALL: [PoolingKind; 5] = [
        PoolingKind::Max,
        PoolingKind::Mean,
        PoolingKind::Att,
        PoolingKind::Sum,
        PoolingKind::Uatt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolingKind::Max => "max",
            PoolingKind::Mean => "mean",
            PoolingKind::Att => "att",
            PoolingKind::Sum => "sum",
            PoolingKind::Uatt => "uatt",
        }
    }

    pub fn needs_attention(self) -> bool {
        matches!(self, PoolingKind::Att | PoolingKind::Uatt)
    }

    pub fn is_injective(self) -> bool {
        matches!(self, PoolingKind::Sum | PoolingKind::Uatt)
    }
}

impl fmt::Display for PoolingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PoolingKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown pooling '{s}'; valid kinds are max, mean, att, sum, uatt"
                ))
            })
    }
}

/// Attention MLP parameters: `v` is `L x M`, `w` has length `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub v: Matrix,
    pub w: Vec<f64>,
}

impl AttentionParams {
    pub fn new(v: Matrix, w: Vec<f64>) -> Result<Self> {
        if v.rows() == 0 || v.rows() != w.len() {
            return Err(Error::Shape(format!(
                "attention V has {} rows but w has length {}",
                v.rows(),
                w.len()
            )));
        }
        if !v.is_finite() || w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("attention parameters must be finite".into()));
        }
        Ok(Self { v, w })
    }

    pub fn zeros(attention_dim: usize, embedding_dim: usize) -> Self {
        Self {
            v: Matrix::zeros(attention_dim, embedding_dim),
            w: vec![0.0; attention_dim],
        }
    }

    /// Standard-normal entries scaled by `scale`; used for generic-position
    /// checks where parameters must not be special.
    pub fn random(attention_dim: usize, embedding_dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || scale * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let v = (0..attention_dim * embedding_dim).map(|_| draw()).collect();
        let w = (0..attention_dim).map(|_| draw()).collect();
        Self {
            v: Matrix::from_vec(attention_dim, embedding_dim, v).expect("sized above"),
            w,
        }
    }

    pub fn attention_dim(&self) -> usize {
        self.v.rows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.v.cols()
    }
}

fn check_bag(bag: &Matrix) -> Result<()> {
    if bag.rows() == 0 {
        return Err(Error::Domain("cannot pool an empty bag".into()));
    }
    Ok(())
}

/// Elementwise maximum over instances.
pub fn pool_max(bag: &Matrix) -> Result<Vec<f64>> {
    check_bag(bag)?;
    let mut z = bag.row(0).to_vec();
    for row in bag.iter_rows().skip(1) {
        for (zj, &h) in z.iter_mut().zip(row) {
            if h > *zj {
                *zj = h;
            }
        }
    }
    Ok(z)
}

/// Row index holding the maximum of each column; ties go to the lowest index.
pub fn argmax_rows(bag: &Matrix) -> Vec<usize> {
    (0..bag.cols())
        .map(|j| {
            let mut best = 0;
            for n in 1..bag.rows() {
                if bag.get(n, j) > bag.get(best, j) {
                    best = n;
                }
            }
            best
        })
        .collect()
}

pub fn pool_sum(bag: &Matrix) -> Result<Vec<f64>> {
    check_bag(bag)?;
    let mut z = vec![0.0; bag.cols()];
    for row in bag.iter_rows() {
        for (zj, &h) in z.iter_mut().zip(row) {
            *zj += h;
        }
    }
    Ok(z)
}

pub fn pool_mean(bag: &Matrix) -> Result<Vec<f64>> {
    let mut z = pool_sum(bag)?;
    let n = bag.rows() as f64;
    z.iter_mut().for_each(|v| *v /= n);
    Ok(z)
}

/// Per-instance hidden activations `tanh(V h_n)` and logits `wᵀ tanh(V h_n)`.
pub(crate) fn attention_hidden(params: &AttentionParams, bag: &Matrix) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if bag.cols() != params.embedding_dim() {
        return Err(Error::Shape(format!(
            "attention expects embedding width {}, bag has {}",
            params.embedding_dim(),
            bag.cols()
        )));
    }
    let hidden: Vec<Vec<f64>> = bag
        .iter_rows()
        .map(|h| params.v.matvec(h).into_iter().map(f64::tanh).collect())
        .collect();
    let logits = hidden.iter().map(|u| dot(&params.w, u)).collect();
    Ok((hidden, logits))
}

pub fn attention_logits(params: &AttentionParams, bag: &Matrix) -> Result<Vec<f64>> {
    check_bag(bag)?;
    Ok(attention_hidden(params, bag)?.1)
}

/// Softmax with the maximum logit subtracted first.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn weighted_sum(bag: &Matrix, weights: &[f64]) -> Vec<f64> {
    bag.matvec_t(weights)
}

/// Softmax attention: `a = softmax(logits)`, `z = Σ a_n h_n`.
pub fn pool_att(params: &AttentionParams, bag: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let logits = attention_logits(params, bag)?;
    let a = softmax(&logits);
    Ok((weighted_sum(bag, &a), a))
}

/// Sigmoid-gated attention: `a_n = σ(logit_n)`, `z = Σ a_n h_n`, with no
/// normalization across the bag.
pub fn pool_uatt(params: &AttentionParams, bag: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let logits = attention_logits(params, bag)?;
    let a: Vec<f64> = logits.into_iter().map(sigmoid).collect();
    Ok((weighted_sum(bag, &a), a))
}

/// Result of pooling one bag.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub z: Vec<f64>,
    pub attention: Option<Vec<f64>>,
}

/// Dispatches on `kind`; attention kinds require `params`.
pub fn pool(kind: PoolingKind, bag: &Matrix, params: Option<&AttentionParams>) -> Result<Pooled> {
    let need = || {
        params.ok_or_else(|| Error::Config(format!("{kind} pooling requires attention parameters")))
    };
    Ok(match kind {
        PoolingKind::Max => Pooled {
            z: pool_max(bag)?,
            attention: None,
        },
        PoolingKind::Mean => Pooled {
            z: pool_mean(bag)?,
            attention: None,
        },
        PoolingKind::Sum => Pooled {
            z: pool_sum(bag)?,
            attention: None,
        },
        PoolingKind::Att => {
            let (z, a) = pool_att(need()?, bag)?;
            Pooled { z, attention: Some(a) }
        }
        PoolingKind::Uatt => {
            let (z, a) = pool_uatt(need()?, bag)?;
            Pooled { z, attention: Some(a) }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub collapsed: bool,
    pub gap: f64,
}

/// Which pooling kinds tell each counterexample pair apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub threshold: f64,
    /// kind -> case -> outcome
    pub results: BTreeMap<PoolingKind, BTreeMap<Fig2Case, CaseOutcome>>,
    /// Expected behaviours that did not hold; empty when every claim holds.
    pub violations: Vec<String>,
    pub claims_hold: bool,
}

impl InjectivityReport {
    pub fn outcome(&self, kind: PoolingKind, case: Fig2Case) -> Option<&CaseOutcome> {
        self.results.get(&kind)?.get(&case)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Expected collapse pattern: `Some(true)` must collapse, `Some(false)` must
/// be distinguished, `None` is not constrained.
pub fn expected_collapse(kind: PoolingKind, case: Fig2Case) -> Option<bool> {
    use Fig2Case::*;
    use PoolingKind::*;
    match (kind, case) {
        (Mean, B | C) | (Max, A | C) | (Att, C) => Some(true),
        (Sum | Uatt, _) => Some(false),
        _ => None,
    }
}

/// Pools both bags of every pair with every requested kind and records the
/// infinity-norm gap between the two representations.
pub fn injectivity_report(
    kinds: &[PoolingKind],
    pairs: &[Fig2Pair],
    params: &AttentionParams,
) -> Result<InjectivityReport> {
    let mut results: BTreeMap<PoolingKind, BTreeMap<Fig2Case, CaseOutcome>> = BTreeMap::new();
    let mut violations = Vec::new();
    for &kind in kinds {
        for pair in pairs {
            let z1 = pool(kind, &pair.first, Some(params))?.z;
            let z2 = pool(kind, &pair.second, Some(params))?.z;
            let gap = max_abs_diff(&z1, &z2);
            let collapsed = gap < COLLAPSE_THRESHOLD;
            if let Some(expected) = expected_collapse(kind, pair.case) {
                if expected != collapsed {
                    violations.push(format!(
                        "{kind} on case {}: expected {}, gap {gap:e}",
                        pair.case.tag(),
                        if expected { "collapse" } else { "distinction" }
                    ));
                }
            }
            results
                .entry(kind)
                .or_default()
                .insert(pair.case, CaseOutcome { collapsed, gap });
        }
    }
    Ok(InjectivityReport {
        threshold: COLLAPSE_THRESHOLD,
        claims_hold: violations.is_empty(),
        results,
        violations,
    })
}
