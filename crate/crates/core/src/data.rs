//! Patient bags: ingestion of per-lesion feature tables, survival labels,
//! z-score normalization, stratified fold plans and synthetic generators.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// One lesion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub patient_id: String,
    pub tumor_id: String,
    pub features: Vec<f64>,
}

/// One patient: a non-empty set of lesions plus outcome information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub patient_id: String,
    pub instances: Vec<Instance>,
    pub label: Option<u8>,
    pub survival_days: Option<f64>,
    pub event: Option<u8>,
}

impl Bag {
    pub fn new(patient_id: impl Into<String>, instances: Vec<Instance>) -> Result<Self> {
        let patient_id = patient_id.into();
        if instances.is_empty() {
            return Err(Error::Integrity(format!("bag {patient_id} has no instances")));
        }
        if let Some(stray) = instances.iter().find(|i| i.patient_id != patient_id) {
            return Err(Error::Integrity(format!(
                "instance {} belongs to patient {}, not {patient_id}",
                stray.tumor_id, stray.patient_id
            )));
        }
        Ok(Self {
            patient_id,
            instances,
            label: None,
            survival_days: None,
            event: None,
        })
    }

    /// Builds a labeled bag from raw feature rows; tumor ids are `t0, t1, ...`.
    pub fn from_rows<R: AsRef<[f64]>>(
        patient_id: impl Into<String>,
        rows: &[R],
        label: Option<u8>,
    ) -> Result<Self> {
        let patient_id = patient_id.into();
        let instances = rows
            .iter()
            .enumerate()
            .map(|(n, r)| Instance {
                patient_id: patient_id.clone(),
                tumor_id: format!("t{n}"),
                features: r.as_ref().to_vec(),
            })
            .collect();
        let mut bag = Bag::new(patient_id, instances)?;
        bag.label = label;
        Ok(bag)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Feature rows as an `N x D` matrix.
    pub fn feature_matrix(&self) -> Result<Matrix> {
        let rows: Vec<&[f64]> = self.instances.iter().map(|i| i.features.as_slice()).collect();
        Matrix::from_rows(&rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub bags: Vec<Bag>,
    pub feature_names: Vec<String>,
    pub horizon_days: Option<f64>,
}

impl Dataset {
    /// Checks the dataset-level invariants: unique patients, consistent
    /// feature width, finite values and binary labels.
    pub fn validate(&self) -> Result<()> {
        let width = self.feature_names.len();
        let mut seen = HashSet::new();
        for bag in &self.bags {
            if !seen.insert(bag.patient_id.as_str()) {
                return Err(Error::Integrity(format!(
                    "patient {} appears in more than one bag",
                    bag.patient_id
                )));
            }
            if bag.instances.is_empty() {
                return Err(Error::Integrity(format!("bag {} is empty", bag.patient_id)));
            }
            if matches!(bag.label, Some(l) if l > 1) {
                return Err(Error::Integrity(format!(
                    "bag {} has non-binary label",
                    bag.patient_id
                )));
            }
            for inst in &bag.instances {
                if inst.patient_id != bag.patient_id {
                    return Err(Error::Integrity(format!(
                        "instance {} filed under the wrong patient",
                        inst.tumor_id
                    )));
                }
                if inst.features.len() != width {
                    return Err(Error::Shape(format!(
                        "instance {}/{} has {} features, expected {width}",
                        inst.patient_id,
                        inst.tumor_id,
                        inst.features.len()
                    )));
                }
                if inst.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Integrity(format!(
                        "instance {}/{} has a non-finite feature",
                        inst.patient_id, inst.tumor_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_instances(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }

    pub fn labeled(&self) -> impl Iterator<Item = &Bag> {
        self.bags.iter().filter(|b| b.label.is_some())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }
}

/// Column names of the feature table. Every column not named here is a
/// feature, kept in file order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSchema {
    pub patient_id: String,
    pub tumor_id: String,
    pub label: String,
    pub survival_days: String,
    pub event: String,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self {
            patient_id: "patient_id".into(),
            tumor_id: "tumor_id".into(),
            label: "label".into(),
            survival_days: "survival_days".into(),
            event: "event".into(),
        }
    }
}

pub fn load_feature_table(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_table(file, schema)
}

/// Parses a feature table. Row indices in errors count data rows from 1
/// (the header is row 0).
pub fn read_feature_table<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let find = |name: &str| headers.iter().position(|h| h == name);
    let pid_col = find(&schema.patient_id)
        .ok_or_else(|| Error::Schema(format!("missing required column '{}'", schema.patient_id)))?;
    let tid_col = find(&schema.tumor_id)
        .ok_or_else(|| Error::Schema(format!("missing required column '{}'", schema.tumor_id)))?;
    let label_col = find(&schema.label);
    let surv_col = find(&schema.survival_days);
    let event_col = find(&schema.event);

    let reserved: Vec<usize> = [Some(pid_col), Some(tid_col), label_col, surv_col, event_col]
        .into_iter()
        .flatten()
        .collect();
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|c| !reserved.contains(c)).collect();
    if feature_cols.is_empty() {
        return Err(Error::Schema("table has no feature columns".into()));
    }
    let feature_names: Vec<String> = feature_cols.iter().map(|&c| headers[c].clone()).collect();

    let mut bags: Vec<Bag> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen_pairs: HashSet<(String, String)> = HashSet::new();

    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let cell = |c: usize| record.get(c).unwrap_or("").trim();

        let patient_id = cell(pid_col).to_string();
        let tumor_id = cell(tid_col).to_string();
        if patient_id.is_empty() || tumor_id.is_empty() {
            return Err(Error::Integrity(format!("row {row} has an empty identifier")));
        }
        if !seen_pairs.insert((patient_id.clone(), tumor_id.clone())) {
            return Err(Error::Integrity(format!(
                "duplicate (patient_id, tumor_id) = ({patient_id}, {tumor_id}) at row {row}"
            )));
        }

        let features = feature_cols
            .iter()
            .map(|&c| parse_finite(cell(c), row, &headers[c]))
            .collect::<Result<Vec<f64>>>()?;
        let label = label_col
            .map(|c| parse_binary(cell(c), row, &headers[c]))
            .transpose()?
            .flatten();
        let event = event_col
            .map(|c| parse_binary(cell(c), row, &headers[c]))
            .transpose()?
            .flatten();
        let survival_days = match surv_col {
            Some(c) if !cell(c).is_empty() => {
                let v = parse_finite(cell(c), row, &headers[c])?;
                if v < 0.0 {
                    return Err(Error::Parse {
                        row,
                        column: headers[c].clone(),
                        value: cell(c).to_string(),
                    });
                }
                Some(v)
            }
            _ => None,
        };

        let slot = *index.entry(patient_id.clone()).or_insert_with(|| {
            bags.push(Bag {
                patient_id: patient_id.clone(),
                instances: Vec::new(),
                label,
                survival_days,
                event,
            });
            bags.len() - 1
        });
        let bag = &mut bags[slot];
        if bag.label != label || bag.event != event || bag.survival_days != survival_days {
            return Err(Error::Integrity(format!(
                "patient {patient_id} has conflicting outcome values at row {row}"
            )));
        }
        bag.instances.push(Instance {
            patient_id,
            tumor_id,
            features,
        });
    }

    Ok(Dataset {
        bags,
        feature_names,
        horizon_days: None,
    })
}

fn parse_finite(raw: &str, row: usize, column: &str) -> Result<f64> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

fn parse_binary(raw: &str, row: usize, column: &str) -> Result<Option<u8>> {
    match raw {
        "" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

/// Writes the dataset in the same layout `read_feature_table` accepts.
/// Outcome columns are emitted only when some bag carries them.
pub fn write_feature_table<W: Write>(dataset: &Dataset, writer: W, schema: &FeatureSchema) -> Result<()> {
    let has_label = dataset.bags.iter().any(|b| b.label.is_some());
    let has_surv = dataset.bags.iter().any(|b| b.survival_days.is_some());
    let has_event = dataset.bags.iter().any(|b| b.event.is_some());

    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![schema.patient_id.clone(), schema.tumor_id.clone()];
    if has_label {
        header.push(schema.label.clone());
    }
    if has_surv {
        header.push(schema.survival_days.clone());
    }
    if has_event {
        header.push(schema.event.clone());
    }
    header.extend(dataset.feature_names.iter().cloned());
    wtr.write_record(&header)?;

    let opt = |v: Option<String>| v.unwrap_or_default();
    for bag in &dataset.bags {
        for inst in &bag.instances {
            let mut rec = vec![inst.patient_id.clone(), inst.tumor_id.clone()];
            if has_label {
                rec.push(opt(bag.label.map(|v| v.to_string())));
            }
            if has_surv {
                rec.push(opt(bag.survival_days.map(|v| v.to_string())));
            }
            if has_event {
                rec.push(opt(bag.event.map(|v| v.to_string())));
            }
            rec.extend(inst.features.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_feature_table(dataset: &Dataset, path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_feature_table(dataset, std::io::BufWriter::new(file), schema)
}

/// Patients dropped by [`make_binary_labels`] because they were censored
/// before the horizon.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionTally {
    pub excluded: usize,
    pub patient_ids: Vec<String>,
}

/// Converts survival data into binary status at `horizon_days`:
/// death on or before the horizon is 1, survival past it is 0, and patients
/// censored on or before the horizon are excluded.
pub fn make_binary_labels(dataset: &Dataset, horizon_days: f64) -> Result<(Dataset, ExclusionTally)> {
    if !(horizon_days.is_finite() && horizon_days > 0.0) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon_days}")));
    }
    let mut bags = Vec::with_capacity(dataset.bags.len());
    let mut tally = ExclusionTally::default();
    for bag in &dataset.bags {
        let (Some(days), Some(event)) = (bag.survival_days, bag.event) else {
            return Err(Error::Labeling(format!(
                "patient {} lacks survival_days or event",
                bag.patient_id
            )));
        };
        let label = if days > horizon_days {
            0
        } else if event == 1 {
            1
        } else {
            tally.excluded += 1;
            tally.patient_ids.push(bag.patient_id.clone());
            continue;
        };
        let mut bag = bag.clone();
        bag.label = Some(label);
        bags.push(bag);
    }
    Ok((
        Dataset {
            bags,
            feature_names: dataset.feature_names.clone(),
            horizon_days: Some(horizon_days),
        },
        tally,
    ))
}

const DEGENERATE_STD: f64 = 1e-12;

/// Per-feature z-score statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Normalizer {
    pub fn width(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, bags: &[Bag]) -> Result<Vec<Bag>> {
        apply_zscore(self, bags)
    }

    pub fn transform(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// Fits z-score statistics over every instance of every bag.
/// Constant features get std 1 so they map to zero.
pub fn fit_zscore(bags: &[Bag]) -> Result<Normalizer> {
    let mut rows = bags.iter().flat_map(|b| b.instances.iter().map(|i| i.features.as_slice()));
    let Some(first) = rows.next() else {
        return Err(Error::Fit("z-score fit needs at least 2 instances, got 0".into()));
    };
    let width = first.len();
    let all: Vec<&[f64]> = std::iter::once(first).chain(rows).collect();
    if all.len() < 2 {
        return Err(Error::Fit(format!(
            "z-score fit needs at least 2 instances, got {}",
            all.len()
        )));
    }
    if let Some(bad) = all.iter().find(|r| r.len() != width) {
        return Err(Error::Shape(format!("feature width {} != {width}", bad.len())));
    }
    let n = all.len() as f64;
    let mut means = vec![0.0; width];
    for r in &all {
        for (m, v) in means.iter_mut().zip(*r) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut vars = vec![0.0; width];
    for r in &all {
        for ((s, v), m) in vars.iter_mut().zip(*r).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    let stds = vars
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd < DEGENERATE_STD {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(Normalizer { means, stds })
}

pub fn apply_zscore(normalizer: &Normalizer, bags: &[Bag]) -> Result<Vec<Bag>> {
    bags.iter()
        .map(|bag| {
            let mut out = bag.clone();
            for inst in &mut out.instances {
                if inst.features.len() != normalizer.width() {
                    return Err(Error::Shape(format!(
                        "instance {}/{} has width {}, normalizer expects {}",
                        inst.patient_id,
                        inst.tumor_id,
                        inst.features.len(),
                        normalizer.width()
                    )));
                }
                inst.features = normalizer.transform(&inst.features);
            }
            Ok(out)
        })
        .collect()
}

/// Assignment of labeled patients to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.assignments.get(patient_id).copied()
    }

    /// Splits the planned bags of `dataset` into (train, test) for `fold`,
    /// preserving dataset order. Bags absent from the plan are skipped.
    pub fn split<'a>(&self, dataset: &'a Dataset, fold: usize) -> (Vec<&'a Bag>, Vec<&'a Bag>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for bag in &dataset.bags {
            match self.fold_of(&bag.patient_id) {
                Some(f) if f == fold => test.push(bag),
                Some(_) => train.push(bag),
                None => {}
            }
        }
        (train, test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Label-stratified fold assignment. Each class is shuffled with `seed` and
/// dealt round-robin; negatives continue where positives stopped so overall
/// fold sizes also differ by at most one.
pub fn stratified_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut pos: Vec<&str> = Vec::new();
    let mut neg: Vec<&str> = Vec::new();
    for bag in dataset.labeled() {
        match bag.label {
            Some(1) => pos.push(&bag.patient_id),
            _ => neg.push(&bag.patient_id),
        }
    }
    let n = pos.len() + neg.len();
    if k > n {
        return Err(Error::Config(format!("{k} folds requested for {n} labeled bags")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let offset = pos.len() % k;
    let mut assignments = BTreeMap::new();
    for (i, id) in pos.iter().enumerate() {
        assignments.insert(id.to_string(), i % k);
    }
    for (i, id) in neg.iter().enumerate() {
        assignments.insert(id.to_string(), (offset + i) % k);
    }
    Ok(FoldPlan { k, assignments })
}

/// Which counterexample of the expressiveness argument a pair illustrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fig2Case {
    A,
    B,
    C,
}

impl Fig2Case {
    pub const ALL: [Fig2Case; 3] = [Fig2Case::A, Fig2Case::B, Fig2Case::C];

    pub fn tag(self) -> &'static str {
        match self {
            Fig2Case::A => "a",
            Fig2Case::B => "b",
            Fig2Case::C => "c",
        }
    }
}

/// Two embedding bags that some pooling functions cannot tell apart.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Pair {
    pub case: Fig2Case,
    pub first: Matrix,
    pub second: Matrix,
}

/// The three counterexample pairs for given "red" (high-impact) and
/// "green" (low-impact) instance embeddings:
/// (a) {r} vs {r, g, g}; (b) {r, g} vs {r, r, g, g}; (c) {r, r} vs {r, r, r}.
pub fn fig2_pairs_from(red: &[f64], green: &[f64]) -> Result<Vec<Fig2Pair>> {
    if red.is_empty() || red.len() != green.len() {
        return Err(Error::Shape(format!(
            "red/green embeddings must share a positive width, got {} and {}",
            red.len(),
            green.len()
        )));
    }
    let m = |rows: &[&[f64]]| Matrix::from_rows(rows);
    Ok(vec![
        Fig2Pair {
            case: Fig2Case::A,
            first: m(&[red])?,
            second: m(&[red, green, green])?,
        },
        Fig2Pair {
            case: Fig2Case::B,
            first: m(&[red, green])?,
            second: m(&[red, red, green, green])?,
        },
        Fig2Pair {
            case: Fig2Case::C,
            first: m(&[red, red])?,
            second: m(&[red, red, red])?,
        },
    ])
}

/// Random counterexample pairs with `red` strictly above `green` in every
/// coordinate, so max pooling sees only `red` in case (a).
pub fn gen_fig2_pairs(dim: usize, seed: u64) -> Result<Vec<Fig2Pair>> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let green: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let red: Vec<f64> = green.iter().map(|g| g + rng.gen_range(0.5..1.5)).collect();
    fig2_pairs_from(&red, &green)
}

/// Settings of the synthetic cumulative-risk counting task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountingTaskConfig {
    pub n_bags: usize,
    pub min_bag_size: usize,
    pub max_bag_size: usize,
    pub dim: usize,
    pub threshold: usize,
    /// Initial probability that an instance is high-risk.
    pub high_risk_rate: f64,
    pub low_risk_mean: f64,
    pub high_risk_mean: f64,
    pub spread: f64,
    pub seed: u64,
}

impl Default for CountingTaskConfig {
    fn default() -> Self {
        Self {
            n_bags: 500,
            min_bag_size: 2,
            max_bag_size: 8,
            dim: 8,
            threshold: 2,
            high_risk_rate: 0.3,
            low_risk_mean: -1.0,
            high_risk_mean: 1.0,
            spread: 1.0,
            seed: 0,
        }
    }
}

/// A generated counting-task dataset with its instance-level ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CountingTask {
    pub dataset: Dataset,
    /// `high_risk[b][n]` is the true class of instance `n` in bag `b`.
    pub high_risk: Vec<Vec<bool>>,
    /// Bernoulli rate actually used after balance adjustment.
    pub rate_used: f64,
}

const BALANCE_RANGE: (f64, f64) = (0.2, 0.8);
const RATE_STEP: f64 = 0.05;
const MAX_REGENERATIONS: usize = 16;

/// Bags whose label is 1 exactly when the number of high-risk instances
/// reaches `threshold`. If the positive fraction falls outside [0.2, 0.8]
/// the rate is shifted and the bags regenerated.
pub fn gen_counting_task(config: &CountingTaskConfig) -> Result<CountingTask> {
    let c = config;
    if c.n_bags == 0 || c.dim == 0 || c.threshold == 0 {
        return Err(Error::Config("n_bags, dim and threshold must be positive".into()));
    }
    if c.min_bag_size == 0 || c.min_bag_size > c.max_bag_size {
        return Err(Error::Config(format!(
            "infeasible bag size range [{}, {}]",
            c.min_bag_size, c.max_bag_size
        )));
    }
    if !(c.spread > 0.0 && c.spread.is_finite()) {
        return Err(Error::Config(format!("spread must be positive, got {}", c.spread)));
    }
    if !(0.0..=1.0).contains(&c.high_risk_rate) {
        return Err(Error::Config(format!(
            "high_risk_rate must lie in [0, 1], got {}",
            c.high_risk_rate
        )));
    }

    let mut rate = c.high_risk_rate;
    for _ in 0..MAX_REGENERATIONS {
        let task = sample_counting_task(c, rate);
        let positives = task.dataset.bags.iter().filter(|b| b.label == Some(1)).count();
        let frac = positives as f64 / c.n_bags as f64;
        if frac < BALANCE_RANGE.0 {
            rate = (rate + RATE_STEP).min(1.0);
        } else if frac > BALANCE_RANGE.1 {
            rate = (rate - RATE_STEP).max(0.0);
        } else {
            return Ok(task);
        }
    }
    Err(Error::Config(format!(
        "could not reach class balance within {BALANCE_RANGE:?} for threshold {}",
        c.threshold
    )))
}

fn sample_counting_task(c: &CountingTaskConfig, rate: f64) -> CountingTask {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let width = (c.n_bags.max(1) as f64).log10() as usize + 1;
    let mut bags = Vec::with_capacity(c.n_bags);
    let mut truth = Vec::with_capacity(c.n_bags);
    for b in 0..c.n_bags {
        let patient_id = format!("P{b:0width$}");
        let size = rng.gen_range(c.min_bag_size..=c.max_bag_size);
        let mut classes = Vec::with_capacity(size);
        let mut instances = Vec::with_capacity(size);
        for n in 0..size {
            let high = rng.gen_bool(rate);
            let mean = if high { c.high_risk_mean } else { c.low_risk_mean };
            let features = (0..c.dim)
                .map(|_| mean + c.spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            classes.push(high);
            instances.push(Instance {
                patient_id: patient_id.clone(),
                tumor_id: format!("T{n}"),
                features,
            });
        }
        let count = classes.iter().filter(|&&h| h).count();
        bags.push(Bag {
            patient_id,
            instances,
            label: Some(u8::from(count >= c.threshold)),
            survival_days: None,
            event: None,
        });
        truth.push(classes);
    }
    CountingTask {
        dataset: Dataset {
            bags,
            feature_names: (0..c.dim).map(|j| format!("f{j}")).collect(),
            horizon_days: None,
        },
        high_risk: truth,
        rate_used: rate,
    }
}
