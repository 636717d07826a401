//! Predicting state vote share from consumption vectors: ridge, boosted
//! trees and random forests, scored by R² under k-fold cross-validation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::interactions::{InteractionMatrix, state_key};
use crate::registry::{Leaning, Registry};
use crate::{Error, Result};

pub fn r_squared(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() || actual.len() < 2 {
        return Err(Error::invalid(format!(
            "R² needs two equal-length series of at least 2 values, got {} and {}",
            actual.len(),
            predicted.len()
        )));
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ConstantTarget);
    }
    let ss_res: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

fn check_xy(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::invalid(format!(
            "{} feature rows for {} targets",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("feature rows differ in length"));
    }
    Ok(d)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// Minimize `‖y − Xw − b‖² + λ‖w‖²`. The intercept is not penalized.
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<LinearModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "ridge penalty must be >= 0, got {lambda}"
        )));
    }
    let d = check_xy(x, y)?;
    let n = x.len();
    let x_mean: Vec<f64> = (0..d)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let y_mean = mean(y);
    let xc = DMatrix::from_fn(n, d, |i, j| x[i][j] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = xc.transpose() * &xc;
    let scale = gram.diagonal().max().max(1.0);
    for j in 0..d {
        gram[(j, j)] += lambda;
    }
    let rhs = xc.transpose() * yc;
    let chol = gram.clone().cholesky().ok_or(Error::Singular)?;
    let l = chol.l();
    if (0..d).any(|j| l[(j, j)] * l[(j, j)] <= 1e-12 * scale) {
        return Err(Error::Singular);
    }
    let w = chol.solve(&rhs);
    let intercept = y_mean - w.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(LinearModel {
        intercept,
        coef: w.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf(_)))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 3,
            min_samples_leaf: 1,
        }
    }
}

fn sse_of(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0usize);
    for v in values {
        s += v;
        s2 += v * v;
        n += 1;
    }
    (s, s2, n)
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Best SSE-reducing split over every feature and every midpoint between
/// consecutive distinct values.
fn best_split(x: &[Vec<f64>], y: &[f64], idx: &[usize], min_leaf: usize) -> Option<BestSplit> {
    let d = x[idx[0]].len();
    let (total_s, total_s2, n) = sse_of(idx.iter().map(|&i| y[i]));
    let parent = total_s2 - total_s * total_s / n as f64;
    let mut best: Option<BestSplit> = None;
    let mut order = idx.to_vec();
    for f in 0..d {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let (mut ls, mut ls2) = (0.0, 0.0);
        for pos in 0..n - 1 {
            let yi = y[order[pos]];
            ls += yi;
            ls2 += yi * yi;
            let nl = pos + 1;
            let nr = n - nl;
            let (a, b) = (x[order[pos]][f], x[order[pos + 1]][f]);
            if a == b || nl < min_leaf || nr < min_leaf {
                continue;
            }
            let rs = total_s - ls;
            let rs2 = total_s2 - ls2;
            let child = (ls2 - ls * ls / nl as f64) + (rs2 - rs * rs / nr as f64);
            let gain = parent - child;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(BestSplit {
                    feature: f,
                    threshold: a + (b - a) / 2.0,
                    gain,
                });
            }
        }
    }
    best.filter(|b| b.gain > 1e-12 * parent.abs().max(f64::MIN_POSITIVE))
}

pub fn fit_tree(x: &[Vec<f64>], y: &[f64], params: TreeParams) -> Result<Tree> {
    check_xy(x, y)?;
    let idx: Vec<usize> = (0..x.len()).collect();
    fit_tree_on(x, y, &idx, params)
}

fn fit_tree_on(x: &[Vec<f64>], y: &[f64], idx: &[usize], params: TreeParams) -> Result<Tree> {
    let min_leaf = params.min_samples_leaf.max(1);
    if idx.len() < 2 * min_leaf {
        return Err(Error::InsufficientSamples {
            samples: idx.len(),
            min_leaf,
        });
    }
    let mut nodes = Vec::new();
    grow(
        x,
        y,
        idx.to_vec(),
        0,
        params.max_depth,
        min_leaf,
        &mut nodes,
    );
    Ok(Tree { nodes })
}

fn grow(
    x: &[Vec<f64>],
    y: &[f64],
    idx: Vec<usize>,
    depth: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let at = nodes.len();
    nodes.push(Node::Leaf(
        idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64,
    ));
    if depth >= max_depth || idx.len() < 2 * min_leaf {
        return at;
    }
    let Some(split) = best_split(x, y, &idx, min_leaf) else {
        return at;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = idx
        .iter()
        .partition(|&&i| x[i][split.feature] <= split.threshold);
    let left = grow(x, y, l, depth + 1, max_depth, min_leaf, nodes);
    let right = grow(x, y, r, depth + 1, max_depth, min_leaf, nodes);
    nodes[at] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    at
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub stages: usize,
    pub learning_rate: f64,
    pub tree: TreeParams,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            stages: 100,
            learning_rate: 0.1,
            tree: TreeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Training SSE after stage 0 (the mean) and after each tree.
    pub train_sse: Vec<f64>,
}

impl GbdtModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.init
            + self
                .trees
                .iter()
                .map(|t| self.learning_rate * t.predict(x))
                .sum::<f64>()
    }
}

pub fn fit_gbdt(x: &[Vec<f64>], y: &[f64], params: GbdtParams) -> Result<GbdtModel> {
    check_xy(x, y)?;
    if params.stages == 0 || params.tree.max_depth == 0 {
        return Err(Error::invalid(
            "boosting needs at least one stage of depth >= 1",
        ));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::invalid(format!(
            "learning rate {} outside (0, 1]",
            params.learning_rate
        )));
    }
    let init = mean(y);
    let mut pred = vec![init; y.len()];
    let sse = |pred: &[f64]| {
        y.iter()
            .zip(pred)
            .map(|(a, p)| (a - p).powi(2))
            .sum::<f64>()
    };
    let mut train_sse = vec![sse(&pred)];
    let mut trees = Vec::with_capacity(params.stages);
    for _ in 0..params.stages {
        let residual: Vec<f64> = y.iter().zip(&pred).map(|(a, p)| a - p).collect();
        let tree = fit_tree(x, &residual, params.tree)?;
        for (p, row) in pred.iter_mut().zip(x) {
            *p += params.learning_rate * tree.predict(row);
        }
        train_sse.push(sse(&pred));
        trees.push(tree);
    }
    Ok(GbdtModel {
        init,
        learning_rate: params.learning_rate,
        trees,
        train_sse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsample {
    Bootstrap,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub tree: TreeParams,
    pub subsample: Subsample,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 100,
            tree: TreeParams {
                max_depth: 8,
                min_samples_leaf: 1,
            },
            subsample: Subsample::Bootstrap,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

pub fn fit_random_forest(x: &[Vec<f64>], y: &[f64], params: ForestParams) -> Result<ForestModel> {
    check_xy(x, y)?;
    if params.trees == 0 {
        return Err(Error::invalid("a forest needs at least one tree"));
    }
    let n = x.len();
    let trees = (0..params.trees)
        .into_par_iter()
        .map(|t| {
            let idx: Vec<usize> = match params.subsample {
                Subsample::Full => (0..n).collect(),
                Subsample::Bootstrap => {
                    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                    rng.set_stream(t as u64);
                    let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                    idx.sort_unstable();
                    idx
                }
            };
            fit_tree_on(x, y, &idx, params.tree)
        })
        .collect::<Result<_>>()?;
    Ok(ForestModel { trees })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    Ridge { lambda: f64 },
    Gbdt(GbdtParams),
    Forest(ForestParams),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Ridge { .. } => "ridge",
            ModelSpec::Gbdt(_) => "gbdt",
            ModelSpec::Forest(_) => "random_forest",
        }
    }

    /// Fit on the training rows and predict the test rows.
    pub fn fit_predict(
        &self,
        x_train: &[Vec<f64>],
        y_train: &[f64],
        x_test: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        Ok(match self {
            ModelSpec::Ridge { lambda } => {
                let m = fit_ridge(x_train, y_train, *lambda)?;
                x_test.iter().map(|r| m.predict(r)).collect()
            }
            ModelSpec::Gbdt(p) => {
                let m = fit_gbdt(x_train, y_train, *p)?;
                x_test.iter().map(|r| m.predict(r)).collect()
            }
            ModelSpec::Forest(p) => {
                let m = fit_random_forest(x_train, y_train, *p)?;
                x_test.iter().map(|r| m.predict(r)).collect()
            }
        })
    }
}

/// Sizes of `k` contiguous folds over `n` rows; the first `n % k` folds
/// get one extra row.
pub fn fold_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|f| n / k + usize::from(f < n % k)).collect()
}

/// Row indices of each fold after a seeded shuffle.
pub fn folds(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for size in fold_sizes(n, k) {
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// R² per fold; missing where the fold's targets are constant.
    pub folds: Vec<Option<f64>>,
    pub mean: Option<f64>,
    /// Out-of-fold prediction for every row.
    pub predictions: Vec<f64>,
    pub warnings: Vec<String>,
}

/// k-fold cross-validation with a caller-supplied fit-and-predict step.
pub fn cross_validate<F>(
    x: &[Vec<f64>],
    y: &[f64],
    k: usize,
    seed: u64,
    fit_predict: F,
) -> Result<CvReport>
where
    F: Fn(&[Vec<f64>], &[f64], &[Vec<f64>]) -> Result<Vec<f64>> + Sync,
{
    check_xy(x, y)?;
    if k < 2 || k > x.len() {
        return Err(Error::invalid(format!("{k} folds for {} rows", x.len())));
    }
    let folds = folds(x.len(), k, seed);
    let results: Vec<(Vec<usize>, Vec<f64>)> = folds
        .par_iter()
        .map(|test| {
            let in_test: BTreeSet<usize> = test.iter().copied().collect();
            let train: Vec<usize> = (0..x.len()).filter(|i| !in_test.contains(i)).collect();
            let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let xs: Vec<Vec<f64>> = test.iter().map(|&i| x[i].clone()).collect();
            Ok((test.clone(), fit_predict(&xt, &yt, &xs)?))
        })
        .collect::<Result<_>>()?;
    let mut predictions = vec![f64::NAN; x.len()];
    let mut scores = Vec::with_capacity(k);
    let mut warnings = Vec::new();
    for (f, (test, pred)) in results.into_iter().enumerate() {
        let actual: Vec<f64> = test.iter().map(|&i| y[i]).collect();
        for (&i, p) in test.iter().zip(&pred) {
            predictions[i] = *p;
        }
        match r_squared(&actual, &pred) {
            Ok(r) => scores.push(Some(r)),
            Err(Error::ConstantTarget) | Err(Error::Invalid(_)) => {
                warnings.push(format!("fold {f} has constant targets; R² undefined"));
                scores.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let valid: Vec<f64> = scores.iter().flatten().copied().collect();
    let mean = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
    Ok(CvReport {
        folds: scores,
        mean,
        predictions,
        warnings,
    })
}

pub fn kfold_cv(
    x: &[Vec<f64>],
    y: &[f64],
    spec: &ModelSpec,
    k: usize,
    seed: u64,
) -> Result<CvReport> {
    cross_validate(x, y, k, seed, |xt, yt, xs| spec.fit_predict(xt, yt, xs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionDataset {
    pub states: Vec<String>,
    pub features: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    /// Outlets kept per leaning, ranked by interactions received.
    pub top_n: usize,
    /// Only outlets from this country; `None` keeps all.
    pub media_country: Option<String>,
    /// Use `log10(1 + x)` instead of raw interaction counts.
    pub log_scale: bool,
}

/// Select the feature outlets: top `top_n` per leaning by column sum.
pub fn select_media(
    matrix: &InteractionMatrix,
    registry: &Registry,
    params: &DatasetParams,
) -> Vec<String> {
    let outlets = registry.by_id();
    let mut by_leaning: BTreeMap<Leaning, Vec<(&str, f64)>> = BTreeMap::new();
    for (o, v) in matrix.col_sums() {
        let Some(meta) = outlets.get(o) else { continue };
        if params
            .media_country
            .as_deref()
            .is_some_and(|c| c != meta.country)
        {
            continue;
        }
        by_leaning
            .entry(meta.ideology.leaning())
            .or_default()
            .push((o, v));
    }
    let mut picked = Vec::new();
    for (_, mut list) in by_leaning {
        list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        picked.extend(
            list.into_iter()
                .take(params.top_n)
                .map(|(o, _)| o.to_string()),
        );
    }
    picked.sort();
    picked
}

/// One row per state with a known target; missing interactions are 0.
/// `state_outlet` rows are `Country/State` keys within `country`.
pub fn build_dataset(
    state_outlet: &InteractionMatrix,
    registry: &Registry,
    country: &str,
    targets: &BTreeMap<String, f64>,
    params: &DatasetParams,
) -> RegressionDataset {
    let features = select_media(state_outlet, registry, params);
    let mut states = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (state, &share) in targets {
        let key = state_key(country, state);
        let row: Vec<f64> = features
            .iter()
            .map(|f| {
                let v = state_outlet.get(&key, f);
                if params.log_scale {
                    (1.0 + v).log10()
                } else {
                    v
                }
            })
            .collect();
        states.push(state.clone());
        x.push(row);
        y.push(share);
    }
    RegressionDataset {
        states,
        features,
        x,
        y,
    }
}

#[derive(Debug, Deserialize)]
struct TargetRow {
    state: String,
    #[serde(default)]
    dem_share: Option<f64>,
    #[serde(default)]
    dem_votes: Option<f64>,
    #[serde(default)]
    rep_votes: Option<f64>,
}

/// Democratic two-party share per state, from either a `state,dem_share`
/// file or a `state,dem_votes,rep_votes` file. Other parties are ignored.
pub fn read_targets<R: Read>(input: R) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for row in csv::Reader::from_reader(input).deserialize::<TargetRow>() {
        let row = row?;
        let share = match (row.dem_share, row.dem_votes, row.rep_votes) {
            (Some(s), _, _) => s,
            (None, Some(d), Some(r)) if d + r > 0.0 => d / (d + r),
            _ => {
                return Err(Error::invalid(format!(
                    "no usable target for state '{}'",
                    row.state
                )));
            }
        };
        if !(0.0..=1.0).contains(&share) {
            return Err(Error::invalid(format!(
                "vote share {share} for '{}' outside [0, 1]",
                row.state
            )));
        }
        if out.insert(row.state.clone(), share).is_some() {
            return Err(Error::invalid(format!(
                "state '{}' listed twice",
                row.state
            )));
        }
    }
    Ok(out)
}

impl RegressionDataset {
    pub fn write_features<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(std::iter::once("state").chain(self.features.iter().map(String::as_str)))?;
        for (s, row) in self.states.iter().zip(&self.x) {
            let mut rec = vec![s.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a feature file and attach targets by state name.
    pub fn read_features<R: Read>(input: R, targets: &BTreeMap<String, f64>) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let features: Vec<String> = reader
            .headers()?
            .iter()
            .skip(1)
            .map(str::to_string)
            .collect();
        let mut ds = RegressionDataset {
            states: vec![],
            features,
            x: vec![],
            y: vec![],
        };
        for rec in reader.records() {
            let rec = rec?;
            let state = rec.get(0).unwrap_or_default().to_string();
            let Some(&target) = targets.get(&state) else {
                return Err(Error::invalid(format!("no target for state '{state}'")));
            };
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad feature value '{v}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            ds.states.push(state);
            ds.x.push(row);
            ds.y.push(target);
        }
        Ok(ds)
    }
}
