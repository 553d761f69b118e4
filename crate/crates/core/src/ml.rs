//! Binary classification harness: stratified holdout, stratified k-fold CV,
//! a small battery of classifiers and accuracy/sensitivity/specificity/AUC
//! reporting.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_model_vector, FeatureError, FeatureSet, MODEL_VECTOR_COLUMNS};
use crate::rng::{derive_seed, stream, tag};
use crate::stats::irls;
use crate::table::FeatureTable;
use crate::testkit::Cohort;

#[derive(Debug, Error)]
pub enum MlError {
    #[error("{0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Case is the positive class.
pub type Label = Cohort;

fn is_case(l: Label) -> bool {
    l == Cohort::Case
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub subject_id: String,
    pub label: Label,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<String>,
    rows: Vec<Sample>,
}

impl Dataset {
    pub fn new(columns: Vec<String>, rows: Vec<Sample>) -> Result<Self, MlError> {
        let mut ids = HashSet::new();
        for r in &rows {
            if !ids.insert(r.subject_id.as_str()) {
                return Err(MlError::Dataset(format!("duplicate subject id '{}'", r.subject_id)));
            }
            if r.x.len() != columns.len() {
                return Err(MlError::Dataset(format!(
                    "{}: {} values for {} columns",
                    r.subject_id,
                    r.x.len(),
                    columns.len()
                )));
            }
            if let Some(v) = r.x.iter().find(|v| !v.is_finite()) {
                return Err(MlError::Dataset(format!("{}: non-finite value {v}", r.subject_id)));
            }
        }
        for l in [Cohort::Case, Cohort::Control] {
            if !rows.iter().any(|r| r.label == l) {
                return Err(MlError::Dataset(format!("no {} rows", l.as_str())));
            }
        }
        Ok(Self { columns, rows })
    }

    /// One row per subject built from the validated features, age and gender.
    pub fn from_table(table: &FeatureTable) -> Result<Self, MlError> {
        let missing: Vec<&str> = crate::features::FEATURE_COLUMNS
            .iter()
            .copied()
            .filter(|c| table.column_index(c).is_none())
            .filter(|c| crate::features::VALIDATED_FEATURES.contains(c))
            .collect();
        if !missing.is_empty() {
            return Err(MlError::Dataset(format!("missing feature columns {missing:?}")));
        }
        let rows = table
            .rows
            .iter()
            .map(|r| {
                let arr: [f64; 12] = std::array::from_fn(|k| {
                    table
                        .column_index(crate::features::FEATURE_COLUMNS[k])
                        .map_or(f64::NAN, |i| r.values[i])
                });
                let mv = build_model_vector(&FeatureSet::from_array(arr), r.age_years, r.gender_code)
                    .map_err(|e| MlError::Dataset(format!("{}: {e}", r.subject_id)))?;
                Ok(Sample {
                    subject_id: r.subject_id.clone(),
                    label: r.cohort,
                    x: mv.0.to_vec(),
                })
            })
            .collect::<Result<Vec<_>, MlError>>()?;
        Self::new(MODEL_VECTOR_COLUMNS.iter().map(|s| s.to_string()).collect(), rows)
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Sample] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.x.clone()).collect()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            columns: self.columns.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Same rows with labels shuffled (a null-hypothesis control).
    pub fn with_permuted_labels(&self, seed: u64) -> Self {
        let mut labels = self.labels();
        labels.shuffle(&mut stream(seed, &[tag("permute_labels")]));
        let rows = self
            .rows
            .iter()
            .zip(labels)
            .map(|(r, label)| Sample { label, ..r.clone() })
            .collect();
        Self {
            columns: self.columns.clone(),
            rows,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CVConfig {
    pub seed: u64,
    pub n_folds: usize,
    pub holdout_fraction: f64,
    pub stratified: bool,
}

impl Default for CVConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_folds: 5,
            holdout_fraction: 0.2,
            stratified: true,
        }
    }
}

impl CVConfig {
    pub fn validate(&self) -> Result<(), MlError> {
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 0.5) {
            return Err(MlError::Config(format!(
                "holdout_fraction must be in (0, 0.5), got {}",
                self.holdout_fraction
            )));
        }
        if self.n_folds < 2 {
            return Err(MlError::Config(format!("n_folds must be >= 2, got {}", self.n_folds)));
        }
        Ok(())
    }
}

fn class_indices(labels: &[Label]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        out[if is_case(l) { 0 } else { 1 }].push(i);
    }
    out
}

/// Per-class seeded shuffle; `round(fraction * class size)` of each class goes
/// to the holdout. Row order is preserved within each part.
pub fn stratified_split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), MlError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(MlError::Contract(format!("fraction must be in (0, 1), got {fraction}")));
    }
    let mut holdout = Vec::new();
    for (c, mut idx) in class_indices(&ds.labels()).into_iter().enumerate() {
        if (idx.len() as f64) * fraction < 2.0 - 1e-9 {
            return Err(MlError::Contract(format!(
                "class of {} rows is too small for a {fraction} holdout (need {:.0})",
                idx.len(),
                (2.0 / fraction).ceil()
            )));
        }
        idx.shuffle(&mut stream(seed, &[tag("split"), c as u64]));
        let k = (fraction * idx.len() as f64).round() as usize;
        holdout.extend_from_slice(&idx[..k]);
    }
    holdout.sort_unstable();
    let held: HashSet<usize> = holdout.iter().copied().collect();
    let train: Vec<usize> = (0..ds.len()).filter(|i| !held.contains(i)).collect();
    Ok((ds.subset(&train), ds.subset(&holdout)))
}

/// Unstratified variant: one seeded shuffle of all rows.
fn random_split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), MlError> {
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut stream(seed, &[tag("split")]));
    let k = (fraction * ds.len() as f64).round() as usize;
    let mut holdout = idx[..k].to_vec();
    let mut train = idx[k..].to_vec();
    holdout.sort_unstable();
    train.sort_unstable();
    let (tr, ho) = (ds.subset(&train), ds.subset(&holdout));
    for part in [&tr, &ho] {
        if class_indices(&part.labels()).iter().any(Vec::is_empty) {
            return Err(MlError::Contract("random split left a part with a single class".into()));
        }
    }
    Ok((tr, ho))
}

/// `k` disjoint folds covering `0..labels.len()`. Each class is shuffled and
/// dealt round-robin, continuing from where the previous class stopped.
pub fn kfold_indices(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, MlError> {
    if k < 2 {
        return Err(MlError::Contract(format!("k must be >= 2, got {k}")));
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (c, mut idx) in class_indices(labels).into_iter().enumerate() {
        if idx.len() < k {
            return Err(MlError::Contract(format!(
                "class with {} rows cannot fill {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut stream(seed, &[tag("folds"), c as u64]));
        for i in idx {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Mann-Whitney AUC, `P(score_case > score_control) + P(tie) / 2`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MlError> {
    if scores.len() != labels.len() {
        return Err(MlError::Contract("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MlError::Contract("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MlError::Contract("both classes must be present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // average of 1-based ranks i+1 ..= j+1
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += order[i..=j].iter().filter(|&&o| labels[o]).count() as f64 * avg;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Column-wise z-scoring with statistics from a fixed set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    /// Constant columns get unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let (means, sds) = crate::stats::column_moments(rows);
        let sds = sds.into_iter().map(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 }).collect();
        Self { means, sds }
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .zip(self.means.iter().zip(&self.sds))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect()
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Models

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Knn {
        k: usize,
    },
    RandomForest {
        n_trees: usize,
    },
    LogisticRegularized {
        lambdas: Vec<f64>,
        inner_folds: usize,
    },
    GradientBoosting {
        rounds: usize,
        max_depth: usize,
        learning_rate: f64,
    },
}

pub const REQUIRED_MODELS: [&str; 4] = ["knn", "random_forest", "logistic_regularized", "gradient_boosting"];

impl ModelSpec {
    /// Default hyperparameters for a model name.
    pub fn from_name(name: &str) -> Result<Self, MlError> {
        Ok(match name {
            "knn" => ModelSpec::Knn { k: 5 },
            "random_forest" => ModelSpec::RandomForest { n_trees: 500 },
            "logistic_regularized" => ModelSpec::LogisticRegularized {
                lambdas: vec![0.001, 0.01, 0.1, 1.0],
                inner_folds: 3,
            },
            "gradient_boosting" => ModelSpec::GradientBoosting {
                rounds: 200,
                max_depth: 2,
                learning_rate: 0.1,
            },
            other => {
                return Err(MlError::Config(format!(
                    "unknown model '{other}' (available: {})",
                    REQUIRED_MODELS.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Knn { .. } => "knn",
            ModelSpec::RandomForest { .. } => "random_forest",
            ModelSpec::LogisticRegularized { .. } => "logistic_regularized",
            ModelSpec::GradientBoosting { .. } => "gradient_boosting",
        }
    }

    pub fn defaults() -> Vec<Self> {
        REQUIRED_MODELS
            .iter()
            .map(|n| Self::from_name(n).expect("known model"))
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn knn_scores(k: usize, x: &[Vec<f64>], y: &[bool], test: &[Vec<f64>]) -> Vec<f64> {
    let k = k.clamp(1, x.len());
    test.iter()
        .map(|t| {
            let mut d: Vec<(f64, usize)> = x
                .iter()
                .enumerate()
                .map(|(i, r)| (r.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), i))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let nn = &d[..k];
            let exact: Vec<usize> = nn.iter().filter(|(dist, _)| *dist == 0.0).map(|&(_, i)| i).collect();
            if !exact.is_empty() {
                return exact.iter().filter(|&&i| y[i]).count() as f64 / exact.len() as f64;
            }
            let (num, den) = nn.iter().fold((0.0, 0.0), |(n, s), &(dist, i)| {
                let w = 1.0 / dist;
                (n + if y[i] { w } else { 0.0 }, s + w)
            });
            num / den
        })
        .collect()
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

/// Best threshold on one feature for the given node rows. `score` receives
/// `(left stats, right stats)` and returns the impurity reduction.
fn best_threshold<S, F>(
    x: &[Vec<f64>],
    idx: &[usize],
    feature: usize,
    stat: impl Fn(usize) -> S,
    score: F,
) -> Option<(f64, f64)>
where
    S: Copy + std::ops::Add<Output = S> + std::ops::Sub<Output = S> + Default,
    F: Fn(S, usize, S, usize) -> f64,
{
    let mut order = idx.to_vec();
    order.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]).then(a.cmp(&b)));
    let total = order.iter().fold(S::default(), |acc, &i| acc + stat(i));
    let mut left = S::default();
    let mut best: Option<(f64, f64)> = None;
    for w in 0..order.len() - 1 {
        left = left + stat(order[w]);
        let (a, b) = (x[order[w]][feature], x[order[w + 1]][feature]);
        if a == b {
            continue;
        }
        let gain = score(left, w + 1, total - left, order.len() - w - 1);
        if best.is_none_or(|(g, _)| gain > g) {
            best = Some((gain, a + (b - a) / 2.0));
        }
    }
    best
}

#[derive(Clone, Copy, Default)]
struct Counts(f64);

impl std::ops::Add for Counts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Counts(self.0 + o.0)
    }
}

impl std::ops::Sub for Counts {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Counts(self.0 - o.0)
    }
}

fn gini_tree(x: &[Vec<f64>], y: &[bool], idx: &[usize], mtry: usize, rng: &mut impl Rng) -> Node {
    let pos = idx.iter().filter(|&&i| y[i]).count();
    let n = idx.len();
    if pos == 0 || pos == n {
        return Node::Leaf(pos as f64 / n as f64);
    }
    let gini = |p: f64, n: usize| {
        let q = p / n as f64;
        n as f64 * 2.0 * q * (1.0 - q)
    };
    let parent = gini(pos as f64, n);
    let p = x[0].len();
    let features: Vec<usize> = rand::seq::index::sample(rng, p, mtry).into_vec();
    let mut best: Option<(f64, usize, f64)> = None;
    for &f in &features {
        let found = best_threshold(
            x,
            idx,
            f,
            |i| Counts(if y[i] { 1.0 } else { 0.0 }),
            |l, nl, r, nr| parent - gini(l.0, nl) - gini(r.0, nr),
        );
        if let Some((gain, thr)) = found {
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, thr));
            }
        }
    }
    match best {
        Some((gain, feature, threshold)) if gain > 1e-12 => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][feature] <= threshold);
            Node::Split {
                feature,
                threshold,
                left: Box::new(gini_tree(x, y, &l, mtry, rng)),
                right: Box::new(gini_tree(x, y, &r, mtry, rng)),
            }
        }
        _ => Node::Leaf(pos as f64 / n as f64),
    }
}

fn forest_scores(n_trees: usize, x: &[Vec<f64>], y: &[bool], test: &[Vec<f64>], seed: u64) -> Vec<f64> {
    let p = x[0].len();
    let mtry = ((p as f64).sqrt().floor() as usize).clamp(1, p);
    let trees: Vec<Node> = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(seed, &[tag("tree"), t as u64]);
            let boot: Vec<usize> = (0..x.len()).map(|_| rng.random_range(0..x.len())).collect();
            gini_tree(x, y, &boot, mtry, &mut rng)
        })
        .collect();
    test.iter()
        .map(|t| trees.iter().map(|tr| tr.predict(t)).sum::<f64>() / n_trees as f64)
        .collect()
}

#[derive(Clone, Copy, Default)]
struct GradHess(f64, f64);

impl std::ops::Add for GradHess {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        GradHess(self.0 + o.0, self.1 + o.1)
    }
}

impl std::ops::Sub for GradHess {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        GradHess(self.0 - o.0, self.1 - o.1)
    }
}

fn newton_leaf(s: GradHess) -> f64 {
    s.0 / s.1.max(1e-12)
}

/// Least-squares regression tree on the gradients with Newton leaf values.
fn boosting_tree(x: &[Vec<f64>], g: &[f64], h: &[f64], idx: &[usize], depth: usize) -> Node {
    let total = idx.iter().fold(GradHess::default(), |a, &i| a + GradHess(g[i], h[i]));
    if depth == 0 || idx.len() < 2 {
        return Node::Leaf(newton_leaf(total));
    }
    let n = idx.len();
    let sse_drop = |l: GradHess, nl: usize, r: GradHess, nr: usize| {
        l.0 * l.0 / nl as f64 + r.0 * r.0 / nr as f64 - total.0 * total.0 / n as f64
    };
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x[0].len() {
        if let Some((gain, thr)) = best_threshold(x, idx, f, |i| GradHess(g[i], h[i]), sse_drop) {
            if best.is_none_or(|(bg, _, _)| gain > bg) {
                best = Some((gain, f, thr));
            }
        }
    }
    match best {
        Some((gain, feature, threshold)) if gain > 1e-12 => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][feature] <= threshold);
            Node::Split {
                feature,
                threshold,
                left: Box::new(boosting_tree(x, g, h, &l, depth - 1)),
                right: Box::new(boosting_tree(x, g, h, &r, depth - 1)),
            }
        }
        _ => Node::Leaf(newton_leaf(total)),
    }
}

fn boosting_scores(
    rounds: usize,
    max_depth: usize,
    lr: f64,
    x: &[Vec<f64>],
    y: &[bool],
    test: &[Vec<f64>],
) -> Vec<f64> {
    let n = x.len();
    let prior = y.iter().filter(|&&b| b).count() as f64 / n as f64;
    let f0 = (prior / (1.0 - prior)).ln();
    let mut f = vec![f0; n];
    let mut ft = vec![f0; test.len()];
    let idx: Vec<usize> = (0..n).collect();
    for _ in 0..rounds {
        let p: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = (0..n).map(|i| if y[i] { 1.0 } else { 0.0 } - p[i]).collect();
        let h: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
        let tree = boosting_tree(x, &g, &h, &idx, max_depth);
        for (v, r) in f.iter_mut().zip(x) {
            *v += lr * tree.predict(r);
        }
        for (v, r) in ft.iter_mut().zip(test) {
            *v += lr * tree.predict(r);
        }
    }
    ft.into_iter().map(sigmoid).collect()
}

fn design(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows[0].len();
    DMatrix::from_fn(rows.len(), p + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] })
}

fn bool_vec(y: &[bool]) -> DVector<f64> {
    DVector::from_iterator(y.len(), y.iter().map(|&b| if b { 1.0 } else { 0.0 }))
}

/// L2 penalty is `lambda * n`, so `lambda` is per observation.
fn ridge_logistic(x: &[Vec<f64>], y: &[bool], lambda: f64) -> DVector<f64> {
    irls(&design(x), &bool_vec(y), lambda * x.len() as f64, 50).0
}

fn logistic_predict(beta: &DVector<f64>, test: &[Vec<f64>]) -> Vec<f64> {
    if test.is_empty() {
        return Vec::new();
    }
    (design(test) * beta).iter().map(|&e| sigmoid(e)).collect()
}

fn deviance(p: &[f64], y: &[bool]) -> f64 {
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            let q = if y { p } else { 1.0 - p };
            -2.0 * q.max(1e-15).ln()
        })
        .sum()
}

/// Picks the penalty with the smallest held-out deviance under inner CV.
/// Inputs are already standardized by the caller; each inner fold is
/// re-standardized on its own training part.
fn choose_lambda(lambdas: &[f64], inner_folds: usize, x: &[Vec<f64>], y: &[bool], seed: u64) -> f64 {
    let labels: Vec<Label> = y.iter().map(|&b| if b { Cohort::Case } else { Cohort::Control }).collect();
    let Ok(folds) = kfold_indices(&labels, inner_folds, derive_seed(seed, &[tag("inner")])) else {
        return lambdas[lambdas.len() / 2];
    };
    let mut best = (f64::INFINITY, lambdas[0]);
    for &lambda in lambdas {
        let mut dev = 0.0;
        for fold in &folds {
            let held: HashSet<usize> = fold.iter().copied().collect();
            let tr: Vec<usize> = (0..x.len()).filter(|i| !held.contains(i)).collect();
            let xtr: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
            let ytr: Vec<bool> = tr.iter().map(|&i| y[i]).collect();
            let xte: Vec<Vec<f64>> = fold.iter().map(|&i| x[i].clone()).collect();
            let yte: Vec<bool> = fold.iter().map(|&i| y[i]).collect();
            let sc = Standardizer::fit(&xtr);
            let beta = ridge_logistic(&sc.apply(&xtr), &ytr, lambda);
            dev += deviance(&logistic_predict(&beta, &sc.apply(&xte)), &yte);
        }
        if dev < best.0 {
            best = (dev, lambda);
        }
    }
    best.1
}

/// Scores for `test` after z-scoring both sets with the given statistics.
pub fn fit_predict_scaled(
    spec: &ModelSpec,
    x: &[Vec<f64>],
    y: &[bool],
    test: &[Vec<f64>],
    seed: u64,
    scaler: &Standardizer,
) -> Result<Vec<f64>, MlError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(MlError::Contract("training rows and labels must be non-empty and aligned".into()));
    }
    if !y.iter().any(|&b| b) || y.iter().all(|&b| b) {
        return Err(MlError::Contract("training labels must contain both classes".into()));
    }
    let xs = scaler.apply(x);
    let ts = scaler.apply(test);
    Ok(match spec {
        ModelSpec::Knn { k } => knn_scores(*k, &xs, y, &ts),
        ModelSpec::RandomForest { n_trees } => forest_scores(*n_trees, &xs, y, &ts, seed),
        ModelSpec::LogisticRegularized { lambdas, inner_folds } => {
            if lambdas.is_empty() {
                return Err(MlError::Config("empty lambda grid".into()));
            }
            let lambda = choose_lambda(lambdas, *inner_folds, &xs, y, seed);
            logistic_predict(&ridge_logistic(&xs, y, lambda), &ts)
        }
        ModelSpec::GradientBoosting {
            rounds,
            max_depth,
            learning_rate,
        } => boosting_scores(*rounds, *max_depth, *learning_rate, &xs, y, &ts),
    })
}

/// Fits on `train` (z-scored with its own statistics) and scores `test`.
pub fn fit_predict(spec: &ModelSpec, x: &[Vec<f64>], y: &[bool], test: &[Vec<f64>], seed: u64) -> Result<Vec<f64>, MlError> {
    fit_predict_scaled(spec, x, y, test, seed, &Standardizer::fit(x))
}

/// Per-fold AUCs. With `fixed_scaler` the given statistics are used for every
/// fold instead of refitting them on each training part.
pub fn cross_validate(
    spec: &ModelSpec,
    x: &[Vec<f64>],
    y: &[bool],
    folds: &[Vec<usize>],
    seed: u64,
    fixed_scaler: Option<&Standardizer>,
) -> Result<Vec<f64>, MlError> {
    folds
        .iter()
        .enumerate()
        .map(|(k, fold)| {
            let held: HashSet<usize> = fold.iter().copied().collect();
            let tr: Vec<usize> = (0..x.len()).filter(|i| !held.contains(i)).collect();
            let xtr: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
            let ytr: Vec<bool> = tr.iter().map(|&i| y[i]).collect();
            let xte: Vec<Vec<f64>> = fold.iter().map(|&i| x[i].clone()).collect();
            let yte: Vec<bool> = fold.iter().map(|&i| y[i]).collect();
            let fold_seed = derive_seed(seed, &[tag(spec.name()), k as u64]);
            let scaler = fixed_scaler.cloned().unwrap_or_else(|| Standardizer::fit(&xtr));
            let scores = fit_predict_scaled(spec, &xtr, &ytr, &xte, fold_seed, &scaler)?;
            roc_auc(&scores, &yte)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub mean_auc: f64,
    pub per_fold_auc: Vec<f64>,
}

pub const DECISION_THRESHOLD: f64 = 0.5;
pub const REPORT_HEADER: &str = "model,accuracy,sensitivity,specificity,mean_auc";

/// Scores at or above the threshold are called Case.
pub fn holdout_metrics(scores: &[f64], y: &[bool]) -> (f64, f64, f64) {
    let (mut tp, mut tn, mut pos, mut neg) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(y) {
        let call = s >= DECISION_THRESHOLD;
        if l {
            pos += 1;
            tp += call as usize;
        } else {
            neg += 1;
            tn += (!call) as usize;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (ratio(tp + tn, pos + neg), ratio(tp, pos), ratio(tn, neg))
}

/// Descending ranks with ties averaged (1 = best).
fn descending_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let above = v.iter().filter(|&&b| b > a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            above + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Orders reports by the sum of their accuracy and AUC ranks, best first.
/// Remaining ties go to the higher AUC, then the model name.
pub fn rank_reports(mut reports: Vec<ModelReport>) -> Vec<ModelReport> {
    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let auc: Vec<f64> = reports.iter().map(|r| r.mean_auc).collect();
    let (ra, rb) = (descending_ranks(&acc), descending_ranks(&auc));
    let mut keyed: Vec<(f64, ModelReport)> = reports.drain(..).enumerate().map(|(i, r)| (ra[i] + rb[i], r)).collect();
    keyed.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(b.1.mean_auc.total_cmp(&a.1.mean_auc))
            .then(a.1.model.cmp(&b.1.model))
    });
    keyed.into_iter().map(|(_, r)| r).collect()
}

pub fn split(ds: &Dataset, cfg: &CVConfig) -> Result<(Dataset, Dataset), MlError> {
    cfg.validate()?;
    if cfg.stratified {
        stratified_split(ds, cfg.holdout_fraction, cfg.seed)
    } else {
        random_split(ds, cfg.holdout_fraction, cfg.seed)
    }
}

/// Holdout split, k-fold CV AUC on the training part, refit, holdout metrics.
pub fn train_eval_suite(ds: &Dataset, cfg: &CVConfig, models: &[ModelSpec]) -> Result<Vec<ModelReport>, MlError> {
    if models.is_empty() {
        return Err(MlError::Config("no models requested".into()));
    }
    let (train, holdout) = split(ds, cfg)?;
    let (x, y): (Vec<Vec<f64>>, Vec<bool>) = (train.matrix(), train.labels().into_iter().map(is_case).collect());
    let (hx, hy): (Vec<Vec<f64>>, Vec<bool>) = (holdout.matrix(), holdout.labels().into_iter().map(is_case).collect());
    let folds = kfold_indices(&train.labels(), cfg.n_folds, cfg.seed)?;
    let reports = models
        .par_iter()
        .map(|spec| {
            let per_fold_auc = cross_validate(spec, &x, &y, &folds, cfg.seed, None)?;
            let final_seed = derive_seed(cfg.seed, &[tag(spec.name()), tag("final")]);
            let scores = fit_predict(spec, &x, &y, &hx, final_seed)?;
            let (accuracy, sensitivity, specificity) = holdout_metrics(&scores, &hy);
            Ok(ModelReport {
                model: spec.name().to_string(),
                accuracy,
                sensitivity,
                specificity,
                mean_auc: per_fold_auc.iter().sum::<f64>() / per_fold_auc.len() as f64,
                per_fold_auc,
            })
        })
        .collect::<Result<Vec<_>, MlError>>()?;
    Ok(rank_reports(reports))
}

pub fn reports_to_csv(reports: &[ModelReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4}\n",
            r.model, r.accuracy, r.sensitivity, r.specificity, r.mean_auc
        ));
    }
    out
}
