//! Distance-weighted kNN over mixed numeric/categorical instances, plus the
//! most-frequently-used and most-recently-used baselines.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AppId, FeatureKind, SensorValue};

const EPS: f64 = 1e-9;

/// Feature values in selection order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Instance(pub Vec<SensorValue>);

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionList {
    /// `(app, score)` by descending score.
    pub ranked: Vec<(AppId, f64)>,
}

impl PredictionList {
    pub fn apps(&self) -> Vec<AppId> {
        self.ranked.iter().map(|(a, _)| *a).collect()
    }

    /// 1-based rank of `app`, if listed.
    pub fn position(&self, app: AppId) -> Option<usize> {
        self.ranked.iter().position(|(a, _)| *a == app).map(|p| p + 1)
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DimScale {
    Numeric { min: f64, max: f64 },
    Categorical,
}

/// Per-dimension min-max scaling fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub dims: Vec<DimScale>,
}

impl Normalizer {
    pub fn fit(train: &[Instance], kinds: &[FeatureKind]) -> Self {
        let dims = kinds
            .iter()
            .enumerate()
            .map(|(d, kind)| match kind {
                FeatureKind::Categorical => DimScale::Categorical,
                FeatureKind::Numeric => {
                    let (min, max) = train
                        .iter()
                        .filter_map(|inst| inst.0[d].as_numeric())
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
                    DimScale::Numeric { min, max }
                }
            })
            .collect();
        Normalizer { dims }
    }

    pub fn apply(&self, inst: &Instance) -> Instance {
        Instance(
            inst.0
                .iter()
                .zip(&self.dims)
                .map(|(&v, dim)| match (v, dim) {
                    (SensorValue::Numeric(x), DimScale::Numeric { min, max }) => {
                        if max > min {
                            SensorValue::Numeric(((x - min) / (max - min)).clamp(0.0, 1.0))
                        } else {
                            SensorValue::Numeric(0.0)
                        }
                    }
                    (v, _) => v,
                })
                .collect(),
        )
    }
}

/// Fits a normalizer on `train` and returns it with the scaled instances.
pub fn normalize(train: &[Instance], kinds: &[FeatureKind]) -> Result<(Normalizer, Vec<Instance>)> {
    if train.is_empty() {
        return Err(Error::Contract("cannot normalise an empty training set".into()));
    }
    if let Some(bad) = train.iter().find(|i| i.0.len() != kinds.len()) {
        return Err(Error::Contract(format!("instance has {} dims, expected {}", bad.0.len(), kinds.len())));
    }
    let norm = Normalizer::fit(train, kinds);
    let scaled = train.iter().map(|i| norm.apply(i)).collect();
    Ok((norm, scaled))
}

#[inline]
fn dim_sq(a: SensorValue, b: SensorValue) -> f64 {
    match (a, b) {
        (SensorValue::Numeric(x), SensorValue::Numeric(y)) => (x - y) * (x - y),
        (SensorValue::Categorical(x), SensorValue::Categorical(y)) => f64::from(x != y),
        _ => 1.0,
    }
}

fn distance_unchecked(a: &Instance, b: &Instance) -> f64 {
    a.0.iter().zip(&b.0).map(|(&x, &y)| dim_sq(x, y)).sum::<f64>().sqrt()
}

/// Euclidean distance where categorical mismatches and missing values count 1.
pub fn distance(a: &Instance, b: &Instance) -> Result<f64> {
    if a.0.len() != b.0.len() {
        return Err(Error::Contract(format!("instances have {} and {} dims", a.0.len(), b.0.len())));
    }
    Ok(distance_unchecked(a, b))
}

/// Apps by descending training count, ties to the smaller id.
fn frequency_order(labels: &[AppId]) -> Vec<(AppId, usize)> {
    let mut counts: BTreeMap<AppId, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut order: Vec<(AppId, usize)> = counts.into_iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    order
}

/// Normalised training set ready for queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub instances: Vec<Instance>,
    pub labels: Vec<AppId>,
    /// Training apps by descending frequency.
    pub frequency: Vec<(AppId, usize)>,
}

impl KnnModel {
    pub fn new(instances: Vec<Instance>, labels: Vec<AppId>) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::Input("kNN needs at least one training instance".into()));
        }
        if instances.len() != labels.len() {
            return Err(Error::Contract("instances and labels differ in length".into()));
        }
        let frequency = frequency_order(&labels);
        Ok(KnnModel { instances, labels, frequency })
    }

    /// Ranks apps by inverse-distance votes of the `ceil(knn_fraction * n)`
    /// nearest training instances, padded with frequent apps up to `top_k`.
    pub fn predict(&self, query: &Instance, knn_fraction: f64, top_k: usize) -> PredictionList {
        let n = self.instances.len();
        let k_neighbors = ((knn_fraction * n as f64).ceil() as usize).clamp(1, n);
        let mut dists: Vec<(f64, usize)> =
            self.instances.iter().enumerate().map(|(i, inst)| (distance_unchecked(query, inst), i)).collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k_neighbors < n {
            dists.select_nth_unstable_by(k_neighbors - 1, cmp);
            dists.truncate(k_neighbors);
        }

        let mut scores: BTreeMap<AppId, f64> = BTreeMap::new();
        for &(d, i) in &dists {
            *scores.entry(self.labels[i]).or_default() += 1.0 / (d + EPS);
        }
        let freq_rank: BTreeMap<AppId, usize> = self.frequency.iter().enumerate().map(|(r, (a, _))| (*a, r)).collect();
        let mut ranked: Vec<(AppId, f64)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(freq_rank[&a.0].cmp(&freq_rank[&b.0])));
        ranked.truncate(top_k);
        pad_by_frequency(&mut ranked, &self.frequency, top_k);
        PredictionList { ranked }
    }
}

fn pad_by_frequency(ranked: &mut Vec<(AppId, f64)>, frequency: &[(AppId, usize)], k: usize) {
    let present: BTreeSet<AppId> = ranked.iter().map(|(a, _)| *a).collect();
    for (app, _) in frequency.iter().filter(|(a, _)| !present.contains(a)) {
        if ranked.len() >= k {
            break;
        }
        ranked.push((*app, 0.0));
    }
}

pub fn predict_knn(train: &KnnModel, query: &Instance, knn_fraction: f64, top_k: usize) -> PredictionList {
    train.predict(query, knn_fraction, top_k)
}

/// Most frequently used apps in training.
pub fn predict_mfu(train_labels: &[AppId], k: usize) -> Result<PredictionList> {
    if train_labels.is_empty() {
        return Err(Error::Input("MFU needs training labels".into()));
    }
    let ranked = frequency_order(train_labels).into_iter().take(k).map(|(a, c)| (a, c as f64)).collect();
    Ok(PredictionList { ranked })
}

/// Most recently used apps, newest first, padded in MFU order. `recent` is
/// chronological; apps never seen in training are skipped.
pub fn predict_mru(recent: &[AppId], train_labels: &[AppId], k: usize) -> Result<PredictionList> {
    if train_labels.is_empty() {
        return Err(Error::Input("MRU needs training labels".into()));
    }
    let frequency = frequency_order(train_labels);
    let known: BTreeSet<AppId> = frequency.iter().map(|(a, _)| *a).collect();
    let mut ranked: Vec<(AppId, f64)> = Vec::with_capacity(k);
    let mut seen = BTreeSet::new();
    for &app in recent.iter().rev() {
        if ranked.len() >= k {
            break;
        }
        if known.contains(&app) && seen.insert(app) {
            ranked.push((app, 1.0 / (ranked.len() + 1) as f64));
        }
    }
    pad_by_frequency(&mut ranked, &frequency, k);
    Ok(PredictionList { ranked })
}
