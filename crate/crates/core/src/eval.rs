//! Recall and nDCG over top-k prediction lists, user cohorts and parameter sweeps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::ingest::{Dataset, UserTrace};
use crate::knn::PredictionList;
use crate::model::{Predictor, Query};
use crate::types::{AppId, Launch, UsageEvent};

/// A test launch and the list predicted for it.
pub type Case = (AppId, PredictionList);

/// Fraction of cases whose true app appears in the list.
pub fn recall(cases: &[Case]) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::Contract("recall needs at least one case".into()));
    }
    let hits = cases.iter().filter(|(truth, list)| list.position(*truth).is_some()).count();
    Ok(hits as f64 / cases.len() as f64)
}

/// `1 / log2(rank + 1)` for a hit at 1-based `rank`.
pub fn dcg_at(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Mean DCG with the ideal DCG fixed at 1 (a single relevant app per case).
pub fn ndcg(cases: &[Case]) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::Contract("nDCG needs at least one case".into()));
    }
    let total: f64 = cases.iter().map(|(truth, list)| list.position(*truth).map_or(0.0, dcg_at)).sum();
    Ok(total / cases.len() as f64)
}

fn counts(labels: &[AppId]) -> Vec<u64> {
    let mut by_app: BTreeMap<AppId, u64> = BTreeMap::new();
    for &l in labels {
        *by_app.entry(l).or_default() += 1;
    }
    by_app.into_values().collect()
}

/// Shannon entropy, in bits, of the app usage distribution.
pub fn usage_entropy(labels: &[AppId]) -> f64 {
    let n = labels.len() as f64;
    counts(labels)
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Share of all usage taken by the `k` most used apps, from per-app counts.
pub fn top_k_frequency_of_counts(counts: &[u64], k: usize) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted.iter().take(k).sum::<u64>() as f64 / total as f64
}

pub fn top_k_frequency(labels: &[AppId], k: usize) -> f64 {
    top_k_frequency_of_counts(&counts(labels), k)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub recall: f64,
    pub ndcg: f64,
    pub n_cases: usize,
}

impl Scores {
    fn of(cases: &[Case]) -> Result<Self> {
        Ok(Scores { recall: recall(cases)?, ndcg: ndcg(cases)?, n_cases: cases.len() })
    }

    /// Unweighted mean over users; case counts add up.
    fn mean<'a>(items: impl IntoIterator<Item = &'a Scores>) -> Scores {
        let (mut r, mut g, mut n, mut users) = (0.0, 0.0, 0, 0);
        for s in items {
            r += s.recall;
            g += s.ndcg;
            n += s.n_cases;
            users += 1;
        }
        let users = users.max(1) as f64;
        Scores { recall: r / users, ndcg: g / users, n_cases: n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserResult {
    pub user: String,
    pub n_installed_apps: usize,
    pub n_train: usize,
    pub entropy: f64,
    /// `(predictor, scores)` in predictor order.
    pub scores: Vec<(String, Scores)>,
    /// Case-level sums used for pooled scores: (hits, dcg) per predictor.
    #[serde(skip)]
    sums: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortRow {
    /// `apps`, `usage` or `entropy`.
    pub axis: String,
    pub label: String,
    pub predictor: String,
    pub n_users: usize,
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub predictors: Vec<String>,
    pub per_user: Vec<UserResult>,
    /// Mean of per-user scores.
    pub aggregate: Vec<(String, Scores)>,
    /// Scores over all cases pooled across users.
    pub pooled: Vec<(String, Scores)>,
    pub cohorts: Vec<CohortRow>,
}

impl EvalReport {
    pub fn aggregate_of(&self, predictor: &str) -> Option<Scores> {
        self.aggregate.iter().find(|(p, _)| p == predictor).map(|(_, s)| *s)
    }
}

fn apps_label(n: usize, edges: &[usize]) -> String {
    match edges.iter().position(|&e| n < e) {
        Some(0) => format!("<{}", edges[0]),
        Some(i) => format!("{}-{}", edges[i - 1], edges[i]),
        None => format!(">={}", edges.last().copied().unwrap_or(0)),
    }
}

fn entropy_label(h: f64, step: f64) -> String {
    let lo = (h / step).floor() * step;
    format!("[{lo:.1},{:.1})", lo + step)
}

/// Quartile of `x` among `all`: Q1..Q4 by rank.
fn quartile_label(x: usize, all: &[usize]) -> String {
    let mut sorted = all.to_vec();
    sorted.sort_unstable();
    let below = sorted.iter().filter(|&&v| v < x).count();
    let q = (4 * below / sorted.len().max(1)).min(3) + 1;
    format!("Q{q}")
}

fn evaluate_user(
    dataset: &Dataset,
    trace: &UserTrace,
    cfg: &Config,
    predictors: &[&dyn Predictor],
) -> Result<UserResult> {
    let launches: Vec<Launch> = trace.events.iter().map(UsageEvent::launch).collect();
    let train_labels: Vec<AppId> = trace.train().iter().map(|e| e.app).collect();
    let mut scores = Vec::with_capacity(predictors.len());
    let mut sums = Vec::with_capacity(predictors.len());
    for p in predictors {
        let fitted = p.fit(dataset, trace, cfg)?;
        let cases: Vec<Case> = (trace.split_index..trace.events.len())
            .map(|i| {
                let event = &trace.events[i];
                let query = Query {
                    index: i,
                    history: &trace.events[..i],
                    launches: &launches[..i],
                    ts: event.ts,
                    sensors: &event.sensors,
                };
                let mut list = fitted.predict(&query);
                list.ranked.truncate(cfg.top_k);
                (event.app, list)
            })
            .collect();
        let s = Scores::of(&cases)?;
        sums.push((s.recall * s.n_cases as f64, s.ndcg * s.n_cases as f64));
        scores.push((p.name(), s));
    }
    let n_installed_apps = counts(&train_labels).len();
    Ok(UserResult {
        user: trace.user.clone(),
        n_installed_apps,
        n_train: train_labels.len(),
        entropy: usage_entropy(&train_labels),
        scores,
        sums,
    })
}

/// Evaluates every predictor on every non-excluded user of a split dataset.
///
/// Cohort buckets come from `cfg.cohort_app_edges` and `cfg.cohort_entropy_step`.
pub fn run_evaluation(dataset: &Dataset, cfg: &Config, predictors: &[&dyn Predictor]) -> Result<EvalReport> {
    cfg.validate()?;
    let users: Vec<&UserTrace> = dataset
        .users
        .iter()
        .filter(|t| {
            if t.excluded || t.split_index >= t.events.len() {
                log::info!("skipping user {}: no usable train/test split", t.user);
                false
            } else {
                true
            }
        })
        .collect();

    let run = |t: &&UserTrace| evaluate_user(dataset, t, cfg, predictors);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<UserResult>> = {
        use rayon::prelude::*;
        users.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<UserResult>> = users.iter().map(run).collect();
    let mut per_user = results.into_iter().collect::<Result<Vec<_>>>()?;
    per_user.sort_by(|a, b| a.user.cmp(&b.user));

    let names: Vec<String> = predictors.iter().map(|p| p.name()).collect();
    let aggregate = names
        .iter()
        .enumerate()
        .map(|(i, name)| (name.clone(), Scores::mean(per_user.iter().map(|u| &u.scores[i].1))))
        .collect();
    let pooled = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let n: usize = per_user.iter().map(|u| u.scores[i].1.n_cases).sum();
            let (hits, dcg) = per_user.iter().fold((0.0, 0.0), |(h, d), u| (h + u.sums[i].0, d + u.sums[i].1));
            let denom = n.max(1) as f64;
            (name.clone(), Scores { recall: hits / denom, ndcg: dcg / denom, n_cases: n })
        })
        .collect();

    let train_sizes: Vec<usize> = per_user.iter().map(|u| u.n_train).collect();
    let mut cohorts = Vec::new();
    for axis in ["apps", "usage", "entropy"] {
        let mut groups: BTreeMap<String, Vec<&UserResult>> = BTreeMap::new();
        for u in &per_user {
            let label = match axis {
                "apps" => apps_label(u.n_installed_apps, &cfg.cohort_app_edges),
                "usage" => quartile_label(u.n_train, &train_sizes),
                _ => entropy_label(u.entropy, cfg.cohort_entropy_step),
            };
            groups.entry(label).or_default().push(u);
        }
        for (label, members) in groups {
            for (i, name) in names.iter().enumerate() {
                cohorts.push(CohortRow {
                    axis: axis.to_string(),
                    label: label.clone(),
                    predictor: name.clone(),
                    n_users: members.len(),
                    scores: Scores::mean(members.iter().map(|u| &u.scores[i].1)),
                });
            }
        }
    }

    Ok(EvalReport { k: cfg.top_k, predictors: names, per_user, aggregate, pooled, cohorts })
}

/// One evaluation row of a parameter sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub predictor: String,
    pub k: usize,
    pub scores: Scores,
}

pub const SWEEP_AXES: [&str; 5] = ["top_k", "rho", "min_tp", "refine_iters", "knn_fraction"];

/// Re-runs the evaluation once per value of a config field.
pub fn sweep(
    dataset: &Dataset,
    base: &Config,
    axis: &str,
    values: &[String],
    predictors: &[&dyn Predictor],
) -> Result<Vec<SweepRow>> {
    let axis = if axis == "k" { "top_k" } else { axis };
    if !SWEEP_AXES.contains(&axis) {
        return Err(Error::config(axis, format!("cannot sweep; choose one of {}", SWEEP_AXES.join(", "))));
    }
    let mut rows = Vec::new();
    for value in values {
        let mut cfg = base.clone();
        cfg.set(axis, value)?;
        cfg.validate()?;
        let report = run_evaluation(dataset, &cfg, predictors)?;
        for (predictor, scores) in report.aggregate {
            rows.push(SweepRow {
                axis: axis.to_string(),
                value: value.trim().to_string(),
                predictor,
                k: cfg.top_k,
                scores,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(apps: &[u32]) -> PredictionList {
        PredictionList { ranked: apps.iter().map(|&a| (AppId(a), 1.0)).collect() }
    }

    fn case(truth: u32, apps: &[u32]) -> Case {
        (AppId(truth), list(apps))
    }

    #[test]
    fn recall_examples() {
        assert!((recall(&[case(1, &[1, 2]), case(3, &[3]), case(5, &[1])]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(recall(&[case(4, &[1, 2, 3, 4]), case(2, &[0, 2])]).unwrap(), 1.0);
        assert_eq!(recall(&[case(9, &[1, 2])]).unwrap(), 0.0);
        assert!(recall(&[]).is_err());
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg(&[case(1, &[1, 2, 3])]).unwrap(), 1.0);
        assert_eq!(ndcg(&[case(3, &[1, 2, 3])]).unwrap(), 0.5);
        assert_eq!(ndcg(&[case(7, &[1, 2, 3])]).unwrap(), 0.0);
    }

    #[test]
    fn entropy_examples() {
        let ids = |xs: &[u32]| xs.iter().map(|&x| AppId(x)).collect::<Vec<_>>();
        assert_eq!(usage_entropy(&ids(&[3, 3, 3])), 0.0);
        assert!((usage_entropy(&ids(&[0, 1, 0, 1])) - 1.0).abs() < 1e-12);
        assert!((usage_entropy(&ids(&[0, 1, 2, 3])) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn top_k_frequency_examples() {
        assert_eq!(top_k_frequency_of_counts(&[3, 1, 2, 5, 2], 2), 8.0 / 13.0);
        assert_eq!(top_k_frequency_of_counts(&[3, 1, 2], 5), 1.0);
        assert_eq!(top_k_frequency(&[AppId(4); 6], 1), 1.0);
    }

    #[test]
    fn cohort_labels() {
        let edges = [5, 10, 20, 30];
        assert_eq!(apps_label(3, &edges), "<5");
        assert_eq!(apps_label(12, &edges), "10-20");
        assert_eq!(apps_label(30, &edges), ">=30");
        assert_eq!(entropy_label(1.7, 0.5), "[1.5,2.0)");
        assert_eq!(quartile_label(1, &[1, 2, 3, 4]), "Q1");
        assert_eq!(quartile_label(4, &[1, 2, 3, 4]), "Q4");
    }

    proptest! {
        #[test]
        fn ndcg_never_exceeds_recall(raw in proptest::collection::vec((0u32..8, proptest::collection::vec(0u32..8, 0..6)), 1..40)) {
            let cases: Vec<Case> = raw.iter().map(|(t, l)| {
                let mut l = l.clone();
                l.dedup();
                case(*t, &l)
            }).collect();
            prop_assert!(ndcg(&cases).unwrap() <= recall(&cases).unwrap() + 1e-12);
        }
    }
}
