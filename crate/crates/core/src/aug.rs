//! Apps usage graph: per-edge launch-interval models and transition weights.
//!
//! Every consecutive pair of launches `a@t1, b@t2` adds one observation of the
//! interval `t2 - t1` to edge `a -> b`. Intervals are bucketed into whole
//! minutes and each edge fits `p(i) = alpha * exp(-beta * i)` to its bucket
//! probabilities. An edge's `weight` is its share of the source's outgoing
//! transitions, so the probability of `a -> b` after `x` minutes is
//! `weight * alpha * exp(-beta * floor(x))`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AppId, Launch};

pub const BETA_MIN: f64 = 1e-4;
pub const BETA_MAX: f64 = 10.0;
const GRID_POINTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeModel {
    pub alpha: f64,
    pub beta: f64,
    pub weight: f64,
    /// Observation counts per whole-minute bucket `[i, i + 1)`.
    pub histogram: Vec<u64>,
}

impl EdgeModel {
    pub fn count(&self) -> u64 {
        self.histogram.iter().sum()
    }

    /// Interval-model probability of bucket `floor(interval_min)`.
    pub fn bucket_prob(&self, interval_min: f64) -> f64 {
        self.alpha * (-self.beta * interval_min.floor()).exp()
    }

    /// Mean interval implied by the fitted decay rate, in minutes.
    pub fn mean_interval(&self) -> f64 {
        1.0 / self.beta
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aug {
    pub n_apps: usize,
    /// Outgoing edges by source app; destinations sorted by id.
    pub edges: Vec<BTreeMap<AppId, EdgeModel>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpFit {
    pub alpha: f64,
    pub beta: f64,
    /// Number of leading buckets the fit used.
    pub buckets_used: usize,
}

impl Aug {
    pub fn empty(n_apps: usize) -> Self {
        Aug { n_apps, edges: vec![BTreeMap::new(); n_apps] }
    }

    pub fn edge(&self, src: AppId, dst: AppId) -> Option<&EdgeModel> {
        self.edges.get(src.index())?.get(&dst)
    }

    pub fn n_edges(&self) -> usize {
        self.edges.iter().map(BTreeMap::len).sum()
    }

    /// Whether `app` has any outgoing transition.
    pub fn has_out_edges(&self, app: AppId) -> bool {
        self.edges.get(app.index()).is_some_and(|e| !e.is_empty())
    }

    /// Keeps only edges leaving one of `sources`.
    pub fn restrict_sources(&self, sources: &BTreeSet<AppId>) -> Aug {
        let edges = self
            .edges
            .iter()
            .enumerate()
            .map(|(src, out)| if sources.contains(&AppId(src as u32)) { out.clone() } else { BTreeMap::new() })
            .collect();
        Aug { n_apps: self.n_apps, edges }
    }
}

/// Builds the graph from one user's time-sorted launches. Fewer than two
/// launches give a graph without edges.
pub fn build_aug(launches: &[Launch], n_apps: usize, coverage_threshold: f64) -> Aug {
    let mut hist: Vec<BTreeMap<AppId, Vec<u64>>> = vec![BTreeMap::new(); n_apps];
    for pair in launches.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let bucket = (b.ts - a.ts).max(0.0).floor() as usize;
        let h = hist[a.app.index()].entry(b.app).or_default();
        if h.len() <= bucket {
            h.resize(bucket + 1, 0);
        }
        h[bucket] += 1;
    }
    let edges = hist
        .into_iter()
        .map(|out| {
            let total: u64 = out.values().flat_map(|h| h.iter()).sum();
            out.into_iter()
                .map(|(dst, histogram)| {
                    let fit = fit_exponential(&histogram, coverage_threshold)
                        .expect("every stored edge has at least one observation");
                    let weight = histogram.iter().sum::<u64>() as f64 / total as f64;
                    (dst, EdgeModel { alpha: fit.alpha, beta: fit.beta, weight, histogram })
                })
                .collect()
        })
        .collect();
    Aug { n_apps, edges }
}

fn l1_objective(alpha: f64, beta: f64, probs: &[f64]) -> f64 {
    probs.iter().enumerate().map(|(i, p)| (alpha * (-beta * i as f64).exp() - p).abs()).sum()
}

/// Fits `alpha * exp(-beta * i)` to a bucketed interval histogram.
///
/// `alpha` is the empirical probability of bucket 0. Buckets `0, 1, ...` are
/// included until their cumulative probability reaches `coverage_threshold`,
/// and never fewer than two so that a single dominant bucket still pins the
/// decay rate. `beta` minimises the L1 distance to those bucket probabilities: a
/// log-spaced scan over `[BETA_MIN, BETA_MAX]` followed by golden-section
/// refinement around the best grid point. Ties resolve to the smallest beta.
pub fn fit_exponential(histogram: &[u64], coverage_threshold: f64) -> Result<ExpFit> {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return Err(Error::Contract("cannot fit an empty interval histogram".into()));
    }
    let total = total as f64;
    let mut probs = Vec::new();
    let mut cumulative = 0.0;
    for i in 0.. {
        let p = histogram.get(i).map_or(0.0, |&c| c as f64 / total);
        probs.push(p);
        cumulative += p;
        if i >= 1 && (cumulative >= coverage_threshold - 1e-12 || i + 1 >= histogram.len()) {
            break;
        }
    }
    let alpha = probs[0];

    let ratio = (BETA_MAX / BETA_MIN).ln();
    let grid = |k: usize| BETA_MIN * (ratio * k as f64 / (GRID_POINTS - 1) as f64).exp();
    let mut best_k = 0;
    let mut best = l1_objective(alpha, grid(0), &probs);
    for k in 1..GRID_POINTS {
        let v = l1_objective(alpha, grid(k), &probs);
        if v < best {
            best = v;
            best_k = k;
        }
    }
    let mut beta = grid(best_k);

    // Golden-section search on the bracket around the best grid point.
    let (mut lo, mut hi) = (grid(best_k.saturating_sub(1)), grid((best_k + 1).min(GRID_POINTS - 1)));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (l1_objective(alpha, x1, &probs), l1_objective(alpha, x2, &probs));
    for _ in 0..80 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = l1_objective(alpha, x1, &probs);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = l1_objective(alpha, x2, &probs);
        }
    }
    let refined = if f1 <= f2 { x1 } else { x2 };
    if l1_objective(alpha, refined, &probs) < best {
        beta = refined;
    }
    Ok(ExpFit { alpha, beta, buckets_used: probs.len() })
}

/// Probability of moving from `src` to `dst` after `interval_min` minutes;
/// zero when the edge was never observed.
///
/// # Panics
///
/// If `interval_min` is negative.
pub fn edge_prob(aug: &Aug, src: AppId, dst: AppId, interval_min: f64) -> f64 {
    assert!(interval_min >= 0.0, "negative interval {interval_min}");
    aug.edge(src, dst).map_or(0.0, |e| e.weight * e.bucket_prob(interval_min))
}
