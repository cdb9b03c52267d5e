//! Implicit (app-transition) features.
//!
//! For a target launch `T` at time `t` and its predecessors `h_0 .. h_{n-1}`,
//! every predecessor position `k` inside the look-back window gets a chain
//! value
//!
//! ```text
//! v_k = p(h_k -> T, t - t_k) + sum_{k < j < n} p(h_k -> h_j, t_j - t_k) * v'_j
//! ```
//!
//! where `v'_j` is `v_j` when it reaches `min_tp` and zero otherwise: a chain
//! whose accumulated probability fell below the threshold is not extended
//! further back. Entry `i` of the feature sums `v'_k` over the positions holding
//! app `i`. Positions are processed in reverse time order so each `v_j` is
//! available when earlier positions need it.
//!
//! At prediction time the target is unknown. Column `j` of the transition
//! matrix is the feature computed as if app `j` came next, and [`refine`]
//! alternates between mixing the columns by the current next-app distribution
//! and re-estimating that distribution with one step along the matrix.

use serde::{Deserialize, Serialize};

use crate::aug::{edge_prob, Aug};
use crate::error::{Error, Result};
use crate::types::{AppId, Launch};

/// Longest history the brute-force enumeration accepts.
pub const BRUTE_FORCE_MAX_HISTORY: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainLimits {
    pub min_tp: f64,
    pub max_lookback: usize,
}

impl ChainLimits {
    pub fn new(min_tp: f64, max_lookback: usize) -> Self {
        ChainLimits { min_tp, max_lookback }
    }

    #[inline]
    fn keep(&self, v: f64) -> f64 {
        if v >= self.min_tp {
            v
        } else {
            0.0
        }
    }
}

/// Entry `i` is the probability of having reached the target from app `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImplicitFeature(pub Vec<f64>);

impl ImplicitFeature {
    pub fn zeros(n_apps: usize) -> Self {
        ImplicitFeature(vec![0.0; n_apps])
    }

    pub fn get(&self, app: AppId) -> f64 {
        self.0[app.index()]
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

fn window(history: &[Launch], max_lookback: usize) -> &[Launch] {
    &history[history.len().saturating_sub(max_lookback)..]
}

/// Per-position chain values `v'_k` for the look-back window, oldest first.
pub fn chain_values(history: &[Launch], target: Launch, aug: &Aug, limits: ChainLimits) -> Vec<f64> {
    let window = window(history, limits.max_lookback);
    let mut kept = vec![0.0; window.len()];
    for k in (0..window.len()).rev() {
        let src = window[k];
        let mut v = edge_prob(aug, src.app, target.app, target.ts - src.ts);
        for j in k + 1..window.len() {
            if kept[j] > 0.0 {
                v += edge_prob(aug, src.app, window[j].app, window[j].ts - src.ts) * kept[j];
            }
        }
        if v > 1.0 {
            log::debug!("chain value {v:.4} exceeds 1 at depth {}", window.len() - k);
        }
        kept[k] = limits.keep(v);
    }
    kept
}

/// Implicit feature of a training launch with known `target`.
/// An empty history gives the zero vector.
pub fn implicit_for_training(history: &[Launch], target: Launch, aug: &Aug, limits: ChainLimits) -> ImplicitFeature {
    let mut feature = ImplicitFeature::zeros(aug.n_apps);
    let window = window(history, limits.max_lookback);
    for (launch, v) in window.iter().zip(chain_values(history, target, aug, limits)) {
        feature.0[launch.app.index()] += v;
    }
    feature
}

/// Reference implementation of [`implicit_for_training`] that enumerates every
/// forward path explicitly, without sharing partial sums.
pub fn brute_force_if(history: &[Launch], target: Launch, aug: &Aug, limits: ChainLimits) -> Result<ImplicitFeature> {
    if history.len() > BRUTE_FORCE_MAX_HISTORY {
        return Err(Error::Contract(format!(
            "brute force supports at most {BRUTE_FORCE_MAX_HISTORY} history launches, got {}",
            history.len()
        )));
    }
    let window = window(history, limits.max_lookback);
    let w = window.len();
    let mut alive = vec![false; w];
    let mut feature = ImplicitFeature::zeros(aug.n_apps);
    for k in (0..w).rev() {
        let later = w - k - 1;
        let mut total = 0.0;
        // Bit b of `mask` selects position k + 1 + b as an intermediate.
        for mask in 0u32..(1 << later) {
            let stops: Vec<usize> = (0..later).filter(|b| mask >> b & 1 == 1).map(|b| k + 1 + b).collect();
            if !stops.iter().all(|&j| alive[j]) {
                continue;
            }
            let mut prob = 1.0;
            let mut at = window[k];
            for &j in &stops {
                prob *= edge_prob(aug, at.app, window[j].app, window[j].ts - at.ts);
                at = window[j];
            }
            prob *= edge_prob(aug, at.app, target.app, target.ts - at.ts);
            total += prob;
        }
        if total >= limits.min_tp {
            alive[k] = total > 0.0;
            feature.0[window[k].app.index()] += total;
        }
    }
    Ok(feature)
}

/// Square matrix whose column `j` is the implicit feature computed as if app
/// `j` were launched next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub n: usize,
    /// Row-major: `data[m * n + j]` is `M[m][j]`.
    pub data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn zeros(n: usize) -> Self {
        TransitionMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        TransitionMatrix { n, data: rows.concat() }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n).map(|m| self.get(m, col)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }
}

/// Builds the transition matrix for a query at time `at`.
pub fn build_transition_matrix(history: &[Launch], at: f64, aug: &Aug, limits: ChainLimits) -> TransitionMatrix {
    let n = aug.n_apps;
    let mut m = TransitionMatrix::zeros(n);
    for j in 0..n {
        let column = implicit_for_training(history, Launch::new(j as u32, at), aug, limits);
        for (row, v) in column.0.into_iter().enumerate() {
            m.data[row * n + j] = v;
        }
    }
    m
}

/// Probability distribution over the next app.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Theta(pub Vec<f64>);

impl Theta {
    pub fn uniform(n: usize) -> Self {
        Theta(vec![1.0 / n as f64; n])
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> Option<usize> {
        self.0
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((i, v)),
            })
            .map(|(i, _)| i)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineStep {
    pub implicit: Vec<f64>,
    /// Next-app scores before normalisation.
    pub theta_raw: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub implicit: ImplicitFeature,
    pub theta: Theta,
    pub steps: Vec<RefineStep>,
}

/// Alternates `IF = M theta` and `theta = normalise(M^T IF)` starting from a
/// uniform `theta`, for at most `max_iters` rounds. From the second round on,
/// stops early once the most likely next app no longer changes. A zero
/// `theta` update resets to uniform.
pub fn refine(m: &TransitionMatrix, max_iters: usize) -> Refinement {
    let n = m.n;
    let mut theta = Theta::uniform(n);
    let mut steps = Vec::new();
    let mut implicit = vec![0.0; n];
    for iter in 1..=max_iters {
        implicit = (0..n).map(|row| (0..n).map(|j| theta.0[j] * m.get(row, j)).sum()).collect();
        let raw: Vec<f64> = (0..n).map(|i| (0..n).map(|row| implicit[row] * m.get(row, i)).sum()).collect();
        let sum: f64 = raw.iter().sum();
        let next = if sum > 0.0 { Theta(raw.iter().map(|v| v / sum).collect()) } else { Theta::uniform(n) };
        steps.push(RefineStep { implicit: implicit.clone(), theta_raw: raw, theta: next.0.clone() });
        let settled = iter >= 2 && next.argmax() == theta.argmax();
        theta = next;
        if settled {
            break;
        }
    }
    Refinement { implicit: ImplicitFeature(implicit), theta, steps }
}

/// Implicit feature and next-app distribution for a query at time `at`.
pub fn implicit_for_testing(
    history: &[Launch],
    at: f64,
    aug: &Aug,
    limits: ChainLimits,
    refine_iters: usize,
) -> (TransitionMatrix, Refinement) {
    let m = build_transition_matrix(history, at, aug, limits);
    let r = refine(&m, refine_iters);
    (m, r)
}
