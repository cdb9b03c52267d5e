//! Greedy feature selection by minimum description length.
//!
//! Each candidate feature projects the working set onto one dimension and is
//! scored by `L(H) + L(D|H)` bits: `sum_i log2 NG(i)` over the number of groups
//! each app forms, plus `sum_i log2(miss(i) + 1)` over the points each app loses
//! to other apps' bin majorities. The cheapest feature is picked, the points its
//! bin majorities predict correctly leave the working set, and the loop repeats
//! until a fraction `rho` of the training points has been covered.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AppId, FeatureKind, SensorValue};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureColumn {
    /// Sensor name, or `IF[<app>]` for an implicit dimension.
    pub id: String,
    pub kind: FeatureKind,
    pub values: Vec<SensorValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Bins {
    /// `n` equal-width bins starting at `min`.
    Numeric { min: f64, width: f64, n: usize },
    /// One bin per distinct symbol, in ascending order.
    Categorical { symbols: Vec<u32> },
}

impl Bins {
    fn len(&self) -> usize {
        match self {
            Bins::Numeric { n, .. } => *n,
            Bins::Categorical { symbols } => symbols.len(),
        }
    }

    fn locate(&self, value: SensorValue) -> Option<usize> {
        match (self, value) {
            (Bins::Numeric { min, width, n }, SensorValue::Numeric(x)) => {
                if *width <= 0.0 {
                    return Some(0);
                }
                let b = ((x - min) / width).floor();
                Some((b.max(0.0) as usize).min(n - 1))
            }
            (Bins::Categorical { symbols }, SensorValue::Categorical(s)) => symbols.binary_search(&s).ok(),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupingHypothesis {
    pub bins: Bins,
    /// Whether missing values occupy the extra bin at index `bins.len()`.
    pub missing_bin: bool,
    /// Bin of every input point.
    pub assignment: Vec<usize>,
    /// Majority app per bin; `None` for empty bins.
    pub majority: Vec<Option<AppId>>,
    pub ng: BTreeMap<AppId, usize>,
    pub miss: BTreeMap<AppId, usize>,
    pub l_h: f64,
    pub l_d_given_h: f64,
    pub dl: f64,
}

impl GroupingHypothesis {
    pub fn total_bins(&self) -> usize {
        self.bins.len() + usize::from(self.missing_bin)
    }

    pub fn predicts(&self, point: usize, label: AppId) -> bool {
        self.majority[self.assignment[point]] == Some(label)
    }
}

fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

fn numeric_bins(values: &[SensorValue]) -> Bins {
    let xs = values.iter().filter_map(|v| v.as_numeric());
    let (lo, hi, count) =
        xs.fold((f64::INFINITY, f64::NEG_INFINITY, 0usize), |(lo, hi, c), x| (lo.min(x), hi.max(x), c + 1));
    if count == 0 {
        return Bins::Numeric { min: 0.0, width: 0.0, n: 0 };
    }
    if lo == hi {
        return Bins::Numeric { min: lo, width: 0.0, n: 1 };
    }
    let n = (ceil_log2(count) + 1).max(1);
    Bins::Numeric { min: lo, width: (hi - lo) / n as f64, n }
}

fn categorical_bins(values: &[SensorValue]) -> Bins {
    let mut symbols: Vec<u32> = values
        .iter()
        .filter_map(|v| match v {
            SensorValue::Categorical(s) => Some(*s),
            _ => None,
        })
        .collect();
    symbols.sort_unstable();
    symbols.dedup();
    Bins::Categorical { symbols }
}

/// Scores one feature column against the labels of the same points.
pub fn hypothesize(column: &FeatureColumn, labels: &[AppId]) -> Result<GroupingHypothesis> {
    if column.values.is_empty() || column.values.len() != labels.len() {
        return Err(Error::Contract(format!(
            "feature `{}` has {} values for {} labels",
            column.id,
            column.values.len(),
            labels.len()
        )));
    }
    let bins = match column.kind {
        FeatureKind::Numeric => numeric_bins(&column.values),
        FeatureKind::Categorical => categorical_bins(&column.values),
    };
    let regular = bins.len();
    let assignment: Vec<usize> = column.values.iter().map(|&v| bins.locate(v).unwrap_or(regular)).collect();
    let missing_bin = assignment.contains(&regular);
    let n_bins = regular + 1;

    let mut global: BTreeMap<AppId, usize> = BTreeMap::new();
    let mut per_bin: Vec<BTreeMap<AppId, usize>> = vec![BTreeMap::new(); n_bins];
    for (&b, &label) in assignment.iter().zip(labels) {
        *global.entry(label).or_default() += 1;
        *per_bin[b].entry(label).or_default() += 1;
    }

    let majority: Vec<Option<AppId>> = per_bin
        .iter()
        .map(|counts| {
            counts
                .iter()
                .max_by(|(a, ca), (b, cb)| ca.cmp(cb).then(global[a].cmp(&global[b])).then(b.cmp(a)))
                .map(|(app, _)| *app)
        })
        .collect();

    let mut ng = BTreeMap::new();
    let mut miss = BTreeMap::new();
    for &app in global.keys() {
        let occupied = |b: usize| per_bin[b].contains_key(&app);
        let mut groups = match bins {
            Bins::Numeric { .. } => (0..regular).filter(|&b| occupied(b) && (b == 0 || !occupied(b - 1))).count(),
            Bins::Categorical { .. } => (0..regular).filter(|&b| occupied(b)).count(),
        };
        if occupied(regular) {
            groups += 1;
        }
        let missed: usize =
            (0..n_bins).filter(|&b| majority[b] != Some(app)).map(|b| per_bin[b].get(&app).copied().unwrap_or(0)).sum();
        ng.insert(app, groups);
        miss.insert(app, missed);
    }
    let l_h: f64 = ng.values().map(|&g| (g as f64).log2()).sum();
    let l_d_given_h: f64 = miss.values().map(|&m| (m as f64 + 1.0).log2()).sum();
    Ok(GroupingHypothesis {
        bins,
        missing_bin,
        assignment,
        majority,
        ng,
        miss,
        l_h,
        l_d_given_h,
        dl: l_h + l_d_given_h,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRound {
    pub round: usize,
    pub feature: String,
    /// Index into the candidate list.
    pub candidate: usize,
    pub l_h: f64,
    pub l_d_given_h: f64,
    pub dl: f64,
    pub removed_count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub rounds: Vec<SelectionRound>,
    pub n_points: usize,
}

impl Selection {
    pub fn features(&self) -> Vec<&str> {
        self.rounds.iter().map(|r| r.feature.as_str()).collect()
    }

    pub fn candidates(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.candidate).collect()
    }

    pub fn covered(&self) -> f64 {
        let removed: usize = self.rounds.iter().map(|r| r.removed_count).sum();
        removed as f64 / self.n_points.max(1) as f64
    }
}

fn score_candidates(
    candidates: &[FeatureColumn],
    remaining: &[usize],
    working: &[usize],
    labels: &[AppId],
) -> Result<Vec<(usize, GroupingHypothesis)>> {
    let score = |&c: &usize| -> Result<(usize, GroupingHypothesis)> {
        let col = &candidates[c];
        let projected = FeatureColumn {
            id: col.id.clone(),
            kind: col.kind,
            values: working.iter().map(|&p| col.values[p]).collect(),
        };
        Ok((c, hypothesize(&projected, labels)?))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        remaining.par_iter().map(score).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        remaining.iter().map(score).collect()
    }
}

/// Picks features greedily until `rho` of the points are covered, candidates
/// run out, or a round covers nothing.
pub fn select_features(candidates: &[FeatureColumn], labels: &[AppId], rho: f64) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Contract("feature selection needs at least one candidate".into()));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::config("rho", format!("{rho} is outside (0, 1]")));
    }
    if let Some(c) = candidates.iter().find(|c| c.values.len() != labels.len()) {
        return Err(Error::Contract(format!("feature `{}` length differs from labels", c.id)));
    }
    let n = labels.len();
    let mut working: Vec<usize> = (0..n).collect();
    let mut remaining: Vec<usize> = (0..candidates.len()).collect();
    let mut selection = Selection { rounds: Vec::new(), n_points: n };
    let mut removed_total = 0;

    while !working.is_empty() && !remaining.is_empty() && (removed_total as f64) < rho * n as f64 {
        let work_labels: Vec<AppId> = working.iter().map(|&p| labels[p]).collect();
        let scored = score_candidates(candidates, &remaining, &working, &work_labels)?;
        let (best, hyp) = scored
            .into_iter()
            .min_by(|(a, ha), (b, hb)| {
                ha.dl
                    .total_cmp(&hb.dl)
                    .then(ha.total_bins().cmp(&hb.total_bins()))
                    .then_with(|| candidates[*a].id.cmp(&candidates[*b].id))
                    .then(a.cmp(b))
            })
            .expect("remaining is non-empty");

        let before = working.len();
        working =
            working.iter().enumerate().filter(|&(i, _)| !hyp.predicts(i, work_labels[i])).map(|(_, &p)| p).collect();
        let removed = before - working.len();
        if removed == 0 {
            break;
        }
        removed_total += removed;
        remaining.retain(|&c| c != best);
        selection.rounds.push(SelectionRound {
            round: selection.rounds.len() + 1,
            feature: candidates[best].id.clone(),
            candidate: best,
            l_h: hyp.l_h,
            l_d_given_h: hyp.l_d_given_h,
            dl: hyp.dl,
            removed_count: removed,
        });
    }
    Ok(selection)
}
