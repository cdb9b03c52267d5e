//! Per-user training pipeline and the predictors evaluated against each other.
//!
//! Training a user: build the usage graph from the training launches, derive
//! each training launch's implicit feature against its true app, select
//! features over sensors and implicit dimensions, rebuild the graph from the
//! selected apps only, and store the normalised instances for kNN.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::aug::{build_aug, Aug};
use crate::config::Config;
use crate::error::Result;
use crate::implicit::{
    implicit_for_testing, implicit_for_training, ChainLimits, ImplicitFeature, Refinement, TransitionMatrix,
};
use crate::ingest::{Dataset, FeatureSpec, UserTrace};
use crate::knn::{predict_mfu, predict_mru, Instance, KnnModel, Normalizer, PredictionList};
use crate::mdl::{select_features, FeatureColumn, Selection};
use crate::types::{AppId, FeatureKind, Interner, Launch, SensorValue, UsageEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRef {
    /// Index into the sensor schema.
    Sensor(usize),
    Implicit(AppId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Greedy description-length selection up to coverage `rho`.
    Mdl,
    /// Every candidate feature, full graph.
    All,
}

pub fn implicit_feature_id(apps: &Interner, app: AppId) -> String {
    format!("IF[{}]", apps.resolve(app.0).unwrap_or("?"))
}

fn limits(cfg: &Config) -> ChainLimits {
    ChainLimits::new(cfg.min_tp, cfg.max_lookback)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserModel {
    pub user: String,
    pub mode: SelectionMode,
    pub features: Vec<FeatureRef>,
    pub feature_ids: Vec<String>,
    pub kinds: Vec<FeatureKind>,
    pub selection: Option<Selection>,
    pub n_candidates: usize,
    pub aug: Aug,
    pub normalizer: Normalizer,
    pub knn: KnnModel,
}

impl UserModel {
    pub fn train(
        user: &str,
        events: &[UsageEvent],
        schema: &[FeatureSpec],
        apps: &Interner,
        cfg: &Config,
        mode: SelectionMode,
    ) -> Result<Self> {
        let n_apps = apps.len();
        let launches: Vec<Launch> = events.iter().map(UsageEvent::launch).collect();
        let labels: Vec<AppId> = launches.iter().map(|l| l.app).collect();
        let full_aug = build_aug(&launches, n_apps, cfg.coverage_threshold);
        let training_features = |aug: &Aug| -> Vec<ImplicitFeature> {
            (0..launches.len()).map(|i| implicit_for_training(&launches[..i], launches[i], aug, limits(cfg))).collect()
        };
        let full_if = training_features(&full_aug);

        let mut candidates: Vec<(FeatureRef, FeatureColumn)> = schema
            .iter()
            .enumerate()
            .map(|(d, spec)| {
                let values = events.iter().map(|e| e.sensors[d]).collect();
                (FeatureRef::Sensor(d), FeatureColumn { id: spec.name.clone(), kind: spec.kind, values })
            })
            .collect();
        for a in (0..n_apps as u32).map(AppId).filter(|&a| full_aug.has_out_edges(a)) {
            let values = full_if.iter().map(|f| SensorValue::Numeric(f.get(a))).collect();
            let column = FeatureColumn { id: implicit_feature_id(apps, a), kind: FeatureKind::Numeric, values };
            candidates.push((FeatureRef::Implicit(a), column));
        }
        let n_candidates = candidates.len();

        let (picked, selection) = match mode {
            SelectionMode::All => ((0..candidates.len()).collect::<Vec<_>>(), None),
            SelectionMode::Mdl => {
                let columns: Vec<FeatureColumn> = candidates.iter().map(|(_, c)| c.clone()).collect();
                let s = select_features(&columns, &labels, cfg.rho)?;
                (s.candidates(), Some(s))
            }
        };
        let features: Vec<FeatureRef> = picked.iter().map(|&c| candidates[c].0).collect();
        let feature_ids: Vec<String> = picked.iter().map(|&c| candidates[c].1.id.clone()).collect();
        let kinds: Vec<FeatureKind> = picked.iter().map(|&c| candidates[c].1.kind).collect();

        let (aug, train_if) = match mode {
            SelectionMode::All => (full_aug, full_if),
            SelectionMode::Mdl => {
                let sources: BTreeSet<AppId> = features
                    .iter()
                    .filter_map(|f| match f {
                        FeatureRef::Implicit(a) => Some(*a),
                        FeatureRef::Sensor(_) => None,
                    })
                    .collect();
                let aug = full_aug.restrict_sources(&sources);
                let feats = if sources.is_empty() { full_if } else { training_features(&aug) };
                (aug, feats)
            }
        };

        let raw: Vec<Instance> =
            events.iter().zip(&train_if).map(|(e, f)| assemble(&features, &e.sensors, f)).collect();
        let normalizer = Normalizer::fit(&raw, &kinds);
        let instances = raw.iter().map(|i| normalizer.apply(i)).collect();
        let knn = KnnModel::new(instances, labels)?;
        Ok(UserModel {
            user: user.to_string(),
            mode,
            features,
            feature_ids,
            kinds,
            selection,
            n_candidates,
            aug,
            normalizer,
            knn,
        })
    }

    pub fn uses_implicit(&self) -> bool {
        self.features.iter().any(|f| matches!(f, FeatureRef::Implicit(_)))
    }

    /// Refines the implicit feature for a query at `ts` given prior launches.
    pub fn refine(&self, history: &[Launch], ts: f64, cfg: &Config) -> (TransitionMatrix, Refinement) {
        implicit_for_testing(history, ts, &self.aug, limits(cfg), cfg.refine_iters)
    }

    /// Normalised query instance for a launch at `ts` with the given sensors.
    pub fn query_instance(&self, history: &[Launch], ts: f64, sensors: &[SensorValue], cfg: &Config) -> Instance {
        let implicit = if self.uses_implicit() {
            self.refine(history, ts, cfg).1.implicit
        } else {
            ImplicitFeature::zeros(self.aug.n_apps)
        };
        self.normalizer.apply(&assemble(&self.features, sensors, &implicit))
    }

    pub fn predict(&self, history: &[Launch], ts: f64, sensors: &[SensorValue], cfg: &Config) -> PredictionList {
        let query = self.query_instance(history, ts, sensors, cfg);
        self.knn.predict(&query, cfg.knn_fraction, cfg.top_k)
    }
}

fn assemble(features: &[FeatureRef], sensors: &[SensorValue], implicit: &ImplicitFeature) -> Instance {
    Instance(
        features
            .iter()
            .map(|f| match f {
                FeatureRef::Sensor(d) => sensors[*d],
                FeatureRef::Implicit(a) => SensorValue::Numeric(implicit.get(*a)),
            })
            .collect(),
    )
}

/// One prediction request: everything known before the launch at `index`.
pub struct Query<'a> {
    pub index: usize,
    pub history: &'a [UsageEvent],
    pub launches: &'a [Launch],
    pub ts: f64,
    pub sensors: &'a [SensorValue],
}

pub trait FittedPredictor: Send + Sync {
    fn predict(&self, query: &Query<'_>) -> PredictionList;
}

/// A prediction method that can be fitted to one user's training split.
pub trait Predictor: Sync {
    fn name(&self) -> String;
    fn fit(&self, dataset: &Dataset, trace: &UserTrace, cfg: &Config) -> Result<Box<dyn FittedPredictor>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    Mfu,
    Mru,
    Kap,
    /// KAP on every candidate feature, without selection.
    KapAll,
}

impl Builtin {
    pub fn parse(name: &str) -> Option<Self> {
        match name.trim() {
            "mfu" => Some(Builtin::Mfu),
            "mru" => Some(Builtin::Mru),
            "kap" => Some(Builtin::Kap),
            "kap-all" => Some(Builtin::KapAll),
            _ => None,
        }
    }
}

struct Mfu {
    list: PredictionList,
}

impl FittedPredictor for Mfu {
    fn predict(&self, _: &Query<'_>) -> PredictionList {
        self.list.clone()
    }
}

struct Mru {
    labels: Vec<AppId>,
    k: usize,
}

impl FittedPredictor for Mru {
    fn predict(&self, query: &Query<'_>) -> PredictionList {
        let recent: Vec<AppId> = query.launches.iter().map(|l| l.app).collect();
        predict_mru(&recent, &self.labels, self.k).expect("labels are non-empty")
    }
}

struct Kap {
    model: UserModel,
    cfg: Config,
}

impl FittedPredictor for Kap {
    fn predict(&self, query: &Query<'_>) -> PredictionList {
        self.model.predict(query.launches, query.ts, query.sensors, &self.cfg)
    }
}

impl Predictor for Builtin {
    fn name(&self) -> String {
        match self {
            Builtin::Mfu => "mfu",
            Builtin::Mru => "mru",
            Builtin::Kap => "kap",
            Builtin::KapAll => "kap-all",
        }
        .to_string()
    }

    fn fit(&self, dataset: &Dataset, trace: &UserTrace, cfg: &Config) -> Result<Box<dyn FittedPredictor>> {
        let train = trace.train();
        let labels: Vec<AppId> = train.iter().map(|e| e.app).collect();
        Ok(match self {
            Builtin::Mfu => Box::new(Mfu { list: predict_mfu(&labels, cfg.top_k)? }),
            Builtin::Mru => {
                predict_mfu(&labels, cfg.top_k)?;
                Box::new(Mru { labels, k: cfg.top_k })
            }
            Builtin::Kap | Builtin::KapAll => {
                let mode = if *self == Builtin::Kap { SelectionMode::Mdl } else { SelectionMode::All };
                let model = UserModel::train(&trace.user, train, &dataset.schema, &dataset.apps, cfg, mode)?;
                Box::new(Kap { model, cfg: cfg.clone() })
            }
        })
    }
}
