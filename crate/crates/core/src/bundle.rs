//! Trained per-user models persisted as versioned JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::ingest::{Dataset, FeatureSpec};
use crate::knn::PredictionList;
use crate::model::{SelectionMode, UserModel};
use crate::types::{AppId, FeatureKind, Interner, Launch, SensorValue, UsageEvent};

pub const SCHEMA_VERSION: u32 = 1;
pub const BUNDLE_FILE: &str = "bundle.json";

/// Training launches kept per user to seed the history of later queries.
const RECENT_LAUNCHES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserEntry {
    pub model: UserModel,
    /// Tail of the training launches, oldest first.
    pub recent: Vec<Launch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: u32,
    pub config: Config,
    pub schema: Vec<FeatureSpec>,
    pub apps: Interner,
    pub symbols: Interner,
    /// Sorted by user name.
    pub users: Vec<UserEntry>,
}

/// One launch to predict, resolved against a bundle's tables.
#[derive(Clone, Debug)]
pub struct BundleQuery {
    /// Index into [`ModelBundle::users`].
    pub user: usize,
    /// Launches before this one, oldest first.
    pub history: Vec<Launch>,
    pub ts: f64,
    pub sensors: Vec<SensorValue>,
    /// Name of the app actually launched.
    pub truth: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedApp {
    pub app: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub user: String,
    pub ts: f64,
    pub truth: String,
    pub ranked: Vec<RankedApp>,
}

impl ModelBundle {
    /// Trains one model per user on the training split of `dataset`.
    ///
    /// Users without training events are skipped with a logged note.
    pub fn train(dataset: &Dataset, cfg: &Config, mode: SelectionMode) -> Result<Self> {
        cfg.validate()?;
        let train_user = |trace: &crate::ingest::UserTrace| -> Result<Option<UserEntry>> {
            let train = trace.train();
            if train.is_empty() {
                log::info!("skipping user {}: no training events", trace.user);
                return Ok(None);
            }
            let model = UserModel::train(&trace.user, train, &dataset.schema, &dataset.apps, cfg, mode)?;
            let start = train.len().saturating_sub(RECENT_LAUNCHES);
            let recent = train[start..].iter().map(UsageEvent::launch).collect();
            Ok(Some(UserEntry { model, recent }))
        };
        #[cfg(feature = "parallel")]
        let entries: Vec<Result<Option<UserEntry>>> = {
            use rayon::prelude::*;
            dataset.users.par_iter().map(train_user).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let entries: Vec<Result<Option<UserEntry>>> = dataset.users.iter().map(train_user).collect();
        let mut users: Vec<UserEntry> = entries.into_iter().filter_map(Result::transpose).collect::<Result<_>>()?;
        users.sort_by(|a, b| a.model.user.cmp(&b.model.user));
        Ok(ModelBundle {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            schema: dataset.schema.clone(),
            apps: dataset.apps.clone(),
            symbols: dataset.symbols.clone(),
            users,
        })
    }

    pub fn user(&self, name: &str) -> Option<&UserEntry> {
        self.users.binary_search_by(|u| u.model.user.as_str().cmp(name)).ok().map(|i| &self.users[i])
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => return Err(Error::Schema(format!("bundle schema_version {v}, expected {SCHEMA_VERSION}"))),
            None => return Err(Error::Schema("bundle has no schema_version".into())),
        }
        let bundle: ModelBundle = serde_json::from_value(value)?;
        bundle.config.validate()?;
        Ok(bundle)
    }

    /// Writes `bundle.json` into `dir`, creating the directory if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(BUNDLE_FILE), self.to_json()?)?;
        Ok(())
    }

    /// Reads a bundle from a directory holding `bundle.json`, or from the file itself.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(BUNDLE_FILE) } else { path.to_path_buf() };
        Self::from_json(&fs::read_to_string(file)?)
    }

    /// Resolves every event of `events` against this bundle, in user then time order.
    ///
    /// Each query's history holds the latest launches up to the query time
    /// among the stored training tail and the user's other events in `events`.
    /// Apps unknown to the bundle are left out of histories; unknown
    /// categorical values never match a training value. Users without a model
    /// are skipped with a logged note.
    pub fn queries(&self, events: &Dataset) -> Result<Vec<BundleQuery>> {
        let columns = self.sensor_columns(events)?;
        let mut queries = Vec::new();
        let mut traces: Vec<_> = events.users.iter().collect();
        traces.sort_by(|a, b| a.user.cmp(&b.user));
        for trace in traces {
            let Ok(user) = self.users.binary_search_by(|u| u.model.user.as_str().cmp(&trace.user)) else {
                log::warn!("no model for user {}; skipping {} events", trace.user, trace.events.len());
                continue;
            };
            let mut history = self.users[user].recent.clone();
            for event in &trace.events {
                let truth = events.app_name(event.app).to_string();
                let sensors = columns.iter().map(|c| c.remap(event, &events.symbols, &self.symbols)).collect();
                let known = history.partition_point(|l| l.ts <= event.ts);
                let prior = history[known.saturating_sub(RECENT_LAUNCHES)..known].to_vec();
                queries.push(BundleQuery { user, history: prior, ts: event.ts, sensors, truth: truth.clone() });
                match self.apps.get(&truth) {
                    Some(id) => history.insert(known, Launch::new(id, event.ts)),
                    None => log::warn!("app {truth} is unknown to the bundle; left out of history"),
                }
            }
        }
        Ok(queries)
    }

    pub fn predict(&self, query: &BundleQuery, cfg: &Config) -> PredictionList {
        self.users[query.user].model.predict(&query.history, query.ts, &query.sensors, cfg)
    }

    pub fn record(&self, query: &BundleQuery, list: &PredictionList) -> PredictionRecord {
        PredictionRecord {
            user: self.users[query.user].model.user.clone(),
            ts: query.ts,
            truth: query.truth.clone(),
            ranked: list
                .ranked
                .iter()
                .map(|&(app, score)| RankedApp { app: self.app_name(app).to_string(), score })
                .collect(),
        }
    }

    pub fn app_name(&self, app: AppId) -> &str {
        self.apps.resolve(app.0).unwrap_or("?")
    }

    fn sensor_columns(&self, events: &Dataset) -> Result<Vec<Column>> {
        self.schema
            .iter()
            .map(|spec| match events.schema.iter().position(|s| s.name == spec.name) {
                None => Ok(Column { index: None, kind: spec.kind }),
                Some(i) if events.schema[i].kind == spec.kind => Ok(Column { index: Some(i), kind: spec.kind }),
                Some(_) => Err(Error::Schema(format!(
                    "sensor `{}` is {} in the model but {} in the events",
                    spec.name,
                    spec.kind.as_str(),
                    events.schema.iter().find(|s| s.name == spec.name).map_or("?", |s| s.kind.as_str())
                ))),
            })
            .collect()
    }
}

/// Where a model sensor lives in an events file.
struct Column {
    index: Option<usize>,
    kind: FeatureKind,
}

impl Column {
    fn remap(&self, event: &UsageEvent, from: &Interner, to: &Interner) -> SensorValue {
        let Some(i) = self.index else {
            return SensorValue::Missing;
        };
        match (self.kind, event.sensors[i]) {
            (FeatureKind::Categorical, SensorValue::Categorical(s)) => {
                let id = from.resolve(s).and_then(|name| to.get(name)).unwrap_or(u32::MAX);
                SensorValue::Categorical(id)
            }
            (_, v) => v,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate, split, GeneratorSpec};

    fn small() -> Dataset {
        let mut spec = GeneratorSpec::desk();
        spec.n_users = 2;
        spec.n_events_per_user = 240;
        split(generate(&spec, 5).unwrap(), 2.0 / 3.0).unwrap()
    }

    #[test]
    fn json_round_trip_is_identical() {
        let data = small();
        let bundle = ModelBundle::train(&data, &Config::default(), SelectionMode::Mdl).unwrap();
        let text = bundle.to_json().unwrap();
        let back = ModelBundle::from_json(&text).unwrap();
        assert_eq!(back, bundle);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn reloaded_bundle_predicts_identically() {
        let data = small();
        let cfg = Config::default();
        let bundle = ModelBundle::train(&data, &cfg, SelectionMode::Mdl).unwrap();
        let back = ModelBundle::from_json(&bundle.to_json().unwrap()).unwrap();
        let queries = bundle.queries(&data).unwrap();
        assert_eq!(queries.len(), 480);
        for q in queries.iter().step_by(7) {
            assert_eq!(bundle.predict(q, &cfg), back.predict(q, &cfg));
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let data = small();
        let bundle = ModelBundle::train(&data, &Config::default(), SelectionMode::All).unwrap();
        let text = bundle.to_json().unwrap().replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
        assert!(matches!(ModelBundle::from_json(&text), Err(Error::Schema(_))));
    }

    #[test]
    fn queries_extend_history_with_earlier_events() {
        let data = small();
        let bundle = ModelBundle::train(&data, &Config::default(), SelectionMode::Mdl).unwrap();
        let mut later = data.clone();
        for u in &mut later.users {
            u.events.drain(..u.split_index);
            u.split_index = 0;
        }
        let queries = bundle.queries(&later).unwrap();
        let base = bundle.users[0].recent.len();
        assert_eq!(queries[0].history.len(), base);
        assert_eq!(queries[5].history.len(), (base + 5).min(RECENT_LAUNCHES));
        assert_eq!(queries[5].history.last().unwrap().ts, queries[4].ts);
        assert_eq!(queries[5].user, 0);
        assert_eq!(queries[80].user, 1);
        assert!(queries.iter().all(|q| q.history.windows(2).all(|w| w[0].ts <= w[1].ts)));
    }

    #[test]
    fn history_never_reaches_past_the_query() {
        let data = small();
        let bundle = ModelBundle::train(&data, &Config::default(), SelectionMode::Mdl).unwrap();
        let queries = bundle.queries(&data).unwrap();
        assert!(queries.iter().all(|q| q.history.iter().all(|l| l.ts <= q.ts)));
        assert!(queries[0].history.is_empty());
    }
}
