//! Usage logs: parsing, chronological splitting and synthetic generation.

mod generate;
mod log;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use self::generate::{generate, ChainSpec, ContextRule, GeneratorSpec, Predicate, GENERATED_SCHEMA};
pub use self::log::{load_log, parse_log, write_log, write_log_to};

use crate::error::{Error, Result};
use crate::types::{AppId, FeatureKind, Interner, SensorValue, UsageEvent};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn new(name: &str, kind: FeatureKind) -> Self {
        FeatureSpec { name: name.to_string(), kind }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserTrace {
    pub user: String,
    /// Time-sorted launches.
    pub events: Vec<UsageEvent>,
    /// Index of the first test event.
    pub split_index: usize,
    /// Set by [`split`] when the user cannot be evaluated.
    pub excluded: bool,
}

impl UserTrace {
    pub fn train(&self) -> &[UsageEvent] {
        &self.events[..self.split_index]
    }

    pub fn test(&self) -> &[UsageEvent] {
        &self.events[self.split_index..]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Vec<FeatureSpec>,
    pub apps: Interner,
    /// Interned categorical sensor values, shared by all categorical features.
    pub symbols: Interner,
    pub users: Vec<UserTrace>,
}

impl Dataset {
    pub fn n_apps(&self) -> usize {
        self.apps.len()
    }

    pub fn app_name(&self, app: AppId) -> &str {
        self.apps.resolve(app.0).unwrap_or("?")
    }

    pub fn user(&self, name: &str) -> Option<&UserTrace> {
        self.users.iter().find(|u| u.user == name)
    }
}

/// A sensor reading before interning.
#[derive(Clone, Debug, PartialEq)]
pub enum RawValue {
    Number(f64),
    Text(String),
    Missing,
}

/// An event before interning, as read from a log or produced by the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEvent {
    pub user: String,
    pub ts: f64,
    pub app: String,
    /// Aligned with the schema.
    pub sensors: Vec<RawValue>,
}

fn cmp_events(a: &UsageEvent, b: &UsageEvent) -> Ordering {
    a.ts.total_cmp(&b.ts).then(a.app.cmp(&b.app)).then_with(|| {
        a.sensors.iter().zip(&b.sensors).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    })
}

impl Dataset {
    /// Interns and groups raw events. Ids follow the lexicographic order of
    /// names so the result does not depend on row order.
    pub fn from_records(schema: Vec<FeatureSpec>, records: Vec<RawEvent>) -> Result<Self> {
        let apps = Interner::sorted(records.iter().map(|r| r.app.as_str()))?;
        let symbols = Interner::sorted(records.iter().flat_map(|r| {
            r.sensors.iter().filter_map(|v| match v {
                RawValue::Text(s) => Some(s.as_str()),
                _ => None,
            })
        }))?;

        let mut by_user: BTreeMap<String, Vec<UsageEvent>> = BTreeMap::new();
        for r in records {
            if r.sensors.len() != schema.len() {
                return Err(Error::Schema(format!(
                    "event has {} sensor values, schema has {}",
                    r.sensors.len(),
                    schema.len()
                )));
            }
            let sensors = r
                .sensors
                .iter()
                .zip(&schema)
                .map(|(v, spec)| match (v, spec.kind) {
                    (RawValue::Missing, _) => Ok(SensorValue::Missing),
                    (RawValue::Number(x), FeatureKind::Numeric) => Ok(SensorValue::Numeric(*x)),
                    (RawValue::Text(s), FeatureKind::Categorical) => {
                        Ok(SensorValue::Categorical(symbols.get(s).expect("interned above")))
                    }
                    _ => Err(Error::Schema(format!(
                        "value of `{}` does not match kind {}",
                        spec.name,
                        spec.kind.as_str()
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            let app = AppId(apps.get(&r.app).expect("interned above"));
            by_user.entry(r.user).or_default().push(UsageEvent { ts: r.ts, app, sensors });
        }

        let users = by_user
            .into_iter()
            .map(|(user, mut events)| {
                events.sort_by(cmp_events);
                let split_index = events.len();
                UserTrace { user, events, split_index, excluded: false }
            })
            .collect();
        Ok(Dataset { schema, apps, symbols, users })
    }
}

/// Sets each user's chronological train/test boundary at
/// `floor(train_fraction * len)`. Users left with fewer than two training
/// events or no test events are flagged as excluded.
pub fn split(mut dataset: Dataset, train_fraction: f64) -> Result<Dataset> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config("train_fraction", format!("{train_fraction} is outside (0, 1)")));
    }
    for trace in &mut dataset.users {
        let n = trace.events.len();
        trace.split_index = ((train_fraction * n as f64).floor() as usize).min(n);
        trace.excluded = trace.split_index < 2 || trace.split_index >= n;
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset_with(n: usize) -> Dataset {
        let records =
            (0..n).map(|i| RawEvent { user: "u".into(), ts: i as f64, app: "a".into(), sensors: vec![] }).collect();
        Dataset::from_records(vec![], records).unwrap()
    }

    #[test]
    fn split_floors() {
        let d = split(dataset_with(10), 0.7).unwrap();
        assert_eq!(d.users[0].split_index, 7);
        assert!(!d.users[0].excluded);
        let d = split(dataset_with(10), 2.0 / 3.0).unwrap();
        assert_eq!(d.users[0].split_index, 6);
    }

    #[test]
    fn split_flags_degenerate_users() {
        let d = split(dataset_with(1), 0.5).unwrap();
        assert!(d.users[0].excluded);
        let d = split(dataset_with(3), 0.5).unwrap();
        assert!(d.users[0].excluded, "one training event is not enough");
    }

    #[test]
    fn split_rejects_bad_fraction() {
        assert!(split(dataset_with(3), 1.0).is_err());
        assert!(split(dataset_with(3), 0.0).is_err());
    }

    #[test]
    fn from_records_rejects_kind_mismatch() {
        let schema = vec![FeatureSpec::new("hour", FeatureKind::Numeric)];
        let rec = RawEvent { user: "u".into(), ts: 0.0, app: "a".into(), sensors: vec![RawValue::Text("x".into())] };
        assert!(matches!(Dataset::from_records(schema, vec![rec]), Err(Error::Schema(_))));
    }
}
