//! Domain types shared across the crate.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense identifier of an installed app, interned from its name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AppId(pub u32);

impl AppId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "app#{}", self.0)
    }
}

/// Bijective string table handing out dense ids `0..len`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Interner {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table whose ids follow the lexicographic order of `names`.
    pub fn sorted<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = names.into_iter().map(Into::into).collect();
        all.sort();
        all.dedup();
        let mut table = Interner::new();
        for name in &all {
            table.intern(name)?;
        }
        Ok(table)
    }

    pub fn intern(&mut self, name: &str) -> Result<u32> {
        if name.is_empty() {
            return Err(Error::Input("cannot intern an empty name".into()));
        }
        if let Some(&id) = self.ids.get(name) {
            return Ok(id);
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn resolve(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl From<Vec<String>> for Interner {
    fn from(names: Vec<String>) -> Self {
        let ids = names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
        Interner { names, ids }
    }
}

impl From<Interner> for Vec<String> {
    fn from(table: Interner) -> Self {
        table.names
    }
}

/// Interns `name` as an app.
pub fn intern(name: &str, table: &mut Interner) -> Result<AppId> {
    table.intern(name).map(AppId)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

impl FeatureKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "numeric" => Ok(FeatureKind::Numeric),
            "categorical" => Ok(FeatureKind::Categorical),
            other => Err(Error::Schema(format!("unknown feature kind `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Numeric => "numeric",
            FeatureKind::Categorical => "categorical",
        }
    }
}

/// One sensor reading. Categorical values hold an interned symbol id.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SensorValue {
    Numeric(f64),
    Categorical(u32),
    Missing,
}

impl SensorValue {
    pub fn as_numeric(self) -> Option<f64> {
        match self {
            SensorValue::Numeric(v) => Some(v),
            _ => None,
        }
    }

    /// Total order used for deterministic tie-breaking: Missing < Numeric < Categorical.
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        use SensorValue::*;
        match (self, other) {
            (Missing, Missing) => Ordering::Equal,
            (Missing, _) => Ordering::Less,
            (_, Missing) => Ordering::Greater,
            (Numeric(a), Numeric(b)) => a.total_cmp(b),
            (Numeric(_), Categorical(_)) => Ordering::Less,
            (Categorical(_), Numeric(_)) => Ordering::Greater,
            (Categorical(a), Categorical(b)) => a.cmp(b),
        }
    }
}

/// One app launch. `sensors` is aligned with the dataset's feature schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsageEvent {
    /// Minutes since the epoch.
    pub ts: f64,
    pub app: AppId,
    pub sensors: Vec<SensorValue>,
}

impl UsageEvent {
    pub fn launch(&self) -> Launch {
        Launch { app: self.app, ts: self.ts }
    }
}

/// The (app, time) part of a launch; all the transition graph needs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Launch {
    pub app: AppId,
    pub ts: f64,
}

impl Launch {
    pub fn new(app: u32, ts: f64) -> Self {
        Launch { app: AppId(app), ts }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intern_assigns_dense_ids() {
        let mut table = Interner::new();
        assert_eq!(intern("Maps", &mut table).unwrap(), AppId(0));
        assert_eq!(intern("Maps", &mut table).unwrap(), AppId(0));
        assert_eq!(intern("Camera", &mut table).unwrap(), AppId(1));
        assert_eq!(table.resolve(1), Some("Camera"));
        assert_eq!(table.len(), 2);
    }

    #[test]
    fn intern_rejects_empty() {
        let mut table = Interner::new();
        assert!(matches!(intern("", &mut table), Err(Error::Input(_))));
    }

    #[test]
    fn sorted_table_is_lexicographic() {
        let table = Interner::sorted(["b", "a", "c", "a"]).unwrap();
        assert_eq!(table.names(), &["a", "b", "c"]);
        assert_eq!(table.get("c"), Some(2));
    }

    #[test]
    fn interner_serde_round_trip() {
        let table = Interner::sorted(["x", "y"]).unwrap();
        let json = serde_json::to_string(&table).unwrap();
        assert_eq!(json, r#"["x","y"]"#);
        let back: Interner = serde_json::from_str(&json).unwrap();
        assert_eq!(back, table);
    }

    proptest::proptest! {
        #[test]
        fn intern_resolve_round_trips(names in proptest::collection::vec("[a-z]{1,6}", 1..20)) {
            let mut table = Interner::new();
            for n in &names {
                let id = table.intern(n).unwrap();
                proptest::prop_assert_eq!(table.resolve(id), Some(n.as_str()));
            }
            proptest::prop_assert!(table.len() <= names.len());
        }
    }
}
