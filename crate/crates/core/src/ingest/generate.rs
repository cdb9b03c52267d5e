//! Seeded synthetic usage traces with planted context rules and app chains.
//!
//! Each user lives through a sequence of sessions. A session starts after an
//! exponentially distributed gap, samples a context (hour, signal, battery,
//! ...) at the current place and picks its first app with weights boosted by the matching
//! context rules. If that app heads a planted chain, the remaining chain apps
//! follow after exponentially distributed intervals. Every event is replaced by
//! a uniformly random app with probability `noise_rate`, which also ends the
//! chain it interrupts. The place is redrawn from an hour and weekday
//! schedule once the user's stay there, also exponentially distributed, ends.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureSpec, RawEvent, RawValue};
use crate::error::{Error, Result};
use crate::types::FeatureKind;

/// Sensors emitted by [`generate`], in schema order.
pub const GENERATED_SCHEMA: [(&str, FeatureKind); 8] = [
    ("hour", FeatureKind::Numeric),
    ("weekday", FeatureKind::Numeric),
    ("location", FeatureKind::Categorical),
    ("wifi_dbm", FeatureKind::Numeric),
    ("battery", FeatureKind::Numeric),
    ("charging", FeatureKind::Categorical),
    ("accel_std", FeatureKind::Numeric),
    ("free_ram_mb", FeatureKind::Numeric),
];

const PLACES: [&str; 5] = ["home", "work", "gym", "cafe", "transit"];
const WIFI_MEAN: [f64; 5] = [-45.0, -57.0, -69.0, -81.0, -93.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub apps: Vec<usize>,
    pub mean_interval_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Predicate {
    Equals(String),
    /// Half-open `[min, max)`.
    Range(f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextRule {
    pub sensor: String,
    pub predicate: Predicate,
    pub app: usize,
    /// Multiplier applied to the app's choice weight when the predicate holds.
    pub boost: f64,
}

fn default_gap() -> f64 {
    20.0
}

fn default_dwell() -> f64 {
    30.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_users: usize,
    pub n_apps: usize,
    pub n_events_per_user: usize,
    #[serde(default)]
    pub planted_chains: Vec<ChainSpec>,
    #[serde(default)]
    pub context_rules: Vec<ContextRule>,
    pub noise_rate: f64,
    /// Mean gap between sessions, in minutes.
    #[serde(default = "default_gap")]
    pub session_gap_min: f64,
    /// Mean time spent at one place before the next place is drawn, in minutes.
    #[serde(default = "default_dwell")]
    pub place_dwell_min: f64,
}

impl GeneratorSpec {
    /// The desk-scale scenario: 10 users, 12 apps, 2,000 launches each.
    pub fn desk() -> Self {
        let rule = |sensor: &str, predicate: Predicate, app: usize| ContextRule {
            sensor: sensor.into(),
            predicate,
            app,
            boost: 4.0,
        };
        let place = |p: &str| Predicate::Equals(p.into());
        GeneratorSpec {
            n_users: 10,
            n_apps: 12,
            n_events_per_user: 2000,
            planted_chains: vec![
                ChainSpec { apps: vec![0, 8, 9, 1], mean_interval_min: 0.5 },
                ChainSpec { apps: vec![2, 10, 11, 3], mean_interval_min: 1.0 },
                ChainSpec { apps: vec![6, 7], mean_interval_min: 0.7 },
                ChainSpec { apps: vec![4, 5], mean_interval_min: 2.0 },
            ],
            context_rules: vec![
                rule("location", place("home"), 0),
                rule("location", place("home"), 1),
                rule("location", place("work"), 2),
                rule("location", place("work"), 3),
                rule("location", place("gym"), 4),
                rule("location", place("cafe"), 5),
                rule("location", place("transit"), 6),
                rule("hour", Predicate::Range(21.0, 24.0), 7),
            ],
            noise_rate: 0.2,
            session_gap_min: default_gap(),
            place_dwell_min: default_dwell(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Input(format!("generator spec: {msg}")));
        if self.n_users == 0 || self.n_apps == 0 || self.n_events_per_user == 0 {
            return bad("n_users, n_apps and n_events_per_user must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} is outside [0, 1]", self.noise_rate));
        }
        if !(self.session_gap_min > 0.0) {
            return bad("session_gap_min must be positive".into());
        }
        if !(self.place_dwell_min > 0.0) {
            return bad("place_dwell_min must be positive".into());
        }
        for chain in &self.planted_chains {
            if chain.apps.len() < 2 {
                return bad("a planted chain needs at least two apps".into());
            }
            if let Some(a) = chain.apps.iter().find(|&&a| a >= self.n_apps) {
                return bad(format!("chain app {a} is not below n_apps {}", self.n_apps));
            }
            if !(chain.mean_interval_min > 0.0) {
                return bad("chain mean interval must be positive".into());
            }
        }
        for rule in &self.context_rules {
            if rule.app >= self.n_apps {
                return bad(format!("rule app {} is not below n_apps {}", rule.app, self.n_apps));
            }
            if !(rule.boost > 0.0) {
                return bad("rule boost must be positive".into());
            }
            let kind = GENERATED_SCHEMA.iter().find(|(n, _)| *n == rule.sensor).map(|(_, k)| *k);
            match (kind, &rule.predicate) {
                (Some(FeatureKind::Categorical), Predicate::Equals(_))
                | (Some(FeatureKind::Numeric), Predicate::Range(..)) => {}
                (None, _) => return bad(format!("unknown sensor `{}`", rule.sensor)),
                _ => return bad(format!("predicate does not fit sensor `{}`", rule.sensor)),
            }
        }
        Ok(())
    }
}

/// Generated context for one launch, aligned with [`GENERATED_SCHEMA`].
#[derive(Clone, Debug)]
struct Context {
    hour: f64,
    weekday: f64,
    place: usize,
    wifi: f64,
    battery: f64,
    charging: bool,
    accel: f64,
    free_ram: f64,
}

impl Context {
    fn sample(ts: f64, place: usize, rng: &mut ChaCha8Rng) -> Self {
        let minute_of_day = ts.rem_euclid(1440.0);
        let hour = minute_of_day / 60.0;
        let weekday = (ts / 1440.0).floor().rem_euclid(7.0);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let wifi = WIFI_MEAN[place] + 5.0 * noise.sample(rng);
        let charging = place == 0 && !(7.0..22.0).contains(&hour);
        let battery = if charging {
            rng.random_range(60.0..100.0)
        } else {
            (100.0 - 4.0 * ((hour - 7.0).rem_euclid(24.0)) + 5.0 * noise.sample(rng)).clamp(1.0, 100.0)
        };
        let accel = rng.random_range(0.0..2.0);
        let free_ram = rng.random_range(200.0..2000.0);
        Context { hour, weekday, place, wifi, battery, charging, accel, free_ram }
    }

    /// Same session, later timestamp.
    fn advance(&self, ts: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut next = self.clone();
        next.hour = ts.rem_euclid(1440.0) / 60.0;
        next.weekday = (ts / 1440.0).floor().rem_euclid(7.0);
        next.accel = rng.random_range(0.0..2.0);
        next.free_ram = rng.random_range(200.0..2000.0);
        next
    }

    fn raw(&self) -> Vec<RawValue> {
        vec![
            RawValue::Number(round3(self.hour)),
            RawValue::Number(self.weekday),
            RawValue::Text(PLACES[self.place].to_string()),
            RawValue::Number(round3(self.wifi)),
            RawValue::Number(round3(self.battery)),
            RawValue::Text(if self.charging { "yes" } else { "no" }.to_string()),
            RawValue::Number(round3(self.accel)),
            RawValue::Number(round3(self.free_ram)),
        ]
    }

    fn matches(&self, rule: &ContextRule) -> bool {
        match (&rule.predicate, rule.sensor.as_str()) {
            (Predicate::Equals(v), "location") => PLACES[self.place] == v,
            (Predicate::Equals(v), "charging") => (v == "yes") == self.charging,
            (Predicate::Range(lo, hi), sensor) => {
                let x = match sensor {
                    "hour" => self.hour,
                    "weekday" => self.weekday,
                    "wifi_dbm" => self.wifi,
                    "battery" => self.battery,
                    "accel_std" => self.accel,
                    "free_ram_mb" => self.free_ram,
                    _ => return false,
                };
                (*lo..*hi).contains(&x)
            }
            _ => false,
        }
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Place distribution by time of day and weekday.
fn place_weights(hour: f64, weekday: f64) -> [f64; 5] {
    let weekend = weekday >= 5.0;
    match hour {
        h if !(7.0..22.0).contains(&h) => [0.9, 0.0, 0.0, 0.05, 0.05],
        h if weekend && (9.0..18.0).contains(&h) => [0.35, 0.0, 0.2, 0.3, 0.15],
        h if (7.0..9.0).contains(&h) || (17.0..19.0).contains(&h) => [0.15, 0.15, 0.1, 0.1, 0.5],
        h if (9.0..17.0).contains(&h) => [0.05, 0.75, 0.0, 0.15, 0.05],
        _ => [0.45, 0.0, 0.3, 0.2, 0.05],
    }
}

fn user_name(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(2);
    format!("user{i:0width$}")
}

fn app_name(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(2);
    format!("app{i:0width$}")
}

/// Generates a dataset deterministically from `seed`.
pub fn generate(spec: &GeneratorSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(1.0 / spec.session_gap_min).unwrap();
    let dwell = Exp::new(1.0 / spec.place_dwell_min).unwrap();
    let chain_gaps: Vec<Exp<f64>> =
        spec.planted_chains.iter().map(|c| Exp::new(1.0 / c.mean_interval_min).unwrap()).collect();
    let apps: Vec<String> = (0..spec.n_apps).map(|a| app_name(a, spec.n_apps)).collect();

    let mut records = Vec::with_capacity(spec.n_users * spec.n_events_per_user);
    for u in 0..spec.n_users {
        let user = user_name(u, spec.n_users);
        let mut ts = rng.random_range(0.0..1440.0);
        let mut emitted = 0;
        let mut place = 0;
        let mut leave_at = f64::NEG_INFINITY;
        let emit = |app: usize, ts: f64, ctx: &Context, records: &mut Vec<RawEvent>| {
            records.push(RawEvent { user: user.clone(), ts, app: apps[app].clone(), sensors: ctx.raw() });
        };
        while emitted < spec.n_events_per_user {
            ts += gap.sample(&mut rng);
            let hour = ts.rem_euclid(1440.0) / 60.0;
            let weekday = (ts / 1440.0).floor().rem_euclid(7.0);
            if ts >= leave_at {
                place = WeightedIndex::new(place_weights(hour, weekday)).unwrap().sample(&mut rng);
                leave_at = ts + dwell.sample(&mut rng);
            }
            let ctx = Context::sample(ts, place, &mut rng);

            let first = if rng.random::<f64>() < spec.noise_rate {
                rng.random_range(0..spec.n_apps)
            } else {
                let weights: Vec<f64> = (0..spec.n_apps)
                    .map(|a| {
                        spec.context_rules.iter().filter(|r| r.app == a && ctx.matches(r)).fold(1.0, |w, r| w * r.boost)
                    })
                    .collect();
                WeightedIndex::new(&weights).unwrap().sample(&mut rng)
            };
            emit(first, ts, &ctx, &mut records);
            emitted += 1;

            let Some(ci) = spec.planted_chains.iter().position(|c| c.apps[0] == first) else {
                continue;
            };
            let mut step_ctx = ctx;
            for &next in &spec.planted_chains[ci].apps[1..] {
                if emitted >= spec.n_events_per_user {
                    break;
                }
                ts += chain_gaps[ci].sample(&mut rng);
                step_ctx = step_ctx.advance(ts, &mut rng);
                let noisy = rng.random::<f64>() < spec.noise_rate;
                let app = if noisy { rng.random_range(0..spec.n_apps) } else { next };
                emit(app, ts, &step_ctx, &mut records);
                emitted += 1;
                if noisy {
                    break;
                }
            }
        }
    }
    let schema = GENERATED_SCHEMA.iter().map(|(n, k)| FeatureSpec::new(n, *k)).collect();
    Dataset::from_records(schema, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_chain(noise_rate: f64) -> GeneratorSpec {
        GeneratorSpec {
            n_users: 1,
            n_apps: 3,
            n_events_per_user: 1000,
            planted_chains: vec![ChainSpec { apps: vec![0, 1], mean_interval_min: 1.0 }],
            context_rules: vec![],
            noise_rate,
            session_gap_min: 45.0,
            place_dwell_min: 120.0,
        }
    }

    #[test]
    fn planted_chain_is_always_followed_without_noise() {
        let d = generate(&single_chain(0.0), 11).unwrap();
        let events = &d.users[0].events;
        assert_eq!(events.len(), 1000);
        let a = d.apps.get("app00").unwrap();
        let b = d.apps.get("app01").unwrap();
        let mut intervals = Vec::new();
        for pair in events.windows(2) {
            if pair[0].app.0 == a {
                assert_eq!(pair[1].app.0, b);
                intervals.push(pair[1].ts - pair[0].ts);
            }
        }
        assert!(intervals.len() > 200, "{}", intervals.len());
        let mean = intervals.iter().sum::<f64>() / intervals.len() as f64;
        assert!((mean - 1.0).abs() < 0.1, "mean interval {mean}");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = GeneratorSpec::desk();
        assert_eq!(generate(&spec, 5).unwrap(), generate(&spec, 5).unwrap());
        assert_ne!(generate(&spec, 5).unwrap(), generate(&spec, 6).unwrap());
    }

    #[test]
    fn full_noise_is_uniform() {
        let spec = GeneratorSpec {
            n_users: 1,
            n_apps: 6,
            n_events_per_user: 6000,
            planted_chains: vec![],
            context_rules: vec![ContextRule {
                sensor: "location".into(),
                predicate: Predicate::Equals("home".into()),
                app: 0,
                boost: 50.0,
            }],
            noise_rate: 1.0,
            session_gap_min: 30.0,
            place_dwell_min: 120.0,
        };
        let d = generate(&spec, 3).unwrap();
        let mut counts = [0f64; 6];
        for e in &d.users[0].events {
            counts[e.app.index()] += 1.0;
        }
        let n: f64 = counts.iter().sum();
        let expected = n / 6.0;
        let sigma = (n * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for c in counts {
            assert!((c - expected).abs() <= 3.0 * sigma, "{counts:?}");
        }
        // Pearson chi-square, 5 dof; 99.9th percentile is 20.5.
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        assert!(chi2 < 20.5, "chi2 {chi2}");
    }

    #[test]
    fn chain_transitions_survive_noise() {
        let noise = 0.2;
        let d = generate(&single_chain(noise), 8).unwrap();
        let events = &d.users[0].events;
        let heads = events[..events.len() - 1].iter().filter(|e| e.app.0 == 0).count() as f64;
        let follows = events.windows(2).filter(|p| p[0].app.0 == 0 && p[1].app.0 == 1).count() as f64;
        let sigma = (heads * noise * (1.0 - noise)).sqrt();
        assert!(follows >= (1.0 - noise) * heads - 3.0 * sigma, "{follows} of {heads}");
    }

    #[test]
    fn validation() {
        let mut spec = single_chain(0.0);
        spec.planted_chains[0].apps = vec![0, 3];
        assert!(generate(&spec, 0).is_err());
        let mut spec = single_chain(1.5);
        assert!(generate(&spec, 0).is_err());
        spec.noise_rate = 0.0;
        spec.context_rules.push(ContextRule {
            sensor: "altitude".into(),
            predicate: Predicate::Range(0.0, 1.0),
            app: 0,
            boost: 2.0,
        });
        assert!(generate(&spec, 0).is_err());
    }

    #[test]
    fn spec_serde_round_trip() {
        let spec = GeneratorSpec::desk();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<GeneratorSpec>(&json).unwrap(), spec);
    }
}
