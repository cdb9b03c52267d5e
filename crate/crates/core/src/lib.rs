//! Next-app prediction from sensor context and per-user app-transition graphs.
//!
//! The pipeline for one user: build a usage graph of launch-to-launch
//! transitions with exponential interval fits, derive implicit features from
//! recent launch chains, pick a compact feature subset by description length,
//! and rank apps with a distance-weighted kNN vote.

pub mod aug;
pub mod bundle;
#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod implicit;
pub mod ingest;
pub mod knn;
pub mod mdl;
pub mod model;
pub mod types;

pub use crate::aug::{build_aug, edge_prob, fit_exponential, Aug, EdgeModel, ExpFit};
pub use crate::config::Config;
pub use crate::error::{Error, Result};
pub use crate::eval::{ndcg, recall, run_evaluation, sweep, EvalReport};
pub use crate::implicit::{
    brute_force_if, implicit_for_testing, implicit_for_training, refine, ChainLimits, ImplicitFeature, TransitionMatrix,
};
pub use crate::ingest::{generate, load_log, split, Dataset, GeneratorSpec, UserTrace};
pub use crate::knn::{predict_mfu, predict_mru, KnnModel, PredictionList};
pub use crate::mdl::{select_features, FeatureColumn, Selection};
pub use crate::model::{Builtin, Predictor, SelectionMode, UserModel};
pub use crate::types::{AppId, FeatureKind, Launch, SensorValue, UsageEvent};
