//! Command-line front end: generate, train, predict, evaluate and sweep.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::bundle::ModelBundle;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{run_evaluation, sweep, EvalReport, Scores, SweepRow};
use crate::ingest::{generate, load_log, split, write_log, GeneratorSpec};
use crate::model::{Builtin, Predictor, SelectionMode};

#[derive(Debug, Parser)]
#[command(name = "usage-oracle", version, about = "Next-app prediction from sensor context and app-transition graphs")]
pub struct Cli {
    /// Config file of key=value lines; flags below override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Random seed (overrides rng_seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for intermediate dumps: usage graphs, transition matrices, refinement steps.
    #[arg(long, global = true, value_name = "DIR")]
    pub debug_dump: Option<PathBuf>,

    #[command(flatten)]
    pub overrides: Overrides,

    #[command(subcommand)]
    pub command: Command,
}

/// Per-field config overrides, accepted by every subcommand.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Length of prediction lists.
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    /// Neighbour count as a fraction of the training set.
    #[arg(long, global = true)]
    pub knn_fraction: Option<f64>,
    /// Training coverage at which feature selection stops.
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    /// Minimum accumulated transition probability of a chain.
    #[arg(long, global = true)]
    pub min_tp: Option<f64>,
    /// Predecessors considered for implicit features.
    #[arg(long, global = true)]
    pub max_lookback: Option<usize>,
    /// Test-time refinement iterations.
    #[arg(long, global = true)]
    pub refine_iters: Option<usize>,
    /// Histogram mass covered by interval fits.
    #[arg(long, global = true)]
    pub coverage_threshold: Option<f64>,
    /// Chronological training share of each user's trace.
    #[arg(long, global = true)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic usage log.
    Generate {
        /// Generator spec as JSON; the desk-scale scenario when omitted.
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train per-user models on the training split and save a bundle.
    Train {
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Output directory for bundle.json.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Write the per-round feature selection as CSV.
        #[arg(long, value_name = "FILE")]
        emit_selection: Option<PathBuf>,
        /// Keep every candidate feature instead of selecting.
        #[arg(long)]
        all_features: bool,
    },
    /// Predict every launch of an events log with a trained bundle.
    Predict {
        /// Bundle directory or bundle.json.
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        events: PathBuf,
        /// List length (overrides top_k).
        #[arg(long)]
        k: Option<usize>,
        /// JSON lines output; stdout when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Score predictors on the test split and write a CSV report.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Comma-separated predictors: mfu, mru, kap, kap-all.
        #[arg(long, default_value = "mfu,mru,kap")]
        predictors: String,
    },
    /// Re-evaluate across values of one config field.
    Sweep {
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// One of top_k (or k), rho, min_tp, refine_iters, knn_fraction.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long, default_value = "kap")]
        predictors: String,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Also write whitespace-separated columns for gnuplot.
        #[arg(long, value_name = "FILE")]
        gnuplot: Option<PathBuf>,
    },
}

impl Cli {
    /// Config from defaults, the config file, the override flags and `--seed`.
    pub fn resolve_config(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => at(path, Config::load(path))?,
            None => Config::default(),
        };
        self.apply_overrides(&mut cfg)?;
        Ok(cfg)
    }

    fn apply_overrides(&self, cfg: &mut Config) -> Result<()> {
        let o = &self.overrides;
        let fields: [(&str, Option<String>); 8] = [
            ("top_k", o.top_k.map(|v| v.to_string())),
            ("knn_fraction", o.knn_fraction.map(|v| v.to_string())),
            ("rho", o.rho.map(|v| v.to_string())),
            ("min_tp", o.min_tp.map(|v| v.to_string())),
            ("max_lookback", o.max_lookback.map(|v| v.to_string())),
            ("refine_iters", o.refine_iters.map(|v| v.to_string())),
            ("coverage_threshold", o.coverage_threshold.map(|v| v.to_string())),
            ("train_fraction", o.train_fraction.map(|v| v.to_string())),
        ];
        for (field, value) in fields {
            if let Some(v) = value {
                cfg.set(field, &v)?;
            }
        }
        if let Some(seed) = self.seed {
            cfg.rng_seed = seed;
        }
        cfg.validate()
    }
}

fn parse_predictors(list: &str) -> Result<Vec<Builtin>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Builtin::parse(s).ok_or_else(|| Error::Input(format!("unknown predictor `{}`", s.trim()))))
        .collect()
}

/// Prefixes I/O errors with the path involved.
fn at<T>(path: &Path, result: Result<T>) -> Result<T> {
    result.map_err(|e| match e {
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(at(path, File::create(path).map_err(Error::from))?))
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Input(format!("csv: {other:?}")),
    }
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

/// Runs a parsed command line, writing summaries to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let cfg = cli.resolve_config()?;
    if let Some(dir) = &cli.debug_dump {
        fs::create_dir_all(dir)?;
    }
    match &cli.command {
        Command::Generate { spec, out } => {
            let spec = match spec {
                Some(path) => serde_json::from_str(&at(path, fs::read_to_string(path).map_err(Error::from))?)?,
                None => GeneratorSpec::desk(),
            };
            let data = generate(&spec, cfg.rng_seed)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            at(out, write_log(&data, out))?;
            let events: usize = data.users.iter().map(|u| u.events.len()).sum();
            writeln!(stdout, "wrote {events} events for {} users to {}", data.users.len(), out.display())?;
        }
        Command::Train { data, out, emit_selection, all_features } => {
            let data = split(at(data, load_log(data))?, cfg.train_fraction)?;
            let mode = if *all_features { SelectionMode::All } else { SelectionMode::Mdl };
            let bundle = ModelBundle::train(&data, &cfg, mode)?;
            bundle.save(out)?;
            if let Some(path) = emit_selection {
                write_selection(&bundle, path)?;
            }
            if let Some(dir) = &cli.debug_dump {
                dump_graphs(&bundle, dir)?;
            }
            for entry in &bundle.users {
                let m = &entry.model;
                writeln!(
                    stdout,
                    "{}: {}/{} features [{}]",
                    m.user,
                    m.features.len(),
                    m.n_candidates,
                    m.feature_ids.join(", ")
                )?;
            }
        }
        Command::Predict { model, events, k, out } => {
            let bundle = at(model, ModelBundle::load(model))?;
            let mut qcfg = bundle.config.clone();
            cli.apply_overrides(&mut qcfg)?;
            if let Some(k) = k {
                qcfg.set("top_k", &k.to_string())?;
                qcfg.validate()?;
            }
            let events = at(events, load_log(events))?;
            let queries = bundle.queries(&events)?;
            let mut dump = match &cli.debug_dump {
                Some(dir) => Some(create(&dir.join("refinement.jsonl"))?),
                None => None,
            };
            let mut sink: Box<dyn Write + '_> = match out {
                Some(path) => Box::new(create(path)?),
                None => Box::new(&mut *stdout),
            };
            for q in &queries {
                let list = bundle.predict(q, &qcfg);
                serde_json::to_writer(&mut sink, &bundle.record(q, &list))?;
                sink.write_all(b"\n")?;
                if let Some(w) = dump.as_mut() {
                    let model = &bundle.users[q.user].model;
                    let (matrix, refinement) = model.refine(&q.history, q.ts, &qcfg);
                    let line = json!({
                        "user": model.user,
                        "ts": q.ts,
                        "matrix": matrix.rows(),
                        "steps": refinement.steps,
                        "implicit": refinement.implicit,
                        "theta": refinement.theta,
                    });
                    serde_json::to_writer(&mut *w, &line)?;
                    w.write_all(b"\n")?;
                }
            }
            sink.flush()?;
            if let Some(mut w) = dump {
                w.flush()?;
            }
        }
        Command::Evaluate { data, out, predictors } => {
            let data = split(at(data, load_log(data))?, cfg.train_fraction)?;
            let predictors = parse_predictors(predictors)?;
            let refs: Vec<&dyn Predictor> = predictors.iter().map(|p| p as &dyn Predictor).collect();
            let report = run_evaluation(&data, &cfg, &refs)?;
            write_report(&report, out)?;
            for (name, s) in &report.aggregate {
                writeln!(
                    stdout,
                    "{name}: recall@{k} {:.4}  ndcg@{k} {:.4}  users {}  cases {}",
                    s.recall,
                    s.ndcg,
                    report.per_user.len(),
                    s.n_cases,
                    k = report.k
                )?;
            }
        }
        Command::Sweep { data, axis, values, predictors, out, gnuplot } => {
            let data = split(at(data, load_log(data))?, cfg.train_fraction)?;
            let predictors = parse_predictors(predictors)?;
            let refs: Vec<&dyn Predictor> = predictors.iter().map(|p| p as &dyn Predictor).collect();
            let values: Vec<String> =
                values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
            let rows = sweep(&data, &cfg, axis, &values, &refs)?;
            write_sweep(&rows, out)?;
            if let Some(path) = gnuplot {
                write_gnuplot(&rows, path)?;
            }
            for r in &rows {
                writeln!(
                    stdout,
                    "{}={} {}: recall@{} {:.4}  ndcg {:.4}",
                    r.axis, r.value, r.predictor, r.k, r.scores.recall, r.scores.ndcg
                )?;
            }
        }
    }
    Ok(())
}

fn write_selection(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["user", "round", "feature", "l_h", "l_d_given_h", "dl", "removed_count"]).map_err(csv_error)?;
    for entry in &bundle.users {
        let Some(selection) = &entry.model.selection else { continue };
        for r in &selection.rounds {
            w.write_record([
                entry.model.user.clone(),
                r.round.to_string(),
                r.feature.clone(),
                f6(r.l_h),
                f6(r.l_d_given_h),
                f6(r.dl),
                r.removed_count.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn dump_graphs(bundle: &ModelBundle, dir: &Path) -> Result<()> {
    let mut w = create(&dir.join("graphs.jsonl"))?;
    for entry in &bundle.users {
        let aug = &entry.model.aug;
        let edges: Vec<_> = aug
            .edges
            .iter()
            .enumerate()
            .flat_map(|(src, out)| {
                out.iter().map(move |(dst, e)| {
                    json!({
                        "src": bundle.apps.resolve(src as u32),
                        "dst": bundle.apps.resolve(dst.0),
                        "weight": e.weight,
                        "alpha": e.alpha,
                        "beta": e.beta,
                        "count": e.count(),
                    })
                })
            })
            .collect();
        serde_json::to_writer(&mut w, &json!({ "user": entry.model.user, "edges": edges }))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

const REPORT_HEADER: [&str; 7] = ["scope", "cohort", "predictor", "k", "recall", "ndcg", "n_cases"];

fn report_row(scope: &str, cohort: &str, predictor: &str, k: usize, s: &Scores) -> [String; 7] {
    [
        scope.to_string(),
        cohort.to_string(),
        predictor.to_string(),
        k.to_string(),
        f6(s.recall),
        f6(s.ndcg),
        s.n_cases.to_string(),
    ]
}

/// Rows: per-user, aggregate (mean over users), pooled cases, then cohorts.
pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(REPORT_HEADER).map_err(csv_error)?;
    let k = report.k;
    for u in &report.per_user {
        for (p, s) in &u.scores {
            w.write_record(report_row("user", &u.user, p, k, s)).map_err(csv_error)?;
        }
    }
    for (p, s) in &report.aggregate {
        w.write_record(report_row("aggregate", "all", p, k, s)).map_err(csv_error)?;
    }
    for (p, s) in &report.pooled {
        w.write_record(report_row("pooled", "all", p, k, s)).map_err(csv_error)?;
    }
    for c in &report.cohorts {
        w.write_record(report_row(&c.axis, &c.label, &c.predictor, k, &c.scores)).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["axis", "value", "predictor", "k", "recall", "ndcg", "n_cases"]).map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.axis.clone(),
            r.value.clone(),
            r.predictor.clone(),
            r.k.to_string(),
            f6(r.scores.recall),
            f6(r.scores.ndcg),
            r.scores.n_cases.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// One block per predictor, separated by two blank lines for gnuplot's `index`.
pub fn write_gnuplot(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut predictors: Vec<&str> = rows.iter().map(|r| r.predictor.as_str()).collect();
    predictors.dedup();
    predictors.sort_unstable();
    predictors.dedup();
    for (i, p) in predictors.iter().enumerate() {
        if i > 0 {
            writeln!(w, "\n")?;
        }
        let axis = rows.first().map_or("value", |r| r.axis.as_str());
        writeln!(w, "# predictor {p}\n# {axis} recall ndcg n_cases")?;
        for r in rows.iter().filter(|r| r.predictor == *p) {
            writeln!(w, "{} {} {} {}", r.value, f6(r.scores.recall), f6(r.scores.ndcg), r.scores.n_cases)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Entry point shared by the binary: parses, runs and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => 0,
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
