//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use usage_oracle::aug::{build_aug, fit_exponential};
use usage_oracle::eval::{ndcg, recall, run_evaluation, top_k_frequency_of_counts, Case, EvalReport};
use usage_oracle::implicit::{brute_force_if, implicit_for_training, refine, ChainLimits, TransitionMatrix};
use usage_oracle::ingest::{generate, split, Dataset, GeneratorSpec};
use usage_oracle::knn::PredictionList;
use usage_oracle::mdl::{hypothesize, select_features, FeatureColumn};
use usage_oracle::model::{Builtin, Predictor, SelectionMode, UserModel};
use usage_oracle::{AppId, Config, FeatureKind, Launch, SensorValue};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = 0;
    let mut worst = 0.0f64;
    for _ in 0..240 {
        let n_apps = rng.random_range(2..=6);
        let mut ts = 0.0;
        let trace: Vec<Launch> = (0..rng.random_range(10..40))
            .map(|_| {
                ts += rng.random_range(0.0..4.0);
                Launch::new(rng.random_range(0..n_apps as u32), ts)
            })
            .collect();
        let aug = build_aug(&trace, n_apps, 0.75);
        let len = rng.random_range(0..=8);
        let mut ts = 0.0;
        let history: Vec<Launch> = (0..len)
            .map(|_| {
                ts += rng.random_range(0.0..3.0);
                Launch::new(rng.random_range(0..n_apps as u32), ts)
            })
            .collect();
        let target = Launch::new(rng.random_range(0..n_apps as u32), ts + rng.random_range(0.0..3.0));
        let min_tp = [0.0, 0.001, 0.1][rng.random_range(0..3)];
        let limits = ChainLimits::new(min_tp, rng.random_range(1..=8));
        let dp = implicit_for_training(&history, target, &aug, limits);
        let brute = brute_force_if(&history, target, &aug, limits).map_err(|e| e.to_string())?;
        for (a, b) in dp.values().iter().zip(brute.values()) {
            worst = worst.max((a - b).abs());
        }
        cases += 1;
    }
    let elapsed = started.elapsed();
    check(
        worst <= 1e-9 && elapsed < Duration::from_secs(5),
        format!("{cases} cases, max |dp - brute| = {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    )
}

fn refinement_example() -> Outcome {
    let m = TransitionMatrix::from_rows(&[vec![0.49, 0.6, 0.01], vec![0.0, 0.0, 0.13], vec![0.0, 0.0, 0.0]]);
    let r = refine(&m, 3);
    if r.steps.len() < 2 {
        return Err(format!("only {} refinement steps", r.steps.len()));
    }
    let if1 = &r.steps[0].implicit;
    let theta1 = &r.steps[0].theta;
    let if2 = &r.steps[1].implicit;
    let ok = within(if1, &[0.37, 0.04, 0.0], 0.005)
        && within(theta1, &[0.44, 0.54, 0.02], 0.01)
        && within(if2, &[0.5398, 0.0026, 0.0], 0.01);
    check(ok, format!("IF1 = {if1:.4?}, theta1 = {theta1:.4?}, IF2 = {if2:.4?}"))
}

fn exponential_fit() -> Outcome {
    let started = Instant::now();
    let halving: Vec<u64> = (0..12).map(|i| 1u64 << (11 - i)).collect();
    let fit = fit_exponential(&halving, 0.75).map_err(|e| e.to_string())?;
    let beta_err = (fit.beta - std::f64::consts::LN_2).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let exp: Exp<f64> = Exp::new(1.0 / 1.7).unwrap();
    let mut hist = vec![0u64; 1];
    for _ in 0..10_000 {
        let bucket = exp.sample(&mut rng).floor() as usize;
        if bucket >= hist.len() {
            hist.resize(bucket + 1, 0);
        }
        hist[bucket] += 1;
    }
    let sample_p0 = hist[0] as f64 / 10_000.0;
    let sampled = fit_exponential(&hist, 0.75).map_err(|e| e.to_string())?;
    let p0_err = (sampled.alpha - sample_p0).abs();
    let elapsed = started.elapsed();
    check(
        beta_err <= 0.02 && p0_err <= 0.02 && elapsed < Duration::from_secs(2),
        format!(
            "beta = {:.4} (ln2 err {beta_err:.2e}), bucket-0 fitted {:.4} vs sample {sample_p0:.4}, {:.2}s",
            fit.beta,
            sampled.alpha,
            elapsed.as_secs_f64()
        ),
    )
}

fn numeric(id: &str, values: &[f64]) -> FeatureColumn {
    FeatureColumn {
        id: id.into(),
        kind: FeatureKind::Numeric,
        values: values.iter().map(|&v| SensorValue::Numeric(v)).collect(),
    }
}

fn labels(ids: &[u32]) -> Vec<AppId> {
    ids.iter().map(|&a| AppId(a)).collect()
}

fn mdl_arithmetic() -> Outcome {
    let err = |e: usage_oracle::Error| e.to_string();
    let sep_labels = labels(&[0, 0, 0, 1, 1, 1]);
    let separating = numeric("separating", &[1.0, 2.0, 3.0, 10.0, 11.0, 12.0]);
    let noise = numeric("noise", &[5.0, 1.0, 9.0, 2.0, 8.0, 3.0]);
    let sep_dl = hypothesize(&separating, &sep_labels).map_err(err)?.dl;
    let first = select_features(&[noise, separating], &sep_labels, 1.0).map_err(err)?;

    let six =
        hypothesize(&numeric("f", &[1.0, 2.0, 9.0, 10.0, 5.0, 6.0]), &labels(&[0, 0, 0, 0, 1, 1])).map_err(err)?.dl;

    let fig_labels = labels(&[0, 0, 0, 1, 1, 1, 2, 3]);
    let fig = [
        numeric("battery", &[10.0, 90.0, 50.0, 12.0, 88.0, 52.0, 30.0, 30.0]),
        numeric("wifi", &[-40.0, -70.0, -55.0, -42.0, -68.0, -57.0, -90.0, -78.0]),
        numeric("time", &[8.0, 9.0, 10.0, 18.0, 19.0, 20.0, 9.5, 9.5]),
    ];
    let picks = select_features(&fig, &fig_labels, 1.0).map_err(err)?;

    let ok = sep_dl == 0.0
        && first.features() == ["separating"]
        && six == 1.0
        && picks.features() == ["time", "wifi"]
        && picks.rounds.len() == 2;
    check(
        ok,
        format!(
            "separating DL = {sep_dl}, picks {:?}; six-point DL = {six}; time-wifi fixture picks {:?}",
            first.features(),
            picks.features()
        ),
    )
}

fn metric_identities() -> Outcome {
    let list = |apps: &[u32]| PredictionList { ranked: apps.iter().map(|&a| (AppId(a), 1.0)).collect() };
    let rank1 = ndcg(&[(AppId(1), list(&[1, 2, 3]))]).unwrap();
    let rank3 = ndcg(&[(AppId(3), list(&[1, 2, 3]))]).unwrap();
    let topk = top_k_frequency_of_counts(&[3, 1, 2, 5, 2], 2);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..1000 {
        let cases: Vec<Case> = (0..rng.random_range(1..30))
            .map(|_| {
                let len = rng.random_range(0..6);
                let mut apps: Vec<u32> = (0..10).collect();
                for i in 0..len {
                    let j = rng.random_range(i..10);
                    apps.swap(i, j);
                }
                (AppId(rng.random_range(0..10)), list(&apps[..len]))
            })
            .collect();
        if ndcg(&cases).unwrap() > recall(&cases).unwrap() + 1e-12 {
            violations += 1;
        }
    }
    check(
        rank1 == 1.0 && rank3 == 0.5 && topk == 8.0 / 13.0 && violations == 0,
        format!("rank1 {rank1}, rank3 {rank3}, top-2 frequency {topk} (8/13), {violations} ndcg > recall violations"),
    )
}

struct Desk {
    data: Dataset,
    cfg: Config,
    report: EvalReport,
    elapsed: Duration,
}

fn desk() -> Desk {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let started = Instant::now();
        let cfg = Config::default();
        let data = split(generate(&GeneratorSpec::desk(), cfg.rng_seed).unwrap(), cfg.train_fraction).unwrap();
        let report = run_evaluation(&data, &cfg, &[&Builtin::Mfu, &Builtin::Mru, &Builtin::Kap]).unwrap();
        Desk { data, cfg, report, elapsed: started.elapsed() }
    })
}

fn recall_of(report: &EvalReport, predictor: &str) -> f64 {
    report.aggregate_of(predictor).map_or(f64::NAN, |s| s.recall)
}

fn dominance(desk: &Desk) -> Outcome {
    let kap = recall_of(&desk.report, "kap");
    let mfu = recall_of(&desk.report, "mfu");
    let mru = recall_of(&desk.report, "mru");
    check(
        kap - mfu >= 0.10 && kap - mru >= 0.10 && desk.elapsed < Duration::from_secs(60),
        format!(
            "recall@4 kap {kap:.4}, mfu {mfu:.4}, mru {mru:.4}; pipeline {:.1}s single-threaded",
            desk.elapsed.as_secs_f64()
        ),
    )
}

fn kap_recall(desk: &Desk, field: &str, value: &str, predictor: &dyn Predictor) -> f64 {
    let mut cfg = desk.cfg.clone();
    cfg.set(field, value).unwrap();
    let report = run_evaluation(&desk.data, &cfg, &[predictor]).unwrap();
    report.aggregate[0].1.recall
}

fn plateau(desk: &Desk) -> Outcome {
    let r1 = kap_recall(desk, "refine_iters", "1", &Builtin::Kap);
    let r2 = kap_recall(desk, "refine_iters", "2", &Builtin::Kap);
    let r3 = recall_of(&desk.report, "kap");
    check(r2 >= r1 && (r3 - r2).abs() <= 0.03, format!("recall at 1/2/3 iterations: {r1:.4} / {r2:.4} / {r3:.4}"))
}

fn selection_economy(desk: &Desk) -> Outcome {
    let all = kap_recall(desk, "rho", "0.7", &Builtin::KapAll);
    let kap = recall_of(&desk.report, "kap");
    let mut selected = 0;
    let mut candidates = 0;
    let mut every_user_smaller = true;
    for trace in desk.data.users.iter().filter(|t| !t.excluded) {
        let m = UserModel::train(
            &trace.user,
            trace.train(),
            &desk.data.schema,
            &desk.data.apps,
            &desk.cfg,
            SelectionMode::Mdl,
        )
        .unwrap();
        selected += m.features.len();
        candidates += m.n_candidates;
        every_user_smaller &= m.features.len() < m.n_candidates;
    }
    check(
        every_user_smaller && all - kap <= 0.05,
        format!("{selected} of {candidates} candidate features kept; recall kap {kap:.4} vs all features {all:.4}"),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_usage-oracle"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        fs::write(dir.join(format!("stdout-{}.txt", args[0])), &out.stdout).map_err(|e| e.to_string())?;
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn run_all_commands(dir: &Path, spec: &Path) -> Result<(), String> {
    let spec = spec.to_str().unwrap();
    run_cli(dir, &["generate", "--spec", spec, "--seed", "17", "--out", "data.jsonl"])?;
    run_cli(
        dir,
        &[
            "train",
            "--data",
            "data.jsonl",
            "--out",
            "model",
            "--emit-selection",
            "selection.csv",
            "--debug-dump",
            "dump-train",
        ],
    )?;
    run_cli(
        dir,
        &[
            "predict",
            "--model",
            "model",
            "--events",
            "data.jsonl",
            "--out",
            "pred.jsonl",
            "--debug-dump",
            "dump-predict",
        ],
    )?;
    run_cli(dir, &["evaluate", "--data", "data.jsonl", "--out", "report.csv", "--predictors", "mfu,mru,kap"])?;
    run_cli(
        dir,
        &[
            "sweep",
            "--data",
            "data.jsonl",
            "--axis",
            "refine_iters",
            "--values",
            "1,2,3",
            "--out",
            "sweep.csv",
            "--gnuplot",
            "sweep.dat",
        ],
    )?;
    Ok(())
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_files(&path, base, out);
        } else {
            let name = path.strip_prefix(base).unwrap().display().to_string();
            out.push((name, fs::read(&path).unwrap()));
        }
    }
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut spec = GeneratorSpec::desk();
    spec.n_users = 3;
    spec.n_events_per_user = 300;
    let spec_path = root.path().join("spec.json");
    fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).map_err(|e| e.to_string())?;

    let mut snapshots = Vec::new();
    for run in ["a", "b"] {
        let dir = root.path().join(run);
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        run_all_commands(&dir, &spec_path)?;
        let mut files = Vec::new();
        collect_files(&dir, &dir, &mut files);
        snapshots.push(files);
    }
    let differing: Vec<&str> =
        snapshots[0].iter().zip(&snapshots[1]).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()).collect();
    check(
        snapshots[0].len() == snapshots[1].len() && differing.is_empty() && snapshots[0].len() >= 10,
        format!(
            "{} output files compared across two runs, {} differ {differing:?}",
            snapshots[0].len(),
            differing.len()
        ),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
        Err(detail) => {
            failures += 1;
            println!("FAIL criterion {n} ({name}): {detail}");
        }
    };
    report(1, "dynamic program matches path enumeration", oracle_equivalence());
    report(2, "test-time refinement worked example", refinement_example());
    report(3, "exponential interval fits", exponential_fit());
    report(4, "description-length arithmetic", mdl_arithmetic());
    report(5, "metric identities", metric_identities());
    let desk = desk();
    report(6, "desk-scale dominance over MFU and MRU", dominance(&desk));
    report(7, "refinement iteration plateau", plateau(&desk));
    report(8, "selection economy at rho 0.7", selection_economy(&desk));
    report(9, "byte-identical command outputs", determinism());
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 9 acceptance criteria passed");
}
