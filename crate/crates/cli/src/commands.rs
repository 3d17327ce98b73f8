use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::Rng;
use serde_json::json;

use stochrank::booster::{per_query_metric, train as train_model, write_log_csv, BoostMode, TrainConfig};
use stochrank::dataset::{read_svmlight_file, synthetic_dataset, RankingDataset};
use stochrank::estimators::{EstimatorConfig, EstimatorKind};
use stochrank::harness::{bench_delta, gradcheck as run_gradcheck, BenchConfig, GradcheckConfig};
use stochrank::metric::{MetricKind, MetricSpec, QueryMetric};
use stochrank::rng::seeded;
use stochrank::smoothing::SmoothingSpec;
use stochrank::stats::paired_t_test;
use stochrank::tree::Ensemble;

use crate::config::{usage, RunConfig};
use crate::{BenchArgs, EvalArgs, GradcheckArgs, SyntheticArgs, TrainArgs, TtestArgs};

/// Writes a report to stdout; a reader that stops early (`| head`) is not an
/// error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.write_all(b"\n")) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn load(path: &Path, flag: &str, binarize: bool) -> Result<RankingDataset> {
    if !path.exists() {
        return Err(usage(format!("{flag}: no such file {}", path.display())));
    }
    let data = read_svmlight_file(path).with_context(|| format!("reading {}", path.display()))?;
    let s = data.summary();
    log::info!(
        "{}: {} queries, {} documents, {} features",
        path.display(),
        s.queries,
        s.documents,
        s.feature_count
    );
    Ok(if binarize { data.binarize_labels() } else { data })
}

fn parse_metric(raw: &str) -> Result<MetricSpec> {
    raw.parse().map_err(|e| usage(format!("--metric: {e}")))
}

fn run_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    let flags = [
        ("train", &args.train),
        ("valid", &args.valid),
        ("model_out", &args.model_out),
        ("log_out", &args.log_out),
        ("iterations", &args.iterations),
        ("learning_rate", &args.learning_rate),
        ("depth", &args.depth),
        ("sigma", &args.sigma),
        ("mu", &args.mu),
        ("model_shrink_rate", &args.model_shrink_rate),
        ("diffusion_temperature", &args.diffusion_temperature),
        ("nu", &args.nu),
        ("samples", &args.samples),
        ("estimator", &args.estimator),
        ("mode", &args.mode),
        ("seed", &args.seed),
        ("metric", &args.metric),
        ("max_borders", &args.max_borders),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.apply(key, v)
                .map_err(|e| usage(format!("--{}: {e}", key.replace('_', "-"))))?;
        }
    }
    for (key, set) in [
        ("use_best_model", args.use_best_model),
        ("log_timing", args.log_timing),
        ("binarize_labels", args.binarize_labels),
        ("unsafe", args.unsafe_ranges),
    ] {
        if set {
            cfg.apply(key, "true")?;
        }
    }
    Ok(cfg)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = run_config(&args)?;
    let train_path = cfg
        .train_path
        .clone()
        .ok_or_else(|| usage("missing training data: pass --train or set `train` in the config file"))?;
    cfg.check_ranges()?;

    let mut data = load(&train_path, "--train", cfg.binarize_labels)?;
    let mut valid = match &cfg.valid_path {
        Some(p) => Some(load(p, "--valid", cfg.binarize_labels)?),
        None => None,
    };
    if let Some(v) = valid.as_mut() {
        let width = data.feature_count().max(v.feature_count());
        data.pad_features(width);
        v.pad_features(width);
    }

    let out = train_model(&data, &cfg.train, valid.as_ref())?;
    if let Some(path) = &cfg.model_out {
        out.ensemble
            .save(path)
            .with_context(|| format!("writing model to {}", path.display()))?;
    }
    if let Some(path) = &cfg.log_out {
        let file = File::create(path).with_context(|| format!("writing log to {}", path.display()))?;
        write_log_csv(&out.logs, BufWriter::new(file))?;
    }
    let first = &out.logs[0];
    let last = out.logs.last().expect("the initial row is always logged");
    let summary = json!({
        "metric": cfg.train.metric.to_string(),
        "iterations": last.iteration,
        "kept_iterations": out.kept_iterations,
        "initial_train_metric": first.train_metric,
        "train_metric": last.train_metric,
        "valid_metric": last.valid_metric,
    });
    emit(&serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    if !args.model.exists() {
        return Err(usage(format!("--model: no such file {}", args.model.display())));
    }
    let specs = args
        .metric
        .iter()
        .map(|m| parse_metric(m))
        .collect::<Result<Vec<_>>>()?;
    let model = Ensemble::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let mut data = load(&args.data, "--data", args.binarize_labels)?;
    // sparse files may omit trailing all-zero columns
    data.pad_features(model.feature_count());
    let scores = model.predict(data.features(), data.feature_count())?;

    let mut columns = Vec::with_capacity(specs.len());
    let mut means = serde_json::Map::new();
    for spec in &specs {
        let values = per_query_metric(&data, &scores, spec)
            .with_context(|| format!("evaluating {spec} (MRR needs --binarize-labels on graded data)"))?;
        means.insert(
            spec.to_string(),
            json!(values.iter().sum::<f64>() / values.len() as f64),
        );
        columns.push(values);
    }
    if let Some(path) = &args.per_query_out {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("writing {}", path.display()))?);
        let header: Vec<String> = specs.iter().map(ToString::to_string).collect();
        writeln!(w, "query,{}", header.join(","))?;
        for (q, group) in data.queries().iter().enumerate() {
            let row: Vec<String> = columns.iter().map(|c| c[q].to_string()).collect();
            writeln!(w, "{},{}", group.id, row.join(","))?;
        }
    }
    let report = json!({ "queries": data.queries().len(), "metrics": means });
    emit(&serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn parse_list(flag: &str, raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| usage(format!("{flag}: `{v}`: {e}")))
        })
        .collect()
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let spec = parse_metric(&args.metric)?;
    let mut rng = seeded(args.seed);
    let labels = match &args.labels {
        Some(raw) => parse_list("--labels", raw)?,
        None => (0..args.n)
            .map(|_| match spec.kind {
                MetricKind::Mrr | MetricKind::DcgRr => rng.random_range(0..2) as f64,
                MetricKind::Err => rng.random_range(0..5) as f64 / 4.0,
                _ => rng.random_range(0..5) as f64,
            })
            .collect(),
    };
    let scores = match &args.scores {
        Some(raw) => parse_list("--scores", raw)?,
        None => (0..labels.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    if scores.len() != labels.len() {
        return Err(usage(format!(
            "--scores has {} values but --labels has {}",
            scores.len(),
            labels.len()
        )));
    }
    let metric = QueryMetric::new(spec, labels.clone()).map_err(|e| usage(e.to_string()))?;
    let smoothing = SmoothingSpec::shifted(args.mu, args.sigma).map_err(|e| usage(e.to_string()))?;
    let cfg = GradcheckConfig {
        samples: args.samples,
        step: args.step,
        nu: args.nu,
        seed: args.seed,
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(&scores, &metric, &smoothing, &cfg).map_err(|e| usage(e.to_string()))?;

    if args.json {
        emit(&serde_json::to_string_pretty(&report)?)?;
    } else {
        let mut text = format!(
            "{} on labels {labels:?}, scores {scores:?}, {} samples\n",
            report.metric, report.samples
        );
        text += &format!(
            "{:>3} {:>22} {:>22} {:>22}  result\n",
            "j", "ccs", "reinforce", "finite difference"
        );
        for c in &report.coordinates {
            let cell = |m: stochrank::harness::MeanSe| format!("{:+.5} ± {:.5}", m.mean, m.se);
            text += &format!(
                "{:>3} {:>22} {:>22} {:>22}  {}\n",
                c.index,
                cell(c.ccs),
                cell(c.reinforce),
                cell(c.finite_difference),
                if c.ccs_pass && c.reinforce_pass { "ok" } else { "FAIL" }
            );
        }
        let fmt = |r: Option<f64>| r.map_or("n/a".to_owned(), |v| format!("{v:.4}"));
        text += &format!(
            "variance ratio reinforce/ccs: {}\n",
            fmt(report.variance_ratio_reinforce_ccs)
        );
        text += &format!(
            "variance ratio projected/plain: {}",
            fmt(report.variance_ratio_sfa_plain)
        );
        emit(&text)?;
    }
    if !report.pass {
        bail!("gradient check failed");
    }
    Ok(())
}

fn synthetic_config(args: &SyntheticArgs, seed: u64) -> TrainConfig {
    let base = TrainConfig {
        iterations: args.iterations,
        learning_rate: 0.1,
        depth: 3,
        sigma: 1.0,
        mu: 1.0,
        model_shrink_rate: 1e-3,
        diffusion_temperature: 1e3,
        estimator: EstimatorConfig::default(),
        mode: BoostMode::Sglb,
        seed,
        metric: MetricSpec::ndcg(3),
        ..TrainConfig::default()
    };
    if args.contrast {
        TrainConfig {
            mode: BoostMode::Sgb,
            mu: 0.0,
            estimator: EstimatorConfig {
                kind: EstimatorKind::Ccs,
                ..EstimatorConfig::default()
            },
            ..base
        }
    } else {
        base
    }
}

/// Mean metric of every strict ordering of the three toy feature vectors,
/// best first.
fn toy_orderings(data: &RankingDataset, spec: &MetricSpec) -> Result<Vec<f64>> {
    let perms = [
        [3.0, 2.0, 1.0],
        [3.0, 1.0, 2.0],
        [2.0, 3.0, 1.0],
        [1.0, 3.0, 2.0],
        [2.0, 1.0, 3.0],
        [1.0, 2.0, 3.0],
    ];
    let mut values = Vec::with_capacity(6);
    for w in perms {
        let scores: Vec<f64> = (0..data.len())
            .map(|d| data.row(d).iter().zip(&w).map(|(x, w)| x * w).sum())
            .collect();
        let per_query = per_query_metric(data, &scores, spec)?;
        values.push(per_query.iter().sum::<f64>() / per_query.len() as f64);
    }
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

pub fn synthetic(args: SyntheticArgs) -> Result<()> {
    let data = synthetic_dataset();
    if let Some(path) = &args.write_data {
        let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
        data.write_svmlight(BufWriter::new(file))?;
    }
    let spec = MetricSpec::ndcg(3);
    let orderings = toy_orderings(&data, &spec)?;
    let optimum = orderings[0];
    let mut runs = Vec::new();
    let (mut reached, mut ended) = (0, 0);
    for seed in args.first_seed..args.first_seed + args.seeds {
        let cfg = synthetic_config(&args, seed);
        let started = std::time::Instant::now();
        let out = train_model(&data, &cfg, None)?;
        let first_hit = out
            .logs
            .iter()
            .find(|r| (r.train_metric - optimum).abs() < 1e-12)
            .map(|r| r.iteration);
        let last = out.logs.last().expect("the initial row is always logged").train_metric;
        reached += usize::from(first_hit.is_some());
        ended += usize::from((last - optimum).abs() < 1e-12);
        runs.push(json!({
            "seed": seed,
            "final": last,
            "best": out.logs.iter().map(|r| r.train_metric).fold(f64::MIN, f64::max),
            "first_iteration_at_optimum": first_hit,
            "seconds": started.elapsed().as_secs_f64(),
        }));
    }
    let report = json!({
        "configuration": if args.contrast { "sgb, centered smoothing, ccs" } else { "sglb, shifted smoothing, ccs-sfa" },
        "metric": spec.to_string(),
        "optimum": optimum,
        "orderings": orderings,
        "seeds": args.seeds,
        "reached_optimum": reached,
        "final_at_optimum": ended,
        "runs": runs,
    });
    emit(&serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

pub fn bench(args: BenchArgs) -> Result<()> {
    if args.min_exp > args.max_exp || args.max_exp > 24 {
        return Err(usage("expected --min-exp <= --max-exp <= 24"));
    }
    let cfg = BenchConfig {
        sizes: (args.min_exp..=args.max_exp).map(|p| 1usize << p).collect(),
        top: args.top,
        naive_max: 1usize << args.naive_max_exp.min(24),
        min_seconds: args.min_seconds,
        seed: args.seed,
    };
    let rows = bench_delta(&cfg)?;
    if args.json {
        emit(&serde_json::to_string_pretty(&rows)?)?;
        return Ok(());
    }
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    let mut text =
        "n,seconds_per_pass,normalized,normalized_ratio,naive_seconds_per_pass,speedup,max_abs_diff".to_owned();
    for r in rows {
        text += &format!(
            "\n{},{:e},{:e},{},{},{},{}",
            r.n,
            r.seconds_per_pass,
            r.normalized,
            opt(r.normalized_ratio),
            opt(r.naive_seconds_per_pass),
            opt(r.speedup),
            opt(r.max_abs_diff)
        );
    }
    emit(&text)
}

/// Reads one number per line, or one column of a CSV file with a header.
fn read_values(path: &PathBuf, column: Option<&str>) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(usage(format!("no such file {}", path.display())));
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    let first = lines.peek().copied().unwrap_or_default();
    let fields: Vec<&str> = first.split(',').map(str::trim).collect();
    let has_header = fields.iter().any(|f| f.parse::<f64>().is_err());
    let index = if has_header {
        let idx = match column {
            Some(name) => fields
                .iter()
                .position(|f| *f == name)
                .ok_or_else(|| usage(format!("{}: no column `{name}`", path.display())))?,
            None => fields.len() - 1,
        };
        lines.next();
        idx
    } else {
        fields.len() - 1
    };
    lines
        .enumerate()
        .map(|(i, line)| {
            let field = line.split(',').nth(index).unwrap_or("").trim();
            field
                .parse::<f64>()
                .with_context(|| format!("{}: row {}: `{field}` is not a number", path.display(), i + 1))
        })
        .collect()
}

pub fn ttest(args: TtestArgs) -> Result<()> {
    let a = read_values(&args.a, args.column.as_deref())?;
    let b = read_values(&args.b, args.column.as_deref())?;
    let result = paired_t_test(&a, &b).map_err(|e| usage(e.to_string()))?;
    emit(&serde_json::to_string_pretty(&result)?)?;
    Ok(())
}
