//! Acceptance checks, one line per criterion. Runs as a plain binary so the
//! report is printed on every `cargo test`.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use stochrank::booster::{train, BoostMode, TrainConfig};
use stochrank::dataset::{parse_svmlight, synthetic_dataset, RankingDataset};
use stochrank::estimators::{ccs_bound, ccs_with_noise, sfa_project, EstimatorConfig, EstimatorKind};
use stochrank::harness::{gradcheck, GradcheckConfig};
use stochrank::metric::{eval_metric, MetricKind, MetricSpec, QueryMetric};
use stochrank::rng::seeded;
use stochrank::smoothing::{sample_noise, SmoothingSpec, INV_SQRT_2PI};

// ---------------------------------------------------------------------------
// textbook metric definitions, written independently of the library

fn ranked_labels(scores: &[f64], labels: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // descending score; equal scores put the lower label first
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(labels[a].partial_cmp(&labels[b]).unwrap())
            .then(a.cmp(&b))
    });
    idx.into_iter().map(|i| labels[i]).collect()
}

fn dcg_at(ranked: &[f64], k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| (2f64.powf(r) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

fn textbook(spec: &MetricSpec, scores: &[f64], labels: &[f64]) -> f64 {
    let ranked = ranked_labels(scores, labels);
    match spec.kind {
        MetricKind::Ndcg => {
            let k = spec.top.unwrap();
            let mut ideal = labels.to_vec();
            ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let best = dcg_at(&ideal, k);
            if best == 0.0 {
                1.0
            } else {
                dcg_at(&ranked, k) / best
            }
        }
        MetricKind::Err => {
            // labels already are stopping probabilities
            let k = spec.top.unwrap();
            let mut not_stopped = 1.0;
            let mut total = 0.0;
            for (i, &r) in ranked.iter().take(k).enumerate() {
                total += not_stopped * r / (i + 1) as f64;
                not_stopped *= 1.0 - r;
            }
            total
        }
        MetricKind::Mrr => ranked
            .iter()
            .position(|&r| r > 0.0)
            .map_or(0.0, |p| 1.0 / (p + 1) as f64),
        _ => unreachable!(),
    }
}

fn random_labels(rng: &mut ChaCha8Rng, spec: &MetricSpec, n: usize) -> Vec<f64> {
    loop {
        let labels: Vec<f64> = (0..n)
            .map(|_| match spec.kind {
                MetricKind::Ndcg => rng.random_range(0..5) as f64,
                MetricKind::Err => rng.random_range(0..5) as f64 / 4.0,
                _ => rng.random_range(0..2) as f64,
            })
            .collect();
        if labels.iter().any(|&r| r != labels[0]) {
            return labels;
        }
    }
}

fn metric_for(i: usize) -> MetricSpec {
    [MetricSpec::ndcg(3), MetricSpec::err(3), MetricSpec::mrr()][i % 3]
}

// ---------------------------------------------------------------------------

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Mean NDCG@3 of the toy set for every strict ordering of its three
/// distinct feature vectors, sorted descending.
fn synthetic_landscape(data: &RankingDataset) -> Vec<f64> {
    let spec = MetricSpec::ndcg(3);
    let mut values = Vec::new();
    let mut perm = [0usize, 1, 2];
    for _ in 0..6 {
        let vector_score = |row: &[f64]| -> f64 {
            let which = row.iter().position(|&v| v == 1.0).unwrap();
            perm[which] as f64
        };
        let scores: Vec<f64> = (0..data.len()).map(|d| vector_score(data.row(d))).collect();
        let mean = data
            .queries()
            .iter()
            .map(|q| textbook(&spec, &scores[q.range()], &data.labels()[q.range()]))
            .sum::<f64>()
            / data.queries().len() as f64;
        values.push(mean);
        next_permutation(&mut perm);
    }
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    values
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        p.reverse();
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap();
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn synthetic_config(seed: u64) -> TrainConfig {
    TrainConfig {
        iterations: 1000,
        learning_rate: 0.1,
        depth: 3,
        sigma: 1.0,
        mu: 1.0,
        model_shrink_rate: 1e-3,
        diffusion_temperature: 1e3,
        estimator: EstimatorConfig {
            kind: EstimatorKind::CcsSfa,
            nu: 1e-2,
            samples: 1,
        },
        mode: BoostMode::Sglb,
        seed,
        metric: MetricSpec::ndcg(3),
        ..TrainConfig::default()
    }
}

fn criterion_1() -> Outcome {
    let data = synthetic_dataset();
    let best = synthetic_landscape(&data)[0];
    if (best * 1e3).round() != 917.0 {
        return outcome(false, format!("best achievable value {best} does not round to 0.917"));
    }
    let mut reached = 0;
    let mut final_at_best = 0;
    let mut slowest = Duration::ZERO;
    for seed in 0..10 {
        let started = Instant::now();
        let out = train(&data, &synthetic_config(seed), None).expect("training runs");
        slowest = slowest.max(started.elapsed());
        if out.logs.iter().any(|r| (r.train_metric - best).abs() < 1e-12) {
            reached += 1;
        }
        if (out.logs.last().unwrap().train_metric - best).abs() < 1e-12 {
            final_at_best += 1;
        }
    }
    outcome(
        reached >= 9 && slowest < Duration::from_secs(60),
        format!(
            "{reached}/10 seeds reach {best:.4}, {final_at_best}/10 end there; slowest seed {:.2}s",
            slowest.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let data = synthetic_dataset();
    let landscape = synthetic_landscape(&data);
    let local = landscape[1];
    if (local * 1e3).round() != 903.0 {
        return outcome(false, format!("second-best value {local} does not round to 0.903"));
    }
    let optimum = landscape[0];
    let mut stalled = 0;
    let mut touched = 0;
    for seed in 0..10 {
        let cfg = TrainConfig {
            mode: BoostMode::Sgb,
            mu: 0.0,
            estimator: EstimatorConfig {
                kind: EstimatorKind::Ccs,
                ..EstimatorConfig::default()
            },
            ..synthetic_config(seed)
        };
        let out = train(&data, &cfg, None).expect("training runs");
        if (out.logs.last().unwrap().train_metric - local).abs() < 1e-12 {
            stalled += 1;
        }
        if out.logs.iter().any(|l| (l.train_metric - optimum).abs() < 1e-12) {
            touched += 1;
        }
    }
    outcome(
        stalled >= 8,
        format!("{stalled}/10 seeds end at {local:.4}; {touched}/10 pass through {optimum:.4} on the way"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = seeded(3);
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..10 {
        let spec = metric_for(i);
        let n = rng.random_range(2..=5);
        let labels = random_labels(&mut rng, &spec, n);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let metric = QueryMetric::new(spec, labels).unwrap();
        let smoothing = SmoothingSpec::shifted(if i % 2 == 0 { 0.0 } else { 1.0 }, 1.0).unwrap();
        let cfg = GradcheckConfig {
            samples: 200_000,
            seed: i as u64,
            ..GradcheckConfig::default()
        };
        let report = gradcheck(&scores, &metric, &smoothing, &cfg).unwrap();
        for c in &report.coordinates {
            let se = c.ccs.se.hypot(c.finite_difference.se);
            if se > 0.0 {
                worst = worst.max((c.ccs.mean - c.finite_difference.mean).abs() / se);
            }
            if !c.ccs_pass {
                failures.push(format!("instance {i} ({spec}) coordinate {}", c.index));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "10 instances, largest deviation {worst:.2} SE, {:.1}s{}",
            started.elapsed().as_secs_f64(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failures.join(", "))
            }
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = seeded(4);
    let mut checks = 0usize;
    let mut worst = 0.0f64;
    for i in 0..100 {
        let spec = match i % 3 {
            0 => MetricSpec::ndcg(rng.random_range(1..=10)),
            1 => MetricSpec::err(rng.random_range(1..=10)),
            _ => MetricSpec::mrr(),
        };
        let n = rng.random_range(1..=64);
        let labels: Vec<f64> = (0..n)
            .map(|_| match spec.kind {
                MetricKind::Ndcg => rng.random_range(0..5) as f64,
                MetricKind::Err => rng.random_range(0..5) as f64 / 4.0,
                _ => rng.random_range(0..2) as f64,
            })
            .collect();
        let noisy: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let metric = QueryMetric::new(spec, labels.clone()).unwrap();
        let state = metric.ranked_state(&noisy).unwrap();
        let sorted = state.sorted_scores().to_vec();
        // probes: above the top, below the bottom, and between every pair
        let mut probes = vec![sorted[0] + 1.0, sorted[n - 1] - 1.0];
        probes.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        for position in 0..n {
            let doc = state.order()[position];
            for &probe in &probes {
                let fast = state.delta_eval(position, probe).unwrap();
                let mut moved = noisy.clone();
                moved[doc] = probe;
                let naive = textbook(&spec, &moved, &labels);
                worst = worst.max((fast - naive).abs());
                checks += 1;
            }
        }
    }
    outcome(
        worst <= 1e-9,
        format!("{checks} probes over 100 instances, max abs error {worst:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = seeded(5);
    let mut cases = 0;
    let mut mismatches = 0;
    for i in 0..300 {
        let spec = metric_for(i).with_ties(Default::default());
        let spec = match spec.kind {
            MetricKind::Mrr => spec,
            _ => MetricSpec::new(spec.kind, Some(rng.random_range(1..=6))),
        };
        let n = rng.random_range(2..=9);
        let labels = random_labels(&mut rng, &spec, n);
        // integer scores with at most one block of up to six tied documents
        let block = rng.random_range(2..=n.min(6));
        let mut members: Vec<usize> = (0..n).collect();
        members.shuffle(&mut rng);
        let members = &members[..block];
        let tied_score = rng.random_range(0..4) as f64;
        let scores: Vec<f64> = (0..n)
            .map(|d| {
                if members.contains(&d) {
                    tied_score
                } else {
                    rng.random_range(0..4) as f64 + 0.5
                }
            })
            .collect();
        let value = eval_metric(&scores, &labels, &spec).unwrap();
        // every way of ordering the tied block, each realised by distinct
        // scores inside the gap around the tied value
        let mut perm: Vec<usize> = (0..block).collect();
        let mut brute = f64::INFINITY;
        loop {
            let mut broken = scores.clone();
            for (rank, &m) in perm.iter().enumerate() {
                broken[members[m]] = tied_score + 0.25 - 0.5 * rank as f64 / block as f64;
            }
            brute = brute.min(eval_metric(&broken, &labels, &spec).unwrap());
            if !next_permutation(&mut perm) {
                break;
            }
        }
        cases += 1;
        if value != brute {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{cases} tied instances, {mismatches} differ from brute-force minimum"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = seeded(6);
    let mut worst_dot = 0.0f64;
    let mut norm_violations = 0;
    let mut ratios = Vec::new();
    for i in 0..10 {
        let spec = metric_for(i);
        let n = rng.random_range(3..=8);
        let labels = random_labels(&mut rng, &spec, n);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let metric = QueryMetric::new(spec, labels.clone()).unwrap();
        let smoothing = SmoothingSpec::shifted(0.5, 1.0).unwrap();
        let (mut plain_sum, mut plain_sq) = (vec![0.0; n], vec![0.0; n]);
        let (mut sfa_sum, mut sfa_sq) = (vec![0.0; n], vec![0.0; n]);
        let draws = 20_000;
        let znorm = scores.iter().map(|z| z * z).sum::<f64>().sqrt();
        for _ in 0..draws {
            let eps = sample_noise(&smoothing, &labels, &mut rng);
            let g = ccs_with_noise(&scores, &metric, &smoothing, &eps).unwrap();
            let exact = sfa_project(&g, &scores, 0.0).unwrap();
            let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dot: f64 = exact.iter().zip(&scores).map(|(a, b)| a * b).sum();
            if gnorm > 0.0 {
                worst_dot = worst_dot.max(dot.abs() / (gnorm * znorm));
            }
            let guarded = sfa_project(&g, &scores, 1e-2).unwrap();
            for p in [&exact, &guarded] {
                let pnorm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                if pnorm > gnorm * (1.0 + 1e-12) {
                    norm_violations += 1;
                }
            }
            for j in 0..n {
                plain_sum[j] += g[j];
                plain_sq[j] += g[j] * g[j];
                sfa_sum[j] += guarded[j];
                sfa_sq[j] += guarded[j] * guarded[j];
            }
        }
        let total_var = |s: &[f64], q: &[f64]| -> f64 {
            let d = draws as f64;
            s.iter().zip(q).map(|(s, q)| (q - s * s / d) / (d - 1.0)).sum()
        };
        ratios.push(total_var(&sfa_sum, &sfa_sq) / total_var(&plain_sum, &plain_sq));
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    outcome(
        worst_dot <= 1e-10 && norm_violations == 0 && max_ratio <= 1.0,
        format!(
            "max relative <p, z> {worst_dot:.1e}, {norm_violations} norm increases, \
             variance ratio projected/plain at most {max_ratio:.3}"
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = seeded(7);
    let mut worst = 0.0f64;
    let draws = 100_000;
    for i in 0..draws {
        let spec = match i % 3 {
            0 => MetricSpec::ndcg(rng.random_range(1..=10)),
            1 => MetricSpec::err(rng.random_range(1..=10)),
            _ => MetricSpec::mrr(),
        };
        let n = rng.random_range(2..=12);
        let labels = random_labels(&mut rng, &spec, n);
        let sigma = rng.random_range(0.05..3.0);
        let mu = if rng.random_bool(0.5) {
            0.0
        } else {
            rng.random_range(0.0..3.0)
        };
        let smoothing = SmoothingSpec::shifted(mu, sigma).unwrap();
        // scores tightly packed around zero make the densities largest
        let spread = rng.random_range(1e-3..2.0);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-spread..spread)).collect();
        let metric = QueryMetric::new(spec, labels.clone()).unwrap();
        let eps = sample_noise(&smoothing, &labels, &mut rng);
        let g = ccs_with_noise(&scores, &metric, &smoothing, &eps).unwrap();
        let bound = 2.0 * n as f64 * INV_SQRT_2PI / sigma;
        debug_assert!((bound - ccs_bound(&metric, sigma)).abs() < 1e-12 * bound);
        for v in g {
            worst = worst.max(v.abs() / bound);
        }
    }
    outcome(
        worst <= 1.0,
        format!("{draws} draws, largest coordinate at {:.3} of the bound", worst),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = seeded(8);
    let mut cases = 0;
    let mut failures = 0;
    for i in 0..3000 {
        let spec = match i % 3 {
            0 => MetricSpec::ndcg(rng.random_range(1..=8)),
            1 => MetricSpec::err(rng.random_range(1..=8)),
            _ => MetricSpec::mrr(),
        };
        let n = rng.random_range(1..=12);
        let labels = random_labels_any(&mut rng, &spec, n);
        // small integers produce plenty of ties
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-5..=5) as f64).collect();
        let base = eval_metric(&scores, &labels, &spec).unwrap();
        let lambda = 10f64.powf(rng.random_range(-3.0..3.0));
        let shift = rng.random_range(-1000.0..1000.0);
        let scaled: Vec<f64> = scores.iter().map(|z| lambda * z).collect();
        let shifted: Vec<f64> = scores.iter().map(|z| z + shift).collect();
        cases += 1;
        if eval_metric(&scaled, &labels, &spec).unwrap() != base
            || eval_metric(&shifted, &labels, &spec).unwrap() != base
        {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("{cases} random cases, {failures} not invariant"))
}

fn random_labels_any(rng: &mut ChaCha8Rng, spec: &MetricSpec, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match spec.kind {
            MetricKind::Ndcg => rng.random_range(0..5) as f64,
            MetricKind::Err => rng.random_range(0..5) as f64 / 4.0,
            _ => rng.random_range(0..2) as f64,
        })
        .collect()
}

/// LETOR-format stand-in used when no dataset is supplied: labels follow a
/// noisy linear function of the features.
fn generated_letor(path: &std::path::Path) {
    let mut rng = seeded(9);
    let weights: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut text = String::new();
    for q in 0..300 {
        let docs = rng.random_range(5..=25);
        for _ in 0..docs {
            let x: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
            let signal: f64 = x.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.3..0.3);
            let label = ((signal + 1.5) * 1.5).floor().clamp(0.0, 4.0);
            text.push_str(&format!("{label} qid:{q}"));
            for (j, v) in x.iter().enumerate() {
                text.push_str(&format!(" {}:{v:.4}", j + 1));
            }
            text.push('\n');
        }
    }
    std::fs::write(path, text).unwrap();
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = match std::env::var_os("STOCHRANK_SMOKE_DATA") {
        Some(p) => std::path::PathBuf::from(p),
        None => {
            let p = dir.path().join("letor.txt");
            generated_letor(&p);
            p
        }
    };
    let data = parse_svmlight(std::fs::File::open(&path).unwrap(), "smoke").unwrap();
    if data.queries().len() > 1000 {
        return outcome(
            false,
            format!("{} queries exceeds the smoke-test limit", data.queries().len()),
        );
    }
    let cfg = TrainConfig {
        iterations: 50,
        metric: MetricSpec::ndcg(5),
        seed: 1,
        ..TrainConfig::default()
    };
    let started = Instant::now();
    let out = train(&data, &cfg, None).unwrap();
    let first = out.logs[0].train_metric;
    let last = out.logs.last().unwrap().train_metric;
    outcome(
        last > first,
        format!(
            "{} queries, train NDCG@5 {first:.4} -> {last:.4} in 50 iterations ({:.1}s)",
            data.queries().len(),
            started.elapsed().as_secs_f64()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("synthetic global optimum", criterion_1),
        ("local-optimum contrast", criterion_2),
        ("coordinate estimate unbiased", criterion_3),
        ("delta evaluation vs re-evaluation", criterion_4),
        ("worst-permutation ties", criterion_5),
        ("scale-free projection", criterion_6),
        ("uniform bound", criterion_7),
        ("scale and translation invariance", criterion_8),
        ("smoke training run", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!(
            "acceptance {} {name}: {} ({})",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
