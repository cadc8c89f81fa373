//! Acceptance criteria, one pass/fail line each. Runs as a plain binary so
//! the lines are printed even when every criterion passes.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::{base_config, Bench};
use spume::cli;
use spume::corpus::{extract_attributes, AttributeIncidence, PosLexicon, PosTag};
use spume::episodes::{build_episode, build_random_episode, EpisodeConfig, EpisodeMode};
use spume::groups::{build_group_index, sampling_distribution, MetricKind, SpuriousnessTable};
use spume::model::{embed, episode_gradient, episode_loss, Activation, Classifier, ExtractorParams};
use spume::report::{evaluate, parse_comparison_csv, MetricsReport};
use spume::synthbench::{bench_lexicon, generate_dataset, synthesize_captions, BenchSpec};
use spume::train::{self, Method, Split, TrainOutcome};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct Run {
    method: Method,
    seed: u64,
    report: MetricsReport,
    outcome: TrainOutcome,
    elapsed: Duration,
}

fn train_and_eval(bench: &Bench, method: Method, seed: u64) -> Run {
    let cfg = base_config(method, seed);
    let train = Split::new(&bench.data.train, &bench.train_inc).unwrap();
    let val = Split::new(&bench.data.val, &bench.val_inc).unwrap();
    let start = Instant::now();
    let outcome = train::run(&cfg, train, val).unwrap();
    let elapsed = start.elapsed();
    let best = outcome.best();
    let classifier = Classifier::from_checkpoint(best, &bench.data.train).unwrap();
    let report = evaluate(&classifier, &best.params, &bench.data.test, None).unwrap();
    Run {
        method,
        seed,
        report,
        outcome,
        elapsed,
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn runs_of<'a>(runs: &'a [Run], method: Method, seeds: &[u64]) -> Vec<&'a Run> {
    runs.iter()
        .filter(|r| r.method == method && seeds.contains(&r.seed))
        .collect()
}

fn robustness_gain(runs: &[Run]) -> Verdict {
    let seeds = [0, 1, 2];
    let spume = runs_of(runs, Method::Spume, &seeds);
    let erm = runs_of(runs, Method::Erm, &seeds);
    let wg_s = mean(spume.iter().map(|r| r.report.worst_group));
    let wg_e = mean(erm.iter().map(|r| r.report.worst_group));
    let gap_s = mean(spume.iter().map(|r| r.report.gap));
    let gap_e = mean(erm.iter().map(|r| r.report.gap));
    let slowest = spume
        .iter()
        .chain(&erm)
        .map(|r| r.elapsed)
        .max()
        .unwrap_or_default();
    let gain = 100.0 * (wg_s - wg_e);
    verdict(
        gain >= 10.0 && gap_s <= 0.5 * gap_e && slowest < Duration::from_secs(300),
        format!(
            "worst-group SPUME {wg_s:.4} vs ERM {wg_e:.4} ({gain:+.1} pp, need >= 10); \
             gap {gap_s:.4} vs {gap_e:.4} (need <= {:.4}); slowest run {:.1}s",
            0.5 * gap_e,
            slowest.as_secs_f64()
        ),
    )
}

fn ablation_ordering(runs: &[Run]) -> Verdict {
    let seeds = [0, 1, 2, 3, 4];
    let wg = |m| mean(runs_of(runs, m, &seeds).iter().map(|r| r.report.worst_group));
    let (s, r, e) = (wg(Method::Spume), wg(Method::SpumeRandom), wg(Method::Erm));
    verdict(
        s >= r && r >= e,
        format!("mean worst-group over 5 seeds: SPUME {s:.4} >= random {r:.4} >= ERM {e:.4}"),
    )
}

/// Relative drop of the mean score over the top decile of initial scores.
fn top_decile_drop(initial: &SpuriousnessTable, last: &SpuriousnessTable) -> f64 {
    let cells = initial.sorted_descending();
    let n = cells.len().div_ceil(10);
    let before = mean(cells[..n].iter().map(|c| c.2));
    let after = mean(cells[..n].iter().map(|&(k, a, _)| last.score(k, a)));
    (before - after) / before
}

fn mitigation(runs: &[Run]) -> Verdict {
    let spume = runs_of(runs, Method::Spume, &[0, 1, 2, 3, 4]);
    let drops: Vec<f64> = spume
        .iter()
        .map(|r| top_decile_drop(&r.outcome.initial_table, &r.outcome.final_table))
        .collect();
    let worst = drops.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        worst >= 0.5,
        format!(
            "top-decile mean score drop per seed {:?} (need each >= 50%)",
            drops.iter().map(|d| format!("{:.1}%", 100.0 * d)).collect::<Vec<_>>()
        ),
    )
}

fn random_incidence(rng: &mut ChaCha8Rng, n: usize, n_attr: usize, p: f64) -> AttributeIncidence {
    let rows = (0..n)
        .map(|_| (0..n_attr).filter(|_| rng.random_bool(p)).collect())
        .collect();
    AttributeIncidence::new((0..n).map(|i| format!("s{i}")).collect(), rows, n_attr).unwrap()
}

fn gradient_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let activations = [Activation::Tanh, Activation::Identity, Activation::Relu];
    let mut worst = 0.0f64;
    let mut configs = 0;
    let mut checked = 0;
    let mut skipped = 0;
    let mut c = 0;
    while configs < 12 {
        c += 1;
        let k = 2 + c % 2;
        let input = rng.random_range(2..6);
        let mut dims = vec![input];
        for _ in 0..rng.random_range(1..3) {
            dims.push(rng.random_range(2..6));
        }
        let mut params = ExtractorParams::init(&dims, activations[c % 3], &mut rng).unwrap();
        for layer in params.layers_mut() {
            layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        let n = 12 * k;
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let mut store = spume::data::FeatureStore::new(input, k);
        for (i, &y) in labels.iter().enumerate() {
            let x: Vec<f64> = (0..input).map(|_| rng.random_range(-2.0..2.0)).collect();
            store.push(format!("s{i}"), y, None, &x).unwrap();
        }
        let inc = random_incidence(&mut rng, n, 3, 0.5);
        let index = build_group_index(&labels, k, &inc).unwrap();
        let ecfg = EpisodeConfig {
            n_support: rng.random_range(1..4),
            mode: EpisodeMode::Random,
            ..EpisodeConfig::default()
        };
        let episode = build_random_episode(&index, &ecfg, &mut rng).unwrap();
        // A zero embedding sits on the cosine's zero-norm convention, where
        // the loss is not differentiable.
        let rows: Vec<usize> = episode.support.iter().chain(&episode.query).map(|s| s.0).collect();
        let emb = embed(&params, &store.gather(&rows), rows.len()).unwrap();
        let dim = params.output_dim();
        if emb.chunks(dim).any(|e| e.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-3) {
            skipped += 1;
            continue;
        }
        let tau = [1.0, 5.0, 10.0][c % 3];
        let (_, grads) = episode_gradient(&params, &episode, &store, tau).unwrap();
        let analytic = grads.flatten();
        let h = 1e-5;
        let mut numeric = Vec::with_capacity(analytic.len());
        for l in 0..params.layers().len() {
            for which in 0..2 {
                let len = if which == 0 {
                    params.layers()[l].weight.len()
                } else {
                    params.layers()[l].bias.len()
                };
                for i in 0..len {
                    let eval = |delta: f64| {
                        let mut p = params.clone();
                        let layer = &mut p.layers_mut()[l];
                        let t = if which == 0 { &mut layer.weight } else { &mut layer.bias };
                        t[i] += delta;
                        episode_loss(&p, &episode, &store, tau).unwrap()
                    };
                    numeric.push((eval(h) - eval(-h)) / (2.0 * h));
                }
            }
        }
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        checked += analytic.len();
        configs += 1;
    }
    verdict(
        configs >= 10 && worst < 1e-4,
        format!("{configs} configurations ({skipped} redrawn at zero embeddings), {checked} parameters, max relative error {worst:.2e} (need < 1e-4)"),
    )
}

fn metric_suite() -> Verdict {
    let mut failures = Vec::new();
    for m in MetricKind::ALL {
        if m != MetricKind::Constant && m.score(0.7, 0.7) != 0.0 {
            failures.push(format!("{m}: equal accuracies"));
        }
        if m.score_counts(0, 0, 3, 4) != 0.0 || m.score_counts(3, 4, 0, 0) != 0.0 {
            failures.push(format!("{m}: empty side"));
        }
    }
    // tanh(ln 4) = (4^2 - 1) / (4^2 + 1)
    let exact = 15.0 / 17.0;
    let got = MetricKind::TanhAbsLogRatio.score(0.8, 0.2);
    if (got - exact).abs() > 1e-9 {
        failures.push(format!("tanh(ln 4): {got} vs {exact}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let p = 1.0 - rng.random::<f64>();
        let q = 1.0 - rng.random::<f64>();
        for m in MetricKind::ALL {
            let (a, b) = (m.score(p, q), m.score(q, p));
            let ok = match m {
                MetricKind::TanhAbsLogRatio => a == b && (0.0..1.0).contains(&a),
                MetricKind::AbsDelta => a == b && (0.0..=1.0).contains(&a),
                MetricKind::Delta => a == -b && (-1.0..=1.0).contains(&a),
                MetricKind::TanhLogRatio => (a + b).abs() < 1e-15 && a.abs() < 1.0,
                MetricKind::Constant => a == 1.0 && b == 1.0,
            };
            if !ok {
                failures.push(format!("{m} at ({p}, {q}): {a}, {b}"));
            }
        }
    }
    let n = failures.len();
    verdict(
        n == 0,
        if n == 0 {
            "edge cases, tanh(ln 4) oracle and 1000 random (p, q) pairs x 5 variants hold".into()
        } else {
            format!("{n} failures, first: {}", failures[0])
        },
    )
}

fn episode_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut built = 0;
    let mut violations = Vec::new();
    while built < 1000 {
        let k = rng.random_range(2..5);
        let n_attr = rng.random_range(3..6);
        let n = 40 * k;
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let inc = random_incidence(&mut rng, n, n_attr, 0.35);
        let index = build_group_index(&labels, k, &inc).unwrap();
        let scores = (0..k * n_attr).map(|_| rng.random_range(-0.2..1.0)).collect();
        let table = SpuriousnessTable::from_scores(&index, scores, MetricKind::Delta, 0).unwrap();
        let n_s = rng.random_range(1..4);
        let cfg = EpisodeConfig {
            n_support: n_s,
            ..EpisodeConfig::default()
        };
        for _ in 0..50 {
            let Ok(e) = build_episode(&index, &table, &cfg, &mut rng) else {
                continue;
            };
            built += 1;
            let support: BTreeSet<usize> = e.support.iter().map(|s| s.0).collect();
            let query: BTreeSet<usize> = e.query.iter().map(|s| s.0).collect();
            if !support.is_disjoint(&query) {
                violations.push("support and query overlap");
            }
            if e.support.len() != k * n_s || e.query.len() != k * n_s || support.len() != k * n_s {
                violations.push("wrong sizes");
            }
            for &(c, a, b) in &e.chosen_pairs {
                if a == b {
                    violations.push("pair not distinct");
                }
                for &(s, class) in &e.support {
                    if class == c && (inc.contains(s, b) || !inc.contains(s, a)) {
                        violations.push("support sample violates the correlation shift");
                    }
                }
                for &(s, class) in &e.query {
                    if class == c && (inc.contains(s, a) || !inc.contains(s, b)) {
                        violations.push("query sample violates the correlation shift");
                    }
                }
            }
        }
    }

    // Attributes partition every class and every group is large enough, so no
    // draw is rejected and pair frequencies follow the sampling distribution.
    let (k, n_attr, draws) = (2, 4, 1000);
    let labels: Vec<usize> = (0..200).map(|i| i % k).collect();
    let rows = (0..200).map(|i| vec![(i / k) % n_attr]).collect();
    let inc = AttributeIncidence::new((0..200).map(|i| format!("s{i}")).collect(), rows, n_attr).unwrap();
    let index = build_group_index(&labels, k, &inc).unwrap();
    let scores = vec![0.4, 0.3, 0.2, 0.1, 0.05, 0.6, 0.25, 0.1];
    let table = SpuriousnessTable::from_scores(&index, scores, MetricKind::Delta, 0).unwrap();
    let cfg = EpisodeConfig {
        n_support: 5,
        ..EpisodeConfig::default()
    };
    let mut counts = vec![vec![0usize; n_attr * n_attr]; k];
    for _ in 0..draws {
        let e = build_episode(&index, &table, &cfg, &mut rng).unwrap();
        for &(c, a, b) in &e.chosen_pairs {
            counts[c][a * n_attr + b] += 1;
        }
    }
    let mut stat = 0.0;
    let mut df = 0;
    for (c, row) in counts.iter().enumerate() {
        let d = sampling_distribution(&table, c).unwrap();
        let mut cells = 0;
        for a in 0..n_attr {
            for b in (0..n_attr).filter(|&b| b != a) {
                let expected = draws as f64 * d[a] * d[b] / (1.0 - d[a]);
                let observed = row[a * n_attr + b] as f64;
                stat += (observed - expected).powi(2) / expected;
                cells += 1;
            }
        }
        df += cells - 1;
    }
    let critical = ChiSquared::new(df as f64).unwrap().inverse_cdf(0.99);
    violations.dedup();
    verdict(
        violations.is_empty() && stat < critical,
        format!(
            "{built} episodes, {} property violations; pair chi-square {stat:.2} vs critical {critical:.2} (df {df}, alpha 0.01)",
            violations.len()
        ),
    )
}

fn cli_ok(args: &[&str]) -> bool {
    let mut full = vec!["spume"];
    full.extend_from_slice(args);
    cli::run(full) == 0
}

fn determinism(dir: &Path) -> Verdict {
    let data = dir.join("data");
    let cfg = dir.join("train.cfg");
    fs::write(&cfg, base_config(Method::Spume, 7).to_config_string()).unwrap();
    let d = data.to_str().unwrap();
    let mut ok = cli_ok(&["gendata", "--out", d, "--seed", "7"]);
    let outs = [dir.join("a"), dir.join("b")];
    for out in &outs {
        ok &= cli_ok(&[
            "train", "--config", cfg.to_str().unwrap(), "--data", d, "--out", out.to_str().unwrap(),
            "--threads", "1",
        ]);
    }
    if !ok {
        return verdict(false, "a command failed".into());
    }
    let read = |out: &Path, name: &str| fs::read(out.join(name)).unwrap();
    let last = spume::train::checkpoint_name(base_config(Method::Spume, 7).epochs);
    let same_history = read(&outs[0], cli::HISTORY_FILE) == read(&outs[1], cli::HISTORY_FILE);
    let same_ckpt = read(&outs[0], &last) == read(&outs[1], &last);
    verdict(
        same_history && same_ckpt,
        format!("history identical: {same_history}; final checkpoint identical: {same_ckpt}"),
    )
}

fn caption_fidelity() -> Verdict {
    let mut lexicon = PosLexicon::new();
    for (w, t) in [
        ("a", PosTag::Other),
        ("green", PosTag::Adj),
        ("vase", PosTag::Noun),
        ("sitting", PosTag::Other),
        ("on", PosTag::Other),
        ("top", PosTag::Noun),
        ("of", PosTag::Other),
        ("wooden", PosTag::Adj),
        ("table", PosTag::Noun),
    ] {
        lexicon.insert(w, t);
    }
    let got = extract_attributes("a green vase sitting on top of a wooden table", &lexicon);
    let want: BTreeSet<String> = ["green", "vase", "top", "wooden", "table"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let worked = got == want;

    let spec = BenchSpec::default();
    let data = generate_dataset(&spec).unwrap();
    let (captions, lex) = synthesize_captions(&data, &spec).unwrap();
    assert_eq!(lex, bench_lexicon(&spec));
    let bench = Bench::new(spec.clone(), 10);
    let mut total = 0;
    let mut recovered = 0;
    for (store, inc) in [
        (&bench.data.train, &bench.train_inc),
        (&bench.data.val, &bench.val_inc),
        (&bench.data.test, &bench.test_inc),
    ] {
        for i in 0..store.len() {
            total += 1;
            let word = &spec.attribute_words[store.groups()[i].unwrap()];
            let hit = bench.vocab.index_of(word).is_some_and(|a| inc.contains(i, a));
            recovered += usize::from(hit);
        }
    }
    let _ = captions;
    verdict(
        worked && recovered == total,
        format!("worked example exact: {worked}; latent attributes recovered {recovered}/{total}"),
    )
}

fn tau_sweep(dir: &Path) -> Verdict {
    let data = dir.join("data");
    let d = data.to_str().unwrap();
    let mut ok = cli_ok(&["gendata", "--out", d, "--seed", "3"]);
    let taus = [1.0, 5.0, 10.0, 50.0, 100.0];
    let mut entries = Vec::new();
    for tau in taus {
        let mut cfg = base_config(Method::Spume, 3);
        cfg.tau = tau;
        let cfg_path = dir.join(format!("tau{tau}.cfg"));
        fs::write(&cfg_path, cfg.to_config_string()).unwrap();
        let run = dir.join(format!("run_tau{tau}"));
        let eval = dir.join(format!("eval_tau{tau}"));
        ok &= cli_ok(&[
            "train", "--config", cfg_path.to_str().unwrap(), "--data", d, "--out", run.to_str().unwrap(),
        ]);
        ok &= cli_ok(&[
            "eval", "--checkpoint", run.to_str().unwrap(), "--data", d, "--out", eval.to_str().unwrap(),
        ]);
        entries.push(format!("{tau}={}", eval.join("report.json").display()));
    }
    let csv = dir.join("tau_sweep.csv");
    let mut args = vec!["compare", "--out", csv.to_str().unwrap()];
    args.extend(entries.iter().map(String::as_str));
    ok &= cli_ok(&args);
    if !ok {
        return verdict(false, "a command failed".into());
    }
    let rows = parse_comparison_csv(&fs::read_to_string(&csv).unwrap()).unwrap();
    let mut intact = rows.len() == taus.len();
    for (row, tau) in rows.iter().zip(taus) {
        let json = fs::read_to_string(dir.join(format!("eval_tau{tau}/report.json"))).unwrap();
        let csv_report = fs::read_to_string(dir.join(format!("eval_tau{tau}/report.csv"))).unwrap();
        let report = MetricsReport::from_json(&json).unwrap();
        intact &= MetricsReport::from_csv(&csv_report).unwrap() == report;
        intact &= row.label == format!("{tau}");
        intact &= row.average == report.average && row.worst_group == report.worst_group;
        intact &= (row.gap - (row.average - row.worst_group)).abs() <= 1e-12;
        intact &= (0.0..=1.0).contains(&row.worst_group) && row.worst_group <= row.average;
    }
    let summary: Vec<String> = rows
        .iter()
        .map(|r| format!("tau {} wg {:.3}", r.label, r.worst_group))
        .collect();
    verdict(intact, format!("{} rows, integrity {intact}: {}", rows.len(), summary.join(", ")))
}

fn main() {
    let started = Instant::now();
    let seeds: Vec<u64> = (0..5).collect();
    let benches: Vec<Bench> = seeds.par_iter().map(|&s| Bench::seeded(s)).collect();
    let jobs: Vec<(usize, Method)> = (0..seeds.len())
        .flat_map(|i| [Method::Spume, Method::SpumeRandom, Method::Erm].map(|m| (i, m)))
        .collect();
    let runs: Vec<Run> = jobs
        .par_iter()
        .map(|&(i, m)| train_and_eval(&benches[i], m, seeds[i]))
        .collect();
    for r in &runs {
        println!(
            "  seed {} {:<13} average {:.4} worst-group {:.4} gap {:.4} best epoch {} ({:.1}s)",
            r.seed,
            r.method.to_string(),
            r.report.average,
            r.report.worst_group,
            r.report.gap,
            r.outcome.best_epoch,
            r.elapsed.as_secs_f64()
        );
    }

    let tmp = tempfile::tempdir().unwrap();
    let det_dir = tmp.path().join("determinism");
    let sweep_dir = tmp.path().join("sweep");
    fs::create_dir_all(&det_dir).unwrap();
    fs::create_dir_all(&sweep_dir).unwrap();

    let results = [
        ("robustness gain over ERM", robustness_gain(&runs)),
        ("ablation ordering", ablation_ordering(&runs)),
        ("spuriousness mitigation", mitigation(&runs)),
        ("gradient oracle", gradient_oracle()),
        ("metric unit suite", metric_suite()),
        ("episode property suite", episode_suite()),
        ("determinism", determinism(&det_dir)),
        ("caption pipeline fidelity", caption_fidelity()),
        ("temperature sweep harness", tau_sweep(&sweep_dir)),
    ];
    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        println!(
            "{} criterion {} ({name}): {}",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
