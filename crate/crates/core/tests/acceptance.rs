//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use metre::classifier::topk;
use metre::data::{adjudicate, enhance_symmetry, generate_synthetic, SyntheticConfig};
use metre::evaluation::{random_baseline, MetricsReport};
use metre::relation_algebra::{interval_relation_from_points, PointRelation};
use metre::training::{grad_check, loss_vague, loss_well_defined, prepare_inputs, train, LossSelector, Mode, TrainConfig};
use metre::{Label, RelId, RelationSchema};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    o.detail = format!("{}; {:.2}s", o.detail, took.as_secs_f64());
    if let Some(limit) = limit {
        if took >= limit {
            o.pass = false;
            o.detail = format!("{} (limit {:.0}s)", o.detail, limit.as_secs_f64());
        }
    }
    o
}

fn algebra_exactness() -> Outcome {
    let s = RelationSchema::tbdense();
    // Confusion relations as tabulated in the paper; Simultaneous has none.
    let confusion = [
        ("Before", Some("Include")),
        ("After", Some("Is_Included")),
        ("Include", Some("Before")),
        ("Is_Included", Some("After")),
        ("Simultaneous", None),
    ];
    let mut mismatches = 0;
    for (r, expected) in confusion {
        let got = s.confusion_of(s.relation(r).unwrap()).unwrap().map(|c| s.relation_name(c).to_string());
        if got.as_deref() != expected {
            mismatches += 1;
        }
    }
    use PointRelation::{After as A, Before as B, Equal as E};
    let rows = [
        (B, B, "Before"),
        (B, E, "Include"),
        (B, A, "Include"),
        (E, B, "Is_Included"),
        (E, E, "Simultaneous"),
        (E, A, "Include"),
        (A, B, "Is_Included"),
        (A, E, "Is_Included"),
        (A, A, "After"),
    ];
    let udst = RelationSchema::preset("udst").unwrap();
    for (start, end, expected) in rows {
        let got = interval_relation_from_points(start, end).name();
        if got != expected || udst.relation(got).is_err() {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("5 confusion entries, 9 point-map rows, {mismatches} mismatches"))
}

fn adjudication_oracle() -> Outcome {
    let s = RelationSchema::tbdense();
    let ids: Vec<RelId> = s.ids().collect();
    let mut mismatches = 0;
    let mut triples = 0;
    for &a in &ids {
        for &b in &ids {
            for &c in &ids {
                triples += 1;
                let mut counts: BTreeMap<RelId, usize> = BTreeMap::new();
                for r in [a, b, c] {
                    *counts.entry(r).or_default() += 1;
                }
                let expected = match counts.iter().find(|(_, &n)| n >= 2) {
                    Some((&r, _)) => (Label::Rel(r), [r].into_iter().collect()),
                    None => (Label::Vague, counts.keys().copied().collect()),
                };
                if adjudicate(&[a, b, c]).unwrap() != expected {
                    mismatches += 1;
                }
            }
        }
    }
    outcome(mismatches == 0, format!("{triples} triples, {mismatches} mismatches"))
}

fn loss_identities() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let t = 0.37;
    let (l1, _) = loss_well_defined(&[t, -2.0, 0.5, 1.0, -0.3], t, RelId(0)).unwrap();
    let (_, l2) = loss_well_defined(&[4.0, t, t, t, t], t, RelId(0)).unwrap();
    let l3_empty = loss_vague(&[0.2, -0.4, 1.0, 0.0, 0.0], t, &[], 0.8);
    let w = 0.65;
    let l3_one = loss_vague(&[t, 3.0, -1.0, 0.0, 0.0], t, &[RelId(0)], w);
    let errs = [
        (l1.value - ln2).abs(),
        (l2.value - 5f64.ln()).abs(),
        l3_empty.value.abs(),
        (l3_one.value - w * ln2).abs(),
    ];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    outcome(worst <= 1e-9, format!("L1, L2, L3 (empty), L3 (one member); max deviation {worst:.1e}"))
}

fn gradient_checks() -> Outcome {
    let configs = 10;
    let mut parts = Vec::new();
    let mut pass = true;
    for sel in [LossSelector::WellDefined, LossSelector::Vague, LossSelector::Baseline, LossSelector::EndToEnd] {
        let r = grad_check(sel, 2024, configs, 1e-5).unwrap();
        let ok = r.max_rel_error < 1e-4 && !r.all_zero;
        pass &= ok;
        parts.push(format!("{} {:.1e}", sel.as_str(), r.max_rel_error));
    }
    outcome(pass, format!("{configs} configs each; max rel error {}", parts.join(", ")))
}

fn random_baseline_monte_carlo() -> Outcome {
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let relations: Vec<usize> = (0..5).collect();
    let mut hits = [0usize; 3];
    for _ in 0..draws {
        let set: Vec<usize> = relations.choose_multiple(&mut rng, 3).copied().collect();
        let mut scores = vec![0.0; 5];
        let mut order = relations.clone();
        order.shuffle(&mut rng);
        for (rank, &r) in order.iter().enumerate() {
            scores[r] = -(rank as f64);
        }
        for k in 1..=3 {
            if topk(&scores, k).unwrap().iter().all(|r| set.contains(&r.0)) {
                hits[k - 1] += 1;
            }
        }
    }
    let expected = [0.6, 0.3, 0.1];
    let observed: Vec<f64> = hits.iter().map(|&h| h as f64 / draws as f64).collect();
    let pass = observed.iter().zip(expected).all(|(o, e)| (o - e).abs() <= 0.005);
    let analytic_ok = (1..=3).all(|k| (random_baseline(k, 5, 3).unwrap() - expected[k - 1]).abs() < 1e-12);
    outcome(
        pass && analytic_ok,
        format!(
            "Top1/2/3 = {:.4}/{:.4}/{:.4} vs 0.600/0.300/0.100",
            observed[0], observed[1], observed[2]
        ),
    )
}

/// Averages over seeds for one training mode.
#[derive(Default, Clone, Copy)]
struct ModeStats {
    micro_f1: f64,
    well_defined_recall: f64,
    vague_recall: f64,
    top2_hits: usize,
    top2_evaluated: usize,
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn synthetic_config() -> SyntheticConfig {
    SyntheticConfig::with_vague_fraction(0.45)
}

fn train_config(mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        epochs: 60,
        embed_dim: 32,
        hidden_dim: 32,
        pair_dim: 32,
        ..TrainConfig::default()
    }
}

fn synthetic_runs() -> BTreeMap<&'static str, ModeStats> {
    let schema = RelationSchema::tbdense();
    let gen = synthetic_config();
    let modes = [Mode::Metre, Mode::Baseline, Mode::MetreNoCs];
    let mut stats: BTreeMap<&'static str, ModeStats> = BTreeMap::new();
    for seed in SEEDS {
        let train_set = generate_synthetic(&schema, 5000, &gen, 1000 + seed).unwrap();
        let train_set = enhance_symmetry(&train_set, &schema).unwrap();
        let dev = generate_synthetic(&schema, 500, &gen, 2000 + seed).unwrap();
        let test = generate_synthetic(&schema, 2000, &gen, 3000 + seed).unwrap();
        let test_inputs = prepare_inputs(&test, None).unwrap();
        for mode in modes {
            let outcome = train(&train_set, &dev, &schema, &train_config(mode, seed), None).unwrap();
            let preds = outcome.params.predict_all(&test_inputs).unwrap();
            let report = MetricsReport::build(&schema, &test, &preds, 2).unwrap();
            let n = SEEDS.len() as f64;
            let e = stats.entry(mode.as_str()).or_default();
            e.micro_f1 += report.micro_f1 / n;
            let rel = &report.per_relation[..schema.len()];
            e.well_defined_recall += rel.iter().map(|r| r.prf.recall).sum::<f64>() / rel.len() as f64 / n;
            e.vague_recall += report.per_relation[schema.len()].prf.recall / n;
            if let Some(t) = report.topk_vague.iter().find(|t| t.k == 2) {
                e.top2_hits += t.hits;
                e.top2_evaluated += t.evaluated;
            }
        }
    }
    stats
}

fn directional(stats: &BTreeMap<&str, ModeStats>) -> Outcome {
    let (m, b, n) = (stats["metre"], stats["baseline"], stats["metre_no_cs"]);
    let margin = 100.0 * (m.micro_f1 - b.micro_f1);
    let checks = [
        margin >= 2.0,
        m.micro_f1 > n.micro_f1,
        m.well_defined_recall > b.well_defined_recall,
        m.vague_recall < b.vague_recall,
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "micro-F1 metre {:.1} baseline {:.1} (margin {margin:+.1}, need >= +2.0) [{}], metre_no_cs {:.1} [{}]; \
             well-defined recall {:.1} vs {:.1} [{}]; Vague recall {:.1} vs {:.1} [{}]",
            100.0 * m.micro_f1,
            100.0 * b.micro_f1,
            ok(checks[0]),
            100.0 * n.micro_f1,
            ok(checks[1]),
            100.0 * m.well_defined_recall,
            100.0 * b.well_defined_recall,
            ok(checks[2]),
            100.0 * m.vague_recall,
            100.0 * b.vague_recall,
            ok(checks[3]),
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "not met"
    }
}

fn interpretability(stats: &BTreeMap<&str, ModeStats>) -> Outcome {
    let m = stats["metre"];
    let random = random_baseline(2, 5, 2).unwrap();
    if m.top2_evaluated == 0 {
        return outcome(false, "no correctly predicted Vague instances");
    }
    let precision = m.top2_hits as f64 / m.top2_evaluated as f64;
    outcome(
        precision >= random + 0.15,
        format!(
            "Top2 precision {:.1} vs random {:.1} over {} Vague instances",
            100.0 * precision,
            100.0 * random,
            m.top2_evaluated
        ),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_metre"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let (train_path, dev_path) = (p("train.jsonl"), p("dev.jsonl"));
    let ready = run_cli(&["generate-synthetic", "--n", "400", "--seed", "5", "--out", &train_path])
        && run_cli(&["generate-synthetic", "--n", "100", "--seed", "6", "--out", &dev_path]);
    if !ready {
        return outcome(false, "could not generate data");
    }
    for run in ["a", "b"] {
        let out = p(run);
        let args = [
            "train", "--train", &train_path, "--dev", &dev_path, "--out", &out, "--symmetry", "--epochs", "3", "--seed",
            "11", "--embed-dim", "16", "--hidden-dim", "16", "--pair-dim", "16",
        ];
        if !run_cli(&args) {
            return outcome(false, format!("train run {run} failed"));
        }
    }
    let same = |name: &str| {
        let a = std::fs::read(Path::new(&p("a")).join(name)).unwrap();
        let b = std::fs::read(Path::new(&p("b")).join(name)).unwrap();
        !a.is_empty() && a == b
    };
    let (model, log) = (same("model.json"), same("train_log.jsonl"));
    outcome(model && log, format!("model.json identical: {model}; train_log.jsonl identical: {log}"))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: usize| filter.is_empty() || filter.iter().any(|f| f == &n.to_string());
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut record = |n: usize, o: Outcome| {
        println!("criterion {n}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    let second = Duration::from_secs(1);
    if wanted(1) {
        record(1, timed(Some(second), algebra_exactness));
    }
    if wanted(2) {
        record(2, timed(Some(second), adjudication_oracle));
    }
    if wanted(3) {
        record(3, timed(None, loss_identities));
    }
    if wanted(4) {
        record(4, timed(Some(Duration::from_secs(30)), gradient_checks));
    }
    if wanted(5) {
        record(5, timed(None, random_baseline_monte_carlo));
    }
    if wanted(6) || wanted(7) {
        let start = Instant::now();
        let stats = synthetic_runs();
        let took = start.elapsed();
        if wanted(6) {
            let mut o = directional(&stats);
            o.detail = format!("{}; {:.0}s", o.detail, took.as_secs_f64());
            if took >= Duration::from_secs(300) {
                o.pass = false;
                o.detail.push_str(" (limit 300s)");
            }
            record(6, o);
        }
        if wanted(7) {
            record(7, interpretability(&stats));
        }
    }
    if wanted(8) {
        record(8, timed(None, determinism));
    }
    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
