//! Acceptance suite. Runs without the libtest harness so that every criterion
//! reports exactly one PASS / FAIL / SKIP line; the process fails if any
//! criterion fails.
//!
//! Criteria 4, 5 and 7 share one end-to-end run of the `neva` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array3;
use neva_core::attention::fixation_loss_gradient;
use neva_core::data::{load_scanpaths, make_synthetic_dataset, quadrant_of, SyntheticConfig};
use neva_core::foveation::{fixation_vjp, foveate};
use neva_core::metrics::{aggregate_mean, aggregate_spp, sbtde, sed, Aggregation, ScanpathString};
use neva_core::nn::{ConvNetConfig, Network};
use neva_core::{
    evaluate, init_state, update_state, EvaluationConfig, Fixation, FoveationConfig, GridSpec, Scanpath, Stimulus,
    Target, TaskModel,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FOVEATION_CASES: u32 = 10_000;
const FOVEATION_BUDGET: Duration = Duration::from_secs(60);
const PROBE_PAIRS: usize = 100;
const PROBE_TOL: f64 = 1e-3;
const TASK_PAIRS: usize = 20;
const TASK_TOL: f64 = 1e-2;
const METRIC_BUDGET: Duration = Duration::from_secs(120);
const SBTDE_PAIRS: usize = 200;
const TRAIN_IMAGES: usize = 2000;
const TEST_IMAGES: usize = 500;
const LOSS_RATIO_MAX: f64 = 0.5;
const QUADRANT_RATE_MIN: f64 = 0.6;
const DESK_BUDGET: Duration = Duration::from_secs(30 * 60);
const TRAIN_SEED: u64 = 1;
const TEST_SEED: u64 = 2;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: impl Into<String>) -> Self {
        Outcome {
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            detail: detail.into(),
        }
    }

    fn skip(detail: impl Into<String>) -> Self {
        Outcome {
            verdict: Verdict::Skip,
            detail: detail.into(),
        }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Outcome::check(false, format!("error: {e}"))
    }
}

type Res<T> = Result<T, Box<dyn std::error::Error>>;

fn random_stimulus(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> Stimulus {
    Stimulus::new(Array3::from_shape_fn((h, w, c), |_| rng.random::<f64>())).unwrap()
}

fn random_fixation(rng: &mut impl Rng) -> Fixation {
    Fixation {
        x: rng.random(),
        y: rng.random(),
    }
}

/// Norm-wise relative error between two 2-vectors.
fn rel_err(a: [f64; 2], b: [f64; 2]) -> f64 {
    let diff = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let scale = (a[0].hypot(a[1])).max(b[0].hypot(b[1])).max(1e-12);
    diff / scale
}

fn central_difference(f: impl Fn(Fixation) -> f64, xi: Fixation, h: f64) -> [f64; 2] {
    let dx = (f(Fixation { x: xi.x + h, ..xi }) - f(Fixation { x: xi.x - h, ..xi })) / (2.0 * h);
    let dy = (f(Fixation { y: xi.y + h, ..xi }) - f(Fixation { y: xi.y - h, ..xi })) / (2.0 * h);
    [dx, dy]
}

// ---------------------------------------------------------------- criterion 1

fn criterion_foveation() -> Outcome {
    let start = Instant::now();
    let mut runner = TestRunner::new(PropConfig {
        cases: FOVEATION_CASES,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let fixation = (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(x, y)| Fixation { x, y });
    let strategy = (
        8usize..=16,
        8usize..=16,
        prop_oneof![Just(1usize), Just(3usize)],
        any::<u64>(),
        0.02..0.5f64,
        0.01..0.2f64,
        0.0..=1.0f64,
        prop::collection::vec(fixation, 1..8),
    );
    let result = runner.run(&strategy, |(h, w, c, seed, sigma_fovea, sigma_blur, gamma, fixations)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_stimulus(&mut rng, h, w, c);
        let cfg = FoveationConfig {
            sigma_fovea,
            sigma_blur,
            gamma,
        };
        let mut state = init_state(&s, &cfg).unwrap();
        for &f in &fixations {
            state = update_state(&state, f);
            prop_assert!(state.mask().iter().all(|&m| (0.0..=1.0).contains(&m)));
        }

        let memoryless = FoveationConfig { gamma: 0.0, ..cfg };
        let mut state = init_state(&s, &memoryless).unwrap();
        for &f in &fixations {
            state = update_state(&state, f);
        }
        let last = *fixations.last().unwrap();
        let single = foveate(&s, state.coarse(), last, &memoryless).unwrap();
        prop_assert!(state.perceived().pixels() == single.pixels(), "gamma = 0 differs from one-shot foveation");
        Ok(())
    });
    let elapsed = start.elapsed();
    match result {
        Ok(()) => Outcome::check(
            elapsed < FOVEATION_BUDGET,
            format!("{FOVEATION_CASES} cases in {:.1}s (budget 60s)", elapsed.as_secs_f64()),
        ),
        Err(e) => Outcome::check(false, format!("{e}")),
    }
}

// ---------------------------------------------------------------- criterion 2

fn criterion_gradients() -> Res<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = FoveationConfig::default();

    let mut worst_probe: f64 = 0.0;
    for _ in 0..PROBE_PAIRS {
        let (h, w) = (rng.random_range(8..=24), rng.random_range(8..=24));
        let c = if rng.random_bool(0.5) { 1 } else { 3 };
        let s = random_stimulus(&mut rng, h, w, c);
        let probe = Array3::from_shape_fn((h, w, c), |_| rng.random::<f64>() * 2.0 - 1.0);
        let xi = Fixation {
            x: rng.random_range(0.05..0.95),
            y: rng.random_range(0.05..0.95),
        };
        let state = init_state(&s, &cfg)?;
        let f = |p: Fixation| (update_state(&state, p).perceived().pixels() * &probe).sum();
        let analytic = fixation_vjp(&update_state(&state, xi), xi, &probe);
        let numeric = central_difference(f, xi, 1e-6);
        worst_probe = worst_probe.max(rel_err(analytic, numeric));
    }

    // A randomly initialized classifier whose input size differs from the
    // stimulus, so the gradient also crosses the resize bridge.
    let net_cfg = ConvNetConfig {
        conv_channels: vec![4, 8],
        conv_strides: vec![1, 2],
        hidden: vec![16],
        global_pool: true,
    };
    let net = Network::new((3, 16, 16), &net_cfg.layers((3, 16, 16), 3)?, &mut rng)?;
    let task = TaskModel::new_classifier(net, 3)?;
    let mut worst_task: f64 = 0.0;
    for _ in 0..TASK_PAIRS {
        let s = random_stimulus(&mut rng, 20, 20, 3);
        let target = Target::Class(rng.random_range(0..3));
        let mut state = init_state(&s, &cfg)?;
        // Half the cases start from non-empty memory.
        if rng.random_bool(0.5) {
            state = update_state(&state, random_fixation(&mut rng));
        }
        let xi = Fixation {
            x: rng.random_range(0.1..0.9),
            y: rng.random_range(0.1..0.9),
        };
        let (_, analytic) = fixation_loss_gradient(&task, &state, xi, &target)?;
        let f = |p: Fixation| task.loss(update_state(&state, p).perceived(), &target).unwrap();
        let numeric = central_difference(f, xi, 1e-6);
        worst_task = worst_task.max(rel_err(analytic, numeric));
    }
    Ok(Outcome::check(
        worst_probe <= PROBE_TOL && worst_task <= TASK_TOL,
        format!(
            "linear probe max rel err {worst_probe:.2e} over {PROBE_PAIRS} pairs (tol 1e-3); \
             task loss max rel err {worst_task:.2e} over {TASK_PAIRS} pairs (tol 1e-2)"
        ),
    ))
}

// ---------------------------------------------------------------- criterion 3

fn brute_edit(a: &[usize], b: &[usize]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let keep = brute_edit(ra, rb) + usize::from(x != y);
            keep.min(brute_edit(ra, b) + 1).min(brute_edit(a, rb) + 1)
        }
    }
}

fn all_strings(max_len: usize, alphabet: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut layer = vec![vec![]];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s: &Vec<usize>| {
                (0..alphabet).map(move |c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Substring enumeration by explicit start positions.
fn brute_sbtde(a: &[usize], b: &[usize], max_k: usize) -> f64 {
    let mut per_k = Vec::new();
    for k in 1..=max_k {
        let mut mins = Vec::new();
        for i in 0..=a.len() - k {
            let mut best = usize::MAX;
            for j in 0..=b.len() - k {
                let mismatches = (0..k).filter(|&t| a[i + t] != b[j + t]).count();
                best = best.min(mismatches);
            }
            mins.push(best as f64 / k as f64);
        }
        per_k.push(mins.iter().sum::<f64>() / mins.len() as f64);
    }
    per_k.iter().sum::<f64>() / max_k as f64
}

fn criterion_metrics() -> Res<Outcome> {
    let start = Instant::now();
    let strings = all_strings(4, 3);
    let mut sed_mismatches = 0usize;
    for a in &strings {
        for b in &strings {
            let got = sed(&ScanpathString::from(a.clone()), &ScanpathString::from(b.clone()));
            sed_mismatches += usize::from(got != brute_edit(a, b));
        }
    }
    let letters = |s: &str| ScanpathString::from(s.bytes().map(usize::from).collect::<Vec<_>>());
    let kitten = sed(&letters("kitten"), &letters("sitting"));

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut sbtde_worst: f64 = 0.0;
    for _ in 0..SBTDE_PAIRS {
        let alphabet = rng.random_range(2..=25);
        let a: Vec<usize> = (0..10).map(|_| rng.random_range(0..alphabet)).collect();
        let b: Vec<usize> = (0..10).map(|_| rng.random_range(0..alphabet)).collect();
        let k = rng.random_range(1..=10);
        let got = sbtde(&ScanpathString::from(a.clone()), &ScanpathString::from(b.clone()), k)?;
        sbtde_worst = sbtde_worst.max((got - brute_sbtde(&a, &b, k)).abs());
    }

    let mut runner = TestRunner::new(PropConfig {
        cases: 10_000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let aggregation = runner.run(&prop::collection::vec(0.0..20.0f64, 1..30), |d| {
        prop_assert!(aggregate_spp(&d).unwrap() <= aggregate_mean(&d).unwrap());
        Ok(())
    });

    // The same invariant on full evaluation reports over random scanpaths.
    let mut report_violations = 0usize;
    let grid = GridSpec::new(4, 4)?;
    let eval_cfg = EvaluationConfig {
        grid,
        max_k: 3,
        length: 6,
        truncate_viewers: true,
    };
    for case in 0..50 {
        let sp = |rng: &mut ChaCha8Rng, id: &str| {
            let n = rng.random_range(3..=8);
            Scanpath::new(id, (0..n).map(|_| random_fixation(rng)).collect()).unwrap()
        };
        let mut methods = BTreeMap::new();
        let mut viewers = BTreeMap::new();
        for img in 0..3 {
            let id = format!("img{case}_{img}");
            let subjects = rng.random_range(2..=5);
            viewers.insert(
                id.clone(),
                (0..subjects).map(|s| (format!("s{s}"), sp(&mut rng, &id))).collect::<Vec<_>>(),
            );
            methods
                .entry("M".to_string())
                .or_insert_with(BTreeMap::new)
                .insert(id.clone(), sp(&mut rng, &id));
        }
        let report = evaluate(&methods, &viewers, &eval_cfg)?;
        let mut by_key: BTreeMap<(String, String, String), (f64, f64)> = BTreeMap::new();
        for r in &report.rows {
            let slot = by_key
                .entry((r.image_id.clone(), r.method.clone(), r.metric.to_string()))
                .or_insert((f64::NAN, f64::NAN));
            match r.aggregation {
                Aggregation::Mean => slot.0 = r.value,
                Aggregation::Spp => slot.1 = r.value,
            }
        }
        report_violations += by_key.values().filter(|(mean, spp)| !(spp <= mean)).count();
    }

    let elapsed = start.elapsed();
    let ok = sed_mismatches == 0
        && kitten == 3
        && sbtde_worst < 1e-12
        && aggregation.is_ok()
        && report_violations == 0
        && elapsed < METRIC_BUDGET;
    Ok(Outcome::check(
        ok,
        format!(
            "SED vs recursive oracle: {sed_mismatches} mismatches over {} pairs; kitten/sitting = {kitten}; \
             SBTDE max |diff| {sbtde_worst:.1e} over {SBTDE_PAIRS} pairs; SPP <= Mean: {}; {:.1}s (budget 120s)",
            strings.len() * strings.len(),
            if aggregation.is_ok() && report_violations == 0 { "holds" } else { "violated" },
            elapsed.as_secs_f64()
        ),
    ))
}

// ------------------------------------------------------ end-to-end pipeline

struct Pipeline {
    root: PathBuf,
    run: PathBuf,
    elapsed: Duration,
}

fn neva(args: &[&str]) -> Res<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_neva"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()?;
    if !out.status.success() {
        return Err(format!(
            "neva {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        )
        .into());
    }
    Ok(())
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("temp paths are UTF-8")
}

const METHODS: [(&str, &str); 3] = [("random", "Random"), ("center", "Center"), ("wta", "WTA")];

/// Builds both synthetic splits, trains the task and attention models and
/// generates scanpaths for NeVA and every baseline, all through the binary.
fn run_pipeline(root: &Path) -> Res<Pipeline> {
    let config = root.join("experiment.toml");
    std::fs::write(
        &config,
        "seed = 11\nscanpath_length = 10\n\n[data]\ntrain_manifest = \"data/train/manifest.toml\"\n\
         eval_manifest = \"data/test/manifest.toml\"\n\n[attention]\nhorizon = 5\n",
    )?;
    let c = path_str(&config);
    let run = root.join("run");
    let r = path_str(&run);
    let start = Instant::now();
    let (train, test) = (root.join("data/train"), root.join("data/test"));
    neva(&[
        "make-dataset", "-c", c, "--seed", &TRAIN_SEED.to_string(), "--out-dir", path_str(&train),
        "--n", &TRAIN_IMAGES.to_string(), "--subjects", "0",
    ])?;
    neva(&[
        "make-dataset", "-c", c, "--seed", &TEST_SEED.to_string(), "--out-dir", path_str(&test),
        "--n", &TEST_IMAGES.to_string(), "--subjects", "5",
    ])?;
    neva(&["train-task", "-c", c, "--out-dir", r])?;
    let task = run.join("task.json");
    neva(&["train-attention", "-c", c, "--out-dir", r, "--task-checkpoint", path_str(&task)])?;
    let attn = run.join("attention.json");
    neva(&["generate", "-c", c, "--out-dir", r, "--attention", path_str(&attn)])?;
    let elapsed = start.elapsed();
    for (baseline, _) in METHODS {
        neva(&["generate", "-c", c, "--out-dir", r, "--baseline", baseline])?;
    }
    Ok(Pipeline {
        root: root.to_path_buf(),
        run,
        elapsed,
    })
}

fn criterion_desk_scale(p: &Pipeline) -> Res<Outcome> {
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.run.join("attention_summary.json"))?)?;
    let horizon = summary["horizon"].as_u64().ok_or("summary lacks horizon")?;
    let attention = summary["heldout_loss_attention"].as_f64().ok_or("summary lacks attention loss")?;
    let random = summary["heldout_loss_random"].as_f64().ok_or("summary lacks random loss")?;
    let ratio = attention / random;

    // Ground-truth quadrants come from regenerating the held-out split.
    let samples = make_synthetic_dataset(TEST_IMAGES, &SyntheticConfig::default(), TEST_SEED)?;
    let scanpaths = load_scanpaths(&p.run.join("scanpaths_NeVA_C.csv"))?;
    let neva = scanpaths.get("NeVA_C").ok_or("no NeVA_C scanpaths")?;
    let hits = samples
        .iter()
        .filter(|s| neva.get(&s.id).is_some_and(|sp| quadrant_of(sp.fixations[0]) == s.quadrant))
        .count();
    let rate = hits as f64 / samples.len() as f64;
    Ok(Outcome::check(
        horizon == 5 && ratio <= LOSS_RATIO_MAX && rate >= QUADRANT_RATE_MIN && p.elapsed <= DESK_BUDGET,
        format!(
            "loss after 5 fixations {attention:.4} vs random {random:.4} (ratio {ratio:.3}, max 0.5); \
             first fixation in object quadrant {rate:.3} (min 0.6); {:.0}s (budget 1800s)",
            p.elapsed.as_secs_f64()
        ),
    ))
}

/// `results_summary.csv` as `row label -> method -> value`.
fn read_summary(path: &Path) -> Res<BTreeMap<String, BTreeMap<String, f64>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let mut out = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let mut row = BTreeMap::new();
        for (name, value) in header.iter().zip(rec.iter()).skip(1) {
            if !value.is_empty() {
                row.insert(name.to_string(), value.parse::<f64>()?);
            }
        }
        out.insert(rec[0].to_string(), row);
    }
    Ok(out)
}

fn ordering_detail(summary: &BTreeMap<String, BTreeMap<String, f64>>, rows: &[&str], order: &[&str]) -> Res<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for row in rows {
        let values = summary.get(*row).ok_or_else(|| format!("summary lacks {row}"))?;
        let get = |m: &str| values.get(m).copied().ok_or_else(|| format!("{row} lacks {m}"));
        let (human, neva, random, center) = (get(order[0])?, get(order[1])?, get(order[2])?, get(order[3])?);
        ok &= human < neva && neva < random && neva < center;
        parts.push(format!(
            "{row}: Human {human:.3} < NeVA_C {neva:.3} < Random {random:.3}, Center {center:.3}"
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn criterion_ordering(p: &Pipeline) -> Res<Outcome> {
    let files = ["NeVA_C", "Random", "Center", "WTA"].map(|m| p.run.join(format!("scanpaths_{m}.csv")));
    let mut args = vec!["evaluate", "-c"];
    let config = p.root.join("experiment.toml");
    args.push(path_str(&config));
    args.extend(["--out-dir", path_str(&p.run), "--scanpaths"]);
    args.extend(files.iter().map(|f| path_str(f)));
    neva(&args)?;
    let summary = read_summary(&p.run.join("results_summary.csv"))?;
    let (ok, detail) = ordering_detail(&summary, &["Mean SED", "Mean SBTDE"], &["Human", "NeVA_C", "Random", "Center"])?;
    Ok(Outcome::check(ok, detail))
}

fn criterion_full_data() -> Res<Outcome> {
    let (Ok(config), Ok(checkpoint)) = (std::env::var("NEVA_FULLDATA_CONFIG"), std::env::var("NEVA_FULLDATA_ATTENTION"))
    else {
        return Ok(Outcome::skip(
            "set NEVA_FULLDATA_CONFIG (experiment config with data.eval_manifest) and \
             NEVA_FULLDATA_ATTENTION (classification attention checkpoint) to run",
        ));
    };
    let dir = tempfile::tempdir()?;
    let out = path_str(dir.path());
    neva(&["generate", "-c", &config, "--out-dir", out, "--attention", &checkpoint])?;
    for (baseline, _) in &METHODS[..2] {
        neva(&["generate", "-c", &config, "--out-dir", out, "--baseline", baseline])?;
    }
    let files = ["NeVA_C", "Random", "Center"].map(|m| dir.path().join(format!("scanpaths_{m}.csv")));
    let mut args = vec!["evaluate", "-c", &config, "--out-dir", out, "--scanpaths"];
    args.extend(files.iter().map(|f| path_str(f)));
    neva(&args)?;
    let summary = read_summary(&dir.path().join("results_summary.csv"))?;
    let row = summary.get("Mean SED").ok_or("summary lacks Mean SED")?;
    let (neva_sed, random, center) = (row["NeVA_C"], row["Random"], row["Center"]);
    Ok(Outcome::check(
        neva_sed < random && neva_sed < center,
        format!("Mean SED: NeVA_C {neva_sed:.3}, Random {random:.3}, Center {center:.3}"),
    ))
}

fn same_bytes(a: &Path, b: &Path) -> Res<bool> {
    Ok(std::fs::read(a)? == std::fs::read(b)?)
}

fn criterion_reproducibility(p: &Pipeline) -> Res<Outcome> {
    let replay = p.root.join("replay");
    let mut checked = Vec::new();
    let mut mismatched = Vec::new();
    let mut compare = |a: PathBuf, b: PathBuf| -> Res<()> {
        let name = b.strip_prefix(&replay).unwrap_or(&b).display().to_string();
        if !same_bytes(&a, &b)? {
            mismatched.push(name.clone());
        }
        checked.push(name);
        Ok(())
    };

    let test = p.root.join("data/test");
    let replay_test = replay.join("data");
    neva(&["rerun", path_str(&test.join("make-dataset.manifest.toml")), "--out-dir", path_str(&replay_test)])?;
    compare(test.join("fixations.csv"), replay_test.join("fixations.csv"))?;
    compare(test.join("labels.csv"), replay_test.join("labels.csv"))?;

    let replay_run = replay.join("run");
    for manifest in ["train-task", "train-attention"] {
        let m = p.run.join(format!("{manifest}.manifest.toml"));
        neva(&["rerun", path_str(&m), "--out-dir", path_str(&replay_run)])?;
    }
    compare(p.run.join("task.json"), replay_run.join("task.json"))?;
    compare(p.run.join("attention.json"), replay_run.join("attention.json"))?;

    for (_, name) in METHODS.iter().chain(&[("", "NeVA_C")]) {
        let m = p.run.join(format!("generate-{name}.manifest.toml"));
        neva(&["rerun", path_str(&m), "--out-dir", path_str(&replay_run)])?;
        let file = format!("scanpaths_{name}.csv");
        compare(p.run.join(&file), replay_run.join(&file))?;
    }
    Ok(Outcome::check(
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!("{} replayed outputs byte-identical ({})", checked.len(), checked.join(", "))
        } else {
            format!("differs after rerun: {}", mismatched.join(", "))
        },
    ))
}

fn main() {
    let mut outcomes: Vec<(u8, &str, Outcome)> = Vec::new();
    outcomes.push((1, "foveation correctness", criterion_foveation()));
    outcomes.push((2, "differentiability", criterion_gradients().unwrap_or_else(Outcome::error)));
    outcomes.push((3, "metric oracles", criterion_metrics().unwrap_or_else(Outcome::error)));

    let dir = tempfile::tempdir().expect("temp dir");
    match run_pipeline(dir.path()) {
        Ok(p) => {
            outcomes.push((4, "desk-scale task-driven attention", criterion_desk_scale(&p).unwrap_or_else(Outcome::error)));
            outcomes.push((5, "method ordering", criterion_ordering(&p).unwrap_or_else(Outcome::error)));
            outcomes.push((6, "full-data check", criterion_full_data().unwrap_or_else(Outcome::error)));
            outcomes.push((7, "reproducibility", criterion_reproducibility(&p).unwrap_or_else(Outcome::error)));
        }
        Err(e) => {
            for (id, name) in [(4, "desk-scale task-driven attention"), (5, "method ordering"), (7, "reproducibility")] {
                outcomes.push((id, name, Outcome::error(format!("pipeline failed: {e}"))));
            }
            outcomes.push((6, "full-data check", criterion_full_data().unwrap_or_else(Outcome::error)));
            outcomes.sort_by_key(|o| o.0);
        }
    }

    let mut failed = 0;
    for (id, name, o) in &outcomes {
        let tag = match o.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        println!("{tag} criterion {id} ({name}): {}", o.detail);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
