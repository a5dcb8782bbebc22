//! Acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion that all of them passed. Run with `--nocapture` to see the lines.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::Path;
use std::time::{Duration, Instant};

use dsunet::metrics::{assd, confusion, MetricsReport};
use dsunet::model::{HybridUNet, ModelConfig, Variant};
use dsunet::rng::SplitMix64;
use dsunet::train::{load_checkpoint, save_checkpoint, Checkpoint};
use dsunet::Error;
use dsunet_cli::{
    cmd_ablate, cmd_gen_data, cmd_params, cmd_train, gradcheck, AblateArgs, GenDataArgs, ParamsArgs, Toggle, TrainArgs,
};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, budget: Duration) -> Result<(), String> {
    let took = started.elapsed();
    check(took < budget, || format!("took {took:.1?}, budget {budget:?}"))
}

fn gen_data(out: &Path, count: usize, size: usize, seed: u64) -> Result<(), String> {
    let args = GenDataArgs {
        out: out.to_path_buf(),
        count,
        size,
        seed,
        noise: 0.03,
        distractors: Toggle::On,
        shapes: "mixed".into(),
        channels: 1,
    };
    cmd_gen_data(&args).map(|_| ()).map_err(|e| e.to_string())
}

const SMALL_MODEL: &str = "[model]\nlevels = 2\nchannels = 4, 8\nbottleneck = 16\ngn_groups = 2\n";

fn gradient_fidelity() -> Outcome {
    let t = Instant::now();
    let checks = gradcheck::run_suite(16, 2, 0, false).map_err(|e| e.to_string())?;
    let worst = checks
        .iter()
        .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
        .ok_or("no checks ran")?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.op.as_str()).collect();
    check(failed.is_empty(), || format!("failing ops: {}", failed.join(", ")))?;
    check(checks.iter().any(|c| c.op == "model_end_to_end"), || "no end-to-end check".into())?;
    within(t, Duration::from_secs(120))?;
    Ok(format!(
        "{} checks at step {:e}, worst {:.2e} in {} (< {:e}), {:.1?}",
        checks.len(),
        gradcheck::STEP,
        worst.report.max_rel_error,
        worst.op,
        gradcheck::TOLERANCE,
        t.elapsed()
    ))
}

fn convolution_oracles() -> Outcome {
    let t = Instant::now();
    let gaps = support::conv_oracle_gaps(2024, 6);
    for (op, gap, cases) in &gaps {
        check(*cases >= 5, || format!("{op}: only {cases} shapes"))?;
        check(*gap < 1e-5, || format!("{op}: gap {gap:e}"))?;
    }
    within(t, Duration::from_secs(30))?;
    let worst = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
    Ok(format!("5 ops x 6 shapes in f32 and f64, worst gap {worst:.1e} (< 1e-5)"))
}

fn metric_oracles() -> Outcome {
    let t = Instant::now();
    let mut rng = SplitMix64::new(77);
    for i in 0..200 {
        let pred = support::random_mask(16, 16, &mut rng);
        let gt = support::random_mask(16, 16, &mut rng);
        let (tp, fp, fn_, tn) = support::loop_counts(&pred, &gt);
        let r = MetricsReport::compute(&pred, &gt).map_err(|e| e.to_string())?;
        let union = tp + fp + fn_;
        let (dice, iou) = if union == 0 {
            (1.0, 1.0)
        } else {
            ((2 * tp) as f64 / (2 * tp + fp + fn_) as f64, tp as f64 / union as f64)
        };
        check(r.dice == dice && r.iou == iou, || format!("pair {i}: overlap scores differ"))?;
        check(r.accuracy == (tp + tn) as f64 / 256.0, || format!("pair {i}: accuracy differs"))?;
        let c = confusion(&pred, &gt).map_err(|e| e.to_string())?;
        let ((dn, dd), (i_n, i_d)) = (c.dice_ratio(), c.iou_ratio());
        check(dn * (i_d + i_n) == dd * 2 * i_n, || format!("pair {i}: dice != 2 iou / (1 + iou)"))?;
    }
    for i in 0..50 {
        let a = support::random_blob(16, 16, &mut rng);
        let b =
            if i % 2 == 0 { support::random_blob(16, 16, &mut rng) } else { support::random_mask(16, 16, &mut rng) };
        let got = assd(&a, &b).map_err(|e| e.to_string())?;
        check(got == support::brute_assd(&a, &b), || format!("pair {i}: assd {got:?} vs brute force"))?;
        if !a.is_empty() {
            check(assd(&a, &a).map_err(|e| e.to_string())? == Some(0.0), || format!("pair {i}: assd(a, a) != 0"))?;
        }
    }
    within(t, Duration::from_secs(30))?;
    Ok("200 overlap pairs and 50 ASSD pairs match exactly, dice/iou identity exact".into())
}

fn parameter_accounting() -> Outcome {
    let ((sep, sep_enum), (std, std_enum)) = support::layer_pair_counts(3, 64, 128);
    check(sep == sep_enum && std == std_enum, || "closed form disagrees with enumeration".into())?;
    check((sep, std) == (8_896, 73_856), || format!("layer counts {sep} vs {std}"))?;
    let ratio = sep as f64 / std as f64;
    check(ratio < 0.13, || format!("ratio {ratio}"))?;

    let csv = cmd_params(&ParamsArgs { manifest: None }).map_err(|e| e.to_string())?;
    let field = |prefix: &str| -> Result<String, String> {
        let line = csv.lines().find(|l| l.starts_with(prefix)).ok_or(format!("no {prefix} row"))?;
        Ok(line.split(',').nth(1).unwrap_or_default().to_string())
    };
    let total: usize = field("total,")?.parse().map_err(|_| "bad total")?;
    let reduction: f64 = field("reduction_percent,")?.parse().map_err(|_| "bad reduction")?;
    check(total < 3_000_000, || format!("default total {total}"))?;
    check(reduction >= 60.0, || format!("reduction {reduction}%"))?;

    let count = |v| HybridUNet::<f32>::build(&ModelConfig::variant(v), 0).map(|m| m.param_count());
    let (dc, rc) = (count(Variant::Dc).map_err(|e| e.to_string())?, count(Variant::DcRc).map_err(|e| e.to_string())?);
    check(dc == rc, || format!("DC {dc} vs DC+RC {rc}"))?;
    Ok(format!(
        "separable {sep} vs standard {std} (ratio {ratio:.3}); default total {total}, {reduction:.1}% reduction; DC = DC+RC = {dc}"
    ))
}

fn overfit_smoke(dir: &Path) -> Outcome {
    let t = Instant::now();
    let data = dir.join("overfit");
    gen_data(&data, 8, 64, 3)?;
    let manifest = dir.join("overfit.toml");
    std::fs::write(&manifest, "[train]\nepochs = 200\n").map_err(|e| e.to_string())?;
    let args = TrainArgs { data, manifest: Some(manifest), out: dir.join("overfit/model.ckpt"), variant: None };
    let summary = cmd_train(&args).map_err(|e| e.to_string())?;
    let first = summary.history.first().ok_or("empty history")?.loss;
    let last = summary.history.last().ok_or("empty history")?.loss;
    let dice = summary.train_metrics.dice;
    check(summary.history.len() <= 200, || "more than 200 epochs".into())?;
    check(dice >= 0.95, || format!("train dice {dice:.4}"))?;
    check(last < 0.2 * first, || format!("loss {first:.4} -> {last:.4}"))?;
    within(t, Duration::from_secs(600))?;
    Ok(format!(
        "{} params, 8 samples, {} epochs: loss {first:.4} -> {last:.4}, train dice {dice:.4}, {:.1?}",
        summary.params,
        summary.history.len(),
        t.elapsed()
    ))
}

fn determinism(dir: &Path) -> Outcome {
    let data = dir.join("determinism");
    gen_data(&data, 12, 16, 5)?;
    let manifest = dir.join("det.toml");
    std::fs::write(&manifest, format!("{SMALL_MODEL}[train]\nepochs = 3\nseed = 9\neval_every = 1\n"))
        .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.join(format!("det_{run}/model.ckpt"));
        let args = TrainArgs { data: data.clone(), manifest: Some(manifest.clone()), out: out.clone(), variant: None };
        cmd_train(&args).map_err(|e| e.to_string())?;
        let ckpt = std::fs::read(&out).map_err(|e| e.to_string())?;
        let history = std::fs::read(out.with_file_name("history.csv")).map_err(|e| e.to_string())?;
        outputs.push((ckpt, history));
    }
    check(outputs[0].0 == outputs[1].0, || "checkpoints differ".into())?;
    check(outputs[0].1 == outputs[1].1, || "history CSVs differ".into())?;
    Ok(format!("two runs: {}-byte checkpoints and history CSVs byte-identical", outputs[0].0.len()))
}

fn checkpoint_round_trip(dir: &Path) -> Outcome {
    let first = dir.join("det_a/model.ckpt");
    let loaded = load_checkpoint(&first).map_err(|e| e.to_string())?;
    let second = dir.join("resaved.ckpt");
    save_checkpoint(&second, &loaded.manifest, &loaded.model, loaded.adam.as_ref()).map_err(|e| e.to_string())?;
    let (a, b) =
        (std::fs::read(&first).map_err(|e| e.to_string())?, std::fs::read(&second).map_err(|e| e.to_string())?);
    check(a == b, || "save -> load -> save changed the bytes".into())?;
    let mut bad = a.clone();
    // last tensor's payload, just before the checksum
    let at = bad.len() - 6;
    bad[at] ^= 0x20;
    match Checkpoint::from_bytes(&bad) {
        Err(Error::Checksum { .. }) => {}
        other => return Err(format!("corrupted load gave {:?}", other.map(|_| ()))),
    }
    Ok(format!("{}-byte checkpoint re-saved identically; flipped payload byte rejected by checksum", a.len()))
}

fn ablation_harness(dir: &Path) -> Outcome {
    let data = dir.join("ablation");
    gen_data(&data, 10, 16, 8)?;
    let manifest = dir.join("ablate.toml");
    std::fs::write(&manifest, format!("{SMALL_MODEL}[train]\nepochs = 2\n")).map_err(|e| e.to_string())?;
    let summary = cmd_ablate(&AblateArgs { data, manifest: Some(manifest) }).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = summary.stdout.lines().collect();
    check(lines.first() == Some(&"components,iou,dice,assd"), || format!("header {:?}", lines.first()))?;
    let labels: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap_or_default()).collect();
    let expected: Vec<&str> = Variant::ALL.iter().map(|v| v.label()).collect();
    check(labels == expected, || format!("rows {labels:?}"))?;
    check(lines[1..].iter().all(|l| l.split(',').count() == 4), || "rows need 4 columns".into())?;
    Ok(format!("rows: {}", labels.join(" | ")))
}

fn gate_behaviour() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..5 {
        let (open, closed) = support::gate_saturation_gaps(seed);
        worst = (worst.0.max(open), worst.1.max(closed));
        check(open < 1e-6, || format!("seed {seed}: open gate off by {open:e}"))?;
        check(closed < 1e-6, || format!("seed {seed}: closed gate leaks {closed:e}"))?;
        let pool = support::zero_score_pool_gap(seed);
        check(pool == 0.0, || format!("seed {seed}: zero-score pool differs from average by {pool:e}"))?;
    }
    Ok(format!("psi bias +30 gap {:.1e}, -30 gap {:.1e}; zero-score pool equals average exactly", worst.0, worst.1))
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let criteria: Vec<Criterion> = vec![
        ("gradient fidelity", Box::new(gradient_fidelity)),
        ("convolution oracles", Box::new(convolution_oracles)),
        ("metric oracles", Box::new(metric_oracles)),
        ("parameter accounting", Box::new(parameter_accounting)),
        ("overfit smoke", Box::new(|| overfit_smoke(d))),
        ("determinism", Box::new(|| determinism(d))),
        ("checkpoint round-trip", Box::new(|| checkpoint_round_trip(d))),
        ("ablation harness", Box::new(|| ablation_harness(d))),
        ("attention gate behaviour", Box::new(gate_behaviour)),
    ];
    let mut failures = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                println!("FAIL {} {name}: {why}", i + 1);
                failures.push(*name);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
