//! Batch experiment commands. Each command returns the text it prints on
//! stdout; progress and warnings go to stderr.

pub mod gradcheck;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dsunet::data::{gen_synthetic, load_dataset, split_dataset, write_dataset, DatasetSplit, SamplePair, ShapeKind};
use dsunet::manifest::Manifest;
use dsunet::metrics::Aggregate;
use dsunet::model::{HybridUNet, Variant};
use dsunet::train::{self, evaluate, history_csv, load_checkpoint, save_checkpoint, EpochStats};

#[derive(Debug, Parser)]
#[command(name = "dsunet", version, about = "Hybrid U-Net segmentation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Per-layer parameter counts.
    Params(ParamsArgs),
    /// Finite-difference gradient checks in f64.
    Gradcheck(GradcheckArgs),
    /// Train and score the three component variants.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.03)]
    pub noise: f64,
    /// Hair-like strokes and a background intensity gradient.
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub distractors: Toggle,
    #[arg(long, default_value = "mixed")]
    pub shapes: String,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults apply to every key the manifest leaves out.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// dc | dc-rc | dc-rc-ap; overrides the manifest's residual and pooling.
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Adds a deliberately wrong backward pass to prove failures are caught.
    #[arg(long, hide = true)]
    pub include_broken: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<String> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a).map(|s| s.stdout),
        Command::Eval(a) => cmd_eval(&a),
        Command::Params(a) => cmd_params(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Ablate(a) => cmd_ablate(&a).map(|s| s.stdout),
    }
}

pub fn read_manifest(path: Option<&Path>) -> anyhow::Result<Manifest> {
    let Some(path) = path else {
        return Ok(Manifest::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    Manifest::parse(&text).with_context(|| format!("in manifest {}", path.display()))
}

pub fn cmd_gen_data(a: &GenDataArgs) -> anyhow::Result<String> {
    let on = a.distractors == Toggle::On;
    let spec = dsunet::data::SyntheticSpec {
        count: a.count,
        size: a.size,
        shapes: a.shapes.parse::<ShapeKind>()?,
        noise: a.noise,
        hair: on,
        gradient: on,
        channels: a.channels,
        seed: a.seed,
    };
    let samples = gen_synthetic(&spec)?;
    write_dataset(&a.out, &samples).with_context(|| format!("writing dataset to {}", a.out.display()))?;
    std::fs::write(a.out.join("spec.txt"), spec.to_text())?;
    Ok(format!("wrote {} samples to {}\n", samples.len(), a.out.display()))
}

/// Splits 80/10/10 when there are at least 10 samples; smaller sets train on
/// everything and have empty validation and test splits.
pub fn resolve_split(samples: &[SamplePair], seed: u64) -> anyhow::Result<DatasetSplit> {
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    if ids.len() < 10 {
        eprintln!("warning: {} samples is too few to split; training on all, no validation or test", ids.len());
        return Ok(DatasetSplit { train: ids, val: vec![], test: vec![], seed });
    }
    Ok(split_dataset(&ids, seed)?)
}

fn select(samples: &[SamplePair], ids: &[String]) -> Vec<SamplePair> {
    ids.iter()
        .map(|id| samples.iter().find(|s| &s.id == id).expect("split ids come from the samples").clone())
        .collect()
}

fn apply_variant(manifest: &mut Manifest, variant: Option<&str>) -> anyhow::Result<()> {
    if let Some(v) = variant {
        let v: Variant = v.parse()?;
        manifest.model = manifest.model.clone().with_variant(v);
    }
    Ok(())
}

fn metrics_line(label: &str, a: &Aggregate) -> String {
    let assd = a.assd.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
    format!(
        "{label}: dice={:.4} iou={:.4} assd={assd} accuracy={:.4} samples={}\n",
        a.dice, a.iou, a.accuracy, a.samples
    )
}

fn load_samples(data: &Path, manifest: &Manifest) -> anyhow::Result<Vec<SamplePair>> {
    let samples = load_dataset(data, manifest.data.resize_target())
        .with_context(|| format!("loading dataset {}", data.display()))?;
    if samples.is_empty() {
        bail!("dataset {} has no images", data.display());
    }
    Ok(samples)
}

fn print_progress(e: &EpochStats) {
    match &e.val {
        Some(v) => eprintln!("epoch {:>4}  loss {:.5}  val dice {:.4}", e.epoch, e.loss, v.dice),
        None => eprintln!("epoch {:>4}  loss {:.5}", e.epoch, e.loss),
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub stdout: String,
    pub params: usize,
    pub history: Vec<EpochStats>,
    pub train_metrics: Aggregate,
    pub val_metrics: Option<Aggregate>,
}

/// Trains per the manifest and writes the checkpoint, plus `history.csv`,
/// `manifest.txt` and `split.txt` in the checkpoint's directory.
pub fn cmd_train(a: &TrainArgs) -> anyhow::Result<TrainSummary> {
    let mut manifest = read_manifest(a.manifest.as_deref())?;
    apply_variant(&mut manifest, a.variant.as_deref())?;
    let samples = load_samples(&a.data, &manifest)?;
    let split = resolve_split(&samples, manifest.data.split_seed)?;
    let (train_set, val_set) = (select(&samples, &split.train), select(&samples, &split.val));

    let mut model = HybridUNet::<f32>::build(&manifest.model, manifest.train.seed)?;
    let params = model.param_count();
    let mut stdout = format!("params: {params}\n");
    let outcome = train::train(&mut model, &train_set, &val_set, &manifest.train, print_progress)?;

    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    save_checkpoint(&a.out, &manifest, &model, Some(&outcome.adam))
        .with_context(|| format!("writing checkpoint {}", a.out.display()))?;
    std::fs::write(dir.join("history.csv"), history_csv(&outcome.history))?;
    std::fs::write(dir.join("manifest.txt"), manifest.to_string())?;
    std::fs::write(dir.join("split.txt"), split.to_text())?;

    let train_metrics = evaluate(&model, &train_set)?.aggregate;
    let val_metrics = if val_set.is_empty() { None } else { Some(evaluate(&model, &val_set)?.aggregate) };
    let last = outcome.history.last().map_or(f64::NAN, |h| h.loss);
    let _ = writeln!(stdout, "final loss: {last:.6}");
    stdout.push_str(&metrics_line("train", &train_metrics));
    if let Some(v) = &val_metrics {
        stdout.push_str(&metrics_line("val", v));
    }
    Ok(TrainSummary { stdout, params, history: outcome.history, train_metrics, val_metrics })
}

pub fn cmd_eval(a: &EvalArgs) -> anyhow::Result<String> {
    let loaded = load_checkpoint(&a.ckpt).with_context(|| format!("loading checkpoint {}", a.ckpt.display()))?;
    let samples = load_samples(&a.data, &loaded.manifest)?;
    let split = resolve_split(&samples, loaded.manifest.data.split_seed)?;
    let ids = split.get(&a.split)?;
    if ids.is_empty() {
        bail!("split `{}` is empty for this dataset", a.split);
    }
    let evaluation = evaluate(&loaded.model, &select(&samples, ids))?;
    Ok(evaluation.to_csv())
}

pub fn cmd_params(a: &ParamsArgs) -> anyhow::Result<String> {
    let manifest = read_manifest(a.manifest.as_deref())?;
    let model = HybridUNet::<f32>::build(&manifest.model, 0)?;
    let mut out = String::from("layer,params,standard_conv_params\n");
    for c in model.layer_counts() {
        let _ = writeln!(out, "{},{},{}", c.name, c.params, c.standard_params);
    }
    let (total, standard) = (model.param_count(), model.standard_equivalent_count());
    let _ = writeln!(out, "total,{total},{standard}");
    let reduction = 100.0 * (1.0 - total as f64 / standard as f64);
    let _ = writeln!(out, "reduction_percent,{reduction:.2},");
    Ok(out)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> anyhow::Result<String> {
    let checks = gradcheck::run_suite(a.size, a.levels, a.seed, a.include_broken)?;
    let report = gradcheck::report_csv(&checks);
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed()).collect();
    if !failed.is_empty() {
        print!("{report}");
        for c in &failed {
            eprintln!(
                "FAIL {}: relative error {:.3e} at {} element {} (analytic {:.6e}, numeric {:.6e})",
                c.op, c.report.max_rel_error, c.input, c.report.worst_index, c.report.analytic, c.report.numeric
            );
        }
        bail!("{} of {} gradient checks exceed {:e}", failed.len(), checks.len(), gradcheck::TOLERANCE);
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub metrics: Aggregate,
}

#[derive(Debug, Clone)]
pub struct AblationSummary {
    pub stdout: String,
    pub rows: Vec<AblationRow>,
}

pub const ABLATION_HEADER: &str = "components,iou,dice,assd";

/// Trains each variant from the same seed and budget, scoring on the test
/// split (or the training set when the data is too small to split).
pub fn cmd_ablate(a: &AblateArgs) -> anyhow::Result<AblationSummary> {
    let manifest = read_manifest(a.manifest.as_deref())?;
    let samples = load_samples(&a.data, &manifest)?;
    let split = resolve_split(&samples, manifest.data.split_seed)?;
    let train_set = select(&samples, &split.train);
    let score_set = if split.test.is_empty() {
        eprintln!("warning: no test split; scoring on the training set");
        train_set.clone()
    } else {
        select(&samples, &split.test)
    };
    let mut rows = Vec::new();
    let mut stdout = format!("{ABLATION_HEADER}\n");
    for variant in Variant::ALL {
        eprintln!("training {}", variant.label());
        let cfg = manifest.model.clone().with_variant(variant);
        let mut model = HybridUNet::<f32>::build(&cfg, manifest.train.seed)?;
        train::train(&mut model, &train_set, &[], &manifest.train, print_progress)?;
        let metrics = evaluate(&model, &score_set)?.aggregate;
        let assd = metrics.assd.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(stdout, "{},{:.4},{:.4},{assd}", variant.label(), metrics.iou, metrics.dice);
        rows.push(AblationRow { variant, params: model.param_count(), metrics });
    }
    Ok(AblationSummary { stdout, rows })
}
