//! `hotspot`: generate synthetic data, train, run inference, evaluate, sweep
//! photometric robustness, and report dataset statistics and model cost.

mod annotate;
mod config;

use std::ffi::OsStr;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use hotspot_core::checkpoint::load_checkpoint;
use hotspot_core::data::{self, DatasetSplit};
use hotspot_core::robust;
use hotspot_core::summary;
use hotspot_core::synth::{self, SceneSpec};
use hotspot_core::train::{self, TrainConfig};
use hotspot_core::{eval, Detector, ModelConfig, NmsConfig};

#[derive(Parser, Debug)]
#[command(name = "hotspot", version, about = "Thermal hotspot detector", args_override_self = true)]
struct Cli {
    /// key=value file supplying flag values; explicit flags still win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset (images, labels, manifest)
    Gen(GenArgs),
    /// Train a detector and write checkpoints plus the epoch curve
    Train(TrainArgs),
    /// Print detections for image files, optionally writing annotated copies
    Infer(InferArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Rerun detection under photometric transforms
    Robust(RobustArgs),
    /// Box position and size statistics for a split
    Stats(StatsArgs),
    /// Per-layer parameter and FLOP report
    Summary(SummaryArgs),
    /// Time single-image inference
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Scenes in the train split
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    val_count: usize,
    #[arg(long, default_value_t = 0)]
    test_count: usize,
    /// Train uses this seed, val seed + 1, test seed + 2
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// default or high-irradiance
    #[arg(long, default_value = "default")]
    preset: String,
    #[arg(long, default_value_t = 96)]
    width: usize,
    #[arg(long, default_value_t = 96)]
    height: usize,
    /// Replace the manifest, images/ and labels/ of a non-empty output directory
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct DetectArgs {
    /// Minimum confidence kept after decoding
    #[arg(long, default_value_t = train::DEFAULT_CONF_THRESHOLD)]
    conf: f32,
    /// IoU above which NMS suppresses a lower-confidence box
    #[arg(long, default_value_t = 0.5)]
    nms_iou: f64,
}

impl DetectArgs {
    fn nms(&self) -> Result<NmsConfig> {
        Ok(NmsConfig::new(self.nms_iou)?)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    /// Evaluation split; the training split is used when the manifest lacks it
    #[arg(long, default_value = "val")]
    val_split: String,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    lr_min: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0005)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    /// Shuffle and augmentation seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight initialization seed
    #[arg(long, default_value_t = 0)]
    model_seed: u64,
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    augment_flip: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    augment_crop: bool,
    /// Network input side; images are resized to it
    #[arg(long, default_value_t = 224)]
    resolution: usize,
    #[arg(long, default_value_t = 1)]
    num_classes: usize,
    #[arg(long, default_value_t = 1.0)]
    box_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    class_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    conf_weight: f64,
    /// Weight on confidence terms of cells without an object
    #[arg(long, default_value_t = 0.1)]
    neg_weight: f64,
    #[arg(long, default_value_t = eval::DEFAULT_EVAL_IOU)]
    eval_iou: f64,
    #[command(flatten)]
    detect: DetectArgs,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long, value_name = "CKPT")]
    model: PathBuf,
    /// Image files or directories of .ppm/.pgm files
    #[arg(long, value_name = "PATH", num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    /// Directory for outlined PPM copies
    #[arg(long, value_name = "DIR")]
    annotate_out: Option<PathBuf>,
    #[command(flatten)]
    detect: DetectArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_name = "CKPT")]
    model: PathBuf,
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, default_value = "val")]
    split: String,
    /// Matching IoU for a true positive
    #[arg(long, default_value_t = eval::DEFAULT_EVAL_IOU)]
    iou: f64,
    #[command(flatten)]
    detect: DetectArgs,
}

#[derive(Args, Debug)]
struct RobustArgs {
    #[arg(long, value_name = "CKPT")]
    model: PathBuf,
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, default_value = "val")]
    split: String,
    /// brightness-contrast, grayscale, blur or all
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = eval::DEFAULT_EVAL_IOU)]
    iou: f64,
    /// Directory for summary.csv and deltas.csv
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(flatten)]
    detect: DetectArgs,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    /// Directory for summary.csv and histograms.csv
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SummaryArgs {
    /// Checkpoint to describe; the default 224x224 architecture otherwise
    #[arg(long, value_name = "CKPT")]
    model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Checkpoint to time; a seeded default-architecture model otherwise
    #[arg(long, value_name = "CKPT")]
    model: Option<PathBuf>,
    /// Timed runs after 2 warmup runs
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Image to run on; a mid-gray frame at the model resolution otherwise
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    #[command(flatten)]
    detect: DetectArgs,
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Gen(_) => "gen",
        Command::Train(_) => "train",
        Command::Infer(_) => "infer",
        Command::Eval(_) => "eval",
        Command::Robust(_) => "robust",
        Command::Stats(_) => "stats",
        Command::Summary(_) => "summary",
        Command::Bench(_) => "bench",
    }
}

fn parse(args: &[String]) -> std::result::Result<Cli, clap::Error> {
    let matches = Cli::command().try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

/// Parse the command line, then re-parse with config-file flags spliced in.
fn parse_with_config(args: &[String]) -> Result<std::result::Result<Cli, clap::Error>> {
    let cli = match parse(args) {
        Ok(cli) => cli,
        Err(e) => return Ok(Err(e)),
    };
    let Some(path) = cli.config.clone() else {
        return Ok(Ok(cli));
    };
    let entries = config::read_config(&path)?;
    let merged = config::splice(args, subcommand_name(&cli.command), &entries);
    Ok(parse(&merged).map_err(|e| {
        let kind = e.kind();
        clap::Error::raw(kind, format!("in config {}: {}", path.display(), first_line(&e)))
    }))
}

fn first_line(e: &clap::Error) -> String {
    let text = e.render().to_string();
    let line = text.lines().next().unwrap_or("invalid arguments");
    line.strip_prefix("error: ").unwrap_or(line).to_string()
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match parse_with_config(&args) {
        Ok(Ok(cli)) => cli,
        Ok(Err(e)) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Ok(Err(e)) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Ok(Err(e)) => {
            eprintln!("error: {}", first_line(&e));
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            return ExitCode::FAILURE;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}

/// Error chain joined onto one line.
fn one_line(e: &anyhow::Error) -> String {
    e.chain().map(|c| c.to_string().replace('\n', " ")).collect::<Vec<_>>().join(": ")
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => return cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Robust(a) => cmd_robust(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Summary(a) => cmd_summary(a),
        Command::Bench(a) => cmd_bench(a),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn load_model(path: &Path) -> Result<Detector> {
    Ok(load_checkpoint(path)?.0)
}

fn load_nonempty_split(root: &Path, split: &str) -> Result<DatasetSplit> {
    let loaded = data::load_split(root, split)?;
    if loaded.is_empty() {
        bail!("split {split:?} has no entries in {}", root.join(data::MANIFEST_FILE).display());
    }
    Ok(loaded)
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let template = SceneSpec {
        width: a.width,
        height: a.height,
        ..SceneSpec::preset(&a.preset)?
    };
    template.validate()?;
    if a.count == 0 {
        bail!("--count must be at least 1");
    }
    let occupied = a.out.is_dir() && std::fs::read_dir(&a.out)?.next().is_some();
    if occupied {
        if !a.force {
            bail!("output directory {} is not empty (use --force to replace it)", a.out.display());
        }
        for sub in ["images", "labels"] {
            let p = a.out.join(sub);
            if p.is_dir() {
                std::fs::remove_dir_all(&p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
        let manifest = a.out.join(data::MANIFEST_FILE);
        if manifest.is_file() {
            std::fs::remove_file(&manifest)?;
        }
    }
    for (offset, (name, count)) in [("train", a.count), ("val", a.val_count), ("test", a.test_count)]
        .into_iter()
        .enumerate()
    {
        if count == 0 {
            continue;
        }
        let split = synth::generate_split(&a.out, &template, name, count, a.seed + offset as u64)?;
        println!("{name}: {} images, {} boxes", split.len(), split.box_count());
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let train_split = load_nonempty_split(&a.data, &a.split)?;
    let val = data::load_split(&a.data, &a.val_split)?;
    let val = if val.is_empty() {
        eprintln!("note: split {:?} not found, evaluating on {:?}", a.val_split, a.split);
        None
    } else {
        Some(val)
    };
    let mut cfg = TrainConfig {
        lr0: a.lr,
        lr_min: a.lr_min,
        batch_size: a.batch_size,
        epochs: a.epochs,
        beta1: a.beta1,
        beta2: a.beta2,
        weight_decay: a.weight_decay,
        seed: a.seed,
        eval_every: a.eval_every,
        augment_flip: a.augment_flip,
        augment_crop: a.augment_crop,
        conf_threshold: a.detect.conf,
        nms: a.detect.nms()?,
        eval_iou: a.eval_iou,
        ..TrainConfig::default()
    };
    cfg.loss.box_weight = a.box_weight;
    cfg.loss.class_weight = a.class_weight;
    cfg.loss.conf_weight = a.conf_weight;
    cfg.loss.neg_weight = a.neg_weight;

    let mut model_cfg = ModelConfig::for_resolution(a.resolution, a.resolution);
    model_cfg.num_classes = a.num_classes;
    let mut model = Detector::build(model_cfg, a.model_seed)?;
    let stdout = std::io::stdout();
    let report = train::train(&mut model, &train_split, val.as_ref(), &cfg, Some(&a.out), &mut |log| {
        let mut line = format!("epoch {} lr {:.6e} loss {:.6}", log.epoch, log.lr, log.mean_loss);
        if let Some(r) = &log.report {
            line.push(' ');
            line.push_str(&r.summary_line());
        }
        let _ = writeln!(stdout.lock(), "{line}");
    })?;
    if report.skipped_steps > 0 {
        eprintln!("note: {} optimizer steps skipped on non-finite gradients", report.skipped_steps);
    }
    if let Some(best) = report.best_map {
        println!("best map {best:.6}");
    }
    Ok(())
}

fn image_inputs(paths: &[PathBuf]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .into_iter()
                .flatten()
                .flatten()
                .map(|e| e.path())
                .filter(|f| matches!(f.extension().and_then(OsStr::to_str), Some("ppm" | "pgm")))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    out
}

fn infer_one(model: &Detector, path: &Path, a: &InferArgs, nms: &NmsConfig) -> Result<()> {
    let raw = data::load_raw(path)?;
    let detections = model.detect_image(&raw.to_tensor(), a.detect.conf, nms)?;
    let id = path.file_stem().and_then(OsStr::to_str).unwrap_or("image");
    for d in &detections {
        println!("{}", d.to_line(id));
    }
    if let Some(dir) = &a.annotate_out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let annotated = annotate::draw_outlines(&raw, &detections);
        data::save_raw(dir.join(format!("{id}.ppm")), &annotated)?;
    }
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<ExitCode> {
    let model = load_model(&a.model)?;
    let nms = a.detect.nms()?;
    let files = image_inputs(&a.input);
    if files.is_empty() {
        bail!("no .ppm or .pgm inputs found");
    }
    let mut failures = 0;
    for f in &files {
        if let Err(e) = infer_one(&model, f, &a, &nms) {
            failures += 1;
            eprintln!("error: {}: {}", f.display(), one_line(&e));
        }
    }
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let split = load_nonempty_split(&a.data, &a.split)?;
    let preds = train::predict_split(&model, &split, a.detect.conf, &a.detect.nms()?, 16)?;
    let gts: Vec<_> = split.items.iter().map(|i| i.boxes.clone()).collect();
    let report = eval::evaluate(&preds, &gts, model.config().num_classes, a.iou)?;
    print!("{}", report.render());
    Ok(())
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_robust(a: RobustArgs) -> Result<()> {
    let transforms = robust::suite(&a.suite)?;
    let model = load_model(&a.model)?;
    let split = load_nonempty_split(&a.data, &a.split)?;
    let report = robust::run_robustness(&model, &split, &transforms, a.detect.conf, &a.detect.nms()?, a.iou)?;
    print!("{}", report.summary_csv());
    if let Some(dir) = &a.out {
        write_file(dir, "summary.csv", &report.summary_csv())?;
        write_file(dir, "deltas.csv", &report.deltas_csv())?;
    }
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let split = data::load_split(&a.data, &a.split)?;
    let stats = data::dataset_stats(&split);
    match &a.out {
        Some(dir) => {
            write_file(dir, "summary.csv", &stats.summary_csv())?;
            write_file(dir, "histograms.csv", &stats.histogram_csv())?;
            print!("{}", stats.summary_csv());
        }
        None => {
            print!("{}", stats.summary_csv());
            println!();
            print!("{}", stats.histogram_csv());
        }
    }
    Ok(())
}

fn cmd_summary(a: SummaryArgs) -> Result<()> {
    let model = match &a.model {
        Some(p) => load_model(p)?,
        None => Detector::zeros(ModelConfig::default())?,
    };
    print!("{}", model.summarize().render());
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let model = match &a.model {
        Some(p) => load_model(p)?,
        None => Detector::build(ModelConfig::default(), 0)?,
    };
    let image = match &a.input {
        Some(p) => data::load_image(p)?,
        None => {
            let (h, w) = model.config().input_resolution();
            hotspot_core::Tensor::filled(&[h, w, 3], 0.5)
        }
    };
    let nms = a.detect.nms()?;
    let stats = summary::bench(a.runs, || model.detect_image(&image, a.detect.conf, &nms).map(|_| ()))?;
    print!("{}", stats.render());
    Ok(())
}
