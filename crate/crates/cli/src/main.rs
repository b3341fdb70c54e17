use std::fs;
use std::io::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use viralnet::data::{
    load_image, load_pairs, pair_records, save_image, save_pairs, synth_generate, Dataset, Manifest,
    Placement, SynthConfig,
};
use viralnet::numcore::Tensor;
use viralnet::ranker::Variant;
use viralnet::train::{
    evaluate_records, grad_check, load_category, load_checkpoint, pretrain_category, save_category,
    save_checkpoint, train_with, CategoryConfig, GradCheckConfig, GradCheckReport, TrainConfig,
};
use viralnet::Error;

#[derive(Parser)]
#[command(name = "viralnet", version, about = "Pairwise spatial-transformer ranking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a ranking network on a scored manifest.
    Train(TrainArgs),
    /// Score a pair list with a checkpoint and print 2AFC accuracy.
    Eval(EvalArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Write a planted-attribute dataset.
    Synth(SynthArgs),
    /// Write the regions each pyramid level feeds the ranker.
    Visualize(VisualizeArgs),
    /// Nearest manifest images in feature space.
    Neighbors(NeighborsArgs),
    /// Train the frozen category classifier.
    PretrainCategory(CategoryArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training manifest (JSON lines).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long = "category-ckpt")]
    category_ckpt: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// One variant; all of them when omitted.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Parameters sampled per tensor.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value = "fine")]
    placement: String,
    #[arg(long, default_value_t = 5)]
    distractors: usize,
    #[arg(long, default_value_t = 0)]
    categories: usize,
    #[arg(long, default_value_t = 0.8)]
    correlation: f64,
    #[arg(long = "image-size", default_value_t = 64)]
    image_size: usize,
}

#[derive(Args)]
struct VisualizeArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct NeighborsArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Manifest to search.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct CategoryArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "category-dim")]
    category_dim: Option<usize>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, kind: "usage", message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Dimension { .. } => 2,
            Error::Numerical(_) => 4,
            Error::Io { .. } | Error::Parse { .. } | Error::Validation(_) | Error::Corrupt(_) => 3,
        };
        Failure { code, kind: e.kind(), message: e.to_string() }
    }
}

type CmdResult = Result<u8, Failure>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure { code: 3, kind: "io", message: format!("{}: {e}", path.display()) }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn emit(value: &impl Serialize) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

fn parse_variant(s: &str) -> Result<Variant, Failure> {
    Variant::parse(s).map_err(|e| Failure::usage(format!("--arch: {e}")))
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf, Failure> {
    let path = value.as_ref().ok_or_else(|| Failure::usage(format!("{flag} is required")))?;
    if !path.exists() {
        return Err(Failure::usage(format!("{flag}: {} does not exist", path.display())));
    }
    Ok(path)
}

/// Path-valued keys a config file may carry next to the training fields.
const PATH_KEYS: [&str; 3] = ["data", "category_ckpt", "out"];

/// Effective train configuration: file values, then flag overrides.
fn train_config(args: &TrainArgs) -> Result<(TrainConfig, [Option<PathBuf>; 3]), Failure> {
    let mut fields = serde_json::Map::new();
    let mut paths: [Option<PathBuf>; 3] = [None, None, None];
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("--config: {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("--config: {}: {e}", path.display())))?;
        let Value::Object(map) = value else {
            return Err(Failure::usage("--config: expected a JSON object"));
        };
        fields = map;
        for (slot, key) in paths.iter_mut().zip(PATH_KEYS) {
            if let Some(v) = fields.remove(key) {
                let s = v.as_str().ok_or_else(|| Failure::usage(format!("--config: {key} must be a string")))?;
                // Relative paths in a config file are relative to the file.
                let base = path.parent().unwrap_or(Path::new(""));
                *slot = Some(base.join(s));
            }
        }
    }
    let mut config: TrainConfig = serde_json::from_value(Value::Object(fields))
        .map_err(|e| Failure::usage(format!("--config: {e}")))?;
    if let Some(a) = &args.arch {
        config.variant = parse_variant(a)?;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }
    for (slot, flag) in paths.iter_mut().zip([&args.data, &args.category_ckpt, &args.out]) {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    Ok((config, paths))
}

fn cmd_train(args: &TrainArgs) -> CmdResult {
    let (config, paths) = train_config(args)?;
    let [data, category_ckpt, out] = &paths;
    let data = required(data, "--data")?;
    let out = out.as_ref().ok_or_else(|| Failure::usage("--out is required"))?;
    config.validate()?;
    let category = match (config.variant.uses_category(), category_ckpt) {
        (true, None) => {
            return Err(Failure::usage(format!(
                "--category-ckpt is required for variant {}",
                config.variant
            )))
        }
        (true, Some(p)) => Some(load_category(required(&Some(p.clone()), "--category-ckpt")?)?),
        (false, _) => None,
    };
    let manifest = Manifest::load(data)?;
    let dataset = Dataset::load(manifest)?;
    create_dir(out)?;

    let mut echo = serde_json::to_value(&config).expect("serializable");
    if let Value::Object(map) = &mut echo {
        for (key, p) in PATH_KEYS.iter().zip(&paths) {
            if let Some(p) = p {
                map.insert((*key).into(), Value::String(p.display().to_string()));
            }
        }
    }
    write_file(&out.join("config.json"), serde_json::to_string_pretty(&echo).expect("json") + "\n")?;

    let metrics_path = out.join("metrics.jsonl");
    let mut log = fs::File::create(&metrics_path).map_err(|e| io_err(&metrics_path, e))?;
    let outcome = train_with(&config, &dataset, category, |_, m| {
        let line = serde_json::to_string(m).expect("json");
        writeln!(log, "{line}").map_err(|e| Error::Io { path: metrics_path.clone(), message: e.to_string() })?;
        if args.pretty {
            eprintln!(
                "epoch {:>3}  loss {:.5}  heldout {:.4}  oob {:.3}",
                m.epoch, m.mean_loss, m.heldout_acc, m.lambda_fraction
            );
        }
        Ok(ControlFlow::Continue(()))
    })?;
    save_checkpoint(&outcome.net, config.epochs, config.seed, &out.join("model.ckpt"))?;
    save_pairs(&out.join("heldout_pairs.jsonl"), &pair_records(&dataset.manifest, &outcome.heldout))?;
    let last = outcome.metrics.last().expect("at least one epoch");
    emit(&json!({
        "checkpoint": out.join("model.ckpt"),
        "epochs": config.epochs,
        "final": last,
    }));
    Ok(0)
}

fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let (net, _) = load_checkpoint(&args.ckpt)?;
    let records = load_pairs(&args.pairs)?;
    if records.is_empty() {
        return Err(Failure::usage(format!("--pairs: {} contains no pairs", args.pairs.display())));
    }
    let report = evaluate_records(&net, &records)?;
    if args.pretty {
        println!(
            "pairs {}  accuracy {:.4}  oob fraction {:.4}  rank loss {:.5}  loss {:.5}",
            report.pairs, report.accuracy, report.lambda_fraction, report.mean_rank_loss, report.mean_loss
        );
    } else {
        emit(&report);
    }
    Ok(0)
}

fn print_gradcheck_table(reports: &[GradCheckReport]) {
    for r in reports {
        println!(
            "{}: {} (checked {}, skipped {}, failed {}, within {:.4}, max rel {:.3e})",
            r.variant,
            if r.passed { "PASS" } else { "FAIL" },
            r.checked,
            r.skipped_discontinuity,
            r.failed,
            r.fraction_within,
            r.max_rel_error
        );
        println!("  {:<28} {:>7} {:>7} {:>6} {:>10}", "tensor", "checked", "skipped", "failed", "max rel");
        for t in &r.tensors {
            println!(
                "  {:<28} {:>7} {:>7} {:>6} {:>10.3e}",
                t.name, t.checked, t.skipped_discontinuity, t.failed, t.max_rel_error
            );
        }
    }
}

fn cmd_gradcheck(args: &GradcheckArgs) -> CmdResult {
    let variants = match &args.arch {
        Some(a) => vec![parse_variant(a)?],
        None => Variant::ALL.to_vec(),
    };
    let mut reports = Vec::new();
    for variant in variants {
        let mut config = GradCheckConfig { variant, seed: args.seed, ..GradCheckConfig::default() };
        if let Some(t) = args.tolerance {
            config.tolerance = t;
            config.max_tolerance = 10.0 * t;
        }
        if let Some(s) = args.step {
            config.step = s;
        }
        if let Some(n) = args.samples {
            config.samples_per_tensor = n;
        }
        reports.push(grad_check(&config)?);
    }
    let passed = reports.iter().all(|r| r.passed);
    if args.pretty {
        print_gradcheck_table(&reports);
    } else {
        emit(&json!({ "passed": passed, "reports": reports }));
    }
    Ok(if passed { 0 } else { 4 })
}

fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let config = SynthConfig {
        n: args.n,
        image_size: args.image_size,
        placement: Placement::parse(&args.placement).map_err(|e| Failure::usage(format!("--placement: {e}")))?,
        distractors: args.distractors,
        n_categories: args.categories,
        category_correlation: args.correlation,
        seed: args.seed,
        ..SynthConfig::default()
    };
    config.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let out = synth_generate(&config, &args.out)?;
    emit(&json!({
        "images": out.manifest.len(),
        "manifest": out.manifest_path,
        "placements": out.placements_path,
    }));
    Ok(0)
}

#[derive(Serialize)]
struct RoiRecord {
    level: usize,
    file: String,
    s: f64,
    tx: f64,
    ty: f64,
    out_of_bounds: bool,
    spatial_loss: f64,
}

fn cmd_visualize(args: &VisualizeArgs) -> CmdResult {
    let (net, _) = load_checkpoint(&args.ckpt)?;
    let image = load_image(&args.image)?;
    let regions = net.regions(&image)?;
    create_dir(&args.out)?;
    save_image(&image, &args.out.join("original.png"))?;
    let mut rois = Vec::new();
    for (j, (affine, bounds, roi)) in regions.iter().enumerate() {
        let file = format!("level_{}.png", j + 1);
        save_image(roi, &args.out.join(&file))?;
        rois.push(RoiRecord {
            level: j + 1,
            file,
            s: affine.s,
            tx: affine.tx,
            ty: affine.ty,
            out_of_bounds: bounds.out_of_bounds(),
            spatial_loss: bounds.spatial_loss,
        });
    }
    let doc = json!({ "variant": net.variant(), "rois": rois });
    write_file(&args.out.join("rois.json"), serde_json::to_string_pretty(&doc).expect("json") + "\n")?;
    if args.pretty {
        for r in &rois {
            println!(
                "level {}: s {:.4} tx {:.4} ty {:.4}{}",
                r.level,
                r.s,
                r.tx,
                r.ty,
                if r.out_of_bounds { "  OUT OF BOUNDS" } else { "" }
            );
        }
    } else {
        emit(&doc);
    }
    Ok(0)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn cmd_neighbors(args: &NeighborsArgs) -> CmdResult {
    if args.k == 0 {
        return Err(Failure::usage("--k must be positive"));
    }
    let (net, _) = load_checkpoint(&args.ckpt)?;
    let features = |img: &Tensor| net.score(img).map(|t| t.features);
    let query = features(&load_image(&args.image)?)?;
    let manifest = Manifest::load(&args.data)?;
    let mut hits = Vec::with_capacity(manifest.len());
    for (i, e) in manifest.entries.iter().enumerate() {
        let f = features(&load_image(&e.path)?)?;
        hits.push((distance(&query, &f), i));
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let neighbors: Vec<Value> = hits
        .iter()
        .take(args.k)
        .map(|&(d, i)| {
            let e = &manifest.entries[i];
            json!({ "path": e.path, "score": e.score, "distance": d })
        })
        .collect();
    if args.pretty {
        for n in &neighbors {
            println!("{:>10.5}  {:>8.4}  {}", n["distance"], n["score"], n["path"].as_str().unwrap_or(""));
        }
    } else {
        emit(&json!({ "query": args.image, "neighbors": neighbors }));
    }
    Ok(0)
}

fn cmd_pretrain_category(args: &CategoryArgs) -> CmdResult {
    let mut config = CategoryConfig { seed: args.seed, ..CategoryConfig::default() };
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }
    if let Some(d) = args.category_dim {
        config.category_dim = d;
    }
    let data = Dataset::load(Manifest::load(&args.data)?)?;
    let outcome = pretrain_category(&config, &data)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_category(&outcome.net, config.epochs, config.seed, &args.out)?;
    emit(&json!({
        "checkpoint": args.out,
        "train_accuracy": outcome.train_accuracy,
        "final_loss": outcome.final_loss,
        "categories": outcome.net.n_categories(),
        "category_dim": outcome.net.category_dim(),
    }));
    Ok(0)
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Visualize(a) => cmd_visualize(a),
        Command::Neighbors(a) => cmd_neighbors(a),
        Command::PretrainCategory(a) => cmd_pretrain_category(a),
    }
}

fn fail(f: &Failure) -> ExitCode {
    eprintln!("{}", json!({ "error": f.kind, "message": f.message, "exit": f.code }));
    ExitCode::from(f.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return fail(&Failure::usage(first));
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => fail(&f),
    }
}
