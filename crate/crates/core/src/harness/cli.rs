use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use super::bench::{bench, TimingRow};
use super::config::{init_threads, PcalignConfig};
use super::eval::{evaluate, read_predictions, write_jsonl};
use super::predict::{predict_alignnet, predict_icp};
use super::sampling::fixed_inputs;
use super::train::train;
use super::HarnessError;
use crate::alignnet::AlignNet;
use crate::icp::icp_p2p;
use crate::synth::scene::{load_mesh_pool, procedural_cars, procedural_persons, read_orientation_fixes, split_pool};
use crate::synth::{generate_scenes, read_dataset, write_dataset, MeshEntry, SceneSample};

#[derive(Parser, Debug)]
#[command(name = "pcalign", version, about = "Relative motion between two LiDAR scans of one object")]
struct Cli {
    /// TOML file with [scene], [lidar], [gen], [train], [loss] and [eval] sections.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every random stream; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate simulated scan pairs.
    Gen(GenArgs),
    /// Train the alignment network.
    Train(TrainArgs),
    /// Predict transforms with a trained network.
    Align(AlignArgs),
    /// Predict transforms with point-to-point ICP.
    Icp(IcpArgs),
    /// Score a predictions file against a dataset.
    Eval(EvalArgs),
    /// Time the network and ICP per transform.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Directory receiving `<split>.bin` and its index.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    split: Split,
    /// Overrides the configured count of every generated split.
    #[arg(long)]
    count: Option<usize>,
    /// ModelNet-style mesh tree; defaults to procedural cars.
    #[arg(long, value_name = "DIR")]
    meshes: Option<PathBuf>,
    /// `mesh_id,yaw` lines rotating meshes to face +x.
    #[arg(long, value_name = "FILE")]
    orientation_fixes: Option<PathBuf>,
    /// Generate scans without sensor noise.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    dataset: Option<PathBuf>,
    /// Scored with the final weights when given.
    #[arg(long, value_name = "FILE")]
    val_dataset: Option<PathBuf>,
    /// Receives loss.csv and checkpoints.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// Predictions as JSON lines.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Args, Debug)]
struct IcpArgs {
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Reduce both clouds to this many points first.
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    #[arg(long, value_name = "FILE", default_value = "report.json")]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    /// Label in the report; defaults to the predictions file stem.
    #[arg(long)]
    method: Option<String>,
    /// Count θ and θ+π as the same heading.
    #[arg(long)]
    axis_symmetric: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// Also time this network.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "FILE", default_value = "timing.json")]
    out: PathBuf,
    /// Use only the first N samples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    skip_icp: bool,
}

/// Runs the command line and returns the process exit code.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Cli::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
        }
    };
    match run(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(args: Cli) -> Result<(), HarnessError> {
    let mut cfg = PcalignConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    init_threads()?;
    match args.command {
        Command::Gen(a) => gen(cfg, a),
        Command::Train(a) => train_cmd(cfg, a),
        Command::Align(a) => align(cfg, a),
        Command::Icp(a) => icp(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Bench(a) => bench_cmd(cfg, a),
    }
}

fn load(path: &Path) -> Result<Vec<SceneSample>, HarnessError> {
    let samples = read_dataset(path)?;
    if samples.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    Ok(samples)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_text(path, &(text + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, text).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

fn mesh_pool(cfg: &PcalignConfig, a: &GenArgs) -> Result<Vec<MeshEntry>, HarnessError> {
    let meshes = a.meshes.clone().or_else(|| cfg.gen.meshes.clone());
    let fixes_path = a.orientation_fixes.clone().or_else(|| cfg.gen.orientation_fixes.clone());
    let fixes = match fixes_path {
        Some(p) => read_orientation_fixes(&p)?,
        None => Default::default(),
    };
    let mut pool = match meshes {
        Some(root) => load_mesh_pool(&root, &fixes)?,
        None => procedural_cars(cfg.gen.procedural_cars, cfg.scene.seed),
    };
    pool.extend(procedural_persons(cfg.gen.procedural_persons));
    if pool.is_empty() {
        return Err(HarnessError::Config("mesh pool is empty".into()));
    }
    Ok(pool)
}

fn gen(mut cfg: PcalignConfig, a: GenArgs) -> Result<(), HarnessError> {
    if a.noiseless {
        cfg.scene.noise = false;
    }
    let pool = mesh_pool(&cfg, &a)?;
    let (train_pool, held_pool) = if pool.len() > 1 { split_pool(&pool) } else { (pool.clone(), pool.clone()) };
    let splits = [
        (Split::Train, "train", cfg.scene.train_count, &train_pool, 0u64),
        (Split::Val, "val", cfg.scene.val_count, &held_pool, 1),
        (Split::Test, "test", cfg.scene.test_count, &held_pool, 2),
    ];
    for (split, name, count, pool, k) in splits {
        if a.split != Split::All && a.split != split {
            continue;
        }
        let count = a.count.unwrap_or(count);
        let seed = cfg.scene.seed ^ (k << 48);
        let samples = generate_scenes(pool, &cfg.scene, &cfg.lidar, seed, count)?;
        let path = a.out_dir.join(format!("{name}.bin"));
        let meta = serde_json::json!({
            "split": name,
            "seed": seed,
            "meshes": pool.len(),
            "scene": cfg.scene,
            "lidar": cfg.lidar,
        });
        write_dataset(&samples, &path, meta)?;
        println!("{name}: {} pairs -> {}", samples.len(), path.display());
    }
    Ok(())
}

fn train_cmd(mut cfg: PcalignConfig, a: TrainArgs) -> Result<(), HarnessError> {
    let t = &mut cfg.train;
    t.dataset = a.dataset.or(t.dataset.take());
    t.val_dataset = a.val_dataset.or(t.val_dataset.take());
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.max_steps = a.max_steps.unwrap_or(t.max_steps);
    t.batch = a.batch.unwrap_or(t.batch);
    let Some(path) = t.dataset.clone() else {
        return Err(HarnessError::Config("no training dataset; pass --dataset or set train.dataset".into()));
    };
    let samples = load(&path)?;
    let quiet = a.quiet;
    let outcome = train(&samples, &cfg.train, &cfg.loss, Some(&a.out_dir), |r| {
        if !quiet && r.step % 20 == 0 {
            eprintln!("epoch {:>3} step {:>6} lr {:.5} loss {:.5}", r.epoch, r.step, r.lr, r.loss.total);
        }
    })?;
    if let Some(last) = outcome.curve.last() {
        println!("{} steps, final loss {:.6}", outcome.curve.len(), last.loss.total);
    }
    if let Some(p) = outcome.checkpoints.last() {
        println!("checkpoint {}", p.display());
    }
    if let Some(val) = &cfg.train.val_dataset {
        let val_samples = load(val)?;
        let preds = predict_alignnet(&outcome.net, &val_samples, cfg.eval.batch, cfg.eval.seed)?;
        let report = evaluate("alignnet", &preds, &val_samples, cfg.loss.axis_symmetric)?;
        write_json(&a.out_dir.join("val_report.json"), &report)?;
        print!("{}", report.to_text());
    }
    Ok(())
}

fn align(cfg: PcalignConfig, a: AlignArgs) -> Result<(), HarnessError> {
    let net = AlignNet::load(&a.checkpoint)?;
    let samples = load(&a.dataset)?;
    let preds = predict_alignnet(&net, &samples, a.batch.unwrap_or(cfg.eval.batch), cfg.eval.seed)?;
    write_jsonl(&a.out, &preds)?;
    println!("{} predictions -> {}", preds.len(), a.out.display());
    Ok(())
}

fn icp(cfg: PcalignConfig, a: IcpArgs) -> Result<(), HarnessError> {
    let samples = load(&a.dataset)?;
    let records = predict_icp(&samples, &cfg.eval.icp, a.points.or(cfg.eval.icp_points), cfg.eval.seed)?;
    write_jsonl(&a.out, &records)?;
    println!("{} predictions -> {}", records.len(), a.out.display());
    Ok(())
}

fn eval(cfg: PcalignConfig, a: EvalArgs) -> Result<(), HarnessError> {
    let samples = load(&a.dataset)?;
    let preds = read_predictions(&a.pred)?;
    let method = a.method.unwrap_or_else(|| {
        a.pred.file_stem().and_then(|s| s.to_str()).unwrap_or("predictions").to_string()
    });
    let report = evaluate(&method, &preds, &samples, a.axis_symmetric || cfg.eval.axis_symmetric)?;
    report.check_invariants().map_err(HarnessError::Config)?;
    write_json(&a.out, &report)?;
    if let Some(csv) = &a.csv {
        write_text(csv, &report.to_csv())?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn print_timing(rows: &[TimingRow]) {
    println!("{:<10} {:>6} {:>10} {:>14} {:>8}", "method", "batch", "transforms", "ms/transform", "threads");
    for r in rows {
        println!("{:<10} {:>6} {:>10} {:>14.3} {:>8}", r.method, r.batch_size, r.transforms, r.ms_per_transform, r.threads);
    }
}

fn bench_cmd(cfg: PcalignConfig, a: BenchArgs) -> Result<(), HarnessError> {
    let mut samples = load(&a.dataset)?;
    if let Some(n) = a.limit {
        samples.truncate(n.max(1));
    }
    let mut rows = Vec::new();
    if let Some(ckpt) = &a.checkpoint {
        let net = AlignNet::load(ckpt)?;
        let n = net.config.n_points;
        let inputs: Vec<_> =
            samples.iter().enumerate().map(|(i, s)| fixed_inputs(s, i, n, cfg.eval.seed)).collect::<Result<_, _>>()?;
        let (c1, c2): (Vec<_>, Vec<_>) = inputs.into_iter().unzip();
        rows.extend(bench("alignnet", samples.len(), &cfg.eval.batch_sizes, |r| {
            net.align_batch(&c1[r.clone()], &c2[r])?;
            Ok(())
        })?);
    }
    if !a.skip_icp {
        let n = cfg.eval.bench_points;
        let inputs: Vec<_> =
            samples.iter().enumerate().map(|(i, s)| fixed_inputs(s, i, n, cfg.eval.seed)).collect::<Result<_, _>>()?;
        rows.extend(bench("icp_p2p", samples.len(), &cfg.eval.batch_sizes, |r| {
            for (c1, c2) in &inputs[r] {
                icp_p2p(c1, c2, &cfg.eval.icp, None)?;
            }
            Ok(())
        })?);
    }
    write_json(&a.out, &rows)?;
    print_timing(&rows);
    Ok(())
}
