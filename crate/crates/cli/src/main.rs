//! `semd` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semd::generator::{init_network, GeneratorConfig, SemdNetwork};
use semd::loss::{read_loss_log, write_loss_log};
use semd::metrics::{nn_registry, emd_registry, write_ply, MetricOptions, PlyFormat};
use semd::pipeline::{self, TrainConfig, TrainingSet};
use semd::synthdata::{self, renderer_registry, shape_registry, DataConfig, DatasetEntry, GenerateOptions};
use semd::Error;

#[derive(Parser, Debug)]
#[command(name = "semd", version, about = "Single-image point cloud generation with one encoder and several decoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset.
    GenData(GenData),
    /// Stage one: regress the eight fixed-view coordinate images.
    Pretrain(Train),
    /// Stage two: optimise through fusion and pseudo-rendering.
    Finetune(Train),
    /// Reconstruct a point cloud from one image.
    Infer(Infer),
    /// Score reconstructions of a dataset against its surfaces.
    Eval(Eval),
    /// Write the ground-truth surface of a dataset entry as PLY.
    ExportPly(ExportPly),
    /// Turn a loss log into curve data with a moving average.
    Losscurve(Losscurve),
}

#[derive(Args, Debug)]
struct GenData {
    /// Comma-separated shape kinds.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
    /// Total models, cycling through the kinds.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    input_size: usize,
    #[arg(long, default_value_t = 128)]
    output_size: usize,
    #[arg(long)]
    supervision_views: Option<usize>,
    /// Ground-truth renderer.
    #[arg(long)]
    renderer: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Train {
    #[arg(long)]
    dataset: PathBuf,
    /// Starting checkpoint. Required for fine-tuning; pretraining starts
    /// from a fresh network without one.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Where the trained checkpoint goes.
    #[arg(long)]
    out: PathBuf,
    /// Loss log destination.
    #[arg(long)]
    log: Option<PathBuf>,
    /// `key = value` file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    n_decoders: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct Infer {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw little-endian f64 image, channel-major 3xSxS.
    #[arg(long, conflicts_with = "dataset")]
    image: Option<PathBuf>,
    #[arg(long, requires = "entry")]
    dataset: Option<PathBuf>,
    /// Model id inside the dataset.
    #[arg(long)]
    entry: Option<String>,
    /// Input render index for `--dataset`.
    #[arg(long, default_value_t = 0)]
    view: usize,
    #[arg(long, default_value_t = semd::metrics::DEFAULT_MASK_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = semd::camera::DEFAULT_CAMERA_RADIUS)]
    camera_radius: f64,
    #[arg(long, default_value = "ascii")]
    format: PlyFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 1024)]
    n_points: usize,
    #[arg(long, default_value_t = semd::metrics::DEFAULT_MASK_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = semd::camera::DEFAULT_CAMERA_RADIUS)]
    camera_radius: f64,
    /// Nearest-neighbour search strategy.
    #[arg(long, default_value = semd::metrics::nn::DEFAULT_NN)]
    nn: String,
    /// Earth mover's distance solver.
    #[arg(long, default_value = semd::metrics::emd::DEFAULT_EMD)]
    emd: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV report; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportPly {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    entry: String,
    #[arg(long, default_value = "ascii")]
    format: PlyFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Losscurve {
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value_t = 200)]
    window: usize,
    #[arg(long)]
    out: PathBuf,
}

type Result<T> = std::result::Result<T, Error>;

fn find_entry<'a>(entries: &'a [DatasetEntry], id: &str) -> Result<&'a DatasetEntry> {
    entries.iter().find(|e| e.model_id == id).ok_or_else(|| {
        Error::Config(format!(
            "no entry '{id}' in dataset (have {})",
            entries.iter().map(|e| e.model_id.as_str()).collect::<Vec<_>>().join(", ")
        ))
    })
}

fn gen_data(a: GenData) -> Result<()> {
    let mut data = DataConfig {
        input_size: a.input_size,
        output_size: a.output_size,
        ..Default::default()
    };
    if let Some(v) = a.supervision_views {
        data.supervision_views = v;
    }
    if let Some(r) = a.renderer {
        renderer_registry().create(&r)?;
        data.renderer = r;
    }
    let kinds = a
        .kinds
        .unwrap_or_else(|| shape_registry().names().into_iter().map(String::from).collect());
    let entries = synthdata::generate_dataset(&GenerateOptions {
        kinds,
        count: a.count,
        seed: a.seed,
        data,
    })?;
    synthdata::write_dataset(&entries, &a.out)?;
    println!("wrote {} entries to {}", entries.len(), a.out.display());
    Ok(())
}

fn train_config(a: &Train, finetune: bool) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = &a.config {
        cfg.apply(&pipeline::read_config_file(p)?)?;
    }
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(a.preset, cfg.preset);
    set!(a.n_decoders, cfg.n_decoders);
    set!(a.lambda, cfg.lambda);
    set!(a.views, cfg.supervision_view_count);
    set!(a.batch_size, cfg.batch_size);
    set!(a.seed, cfg.seed);
    set!(a.threshold, cfg.mask_threshold);
    if finetune {
        set!(a.iters, cfg.finetune_iters);
        set!(a.lr, cfg.finetune_lr);
    } else {
        set!(a.iters, cfg.pretrain_iters);
        set!(a.lr, cfg.pretrain_lr);
    }
    if cfg.diagnostic_checkpoint.is_none() {
        cfg.diagnostic_checkpoint = Some(a.out.with_extension("diverged.bin"));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: Train, finetune: bool) -> Result<()> {
    let cfg = train_config(&a, finetune)?;
    let net = match (&a.checkpoint, finetune) {
        (Some(p), _) => SemdNetwork::load(p)?,
        (None, false) => init_network(&GeneratorConfig::preset(&cfg.preset, cfg.n_decoders)?, cfg.seed)?,
        (None, true) => return Err(Error::Config("finetune needs --checkpoint".into())),
    };
    let set = TrainingSet::new(synthdata::read_dataset(&a.dataset)?)?;
    let outcome = match finetune {
        true => pipeline::finetune(&net, &set, &cfg)?,
        false => pipeline::pretrain(&net, &set, &cfg)?,
    };
    net.save(&a.out)?;
    if let Some(log) = &a.log {
        write_loss_log(log, &outcome.log)?;
    }
    if outcome.skipped_iterations > 0 {
        eprintln!("warning: {} iterations skipped on empty clouds", outcome.skipped_iterations);
    }
    match outcome.log.last() {
        Some(r) => println!("{} iterations, final loss {}", outcome.log.len(), r.total),
        None => println!("no iterations run"),
    }
    println!("saved {}", a.out.display());
    Ok(())
}

fn infer(a: Infer) -> Result<()> {
    let net = SemdNetwork::load(&a.checkpoint)?;
    let fusion = match (&a.image, &a.dataset, &a.entry) {
        (Some(img), _, _) => {
            let (pixels, _) = pipeline::read_image(img)?;
            pipeline::infer(&net, &pixels, a.threshold, a.camera_radius)?
        }
        (None, Some(ds), Some(id)) => {
            let entries = synthdata::read_dataset(ds)?;
            pipeline::infer_entry(&net, find_entry(&entries, id)?, a.view, a.threshold, a.camera_radius)?
        }
        _ => return Err(Error::Config("infer needs --image or --dataset with --entry".into())),
    };
    if fusion.is_empty() {
        eprintln!("warning: no pixel passed the mask threshold; the cloud is empty");
    }
    write_ply(&a.out, &fusion.cloud, a.format)?;
    println!("wrote {} points to {}", fusion.cloud.len(), a.out.display());
    Ok(())
}

fn eval(a: Eval) -> Result<()> {
    nn_registry().create(&a.nn)?;
    emd_registry().create(&a.emd)?;
    let net = SemdNetwork::load(&a.checkpoint)?;
    let entries = synthdata::read_dataset(&a.dataset)?;
    let opts = MetricOptions {
        n_points: a.n_points,
        seed: a.seed,
        nn: a.nn,
        emd: a.emd,
    };
    let summary = pipeline::evaluate(&net, &entries, a.threshold, a.camera_radius, &opts)?;
    for (id, why) in &summary.failures {
        eprintln!("excluded {id}: {why}");
    }
    let csv = summary.to_csv();
    match &a.out {
        Some(p) => std::fs::write(p, &csv).map_err(|e| Error::io(p, e))?,
        None => print!("{csv}"),
    }
    println!(
        "{} scored, {} excluded",
        summary.rows.len(),
        summary.failures.len()
    );
    Ok(())
}

fn export_ply(a: ExportPly) -> Result<()> {
    let entries = synthdata::read_dataset(&a.dataset)?;
    let e = find_entry(&entries, &a.entry)?;
    write_ply(&a.out, &e.shape.surface, a.format)?;
    println!("wrote {} points to {}", e.shape.surface.len(), a.out.display());
    Ok(())
}

fn losscurve(a: Losscurve) -> Result<()> {
    let records = read_loss_log(&a.log)?;
    let csv = pipeline::loss_curve(&records, a.window)?;
    std::fs::write(&a.out, csv).map_err(|e| Error::io(&a.out, e))?;
    println!("wrote {} rows to {}", records.len(), a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Pretrain(a) => train(a, false),
        Command::Finetune(a) => train(a, true),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::ExportPly(a) => export_ply(a),
        Command::Losscurve(a) => losscurve(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.use_stderr() {
                true => ExitCode::from(1),
                false => ExitCode::SUCCESS,
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
