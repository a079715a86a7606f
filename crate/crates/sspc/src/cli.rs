//! `sspc` subcommands. Every command writes into `--out` and never touches its inputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use sspc_core::train::evaluate_scenes;
use sspc_core::{gen_synthetic, sample_supervision, train, PointCloud, Scene, SceneSpec, SupervisionMask, TrainOutcome};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::error::{read_text, write_text, Error};
use crate::pointfile::{load_cloud, save_cloud};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "sspc", version, about = "Semi-supervised point-cloud segmentation on superpoint graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic rooms as `scene_<k>.txt`.
    Gen(GenArgs),
    /// Partition clouds and dump their superpoint graphs.
    Partition(RunArgs),
    /// Train on clouds; writes `checkpoint.txt` and `run_log.csv`.
    Train(RunArgs),
    /// Score a checkpoint on labelled clouds; writes `metrics.csv`.
    Eval(EvalArgs),
    /// Train and also write extension events, set sizes and final graphs.
    Trace(RunArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 3)]
    count: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    extent: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(required = true)]
    clouds: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of points to label; overrides `rate` from the config.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(required = true)]
    clouds: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<(), Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            let reason: Vec<&str> = text.lines().map(str::trim).take_while(|l| !l.starts_with("Usage:")).filter(|l| !l.is_empty()).collect();
            return Err(Error::Usage(reason.join(" ").trim_start_matches("error: ").to_string()));
        }
    };
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Partition(a) => partition(a),
        Command::Train(a) => train_cmd(a, false),
        Command::Eval(a) => eval(a),
        Command::Trace(a) => train_cmd(a, true),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::parse(&read_text(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn out_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn gen(a: GenArgs) -> Result<(), Error> {
    let cfg = load_config(a.config.as_deref())?;
    let spec = SceneSpec {
        classes: a.classes,
        num_objects: a.objects.unwrap_or(cfg.scene.num_objects),
        points_per_object: a.points.unwrap_or(cfg.scene.points_per_object),
        extent: a.extent.unwrap_or(cfg.scene.extent),
    };
    out_dir(&a.out)?;
    for k in 0..a.count {
        let cloud = gen_synthetic(&spec, a.seed.wrapping_add(k as u64))?;
        save_cloud(&cloud, &a.out.join(format!("scene_{k}.txt")))?;
    }
    Ok(())
}

/// Seed for the supervision mask of cloud `k`.
pub fn mask_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(1000 + k as u64)
}

fn load_clouds(paths: &[PathBuf]) -> Result<(Vec<PointCloud>, usize), Error> {
    let clouds = paths.iter().map(|p| load_cloud(p)).collect::<Result<Vec<_>, _>>()?;
    let classes = clouds[0].num_classes();
    if let Some((p, c)) = paths.iter().zip(&clouds).find(|(_, c)| c.num_classes() != classes) {
        return Err(Error::Config(format!("{} has {} classes, expected {classes}", p.display(), c.num_classes())));
    }
    Ok((clouds, classes))
}

struct Prepared {
    cfg: RunConfig,
    classes: usize,
    scenes: Vec<Scene>,
}

fn prepare(a: &RunArgs) -> Result<Prepared, Error> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(r) = a.rate {
        cfg.rate = r;
    }
    cfg.validate()?;
    let (clouds, classes) = load_clouds(&a.clouds)?;
    let mut scenes = Vec::with_capacity(clouds.len());
    for (k, cloud) in clouds.into_iter().enumerate() {
        let mask = sample_supervision(&cloud, cfg.rate, mask_seed(cfg.train.seed, k))?;
        scenes.push(Scene::prepare(cloud, &mask, &cfg.partition, cfg.knn)?);
    }
    out_dir(&a.out)?;
    Ok(Prepared { cfg, classes, scenes })
}

fn partition(a: RunArgs) -> Result<(), Error> {
    let p = prepare(&a)?;
    let mut stats = String::from("cloud,points,superpoints,edges,supervised,components\n");
    for (k, s) in p.scenes.iter().enumerate() {
        write_text(&a.out.join(format!("graph_{k}.txt")), &report::graph_dump(&s.graph, s.labels.as_slice()))?;
        stats.push_str(&format!(
            "{k},{},{},{},{},{}\n",
            s.cloud.len(),
            s.graph.len(),
            s.graph.edges().len(),
            s.labels.supervised_count(),
            s.graph.num_components()
        ));
    }
    write_text(&a.out.join("partition.csv"), &stats)
}

fn train_cmd(a: RunArgs, trace: bool) -> Result<(), Error> {
    let p = prepare(&a)?;
    let config = p.cfg.train_config(p.classes);
    let TrainOutcome { model, states, log } = train(&p.scenes, &config)?;
    let mut header = p.cfg.entries();
    header.push(("classes".to_string(), p.classes.to_string()));
    write_text(&a.out.join("run_log.csv"), &report::run_log_csv(&log, &header))?;
    save_checkpoint(&model, &a.out.join("checkpoint.txt"))?;
    if trace {
        write_text(&a.out.join("events.csv"), &report::events_csv(&log))?;
        write_text(&a.out.join("set_sizes.csv"), &report::set_sizes_csv(&log))?;
        for (k, (scene, state)) in p.scenes.iter().zip(&states).enumerate() {
            let labels: Vec<_> = (0..state.len()).map(|i| state.label_of(i)).collect();
            write_text(&a.out.join(format!("graph_{k}.txt")), &report::graph_dump(&scene.graph, &labels))?;
        }
    }
    if let Some(r) = log.epochs.last() {
        println!("epochs={}", log.epochs.len());
        println!("OA={}", r.overall_accuracy);
        println!("mIoU={}", r.mean_iou);
        println!("mAcc={}", r.mean_accuracy);
        println!("OA_es={}", r.oa_extended.map(|v| v.to_string()).unwrap_or_default());
        println!("extended={}", r.extended);
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Error> {
    let cfg = load_config(a.config.as_deref())?;
    let model = load_checkpoint(&a.checkpoint)?;
    let (clouds, classes) = load_clouds(&a.clouds)?;
    if classes != model.dims.classes {
        return Err(Error::Checkpoint {
            path: a.checkpoint.clone(),
            detail: format!("model predicts {} classes but the clouds have {classes}", model.dims.classes),
        });
    }
    let scenes = clouds
        .into_iter()
        .map(|c| {
            let mask = SupervisionMask::none(c.len());
            Scene::prepare(c, &mask, &cfg.partition, cfg.knn)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let metrics = evaluate_scenes(&model, &scenes)?;
    out_dir(&a.out)?;
    for (k, v) in report::metric_rows(&metrics) {
        println!("{k}={v}");
    }
    write_text(&a.out.join("metrics.csv"), &report::metrics_csv(&metrics))
}
