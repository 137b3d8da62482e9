//! `plumekit` command-line entry point: reproducible scene synthesis,
//! detection, post-processing, classification, and evaluation workflows.
//!
//! Exit codes: 0 success, 1 module/runtime error, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use plumekit::config::ToolkitConfig;
use plumekit::detector::{export_detections, import_detections, DetectionSet, OracleDetector};
use plumekit::eval::{self, SweepParam};
use plumekit::postproc::{self, PipelineConfig, PipelineMode, DEFAULT_SIZE_FLOOR_PX2};
use plumekit::qnd::{self, Class, RandomForestModel, RF_DEFAULT_DEPTH, RF_DEFAULT_TREES};
use plumekit::raster::{load_scene, save_pgrid, save_scene, SceneGrid};
use plumekit::synthgen::{generate_scene, load_labels, save_labels};
use plumekit::tiler::run_scene;

/// Detection/model file schema version, independent of the package version.
const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "plumekit",
    version = concat!(env!("CARGO_PKG_VERSION"), " (schema 1)"),
    about = "Methane plume scene-detection toolkit"
)]
struct Cli {
    /// TOML configuration file; flags override its values, which override
    /// built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene with ground-truth labels.
    Synth(SynthArgs),
    /// Run a detector over a scene with sliding windows.
    Run(RunArgs),
    /// Apply an operating mode to raw detections.
    Postprocess(PostprocessArgs),
    /// Train the hotspot-feature random forest from a feature CSV.
    QndTrain(QndTrainArgs),
    /// Classify detections with a trained model.
    QndClassify(QndClassifyArgs),
    /// Aggregate detections into a per-pixel probability map.
    Probmap(ProbmapArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Sweep one pipeline parameter over a grid.
    Sweep(SweepArgs),
    /// synth -> run -> postprocess -> eval in one deterministic pass.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "SGRID")]
    scene: PathBuf,
    /// `oracle` or `import:<detections.json>`.
    #[arg(long, default_value = "oracle")]
    detector: String,
    /// Oracle threshold k in z-score units.
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long, value_name = "JSON")]
    out: PathBuf,
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<PipelineMode>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    fiber_ratio: Option<f64>,
    /// Minimum area (px^2) for the high-precision size filter.
    #[arg(long, conflicts_with = "qnd_model")]
    size_floor: Option<usize>,
    /// Trained classifier for the high-precision QND filter.
    #[arg(long, value_name = "JSON")]
    qnd_model: Option<PathBuf>,
    #[arg(long = "in", value_name = "JSON")]
    input: PathBuf,
    #[arg(long, value_name = "SGRID")]
    scene: PathBuf,
    #[arg(long, value_name = "JSON")]
    out: PathBuf,
}

#[derive(Args)]
struct QndTrainArgs {
    /// CSV with one header row: 12 feature columns plus a `label` column
    /// (`plume` / `artifact`).
    #[arg(long, value_name = "CSV")]
    features: PathBuf,
    #[arg(long, value_name = "JSON")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
}

#[derive(Args)]
struct QndClassifyArgs {
    #[arg(long, value_name = "JSON")]
    model: PathBuf,
    #[arg(long = "in", value_name = "JSON")]
    input: PathBuf,
    #[arg(long, value_name = "SGRID")]
    scene: PathBuf,
    /// Optional JSON report of per-detection classifications.
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbmapArgs {
    #[arg(long = "in", value_name = "JSON")]
    input: PathBuf,
    #[arg(long, value_name = "SGRID")]
    scene: PathBuf,
    #[arg(long, value_name = "PGRID")]
    out: PathBuf,
    /// Optional grayscale render (linear ramp, gamma 1.0).
    #[arg(long, value_name = "PNG")]
    png: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_name = "JSON")]
    pred: PathBuf,
    #[arg(long, value_name = "JSON")]
    truth: PathBuf,
    #[arg(long, value_name = "SGRID")]
    scene: PathBuf,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, value_name = "JSON")]
    report: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// tau | delta | theta
    #[arg(long, value_parser = parse_param)]
    param: SweepParam,
    /// start:stop:step, inclusive of both ends.
    #[arg(long)]
    grid: String,
    #[arg(long = "in", value_name = "JSON")]
    input: PathBuf,
    #[arg(long, value_name = "JSON")]
    truth: PathBuf,
    #[arg(long, value_name = "SGRID")]
    scene: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<PipelineMode>,
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<PipelineMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Existing scene; omitted means synthesize one from the config.
    #[arg(long, value_name = "SGRID")]
    scene: Option<PathBuf>,
    /// Ground-truth labels for an existing scene.
    #[arg(long, value_name = "JSON")]
    truth: Option<PathBuf>,
    #[arg(long, conflicts_with = "qnd_model")]
    size_floor: Option<usize>,
    #[arg(long, value_name = "JSON")]
    qnd_model: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn parse_mode(s: &str) -> std::result::Result<PipelineMode, String> {
    match s {
        "baseline" => Ok(PipelineMode::Baseline),
        "high-sensitivity" => Ok(PipelineMode::HighSensitivity),
        "high-precision" => Ok(PipelineMode::HighPrecision),
        other => Err(format!(
            "unknown mode {other:?} (expected baseline | high-sensitivity | high-precision)"
        )),
    }
}

fn parse_param(s: &str) -> std::result::Result<SweepParam, String> {
    match s {
        "tau" => Ok(SweepParam::Tau),
        "delta" => Ok(SweepParam::Delta),
        "theta" => Ok(SweepParam::Theta),
        other => Err(format!("unknown parameter {other:?} (expected tau | delta | theta)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ToolkitConfig> {
    let cfg = match path {
        None => ToolkitConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("config file {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("config file {}", p.display()))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn read_scene(path: &Path) -> Result<SceneGrid> {
    load_scene(path).with_context(|| format!("scene file {}", path.display()))
}

fn read_detections(path: &Path, scene: &SceneGrid) -> Result<DetectionSet> {
    import_detections(path, &scene.geometry)
        .with_context(|| format!("detections file {}", path.display()))
}

fn read_model(path: &Path) -> Result<RandomForestModel> {
    RandomForestModel::load(path).with_context(|| format!("model file {}", path.display()))
}

fn truth_masks(path: &Path) -> Result<Vec<plumekit::raster::BinaryMask>> {
    let labels =
        load_labels(path).with_context(|| format!("labels file {}", path.display()))?;
    Ok(labels.into_iter().map(|l| l.mask).collect())
}

/// Assemble the effective post-processing configuration: defaults, then the
/// config file, then flags.
#[allow(clippy::too_many_arguments)]
fn effective_pipeline(
    cfg: &ToolkitConfig,
    mode: Option<PipelineMode>,
    tau: Option<f64>,
    delta: Option<f64>,
    fiber_ratio: Option<f64>,
    size_floor: Option<usize>,
    qnd_model: Option<&Path>,
) -> Result<(PipelineConfig, Option<RandomForestModel>)> {
    let mut pc = cfg.postproc;
    if let Some(m) = mode {
        pc.mode = m;
    }
    if let Some(v) = tau {
        pc.tau = v;
    }
    if let Some(v) = delta {
        pc.delta = v;
    }
    if let Some(v) = fiber_ratio {
        pc.fiber_ratio_max = v;
    }
    let model = match qnd_model {
        Some(p) => {
            pc.size_floor = None;
            Some(read_model(p)?)
        }
        None => {
            if let Some(v) = size_floor {
                pc.size_floor = Some(v);
            } else if pc.mode == PipelineMode::HighPrecision && pc.size_floor.is_none() {
                pc.size_floor = Some(DEFAULT_SIZE_FLOOR_PX2);
            }
            None
        }
    };
    pc.validate()?;
    Ok((pc, model))
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        bail!("grid must be start:stop:step, got {spec:?}");
    }
    let start: f64 = parts[0].parse().context("grid start")?;
    let stop: f64 = parts[1].parse().context("grid stop")?;
    let step: f64 = parts[2].parse().context("grid step")?;
    if step <= 0.0 || stop < start {
        bail!("grid requires stop >= start and step > 0");
    }
    let n = ((stop - start) / step).round() as usize;
    let mut values: Vec<f64> = (0..=n).map(|i| start + i as f64 * step).collect();
    values.retain(|v| *v <= stop + 1e-12);
    Ok(values)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(cfg, a),
        Cmd::Run(a) => cmd_run(cfg, a),
        Cmd::Postprocess(a) => cmd_postprocess(cfg, a),
        Cmd::QndTrain(a) => cmd_qnd_train(cfg, a),
        Cmd::QndClassify(a) => cmd_qnd_classify(a),
        Cmd::Probmap(a) => cmd_probmap(a),
        Cmd::Eval(a) => cmd_eval(cfg, a),
        Cmd::Sweep(a) => cmd_sweep(cfg, a),
        Cmd::Pipeline(a) => cmd_pipeline(cfg, a),
    }
}

fn cmd_synth(mut cfg: ToolkitConfig, a: SynthArgs) -> Result<()> {
    if let Some(seed) = a.seed {
        cfg.synth.seed = seed;
    }
    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("output directory {}", a.out.display()))?;
    let (scene, labels, artifacts) = generate_scene(&cfg.synth)?;
    save_scene(&scene, a.out.join("scene.sgrid"))?;
    save_labels(&labels, a.out.join("labels.json"))?;
    let artifact_json = serde_json::to_string(&artifacts)?;
    std::fs::write(a.out.join("artifacts.json"), artifact_json)?;
    println!(
        "synth: {}x{} px scene, {} plumes, {} artifacts, seed {} -> {}",
        cfg.synth.width,
        cfg.synth.height,
        labels.len(),
        artifacts.len(),
        cfg.synth.seed,
        a.out.display()
    );
    Ok(())
}

fn cmd_run(cfg: ToolkitConfig, a: RunArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let size = a.patch_size.unwrap_or(cfg.window.size);
    let overlap = a.overlap.unwrap_or(cfg.window.overlap);
    let dets = if let Some(file) = a.detector.strip_prefix("import:") {
        read_detections(Path::new(file), &scene)?
    } else if a.detector == "oracle" {
        let k = a.k.unwrap_or(cfg.oracle_k.k);
        run_scene(&scene, &OracleDetector::new(k), size, overlap)?
    } else {
        bail!("unknown detector {:?} (expected oracle | import:<file>)", a.detector);
    };
    export_detections(&dets, &a.out)?;
    println!(
        "run: {} detections (window {}, overlap {}) -> {}",
        dets.instances.len(),
        size,
        overlap,
        a.out.display()
    );
    Ok(())
}

fn cmd_postprocess(cfg: ToolkitConfig, a: PostprocessArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let dets = read_detections(&a.input, &scene)?;
    let (pc, model) = effective_pipeline(
        &cfg,
        a.mode,
        a.tau,
        a.delta,
        a.fiber_ratio,
        a.size_floor,
        a.qnd_model.as_deref(),
    )?;
    let n_in = dets.instances.len();
    let kept = postproc::run_mode(dets.instances, &scene, &pc, model.as_ref())?;
    let out_set = DetectionSet { geometry: dets.geometry, instances: kept };
    export_detections(&out_set, &a.out)?;
    println!(
        "postprocess: mode={} tau={} delta={} fiber_ratio_max={} size_floor={:?}: {} -> {} detections",
        mode_name(pc.mode),
        pc.tau,
        pc.delta,
        pc.fiber_ratio_max,
        pc.size_floor,
        n_in,
        out_set.instances.len()
    );
    Ok(())
}

fn mode_name(mode: PipelineMode) -> &'static str {
    match mode {
        PipelineMode::Baseline => "baseline",
        PipelineMode::HighSensitivity => "high-sensitivity",
        PipelineMode::HighPrecision => "high-precision",
    }
}

fn cmd_qnd_train(cfg: ToolkitConfig, a: QndTrainArgs) -> Result<()> {
    let mut reader = csv::Reader::from_path(&a.features)
        .with_context(|| format!("features file {}", a.features.display()))?;
    let headers = reader.headers()?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| anyhow!("features CSV needs a `label` column"))?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(record.len().saturating_sub(1));
        for (j, field) in record.iter().enumerate() {
            if j == label_col {
                y.push(match field.to_ascii_lowercase().as_str() {
                    "plume" => Class::Plume,
                    "artifact" => Class::Artifact,
                    other => bail!("row {}: unknown label {other:?}", i + 1),
                });
            } else {
                row.push(
                    field
                        .parse::<f64>()
                        .with_context(|| format!("row {}, column {}", i + 1, j + 1))?,
                );
            }
        }
        x.push(row);
    }
    let seed = a.seed.unwrap_or(cfg.seed);
    let model = qnd::rf_train(
        &x,
        &y,
        a.trees.unwrap_or(RF_DEFAULT_TREES),
        a.max_depth.unwrap_or(RF_DEFAULT_DEPTH),
        seed,
    )?;
    model.save(&a.out)?;
    println!(
        "qnd-train: {} samples, {} trees, OOB accuracy {:.3} -> {}",
        x.len(),
        model.n_trees,
        model.oob_accuracy.unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct ClassificationRow {
    index: usize,
    class: String,
    probability: Option<f64>,
}

fn cmd_qnd_classify(a: QndClassifyArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let dets = read_detections(&a.input, &scene)?;
    let model = read_model(&a.model)?;
    let mut rows = Vec::with_capacity(dets.instances.len());
    for (i, det) in dets.instances.iter().enumerate() {
        let row = match qnd::extract_features(&scene, &det.mask) {
            Ok(features) => {
                let (class, p) = model.predict(&features.as_vector())?;
                let name = match class {
                    Class::Plume => "plume",
                    Class::Artifact => "artifact",
                };
                ClassificationRow { index: i, class: name.into(), probability: Some(p) }
            }
            // no dense hotspot core, or a flat mask: artifact-like by default
            Err(plumekit::Error::NoHotspotCore)
            | Err(plumekit::Error::DegenerateDistribution) => {
                ClassificationRow { index: i, class: "no-core".into(), probability: None }
            }
            Err(e) => return Err(e.into()),
        };
        match row.probability {
            Some(p) => println!("{}: {} ({:.3})", row.index, row.class, p),
            None => println!("{}: {}", row.index, row.class),
        }
        rows.push(row);
    }
    if let Some(out) = a.out {
        std::fs::write(&out, serde_json::to_string(&rows)?)?;
    }
    Ok(())
}

fn cmd_probmap(a: ProbmapArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let dets = read_detections(&a.input, &scene)?;
    let map = plumekit::probmap::aggregate(&dets);
    save_pgrid(&map.geometry, &map.p, &a.out)?;
    if let Some(png) = &a.png {
        let (h, w) = map.p.dim();
        let bytes: Vec<u8> = map
            .p
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = image::GrayImage::from_raw(w as u32, h as u32, bytes)
            .expect("buffer sized from the array");
        img.save(png).with_context(|| format!("png file {}", png.display()))?;
    }
    match plumekit::probmap::correlation_report(&map, &scene) {
        Ok(corr) => println!(
            "probmap: {} detections, positive-support correlation r={:.3} rho={:.3} (n={}) -> {}",
            dets.instances.len(),
            corr.pearson,
            corr.spearman,
            corr.n,
            a.out.display()
        ),
        Err(_) => println!(
            "probmap: {} detections, correlation undefined -> {}",
            dets.instances.len(),
            a.out.display()
        ),
    }
    Ok(())
}

fn cmd_eval(cfg: ToolkitConfig, a: EvalArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let dets = read_detections(&a.pred, &scene)?;
    let truths = truth_masks(&a.truth)?;
    let theta = a.theta.unwrap_or(cfg.eval.theta);
    let m = eval::match_instances(&dets.instances, &truths, theta)?;
    let mut report = eval::instance_metrics(&m);
    report.map = Some(eval::map_at_iou(&dets.instances, &truths, theta)?);
    std::fs::write(&a.report, serde_json::to_string(&report)?)?;
    println!(
        "eval: theta={} TP={} FP={} FN={} precision={:.3} recall={:.3} f1={:.3} mAP={:.3}",
        theta,
        report.tp,
        report.fp,
        report.fn_,
        report.precision,
        report.recall,
        report.f1,
        report.map.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_sweep(cfg: ToolkitConfig, a: SweepArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let dets = read_detections(&a.input, &scene)?;
    let truths = truth_masks(&a.truth)?;
    let values = parse_grid(&a.grid)?;
    let mut base = cfg.postproc;
    if let Some(m) = a.mode {
        base.mode = m;
    }
    let rows = eval::sweep(
        &dets.instances,
        &truths,
        &scene,
        &base,
        cfg.eval.theta,
        a.param,
        &values,
        None,
    )?;
    std::fs::write(&a.out, eval::sweep_csv(&rows))?;
    println!("sweep: {} over {} values -> {}", a.param.name(), values.len(), a.out.display());
    Ok(())
}

fn cmd_pipeline(mut cfg: ToolkitConfig, a: PipelineArgs) -> Result<()> {
    if let Some(seed) = a.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("output directory {}", a.out.display()))?;

    let (scene, truths) = match (&a.scene, &a.truth) {
        (Some(scene_path), truth) => {
            let scene = read_scene(scene_path)?;
            let truths = match truth {
                Some(t) => truth_masks(t)?,
                None => Vec::new(),
            };
            (scene, truths)
        }
        (None, _) => {
            let (scene, labels, _) = generate_scene(&cfg.synth)?;
            save_scene(&scene, a.out.join("scene.sgrid"))?;
            save_labels(&labels, a.out.join("labels.json"))?;
            let truths = labels.into_iter().map(|l| l.mask).collect();
            (scene, truths)
        }
    };

    let raw = run_scene(
        &scene,
        &OracleDetector::new(cfg.oracle_k.k),
        cfg.window.size,
        cfg.window.overlap,
    )?;
    export_detections(&raw, a.out.join("detections.json"))?;

    let (pc, model) = effective_pipeline(
        &cfg,
        a.mode,
        None,
        None,
        None,
        a.size_floor,
        a.qnd_model.as_deref(),
    )?;
    let kept = postproc::run_mode(raw.instances.clone(), &scene, &pc, model.as_ref())?;
    let kept_set = DetectionSet { geometry: raw.geometry, instances: kept };
    export_detections(&kept_set, a.out.join("detections_post.json"))?;

    let map = plumekit::probmap::aggregate(&kept_set);
    save_pgrid(&map.geometry, &map.p, a.out.join("p.pgrid"))?;

    let mut summary = format!(
        "pipeline: mode={} seed={} raw={} kept={}",
        mode_name(pc.mode),
        cfg.seed,
        raw.instances.len(),
        kept_set.instances.len()
    );
    if !truths.is_empty() {
        let m = eval::match_instances(&kept_set.instances, &truths, cfg.eval.theta)?;
        let mut report = eval::instance_metrics(&m);
        report.map = Some(eval::map_at_iou(&kept_set.instances, &truths, cfg.eval.theta)?);
        std::fs::write(a.out.join("report.json"), serde_json::to_string(&report)?)?;

        let rows = eval::sweep(
            &raw.instances,
            &truths,
            &scene,
            &pc,
            cfg.eval.theta,
            SweepParam::Tau,
            &[0.5, 0.6, 0.7, 0.8, 0.9],
            model.as_ref(),
        )?;
        std::fs::write(a.out.join("sweep.csv"), eval::sweep_csv(&rows))?;
        summary.push_str(&format!(
            " TP={} FP={} FN={} f1={:.3}",
            report.tp, report.fp, report.fn_, report.f1
        ));
    }
    println!("{summary} -> {}", a.out.display());
    println!("schema version {SCHEMA_VERSION}");
    Ok(())
}
