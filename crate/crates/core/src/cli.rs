//! Command-line front end: `simulate`, `train`, `render`, `eval`, `dsp`.
//!
//! Every command writes into a fresh output location and removes whatever it
//! created if it fails part way.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{gt_points_path, read_dataset, view_file_name, write_transient_csv, Dataset};
use crate::dsp::{echo_to_histogram, read_wav, synth_chirp, EchoConfig, SPEED_OF_SOUND_AIR};
use crate::error::{Error, Result};
use crate::image::{write_png, Image};
use crate::metrics::{
    cloud_from_gaussians, geometry_score, psnr, read_ply, ssim, EvalReport, ViewScore,
    DEFAULT_F1_THRESHOLD, DEFAULT_OPACITY_FLOOR,
};
use crate::plot::{line_plot, PlotStyle, Series, BLUE, GREEN, RED};
use crate::render::{render_all, Modalities, RangeBins, SonarConfig};
use crate::scene::{read_checkpoint, write_checkpoint, SensorView};
use crate::simulate::{
    build_dataset, default_bins, gen_trajectory, procedural, trace_depth, ProceduralScene, SimConfig,
    TrajectoryKind, TriScene,
};
use crate::train::{train, write_log_csv, LossConfig, MeasurementScale, SonarKind, TrainConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.zspl";
pub const LOG_FILE: &str = "train_log.csv";
pub const LOSS_PLOT_FILE: &str = "loss_curve.png";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const THREADS_ENV: &str = "ZSPLAT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "zsplat", version, about = "Gaussian splatting with camera and sonar fusion")]
pub struct Cli {
    /// JSON run configuration; individual flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice (default 0, or the config's seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ray-trace a scene into a multi-modal dataset.
    Simulate(SimulateArgs),
    /// Fit Gaussians to a dataset.
    Train(TrainArgs),
    /// Render a checkpoint from dataset poses.
    Render(RenderArgs),
    /// Score a checkpoint against a dataset and ground-truth points.
    Eval(EvalArgs),
    /// Turn a recorded chirp echo into a transient histogram.
    Dsp(DspArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Built-in scene (sphere, box, cornell, desk, plates) or an .obj path.
    #[arg(long, default_value = "sphere")]
    pub scene: String,
    /// Arc trajectory extent in degrees.
    #[arg(long, conflicts_with = "line")]
    pub arc: Option<f64>,
    /// Straight-line trajectory extent in meters.
    #[arg(long)]
    pub line: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub views: usize,
    #[arg(long, default_value = "camera,echo")]
    pub modalities: String,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Focal length in pixels.
    #[arg(long, default_value_t = 80.0)]
    pub focal: f64,
    /// Range bins over [0.5x nearest, 1.5x farthest] depth; a config `sonar` block replaces bins, rows and grid.
    #[arg(long, default_value_t = 128)]
    pub bins: usize,
    /// FLS azimuth rows; must divide the image height.
    #[arg(long, default_value_t = 32)]
    pub rows: usize,
    /// Sonar rays per side of the ray grid.
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory; falls back to the config's `dataset`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Sonar weight `w`.
    #[arg(long)]
    pub weight: Option<f64>,
    #[arg(long, value_enum)]
    pub sonar_kind: Option<SonarKindArg>,
    #[arg(long, value_enum)]
    pub scale: Option<ScaleArg>,
    #[arg(long)]
    pub gaussians: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SonarKindArg {
    Echo,
    Fls,
    None,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScaleArg {
    Raw,
    UnitMass,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset whose poses and sonar settings are used.
    #[arg(long)]
    pub data: PathBuf,
    /// Render only this view index.
    #[arg(long)]
    pub view: Option<usize>,
    #[arg(long, default_value = "camera")]
    pub modalities: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Ground-truth PLY; defaults to the one named in the dataset manifest.
    #[arg(long)]
    pub gt_points: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_OPACITY_FLOOR)]
    pub opacity_floor: f64,
    #[arg(long, default_value_t = DEFAULT_F1_THRESHOLD)]
    pub threshold: f64,
    /// JSON report path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DspArgs {
    /// Received echo (WAV).
    #[arg(long)]
    pub input: PathBuf,
    /// Recording of the empty scene (WAV).
    #[arg(long)]
    pub background: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000.0)]
    pub f0: f64,
    #[arg(long, default_value_t = 30_000.0)]
    pub f1: f64,
    /// Chirp duration in seconds.
    #[arg(long, default_value_t = 1e-3)]
    pub duration: f64,
    /// Speed of sound in m/s.
    #[arg(long, default_value_t = SPEED_OF_SOUND_AIR)]
    pub speed_of_sound: f64,
    /// Device latency in seconds.
    #[arg(long, default_value_t = 0.0)]
    pub group_delay: f64,
    #[arg(long, default_value_t = 128)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.0)]
    pub range_min: f64,
    #[arg(long, default_value_t = 5.0)]
    pub range_max: f64,
    /// Transient CSV path; a plot is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

/// JSON run configuration. Every field is optional; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Sonar settings for `simulate`; overrides `--bins`.
    pub sonar: Option<SonarConfig>,
    pub dataset: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Tracks created outputs and deletes them unless [`OutputGuard::commit`] is called.
pub struct OutputGuard {
    created: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn new() -> Self {
        Self {
            created: Vec::new(),
            committed: false,
        }
    }

    /// Creates `dir` if missing and remembers to remove it on failure.
    pub fn dir(&mut self, dir: &Path) -> Result<()> {
        if !dir.exists() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            self.created.push(dir.to_path_buf());
        }
        Ok(())
    }

    /// Remembers a file path that is about to be written.
    pub fn file(&mut self, path: &Path) -> PathBuf {
        self.created.push(path.to_path_buf());
        path.to_path_buf()
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Default for OutputGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in self.created.iter().rev() {
            let _ = if p.is_dir() {
                fs::remove_dir_all(p)
            } else {
                fs::remove_file(p)
            };
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses arguments, configures threads and logging, and runs the command.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    }
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a, &config),
        Command::Train(a) => cmd_train(&a, &config, seed),
        Command::Render(a) => cmd_render(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Dsp(a) => cmd_dsp(&a),
    }
}

fn load_scene(spec: &str) -> Result<ProceduralScene> {
    if spec.ends_with(".obj") {
        let mut scene = TriScene::load_obj(Path::new(spec), [0.7; 3])?;
        scene.build();
        let bounds = scene
            .bounds()
            .ok_or_else(|| Error::Degenerate(format!("{spec} has no geometry")))?;
        let target = bounds.center();
        let radius = 0.5 * bounds.diagonal();
        Ok(ProceduralScene {
            name: "obj",
            scene,
            eye: target - crate::math::Vec3::z() * (3.0 * radius.max(1e-3)),
            target,
            up: crate::math::Vec3::y(),
            light: crate::simulate::Light {
                direction: [0.3, 0.6, -1.0],
            },
            bounds,
        })
    } else {
        procedural(spec)
    }
}

pub fn cmd_simulate(a: &SimulateArgs, config: &RunConfig) -> Result<()> {
    if a.views == 0 {
        return Err(Error::invalid("--views must be at least 1"));
    }
    let modalities = Modalities::parse(&a.modalities)?;
    if modalities.is_empty() {
        return Err(Error::invalid("--modalities selects nothing"));
    }
    let p = load_scene(&a.scene)?;
    let base = SensorView::look_at(p.eye, p.target, p.up, a.width, a.height, a.focal)?;
    let (kind, extent) = match (a.arc, a.line) {
        (Some(d), None) => (TrajectoryKind::Arc, d),
        (None, Some(m)) => (TrajectoryKind::Line, m),
        _ => (TrajectoryKind::Arc, 0.0),
    };
    let trajectory = if a.views == 1 {
        crate::simulate::Trajectory {
            kind,
            extent,
            views: vec![base],
        }
    } else {
        gen_trajectory(kind, extent, a.views, &base, p.target, p.up)?
    };
    let sonar = match config.sonar {
        Some(s) => s,
        None => {
            let depths: Vec<_> = trajectory
                .views
                .iter()
                .map(|v| trace_depth(v, &p.scene))
                .collect::<Result<_>>()?;
            let d = default_bins(&depths)?;
            SonarConfig::new(RangeBins::new(a.bins, d.range_min(), d.range_max())?)
                .with_grid(a.grid, a.grid)
                .with_rows(a.rows)
        }
    };
    sonar.validate()?;
    if modalities.fls && a.height % sonar.rows != 0 {
        return Err(Error::invalid(format!(
            "image height {} is not a multiple of {} FLS rows",
            a.height, sonar.rows
        )));
    }
    let cfg = SimConfig {
        sonar,
        light: p.light,
        modalities,
    };
    let mut guard = OutputGuard::new();
    guard.dir(&a.out)?;
    let dataset = build_dataset(&p.scene, &trajectory, &cfg, p.bounds, &a.out)?;
    guard.commit();
    println!(
        "wrote {} views of '{}' to {} (camera={}, echo={}, fls={}, bins={} over [{:.3}, {:.3}] m)",
        dataset.len(),
        a.scene,
        a.out.display(),
        modalities.camera,
        modalities.echo,
        modalities.fls,
        sonar.bins.len(),
        sonar.bins.range_min(),
        sonar.bins.range_max()
    );
    Ok(())
}

fn train_settings(a: &TrainArgs, config: &RunConfig, seed: u64) -> (LossConfig, TrainConfig) {
    let mut loss = config.loss;
    let mut tc = config.train;
    tc.seed = seed;
    if let Some(n) = a.iterations {
        tc.iterations = n;
    }
    if let Some(n) = a.gaussians {
        tc.init.gaussians = n;
    }
    if let Some(w) = a.weight {
        loss.weight = w;
    }
    if let Some(k) = a.sonar_kind {
        loss.sonar_kind = match k {
            SonarKindArg::Echo => SonarKind::Echo,
            SonarKindArg::Fls => SonarKind::Fls,
            SonarKindArg::None => SonarKind::None,
        };
    }
    if let Some(s) = a.scale {
        loss.measurement_scale = match s {
            ScaleArg::Raw => MeasurementScale::Raw,
            ScaleArg::UnitMass => MeasurementScale::UnitMass,
        };
    }
    (loss, tc)
}

pub fn cmd_train(a: &TrainArgs, config: &RunConfig, seed: u64) -> Result<()> {
    let (loss, tc) = train_settings(a, config, seed);
    let data_dir = a
        .data
        .clone()
        .or_else(|| config.dataset.clone())
        .ok_or_else(|| Error::invalid("no dataset given (--data or config 'dataset')"))?;
    let dataset = read_dataset(&data_dir)?;
    let mut guard = OutputGuard::new();
    guard.dir(&a.out)?;
    let outcome = train(&dataset, &loss, &tc)?;
    write_checkpoint(&guard.file(&a.out.join(CHECKPOINT_FILE)), &outcome.cloud)?;
    write_log_csv(&guard.file(&a.out.join(LOG_FILE)), &outcome.log)?;
    let effective = RunConfig {
        loss,
        train: tc,
        sonar: None,
        dataset: Some(data_dir),
        seed: Some(seed),
    };
    write_json(&guard.file(&a.out.join(RUN_CONFIG_FILE)), &effective)?;
    let curve = |f: fn(&crate::train::LogRow) -> f64| outcome.log.iter().map(f).collect::<Vec<_>>();
    let (total, camera, sonar) = (curve(|r| r.total_loss), curve(|r| r.camera_loss), curve(|r| r.sonar_loss));
    line_plot(
        &guard.file(&a.out.join(LOSS_PLOT_FILE)),
        &[
            Series { values: &total, color: RED },
            Series { values: &camera, color: BLUE },
            Series { values: &sonar, color: GREEN },
        ],
        PlotStyle {
            log_y: true,
            ..PlotStyle::default()
        },
    )?;
    guard.commit();
    let last = outcome.log.last().expect("at least one iteration");
    println!(
        "trained {} iterations: {} gaussians, final loss {:.6} (camera {:.6}, sonar {:.6})",
        tc.iterations,
        outcome.cloud.len(),
        last.total_loss,
        last.camera_loss,
        last.sonar_loss
    );
    Ok(())
}

fn selected_views(dataset: &Dataset, view: Option<usize>) -> Result<Vec<usize>> {
    match view {
        Some(i) if i < dataset.len() => Ok(vec![i]),
        Some(i) => Err(Error::invalid(format!(
            "view {i} out of range (dataset has {})",
            dataset.len()
        ))),
        None => Ok((0..dataset.len()).collect()),
    }
}

pub fn cmd_render(a: &RenderArgs) -> Result<()> {
    let modalities = Modalities::parse(&a.modalities)?;
    let cloud = read_checkpoint(&a.checkpoint)?;
    let dataset = read_dataset(&a.data)?;
    let views = selected_views(&dataset, a.view)?;
    let mut guard = OutputGuard::new();
    guard.dir(&a.out)?;
    for i in views {
        let obs = &dataset.observations[i];
        let bundle = render_all(&cloud, &obs.view, modalities, &dataset.sonar)?;
        if let Some(img) = &bundle.image {
            write_png(&guard.file(&a.out.join(format!("camera_{}", view_file_name(i, "png")))), &Image::from(img))?;
        }
        if let Some(h) = &bundle.echo {
            write_transient_csv(&guard.file(&a.out.join(format!("echo_{}", view_file_name(i, "csv")))), &h.bins, 1, &h.values)?;
            let measured = obs.echo.as_ref().map(|m| m.values.as_slice()).unwrap_or(&[]);
            line_plot(
                &guard.file(&a.out.join(format!("echo_{}", view_file_name(i, "png")))),
                &[
                    Series { values: measured, color: BLUE },
                    Series { values: &h.values, color: RED },
                ],
                PlotStyle::default(),
            )?;
        }
        if let Some(f) = &bundle.fls {
            write_transient_csv(&guard.file(&a.out.join(format!("fls_{}", view_file_name(i, "csv")))), &f.bins, f.rows, &f.values)?;
            let measured = obs.fls.as_ref().map(|m| m.marginal()).unwrap_or_default();
            let rendered = f.marginal();
            line_plot(
                &guard.file(&a.out.join(format!("fls_{}", view_file_name(i, "png")))),
                &[
                    Series { values: &measured, color: BLUE },
                    Series { values: &rendered, color: RED },
                ],
                PlotStyle::default(),
            )?;
        }
    }
    guard.commit();
    Ok(())
}

/// Scores every dataset view with an image, plus geometry when ground truth is available.
pub fn evaluate_checkpoint(
    cloud: &crate::scene::GaussianCloud,
    dataset: &Dataset,
    gt_points: Option<&Path>,
    opacity_floor: f64,
    threshold: f64,
) -> Result<EvalReport> {
    let mut views = Vec::new();
    for (i, obs) in dataset.observations.iter().enumerate() {
        if let Some(img) = &obs.image {
            let r = Image::from(&crate::render::render_camera(cloud, &obs.view));
            views.push(ViewScore {
                view: i,
                psnr: psnr(img, &r)?,
                ssim: ssim(img, &r)?,
            });
        }
    }
    let geometry = match gt_points {
        Some(p) => {
            let truth = read_ply(p)?;
            let pred = cloud_from_gaussians(cloud, opacity_floor);
            if pred.is_empty() {
                return Err(Error::Degenerate(format!(
                    "no gaussian reaches opacity {opacity_floor}; geometry is undefined"
                )));
            }
            Some(geometry_score(&pred, &truth, threshold)?)
        }
        None => None,
    };
    Ok(EvalReport::new(views, geometry))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cloud = read_checkpoint(&a.checkpoint)?;
    let dataset = read_dataset(&a.data)?;
    let gt = match &a.gt_points {
        Some(p) => Some(p.clone()),
        None => gt_points_path(&a.data)?.filter(|p| p.exists()),
    };
    if gt.is_none() {
        log::warn!("no ground-truth points; skipping geometry metrics");
    }
    let report = evaluate_checkpoint(&cloud, &dataset, gt.as_deref(), a.opacity_floor, a.threshold)?;
    let mut guard = OutputGuard::new();
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        guard.dir(parent)?;
    }
    write_json(&guard.file(&a.out), &report)?;
    guard.commit();
    match report.mean_psnr {
        Some(p) => println!("mean PSNR {p:.3} dB over {} views", report.views.len()),
        None => println!("no camera views to score"),
    }
    if let Some(g) = &report.geometry {
        println!("chamfer {:.5}, F1 {:.4} at {} m", g.chamfer, g.f1, g.threshold);
    }
    Ok(())
}

pub fn cmd_dsp(a: &DspArgs) -> Result<()> {
    let rx = read_wav(&a.input)?;
    let bg = match &a.background {
        Some(p) => Some(read_wav(p)?),
        None => {
            log::warn!("no background recording; processing without subtraction");
            None
        }
    };
    let template = synth_chirp(a.f0, a.f1, a.duration, rx.fs)?;
    let cfg = EchoConfig {
        bins: RangeBins::new(a.bins, a.range_min, a.range_max)?,
        speed_of_sound: a.speed_of_sound,
        group_delay: a.group_delay,
    };
    let h = echo_to_histogram(&rx, bg.as_ref(), &template, &cfg)?;
    let mut guard = OutputGuard::new();
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        guard.dir(parent)?;
    }
    write_transient_csv(&guard.file(&a.out), &h.bins, 1, &h.values)?;
    line_plot(
        &guard.file(&a.out.with_extension("png")),
        &[Series { values: &h.values, color: RED }],
        PlotStyle::default(),
    )?;
    guard.commit();
    println!(
        "peak at {:.4} m (bin {} of {})",
        h.bins.center(h.peak()),
        h.peak(),
        h.bins.len()
    );
    Ok(())
}
