//! Command-line front end.
//!
//! Every setting can come from a flag, from a `key = value` config file
//! (`--config`), or from its default, in that order of precedence. Each run
//! writes the merged settings to `<out>/manifest.txt`; passing that file back
//! through `--config` replays the run.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::geometry::Camera;
use crate::image::Image;
use crate::metrics::evaluate;
use crate::mpi::{render_novel_view, MultiplaneImage, RenderOutput};
use crate::optim::loss::LossWeights;
use crate::optim::trainer::write_loss_csv;
use crate::optim::{optimize_scene, Init, Mode, OptimizeConfig};
use crate::scene::Split;
use crate::scene_io::{load_mpi, load_scene, parse_camera_file, read_camera, save_mpi, write_gray16, write_image, write_scene};
use crate::synth::{make_scene, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config values or input paths.
    Usage(String),
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(message: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(message.into()))
}

#[derive(Debug, Parser)]
#[command(name = "mpi-engine", version, about = "Multiplane-image reconstruction and novel view rendering")]
pub struct Cli {
    /// `key = value` settings file; flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Fixed-order reductions so reruns are bit-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with a known plane stack.
    Synth(SynthArgs),
    /// Fit a plane stack to a scene's training views.
    Optimize(OptimizeArgs),
    /// Render a novel view from a plane stack.
    Render(RenderArgs),
    /// Render one frame per camera in a path file.
    RenderPath(RenderPathArgs),
    /// Render only the depth map of a novel view.
    Depth(DepthArgs),
    /// Score a plane stack on a scene's train and test views.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene directory to create.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Planes carrying content (the farthest is an opaque backdrop).
    #[arg(long)]
    pub content_planes: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub baseline: Option<f64>,
    #[arg(long)]
    pub z_near: Option<f64>,
    #[arg(long)]
    pub z_far: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of planes D.
    #[arg(long)]
    pub planes: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// `direct` or `implicit`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub beta_l1: Option<f64>,
    #[arg(long)]
    pub beta_ssim: Option<f64>,
    /// Perceptual loss weight; only 0 is supported.
    #[arg(long)]
    pub beta_lpips: Option<f64>,
    /// Density total-variation weight (direct mode).
    #[arg(long)]
    pub tv: Option<f64>,
    /// Depth-embedding frequencies L.
    #[arg(long)]
    pub frequencies: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reference view index (default: first training view).
    #[arg(long)]
    pub reference: Option<usize>,
    /// Pre-activation gain in direct mode.
    #[arg(long)]
    pub gain: Option<f64>,
    /// `reference` or `constant` initial colors in direct mode.
    #[arg(long)]
    pub init: Option<String>,
    /// Optical depth of the initial uniform density.
    #[arg(long)]
    pub initial_optical_depth: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub mpi: Option<PathBuf>,
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a 16-bit depth PNG.
    #[arg(long)]
    pub depth: bool,
}

#[derive(Debug, Args)]
pub struct RenderPathArgs {
    #[arg(long)]
    pub mpi: Option<PathBuf>,
    /// File with one camera block per frame, each starting with `extrinsic`.
    #[arg(long)]
    pub path: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub depth: bool,
}

#[derive(Debug, Args)]
pub struct DepthArgs {
    #[arg(long)]
    pub mpi: Option<PathBuf>,
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub mpi: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Settings keys accepted by each command, with defaults where they exist.
fn defaults(command: &str) -> Vec<(&'static str, Option<String>)> {
    let d = |v: &str| Some(v.to_string());
    let common = [("threads", None), ("deterministic", d("false"))];
    let specific: Vec<(&'static str, Option<String>)> = match command {
        "synth" => {
            let c = SynthConfig::default();
            vec![
                ("out", None),
                ("seed", d(&c.seed.to_string())),
                ("width", d(&c.width.to_string())),
                ("height", d(&c.height.to_string())),
                ("content-planes", d(&c.content_planes.to_string())),
                ("views", d(&c.views.to_string())),
                ("baseline", d(&c.baseline.to_string())),
                ("z-near", d(&c.z_near.to_string())),
                ("z-far", d(&c.z_far.to_string())),
            ]
        }
        "optimize" => {
            let c = OptimizeConfig::default();
            let w = LossWeights::default();
            let hidden: Vec<String> = c.hidden.iter().map(|h| h.to_string()).collect();
            vec![
                ("scene", None),
                ("out", None),
                ("planes", d(&c.planes.to_string())),
                ("iters", d(&c.iterations.to_string())),
                ("lr", d(&c.lr.to_string())),
                ("mode", d(c.mode.as_str())),
                ("beta-l1", d(&w.beta_l1.to_string())),
                ("beta-ssim", d(&w.beta_ssim.to_string())),
                ("beta-lpips", d(&w.beta_lpips.to_string())),
                ("tv", d(&w.tv.to_string())),
                ("frequencies", d(&c.frequencies.to_string())),
                ("hidden", d(&hidden.join(","))),
                ("seed", d(&c.seed.to_string())),
                ("reference", None),
                ("gain", d(&c.gain.to_string())),
                ("init", d(c.init.as_str())),
                ("initial-optical-depth", d(&c.initial_optical_depth.to_string())),
            ]
        }
        "render" | "render-path" => vec![
            ("mpi", None),
            (if command == "render" { "camera" } else { "path" }, None),
            ("out", None),
            ("depth", d("false")),
        ],
        "depth" => vec![("mpi", None), ("camera", None), ("out", None)],
        "eval" => vec![("scene", None), ("mpi", None), ("out", None)],
        _ => unreachable!("unknown command {command}"),
    };
    common.into_iter().chain(specific).collect()
}

/// Merged settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub command: String,
    pub values: BTreeMap<String, String>,
    known: Vec<&'static str>,
}

impl Settings {
    fn new(command: &str) -> Settings {
        let table = defaults(command);
        Settings {
            command: command.to_string(),
            values: table
                .iter()
                .filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v)))
                .collect(),
            known: table.iter().map(|(k, _)| *k).collect(),
        }
    }

    fn set(&mut self, key: &str, value: String) -> CliResult<()> {
        let key = key.trim().replace('_', "-");
        let Some(&k) = self.known.iter().find(|k| **k == key) else {
            return usage(format!("`{key}` is not a setting of `{}`", self.command));
        };
        self.values.insert(k.to_string(), value);
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are
    /// skipped; a `command` entry must name this command.
    fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path)
            .or_else(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return usage(format!("{}:{}: expected `key = value`", path.display(), i + 1));
            };
            let (k, v) = (k.trim(), v.trim());
            if k == "command" {
                if v != self.command {
                    return usage(format!(
                        "{}:{}: config is for `{v}`, not `{}`",
                        path.display(),
                        i + 1,
                        self.command
                    ));
                }
                continue;
            }
            self.set(k, v.to_string())
                .map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(())
    }

    fn flag<T: ToString>(&mut self, key: &str, value: &Option<T>) -> CliResult<()> {
        match value {
            Some(v) => self.set(key, v.to_string()),
            None => Ok(()),
        }
    }

    fn switch(&mut self, key: &str, on: bool) -> CliResult<()> {
        if on {
            self.set(key, "true".into())
        } else {
            Ok(())
        }
    }

    fn path_flag(&mut self, key: &str, value: &Option<PathBuf>) -> CliResult<()> {
        self.flag(key, &value.as_ref().map(|p| p.display().to_string()))
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn get<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: fmt::Display,
    {
        let Some(v) = self.raw(key) else {
            return usage(format!("`{}` requires --{key}", self.command));
        };
        v.parse()
            .or_else(|e| usage(format!("invalid value `{v}` for {key}: {e}")))
    }

    fn get_opt<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    fn path(&self, key: &str) -> CliResult<PathBuf> {
        self.get::<String>(key).map(PathBuf::from)
    }

    pub fn manifest(&self) -> String {
        let mut out = format!("# mpi-engine run manifest\ncommand = {}\n", self.command);
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// Resolves flags and config file into settings for the chosen command.
pub fn settings(cli: &Cli) -> CliResult<Settings> {
    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Optimize(_) => "optimize",
        Command::Render(_) => "render",
        Command::RenderPath(_) => "render-path",
        Command::Depth(_) => "depth",
        Command::Eval(_) => "eval",
    };
    let mut s = Settings::new(name);
    if let Some(path) = &cli.config {
        s.apply_file(path)?;
    }
    s.flag("threads", &cli.threads)?;
    s.switch("deterministic", cli.deterministic)?;
    match &cli.command {
        Command::Synth(a) => {
            s.path_flag("out", &a.out)?;
            s.flag("seed", &a.seed)?;
            s.flag("width", &a.width)?;
            s.flag("height", &a.height)?;
            s.flag("content-planes", &a.content_planes)?;
            s.flag("views", &a.views)?;
            s.flag("baseline", &a.baseline)?;
            s.flag("z-near", &a.z_near)?;
            s.flag("z-far", &a.z_far)?;
        }
        Command::Optimize(a) => {
            s.path_flag("scene", &a.scene)?;
            s.path_flag("out", &a.out)?;
            s.flag("planes", &a.planes)?;
            s.flag("iters", &a.iters)?;
            s.flag("lr", &a.lr)?;
            s.flag("mode", &a.mode)?;
            s.flag("beta-l1", &a.beta_l1)?;
            s.flag("beta-ssim", &a.beta_ssim)?;
            s.flag("beta-lpips", &a.beta_lpips)?;
            s.flag("tv", &a.tv)?;
            s.flag("frequencies", &a.frequencies)?;
            s.flag("hidden", &a.hidden)?;
            s.flag("seed", &a.seed)?;
            s.flag("reference", &a.reference)?;
            s.flag("gain", &a.gain)?;
            s.flag("init", &a.init)?;
            s.flag("initial-optical-depth", &a.initial_optical_depth)?;
        }
        Command::Render(a) => {
            s.path_flag("mpi", &a.mpi)?;
            s.path_flag("camera", &a.camera)?;
            s.path_flag("out", &a.out)?;
            s.switch("depth", a.depth)?;
        }
        Command::RenderPath(a) => {
            s.path_flag("mpi", &a.mpi)?;
            s.path_flag("path", &a.path)?;
            s.path_flag("out", &a.out)?;
            s.switch("depth", a.depth)?;
        }
        Command::Depth(a) => {
            s.path_flag("mpi", &a.mpi)?;
            s.path_flag("camera", &a.camera)?;
            s.path_flag("out", &a.out)?;
        }
        Command::Eval(a) => {
            s.path_flag("scene", &a.scene)?;
            s.path_flag("mpi", &a.mpi)?;
            s.path_flag("out", &a.out)?;
        }
    }
    Ok(s)
}

pub fn optimize_config(s: &Settings) -> CliResult<OptimizeConfig> {
    let hidden = s
        .get::<String>("hidden")?
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .or_else(|e| usage(format!("invalid hidden layer list: {e}")))?;
    let weights = LossWeights {
        beta_l1: s.get("beta-l1")?,
        beta_ssim: s.get("beta-ssim")?,
        beta_lpips: s.get("beta-lpips")?,
        tv: s.get("tv")?,
        ..LossWeights::default()
    };
    let config = OptimizeConfig {
        planes: s.get("planes")?,
        iterations: s.get("iters")?,
        lr: s.get("lr")?,
        mode: s.get::<Mode>("mode")?,
        weights,
        frequencies: s.get("frequencies")?,
        hidden,
        seed: s.get("seed")?,
        reference: s.get_opt("reference")?,
        gain: s.get("gain")?,
        init: s.get::<Init>("init")?,
        initial_optical_depth: s.get("initial-optical-depth")?,
        deterministic: s.get("deterministic")?,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

pub fn synth_config(s: &Settings) -> CliResult<SynthConfig> {
    let config = SynthConfig {
        width: s.get("width")?,
        height: s.get("height")?,
        content_planes: s.get("content-planes")?,
        views: s.get("views")?,
        baseline: s.get("baseline")?,
        z_near: s.get("z-near")?,
        z_far: s.get("z-far")?,
        seed: s.get("seed")?,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

/// Creates `dir` and returns `dir/name`, refusing to replace an existing
/// file unless `force` is set.
fn artifact(dir: &Path, name: &str, force: bool) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(name);
    if p.exists() && !force {
        return usage(format!("{} already exists (pass --force to overwrite)", p.display()));
    }
    Ok(p)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Runtime(Error::io(path, e)))
}

fn existing(path: PathBuf, what: &str) -> CliResult<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        usage(format!("{what} {} does not exist", path.display()))
    }
}

fn load_mpi_arg(s: &Settings) -> CliResult<MultiplaneImage> {
    Ok(load_mpi(&existing(s.path("mpi")?, "MPI file")?)?)
}

fn read_camera_arg(s: &Settings) -> CliResult<Camera> {
    Ok(read_camera(&existing(s.path("camera")?, "camera file")?)?)
}

/// Camera blocks in a path file, each starting with `extrinsic`.
pub fn parse_camera_path(text: &str, path: &Path) -> crate::Result<Vec<Camera>> {
    let mut blocks: Vec<(usize, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.split_whitespace().next() == Some("extrinsic") || blocks.is_empty() {
            blocks.push((i, String::new()));
        }
        let block = &mut blocks.last_mut().unwrap().1;
        block.push_str(line);
        block.push('\n');
    }
    blocks
        .iter()
        .filter(|(_, b)| !b.trim().is_empty())
        .map(|(offset, b)| {
            parse_camera_file(b, path).map(|c| c.camera).map_err(|e| match e {
                Error::CameraParse { path, line, message } => Error::CameraParse {
                    path,
                    line: line + offset,
                    message,
                },
                other => other,
            })
        })
        .collect()
}

fn write_depth(dir: &Path, name: &str, out: &RenderOutput, mpi: &MultiplaneImage, force: bool) -> CliResult<()> {
    let (lo, hi) = (mpi.reference().z_near, mpi.reference().z_far);
    write_gray16(&artifact(dir, &format!("{name}.png"), force)?, &out.depth, lo, hi)?;
    let sidecar = format!(
        "# 16-bit depth: value = round((z - z_near) / (z_far - z_near) * 65535)\n\
         z_near = {lo:?}\nz_far = {hi:?}\nscale = 65535\n"
    );
    write_text(&artifact(dir, &format!("{name}.txt"), force)?, &sidecar)
}

fn check_output_size(out: &Image<f32>) -> CliResult<()> {
    if out.width == 0 || out.height == 0 {
        return usage("camera describes an empty image");
    }
    Ok(())
}

fn cmd_synth(s: &Settings, force: bool) -> CliResult<()> {
    let config = synth_config(s)?;
    let out = s.path("out")?;
    if out.join("images").exists() && !force {
        return usage(format!("{} already holds a scene (pass --force to overwrite)", out.display()));
    }
    let synth = make_scene(&config)?;
    write_scene(&out, &synth.scene)?;
    save_mpi(&synth.gt, &artifact(&out, "gt.impi", true)?)?;
    write_text(&artifact(&out, MANIFEST, true)?, &s.manifest())?;
    println!(
        "wrote {} views ({} train, {} test) and gt.impi to {}",
        synth.scene.views.len(),
        synth.scene.train.len(),
        synth.scene.test.len(),
        out.display()
    );
    Ok(())
}

fn cmd_optimize(s: &Settings, force: bool) -> CliResult<()> {
    let config = optimize_config(s)?;
    let scene_dir = existing(s.path("scene")?, "scene directory")?;
    let out = s.path("out")?;
    let mpi_path = artifact(&out, "mpi.impi", force)?;
    let loss_path = artifact(&out, "loss.csv", force)?;
    let manifest_path = artifact(&out, MANIFEST, force)?;
    let scene = load_scene(&scene_dir)?;
    if let Some(r) = config.reference {
        if r >= scene.views.len() {
            return usage(format!("reference view {r} out of range ({} views)", scene.views.len()));
        }
    }
    let every = (config.iterations / 10).max(1);
    let result = optimize_scene(&scene, &config, |log| {
        if log.iteration % every == 0 || log.iteration + 1 == config.iterations {
            eprintln!(
                "iteration {:>5}  loss {:.6}  l1 {:.6}  1-ssim {:.6}  ({:.1} ms)",
                log.iteration, log.total_loss, log.l1, log.ssim_loss, log.wall_ms
            );
        }
    })?;
    save_mpi(&result.mpi, &mpi_path)?;
    write_loss_csv(&loss_path, &result.log)?;
    write_text(&manifest_path, &s.manifest())?;
    println!("wrote {}", mpi_path.display());
    Ok(())
}

fn cmd_render(s: &Settings, force: bool, color: bool, depth: bool) -> CliResult<()> {
    let mpi = load_mpi_arg(s)?;
    let camera = read_camera_arg(s)?;
    let out_dir = s.path("out")?;
    let out = render_novel_view(&mpi, &camera)?;
    check_output_size(&out.color)?;
    if color {
        write_image(&artifact(&out_dir, "color.png", force)?, &out.color)?;
    }
    if depth {
        write_depth(&out_dir, "depth", &out, &mpi, force)?;
    }
    write_text(&artifact(&out_dir, MANIFEST, true)?, &s.manifest())?;
    println!("rendered {}x{} view to {}", camera.width(), camera.height(), out_dir.display());
    Ok(())
}

fn cmd_render_path(s: &Settings, force: bool) -> CliResult<()> {
    let mpi = load_mpi_arg(s)?;
    let path = existing(s.path("path")?, "camera path file")?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let cameras = parse_camera_path(&text, &path)?;
    if cameras.is_empty() {
        return usage(format!("{} contains no cameras", path.display()));
    }
    let depth: bool = s.get("depth")?;
    let out_dir = s.path("out")?;
    let digits = (cameras.len() - 1).to_string().len().max(3);
    for (i, camera) in cameras.iter().enumerate() {
        let out = render_novel_view(&mpi, camera)?;
        check_output_size(&out.color)?;
        write_image(&artifact(&out_dir, &format!("frame_{i:0digits$}.png"), force)?, &out.color)?;
        if depth {
            write_depth(&out_dir, &format!("depth_{i:0digits$}"), &out, &mpi, force)?;
        }
    }
    write_text(&artifact(&out_dir, MANIFEST, true)?, &s.manifest())?;
    println!("rendered {} frames to {}", cameras.len(), out_dir.display());
    Ok(())
}

fn cmd_eval(s: &Settings, force: bool) -> CliResult<()> {
    let scene_dir = existing(s.path("scene")?, "scene directory")?;
    let mpi = load_mpi_arg(s)?;
    let out = s.path("out")?;
    let csv = artifact(&out, "eval.csv", force)?;
    let scene = load_scene(&scene_dir)?;
    let report = evaluate(&mpi, &scene)?;
    report.write_csv(&csv)?;
    write_text(&artifact(&out, MANIFEST, true)?, &s.manifest())?;
    for split in [Split::Train, Split::Test] {
        match report.mean(split) {
            Some(m) => println!("{split}: PSNR {:.2} dB  SSIM {:.4}  ({} views)", m.psnr_db, m.ssim, m.count),
            None => println!("{split}: no views"),
        }
    }
    Ok(())
}

fn configure_threads(s: &Settings) -> CliResult<()> {
    if let Some(n) = s.get_opt::<usize>("threads")? {
        if n == 0 {
            return usage("--threads must be at least 1");
        }
        // Fails only if a pool already exists, as when run twice in-process.
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("warning: thread pool already initialized; --threads ignored");
        }
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let s = settings(cli)?;
    configure_threads(&s)?;
    let force = cli.force;
    match &cli.command {
        Command::Synth(_) => cmd_synth(&s, force),
        Command::Optimize(_) => cmd_optimize(&s, force),
        Command::Render(_) => cmd_render(&s, force, true, s.get("depth")?),
        Command::RenderPath(_) => cmd_render_path(&s, force),
        Command::Depth(_) => cmd_render(&s, force, false, true),
        Command::Eval(_) => cmd_eval(&s, force),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("mpi-engine").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn defaults_follow_the_paper() {
        let s = settings(&parse(&["optimize", "--scene", "s", "--out", "o"])).unwrap();
        let c = optimize_config(&s).unwrap();
        assert_eq!((c.planes, c.iterations, c.lr), (32, 500, 1e-3));
        assert_eq!(c.reference, None);
        assert_eq!(c.mode, Mode::Direct);
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "# sweep\nplanes = 8\niters=20\nmode = implicit\n").unwrap();
        let s = settings(&parse(&[
            "optimize",
            "--config",
            cfg.to_str().unwrap(),
            "--iters",
            "7",
            "--scene",
            "s",
            "--out",
            "o",
        ]))
        .unwrap();
        let c = optimize_config(&s).unwrap();
        assert_eq!((c.planes, c.iterations, c.mode), (8, 7, Mode::Implicit));
        assert_eq!(c.lr, 1e-3);
    }

    #[test]
    fn manifest_replays_to_the_same_settings() {
        let dir = tempfile::tempdir().unwrap();
        let s = settings(&parse(&["optimize", "--scene", "s", "--out", "o", "--planes", "4", "--deterministic"])).unwrap();
        let m = dir.path().join(MANIFEST);
        fs::write(&m, s.manifest()).unwrap();
        let replay = settings(&parse(&["optimize", "--config", m.to_str().unwrap()])).unwrap();
        assert_eq!(replay.values, s.values);
    }

    #[test]
    fn config_errors_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.cfg");
        fs::write(&cfg, "planes = 8\nwidth = 3\n").unwrap();
        let err = settings(&parse(&["optimize", "--config", cfg.to_str().unwrap()])).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
        assert!(err.to_string().contains(":2:"), "{err}");
        fs::write(&cfg, "command = synth\n").unwrap();
        assert!(settings(&parse(&["optimize", "--config", cfg.to_str().unwrap()])).is_err());
        let s = settings(&parse(&["optimize", "--planes", "0", "--scene", "s", "--out", "o"])).unwrap();
        assert_eq!(optimize_config(&s).unwrap_err().exit_code(), EXIT_USAGE);
        let s = settings(&parse(&["optimize", "--mode", "cnn"])).unwrap();
        assert_eq!(optimize_config(&s).unwrap_err().exit_code(), EXIT_USAGE);
    }

    #[test]
    fn camera_path_splits_blocks_and_offsets_lines() {
        let cam = "extrinsic\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\nintrinsic\n8 0 4\n0 8 4\n0 0 1\ndepth_range\n1 5\n";
        let two = format!("{cam}{cam}");
        assert_eq!(parse_camera_path(&two, Path::new("p")).unwrap().len(), 2);
        let broken = format!("{cam}{}", cam.replace("1 5", "5 1"));
        match parse_camera_path(&broken, Path::new("p")).unwrap_err() {
            Error::CameraParse { line, .. } => assert_eq!(line, 21),
            other => panic!("{other}"),
        }
    }
}
