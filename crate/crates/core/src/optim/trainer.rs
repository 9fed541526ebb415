//! Per-scene optimization loop.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::{sample_inverse_depths, Camera, DepthSampling};
use crate::mpi::{MultiplaneImage, ViewGeometry, CHANNELS};
use crate::scene::Scene;

use super::adam::{Adam, AdamConfig, DEFAULT_LR};
use super::loss::{density_tv, loss, LossWeights, Pyramid, PYRAMID_LEVELS};
use super::render::{backward_render, render_color};
use super::params::{DirectPlanes, ImplicitGenerator, Parameterization, PlaneShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One free parameter per plane sample.
    Direct,
    /// Planes generated by a coordinate network.
    Implicit,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::Implicit => "implicit",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Mode::Direct),
            "implicit" => Ok(Mode::Implicit),
            _ => Err(Error::InvalidArgument(format!(
                "unknown mode `{s}` (expected direct or implicit)"
            ))),
        }
    }
}

/// Starting colors for direct optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Every plane starts with the reference image's colors.
    Reference,
    /// Every plane starts mid-grey.
    Constant,
}

impl Init {
    pub fn as_str(self) -> &'static str {
        match self {
            Init::Reference => "reference",
            Init::Constant => "constant",
        }
    }
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Init {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Init::Reference),
            "constant" => Ok(Init::Constant),
            _ => Err(Error::InvalidArgument(format!(
                "unknown init `{s}` (expected reference or constant)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeConfig {
    pub planes: usize,
    pub iterations: usize,
    pub lr: f64,
    pub mode: Mode,
    pub weights: LossWeights,
    /// Depth-embedding frequencies of the coordinate network.
    pub frequencies: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Scene view whose camera defines the plane frustum; the first
    /// training view when unset.
    pub reference: Option<usize>,
    /// Scale applied to direct pre-activations before the squashing
    /// functions.
    pub gain: f64,
    pub init: Init,
    /// Optical depth of the initial uniform density along the optical axis.
    pub initial_optical_depth: f64,
    pub deterministic: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            planes: 32,
            iterations: 500,
            lr: DEFAULT_LR,
            mode: Mode::Direct,
            weights: LossWeights::default(),
            frequencies: 5,
            hidden: vec![64; 4],
            seed: 0,
            reference: None,
            gain: 10.0,
            init: Init::Reference,
            initial_optical_depth: 3.0,
            deterministic: false,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.planes == 0 {
            return bad("plane count must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("learning rate must be finite and non-negative, got {}", self.lr));
        }
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return bad(format!("gain must be positive, got {}", self.gain));
        }
        if !(self.initial_optical_depth.is_finite() && self.initial_optical_depth > 0.0) {
            return bad(format!(
                "initial optical depth must be positive, got {}",
                self.initial_optical_depth
            ));
        }
        if self.mode == Mode::Implicit && self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }
}

/// Training-view averages for one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub total_loss: f64,
    pub l1: f64,
    pub ssim_loss: f64,
    pub tv: f64,
    pub wall_ms: f64,
}

pub const LOSS_CSV_HEADER: &str = "iteration,total_loss,l1,ssim_loss,tv,wall_ms";

impl IterationLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.iteration, self.total_loss, self.l1, self.ssim_loss, self.tv, self.wall_ms
        )
    }
}

pub fn write_loss_csv(path: &Path, log: &[IterationLog]) -> Result<()> {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for row in log {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub struct OptimizeResult {
    pub mpi: MultiplaneImage,
    pub params: Parameterization,
    pub log: Vec<IterationLog>,
}

/// Planes of the reference frustum for `config`.
pub fn plane_sampling(reference: &Camera, planes: usize) -> Result<DepthSampling> {
    sample_inverse_depths(reference.z_near, reference.z_far, planes)
}

/// Uniform density giving `optical_depth` along the reference optical axis.
pub fn initial_density(sampling: &DepthSampling, optical_depth: f64) -> f64 {
    let span: f64 = sampling.gaps().iter().sum();
    optical_depth / span
}

fn initial_parameters(
    scene: &Scene,
    reference: usize,
    config: &OptimizeConfig,
    shape: PlaneShape,
    sigma0: f64,
) -> Result<Parameterization> {
    Ok(match config.mode {
        Mode::Direct => {
            let reference = &scene.views[reference].image;
            let mut planes = vec![0.0; shape.len()];
            for (s, px) in planes.chunks_exact_mut(CHANNELS).enumerate() {
                let p = s % (shape.width * shape.height);
                for c in 0..3 {
                    px[c] = match config.init {
                        Init::Reference => reference.data[p * 3 + c] as f64,
                        Init::Constant => 0.5,
                    };
                }
                px[3] = sigma0;
            }
            Parameterization::Direct(DirectPlanes::from_decoded(shape, config.gain, &planes)?)
        }
        Mode::Implicit => Parameterization::Implicit(ImplicitGenerator::random(
            shape,
            config.frequencies,
            &config.hidden,
            sigma0,
            config.seed,
        )),
    })
}

/// Loss of one training view and its gradient with respect to the raw
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewObjective {
    /// Photometric loss plus the weighted TV penalty.
    pub total: f64,
    pub l1: f64,
    pub ssim_loss: f64,
    /// Unweighted TV penalty (0 when disabled).
    pub tv: f64,
    pub grad: Vec<f64>,
}

/// `loss(render(decode(params)))` for one view, with `tv` adding the
/// density total-variation penalty.
pub fn view_objective(
    params: &Parameterization,
    geom: &ViewGeometry,
    target: &Pyramid,
    weights: &LossWeights,
    tv: bool,
    deterministic: bool,
) -> Result<ViewObjective> {
    let shape = params.shape();
    let planes = params.decode();
    let rendered = render_color(geom, &planes);
    let levels = target.levels.len();
    let value = loss(&Pyramid::build(rendered, levels), target, weights)?;
    let mut total = value.total;
    let grad_color = value.grad.collapse();
    let mut plane_grad = backward_render(geom, &planes, &grad_color);
    let mut tv_value = 0.0;
    if tv {
        let (v, g) = density_tv(&planes, shape.planes, shape.width, shape.height);
        tv_value = v;
        total += weights.tv * v;
        for (pg, gv) in plane_grad.iter_mut().zip(&g) {
            *pg += weights.tv * gv;
        }
    }
    Ok(ViewObjective {
        total,
        l1: value.l1,
        ssim_loss: value.ssim_loss,
        tv: tv_value,
        grad: params.backward(&plane_grad, deterministic),
    })
}

/// Fits the plane stack to the scene's training views. `on_iteration` is
/// called after every pass over the training views.
pub fn optimize_scene(
    scene: &Scene,
    config: &OptimizeConfig,
    mut on_iteration: impl FnMut(&IterationLog),
) -> Result<OptimizeResult> {
    config.validate()?;
    scene.validate()?;
    if scene.train.is_empty() {
        return Err(Error::InvalidArgument("the scene has no training views".into()));
    }
    let reference_index = config.reference.unwrap_or(scene.train[0]);
    let reference = scene
        .views
        .get(reference_index)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "reference view {reference_index} out of range ({} views)",
                scene.views.len()
            ))
        })?
        .camera;
    let sampling = plane_sampling(&reference, config.planes)?;
    let shape = PlaneShape {
        planes: config.planes,
        width: reference.width(),
        height: reference.height(),
    };
    let sigma0 = initial_density(&sampling, config.initial_optical_depth);

    struct Target {
        geom: ViewGeometry,
        pyramid: Pyramid,
    }
    let targets = scene
        .train
        .iter()
        .map(|&i| {
            let v = &scene.views[i];
            Ok(Target {
                geom: ViewGeometry::new(&reference, &sampling, &v.camera)?,
                pyramid: Pyramid::build(v.image.to_f64(), PYRAMID_LEVELS),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut params = initial_parameters(scene, reference_index, config, shape, sigma0)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        params.params().len(),
    );
    let use_tv = config.mode == Mode::Direct && config.weights.tv > 0.0;
    let mut log = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let start = Instant::now();
        let mut sums = [0.0; 4];
        for t in &targets {
            let obj = view_objective(&params, &t.geom, &t.pyramid, &config.weights, use_tv, config.deterministic)?;
            if !obj.total.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    loss: obj.total,
                });
            }
            adam.step(params.params_mut(), &obj.grad)?;
            sums[0] += obj.total;
            sums[1] += obj.l1;
            sums[2] += obj.ssim_loss;
            sums[3] += obj.tv;
        }
        let n = targets.len() as f64;
        let entry = IterationLog {
            iteration,
            total_loss: sums[0] / n,
            l1: sums[1] / n,
            ssim_loss: sums[2] / n,
            tv: sums[3] / n,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        on_iteration(&entry);
        log.push(entry);
    }

    let planes: Vec<f32> = params.decode().iter().map(|&v| v as f32).collect();
    let mpi = MultiplaneImage::new(reference, sampling, planes)?;
    Ok(OptimizeResult { mpi, params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, RigidTransform};
    use crate::image::Image;
    use crate::scene::View;
    use nalgebra::Vector3;

    fn tiny_scene() -> Scene {
        let k = Intrinsics::new(10.0, 10.0, 4.0, 4.0, 8, 8).unwrap();
        let views = (0..2)
            .map(|i| {
                let pose = RigidTransform::new(
                    nalgebra::Matrix3::identity(),
                    Vector3::new(0.1 * i as f64, 0.0, 0.0),
                    1e-9,
                )
                .unwrap();
                let mut image = Image::new(8, 8, 3);
                for (j, v) in image.data.iter_mut().enumerate() {
                    *v = ((j * 7 + i) % 11) as f32 / 10.0;
                }
                View {
                    name: format!("{i:03}"),
                    camera: Camera::new(k, pose, 2.0, 6.0).unwrap(),
                    image,
                }
            })
            .collect();
        Scene::all_train(views)
    }

    fn config(mode: Mode) -> OptimizeConfig {
        OptimizeConfig {
            planes: 3,
            iterations: 3,
            mode,
            hidden: vec![8, 8],
            frequencies: 2,
            ..OptimizeConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let scene = tiny_scene();
        for mode in [Mode::Direct, Mode::Implicit] {
            let cfg = OptimizeConfig { lr: 0.0, ..config(mode) };
            let shape = PlaneShape { planes: 3, width: 8, height: 8 };
            let sampling = plane_sampling(&scene.views[0].camera, 3).unwrap();
            let before =
                initial_parameters(&scene, 0, &cfg, shape, initial_density(&sampling, cfg.initial_optical_depth))
                    .unwrap();
            let after = optimize_scene(&scene, &cfg, |_| {}).unwrap();
            assert_eq!(before.params(), after.params.params(), "{mode}");
        }
    }

    #[test]
    fn loss_decreases_and_logs_every_iteration() {
        let scene = tiny_scene();
        let cfg = OptimizeConfig {
            iterations: 40,
            lr: 0.02,
            ..config(Mode::Direct)
        };
        let mut seen = 0;
        let out = optimize_scene(&scene, &cfg, |_| seen += 1).unwrap();
        assert_eq!(seen, 40);
        assert_eq!(out.log.len(), 40);
        assert!(out.log[39].total_loss < out.log[0].total_loss);
        assert_eq!(out.mpi.plane_count(), 3);
    }

    #[test]
    fn rejects_scene_without_training_views() {
        let mut scene = tiny_scene();
        scene.test = scene.train.clone();
        scene.train.clear();
        let err = optimize_scene(&scene, &config(Mode::Direct), |_| {}).err().unwrap();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn parses_modes() {
        assert_eq!("implicit".parse::<Mode>().unwrap(), Mode::Implicit);
        assert!("mlp".parse::<Mode>().is_err());
        assert_eq!("constant".parse::<Init>().unwrap(), Init::Constant);
    }

    #[test]
    fn csv_row_matches_header_width() {
        let row = IterationLog {
            iteration: 2,
            total_loss: 0.5,
            l1: 0.1,
            ssim_loss: 0.2,
            tv: 0.0,
            wall_ms: 1.25,
        };
        assert_eq!(
            row.csv_row().split(',').count(),
            LOSS_CSV_HEADER.split(',').count()
        );
    }
}
