//! Synthetic posed scenes with a known plane stack, and a brute-force
//! reference renderer that shares no code with [`crate::mpi`].

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{look_at, sample_inverse_depths, Camera, Intrinsics, RigidTransform};
use crate::image::Image;
use crate::mpi::{MultiplaneImage, CHANNELS};
use crate::scene::{Scene, View};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Planes carrying content; the farthest one is a fully opaque backdrop.
    pub content_planes: usize,
    pub views: usize,
    /// Radius of the training camera circle.
    pub baseline: f64,
    pub z_near: f64,
    pub z_far: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 64,
            height: 64,
            content_planes: 3,
            views: 8,
            baseline: 0.5,
            z_near: 4.0,
            z_far: 10.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.width < 2 || self.height < 2 {
            return bad(format!("synthetic images must be at least 2x2, got {}x{}", self.width, self.height));
        }
        if self.content_planes == 0 {
            return bad("at least one content plane is required".into());
        }
        if self.views < 2 {
            return bad(format!("at least two views are required, got {}", self.views));
        }
        if !(self.baseline.is_finite() && self.baseline >= 0.0) {
            return bad(format!("baseline must be non-negative, got {}", self.baseline));
        }
        if !(self.z_near > 0.0 && self.z_far > self.z_near && self.z_far.is_finite()) {
            return bad(format!("need 0 < z_near < z_far, got {} and {}", self.z_near, self.z_far));
        }
        Ok(())
    }

    /// Slots of the ground-truth depth grid: `max(8, P)` inverse-depth
    /// planes with content spread evenly from nearest to farthest.
    pub fn grid_planes(&self) -> usize {
        self.content_planes.max(8)
    }

    pub fn content_slots(&self) -> Vec<usize> {
        let g = self.grid_planes();
        let p = self.content_planes;
        if p == 1 {
            return vec![g - 1];
        }
        (0..p)
            .map(|k| ((k * (g - 1)) as f64 / (p - 1) as f64).round() as usize)
            .collect()
    }

    /// Held-out views: `⌊3V/8⌋`, at least one.
    pub fn test_count(&self) -> usize {
        (3 * self.views / 8).max(1)
    }

    pub fn reference_camera(&self) -> Camera {
        let f = 1.25 * self.width as f64;
        Camera {
            intrinsics: Intrinsics {
                fx: f,
                fy: f,
                cx: self.width as f64 / 2.0,
                cy: self.height as f64 / 2.0,
                width: self.width,
                height: self.height,
            },
            world_to_camera: RigidTransform::identity(),
            z_near: self.z_near,
            z_far: self.z_far,
        }
    }

    /// All camera poses: the reference, then training views on a circle of
    /// radius `baseline` in van der Corput angle order, then test views on
    /// a circle of radius `0.6 · baseline` offset from the training angles.
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let reference = self.reference_camera();
        let n_test = self.test_count();
        let n_train = self.views - n_test;
        let focus = Vector3::new(0.0, 0.0, 0.5 * (self.z_near + self.z_far));
        let at = |radius: f64, angle: f64| -> Result<Camera> {
            let eye = Vector3::new(radius * angle.cos(), radius * angle.sin(), 0.0);
            Ok(Camera {
                world_to_camera: look_at(eye, focus, Vector3::new(0.0, 1.0, 0.0))?,
                ..reference
            })
        };
        let mut cams = vec![reference];
        for k in 0..n_train.saturating_sub(1) {
            cams.push(at(self.baseline, 2.0 * PI * van_der_corput(k as u64))?);
        }
        for t in 0..n_test {
            cams.push(at(0.6 * self.baseline, 2.0 * PI * (t as f64 + 0.25) / n_test as f64)?);
        }
        Ok(cams)
    }
}

/// Base-2 radical inverse: 0, 1/2, 1/4, 3/4, 1/8, …
pub fn van_der_corput(mut k: u64) -> f64 {
    let mut out = 0.0;
    let mut scale = 0.5;
    while k > 0 {
        if k & 1 == 1 {
            out += scale;
        }
        k >>= 1;
        scale *= 0.5;
    }
    out
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub config: SynthConfig,
    /// Ground-truth planes in the reference frustum.
    pub gt: MultiplaneImage,
    /// Views rendered from `gt` and quantized to 8-bit levels.
    pub scene: Scene,
}

/// Smooth step from 0 at `e0` to 1 at `e1`.
fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Band-limited color texture: a base color, a linear gradient, and either
/// a few plane waves or a soft checkerboard.
struct Texture {
    base: [f64; 3],
    gradient: [[f64; 3]; 2],
    pattern: Pattern,
}

enum Pattern {
    /// `(kx, ky, phase, amplitude)` per wave.
    Waves(Vec<(f64, f64, f64, [f64; 3])>),
    /// `tanh(sharpness · sin(u) · sin(v))` on a rotated grid.
    Checker {
        k: f64,
        cos: f64,
        sin: f64,
        sharpness: f64,
        amplitude: [f64; 3],
    },
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, size: f64) -> Texture {
        let mut rgb = |lo: f64, hi: f64| {
            [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
        };
        let base = rgb(0.3, 0.7);
        let gradient = [rgb(-0.15, 0.15), rgb(-0.15, 0.15)];
        let pattern = if rng.random_bool(0.5) {
            Pattern::Waves(
                (0..3)
                    .map(|_| {
                        let k = 2.0 * PI / (rng.random_range(0.3..0.8) * size);
                        let theta: f64 = rng.random_range(0.0..PI);
                        let phase = rng.random_range(0.0..2.0 * PI);
                        let amp = [
                            rng.random_range(-0.1..0.1),
                            rng.random_range(-0.1..0.1),
                            rng.random_range(-0.1..0.1),
                        ];
                        (k * theta.cos(), k * theta.sin(), phase, amp)
                    })
                    .collect(),
            )
        } else {
            // Squares at least an eighth of the image wide.
            let k = PI / (rng.random_range(0.125..0.3) * size);
            let theta: f64 = rng.random_range(0.0..PI);
            let amplitude = [
                rng.random_range(-0.15..0.15),
                rng.random_range(-0.15..0.15),
                rng.random_range(-0.15..0.15),
            ];
            Pattern::Checker {
                k,
                cos: theta.cos(),
                sin: theta.sin(),
                sharpness: rng.random_range(1.0..2.5),
                amplitude,
            }
        };
        Texture {
            base,
            gradient,
            pattern,
        }
    }

    /// Color at `(x, y)` given in units of the image size.
    fn at(&self, x: f64, y: f64, size: f64) -> [f64; 3] {
        let (nx, ny) = (x / size - 0.5, y / size - 0.5);
        let mut c = [0.0; 3];
        for i in 0..3 {
            c[i] = self.base[i] + self.gradient[0][i] * nx + self.gradient[1][i] * ny;
        }
        match &self.pattern {
            Pattern::Waves(waves) => {
                for &(kx, ky, phase, amp) in waves {
                    let s = (kx * x + ky * y + phase).sin();
                    for i in 0..3 {
                        c[i] += amp[i] * s;
                    }
                }
            }
            Pattern::Checker {
                k,
                cos,
                sin,
                sharpness,
                amplitude,
            } => {
                let (u, v) = (cos * x + sin * y, -sin * x + cos * y);
                let s = (sharpness * (k * u).sin() * (k * v).sin()).tanh();
                for i in 0..3 {
                    c[i] += amplitude[i] * s;
                }
            }
        }
        c.map(|v| v.clamp(0.05, 0.95))
    }
}

/// Soft elliptical occupancy in `[0, 1]`.
struct Blob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Blob {
    fn coverage(&self, x: f64, y: f64, edge: f64) -> f64 {
        let r = (((x - self.cx) / self.rx).powi(2) + ((y - self.cy) / self.ry).powi(2)).sqrt();
        let scale = self.rx.min(self.ry);
        1.0 - smoothstep(1.0 - edge / scale, 1.0, r)
    }
}

/// Random ground-truth plane stack for `config`.
pub fn ground_truth(config: &SynthConfig) -> Result<MultiplaneImage> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let sampling = sample_inverse_depths(config.z_near, config.z_far, config.grid_planes())?;
    let gaps = sampling.gaps();
    let min_gap = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    let sigma_max = 8.0 / min_gap;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let size = w.min(h) as f64;
    let margin = (0.19 * size).max(1.0);
    let edge = (size / 32.0).max(0.75);

    let slots = config.content_slots();
    let far_slot = *slots.last().unwrap();
    let mut planes = vec![0.0f32; sampling.count() * w * h * CHANNELS];
    for &slot in &slots {
        let texture = Texture::random(&mut rng, size);
        let blobs: Vec<Blob> = if slot == far_slot {
            Vec::new()
        } else {
            (0..rng.random_range(1..=2))
                .map(|_| {
                    let rx = rng.random_range(0.12..0.22) * size;
                    let ry = rng.random_range(0.12..0.22) * size;
                    let lo_x = margin + rx;
                    let hi_x = (w as f64 - 1.0 - margin - rx).max(lo_x + 1e-6);
                    let lo_y = margin + ry;
                    let hi_y = (h as f64 - 1.0 - margin - ry).max(lo_y + 1e-6);
                    Blob {
                        cx: rng.random_range(lo_x..hi_x),
                        cy: rng.random_range(lo_y..hi_y),
                        rx,
                        ry,
                    }
                })
                .collect()
        };
        let plane = &mut planes[slot * w * h * CHANNELS..(slot + 1) * w * h * CHANNELS];
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64, y as f64);
                let occupancy = if slot == far_slot {
                    1.0
                } else {
                    blobs.iter().map(|b| b.coverage(fx, fy, edge)).fold(0.0, f64::max)
                };
                let px = &mut plane[(y * w + x) * CHANNELS..(y * w + x + 1) * CHANNELS];
                let c = texture.at(fx, fy, size);
                for i in 0..3 {
                    px[i] = c[i] as f32;
                }
                px[3] = (sigma_max * occupancy) as f32;
            }
        }
    }
    MultiplaneImage::new(config.reference_camera(), sampling, planes)
}

/// Ground truth plus views rendered from it by [`brute_force_render`] and
/// quantized to 8 bits. View 0 is the reference.
pub fn make_scene(config: &SynthConfig) -> Result<SyntheticScene> {
    let gt = ground_truth(config)?;
    let cameras = config.cameras()?;
    let mut views = Vec::with_capacity(cameras.len());
    for (i, camera) in cameras.into_iter().enumerate() {
        let bf = brute_force_render(&gt, &camera);
        let data = bf
            .color
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8 as f32 / 255.0)
            .collect();
        let image = Image::from_vec(bf.width, bf.height, 3, data)?;
        views.push(View {
            name: format!("{i:03}"),
            camera,
            image,
        });
    }
    let n_test = config.test_count();
    let n = views.len();
    let scene = Scene {
        views,
        train: (0..n - n_test).collect(),
        test: (n - n_test..n).collect(),
    };
    Ok(SyntheticScene {
        config: config.clone(),
        gt,
        scene,
    })
}

/// Output of [`brute_force_render`].
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForce {
    pub width: usize,
    pub height: usize,
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
}

/// Renders `mpi` into `target` by casting one world-space ray per pixel and
/// intersecting it with each plane, using only scalar arithmetic.
pub fn brute_force_render(mpi: &MultiplaneImage, target: &Camera) -> BruteForce {
    let reference = mpi.reference();
    let rk = &reference.intrinsics;
    let tk = &target.intrinsics;
    let (sw, sh) = (mpi.width(), mpi.height());
    let (tw, th) = (tk.width, tk.height);
    let depths = mpi.sampling().depths().to_vec();
    let d = depths.len();
    let gaps: Vec<f64> = if d == 1 {
        mpi.sampling().gaps()
    } else {
        (0..d)
            .map(|i| if i + 1 < d { depths[i + 1] - depths[i] } else { depths[d - 1] - depths[d - 2] })
            .collect()
    };

    let m3 = |m: &nalgebra::Matrix3<f64>| -> [[f64; 3]; 3] {
        [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]]
    };
    let v3 = |v: &Vector3<f64>| [v.x, v.y, v.z];
    let (r_t, t_t) = (m3(&target.world_to_camera.rotation), v3(&target.world_to_camera.translation));
    let (r_r, t_r) = (m3(&reference.world_to_camera.rotation), v3(&reference.world_to_camera.translation));
    let mul = |m: &[[f64; 3]; 3], v: [f64; 3]| -> [f64; 3] {
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    };
    let mul_t = |m: &[[f64; 3]; 3], v: [f64; 3]| -> [f64; 3] {
        [
            m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
        ]
    };
    // Target camera center in world coordinates, then in the reference frame.
    let center_w = mul_t(&r_t, [-t_t[0], -t_t[1], -t_t[2]]);
    let rc = mul(&r_r, center_w);
    let origin = [rc[0] + t_r[0], rc[1] + t_r[1], rc[2] + t_r[2]];

    let planes = mpi.planes();
    let fetch = |plane: usize, x: usize, y: usize, c: usize| -> f64 {
        planes[((plane * sh + y) * sw + x) * CHANNELS + c] as f64
    };
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };

    let mut out = BruteForce {
        width: tw,
        height: th,
        color: vec![0.0; tw * th * 3],
        depth: vec![0.0; tw * th],
        opacity: vec![0.0; tw * th],
    };
    for y in 0..th {
        for x in 0..tw {
            let dir_t = [(x as f64 - tk.cx) / tk.fx, (y as f64 - tk.cy) / tk.fy, 1.0];
            let ray_len = (dir_t[0] * dir_t[0] + dir_t[1] * dir_t[1] + 1.0).sqrt();
            let dir = mul(&r_r, mul_t(&r_t, dir_t));
            let mut optical = 0.0f64;
            let mut color = [0.0; 3];
            let mut depth = 0.0;
            let mut opacity = 0.0;
            for i in 0..d {
                if dir[2] == 0.0 {
                    continue;
                }
                let lambda = (depths[i] - origin[2]) / dir[2];
                if !(lambda > 0.0) {
                    continue;
                }
                let px = origin[0] + lambda * dir[0];
                let py = origin[1] + lambda * dir[1];
                let u = snap(rk.fx * px / depths[i] + rk.cx);
                let v = snap(rk.fy * py / depths[i] + rk.cy);
                let (umax, vmax) = ((sw - 1) as f64, (sh - 1) as f64);
                if !(u >= -1e-6 && u <= umax + 1e-6 && v >= -1e-6 && v <= vmax + 1e-6) {
                    continue;
                }
                let (u, v) = (u.max(0.0).min(umax), v.max(0.0).min(vmax));
                let (x0, y0) = (u.floor() as usize, v.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(sw - 1), (y0 + 1).min(sh - 1));
                let (a, b) = (u - x0 as f64, v - y0 as f64);
                let mut s = [0.0; CHANNELS];
                for (c, sc) in s.iter_mut().enumerate() {
                    *sc = (1.0 - a) * (1.0 - b) * fetch(i, x0, y0, c)
                        + a * (1.0 - b) * fetch(i, x1, y0, c)
                        + (1.0 - a) * b * fetch(i, x0, y1, c)
                        + a * b * fetch(i, x1, y1, c);
                }
                let delta = gaps[i] * ray_len;
                let t = (-optical).exp();
                let alpha = 1.0 - (-s[3] * delta).exp();
                for c in 0..3 {
                    color[c] += t * alpha * s[c];
                }
                depth += t * alpha * depths[i];
                opacity += t * alpha;
                optical += s[3] * delta;
            }
            let p = y * tw + x;
            out.color[p * 3..p * 3 + 3].copy_from_slice(&color);
            out.depth[p] = depth;
            out.opacity[p] = opacity;
        }
    }
    out
}
