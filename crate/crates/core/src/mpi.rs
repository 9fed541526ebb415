//! Multiplane images: storage, backward warping into a target frustum and
//! front-to-back compositing of color and depth.
//!
//! Each plane holds `(r, g, b, σ)` samples where `σ` is a density per unit
//! length. A target pixel sees plane `i` with opacity `1 - exp(-σ_i δ_i)`,
//! `δ_i` being the distance to the next plane along the target ray.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{plane_homography, relative_transform, Camera, DepthSampling, Intrinsics};
use crate::image::{Image, RgbImage};

pub const CHANNELS: usize = 4;

/// Warped coordinates closer than this to the pixel grid are snapped onto it.
pub const GRID_SNAP: f64 = 1e-9;
/// Slack on the image bounds test, in pixels.
pub const BOUNDS_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplaneImage {
    width: usize,
    height: usize,
    sampling: DepthSampling,
    planes: Vec<f32>,
    reference: Camera,
}

impl MultiplaneImage {
    /// Wraps plane data laid out as `[plane][row][col][r, g, b, σ]`.
    ///
    /// Colors are clamped into `[0, 1]`; negative or non-finite densities are
    /// rejected.
    pub fn new(reference: Camera, sampling: DepthSampling, mut planes: Vec<f32>) -> Result<Self> {
        reference.validate()?;
        let (width, height) = (reference.width(), reference.height());
        let expected = sampling.count() * width * height * CHANNELS;
        if planes.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "MPI payload has {} values, expected {expected} ({} planes of {width}x{height}x4)",
                planes.len(),
                sampling.count()
            )));
        }
        for (i, px) in planes.chunks_exact_mut(CHANNELS).enumerate() {
            for c in &mut px[..3] {
                if c.is_nan() {
                    return Err(Error::InvalidArgument(format!("NaN color at sample {i}")));
                }
                *c = c.clamp(0.0, 1.0);
            }
            let sigma = px[3];
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "density must be finite and non-negative, got {sigma} at sample {i}"
                )));
            }
        }
        Ok(MultiplaneImage {
            width,
            height,
            sampling,
            planes,
            reference,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn plane_count(&self) -> usize {
        self.sampling.count()
    }

    pub fn sampling(&self) -> &DepthSampling {
        &self.sampling
    }

    pub fn reference(&self) -> &Camera {
        &self.reference
    }

    pub fn planes(&self) -> &[f32] {
        &self.planes
    }

    pub fn plane(&self, i: usize) -> &[f32] {
        let n = self.width * self.height * CHANNELS;
        &self.planes[i * n..(i + 1) * n]
    }

    pub fn into_planes(self) -> Vec<f32> {
        self.planes
    }
}

/// One bilinear lookup into a `width × height` plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    /// Pixel index of the top-left neighbour.
    pub base: usize,
    /// Offset to the right neighbour (0 on the last column).
    pub step_x: usize,
    /// Offset to the lower neighbour (0 on the last row).
    pub step_y: usize,
    pub fx: f64,
    pub fy: f64,
}

impl Tap {
    /// Neighbour pixel indices with their bilinear weights.
    #[inline]
    pub fn corners(&self) -> [(usize, f64); 4] {
        let (fx, fy) = (self.fx, self.fy);
        [
            (self.base, (1.0 - fx) * (1.0 - fy)),
            (self.base + self.step_x, fx * (1.0 - fy)),
            (self.base + self.step_y, (1.0 - fx) * fy),
            (self.base + self.step_x + self.step_y, fx * fy),
        ]
    }

    #[inline]
    pub fn sample<P: Copy + Into<f64>>(&self, plane: &[P]) -> [f64; CHANNELS] {
        let mut out = [0.0; CHANNELS];
        // Zero-weight corners are still in bounds, so no branch is needed.
        for (idx, w) in self.corners() {
            let px = &plane[idx * CHANNELS..idx * CHANNELS + CHANNELS];
            for c in 0..CHANNELS {
                out[c] += w * px[c].into();
            }
        }
        out
    }
}

#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < GRID_SNAP {
        r
    } else {
        v
    }
}

/// Resolves a continuous source coordinate to a bilinear tap, or `None` when
/// it falls outside the `[0, width-1] × [0, height-1]` sample grid.
#[inline]
pub fn bilinear_tap(u: f64, v: f64, width: usize, height: usize) -> Option<Tap> {
    let (u, v) = (snap(u), snap(v));
    let max_u = (width - 1) as f64;
    let max_v = (height - 1) as f64;
    if !(u >= -BOUNDS_SLACK && u <= max_u + BOUNDS_SLACK && v >= -BOUNDS_SLACK && v <= max_v + BOUNDS_SLACK) {
        return None;
    }
    let u = u.clamp(0.0, max_u);
    let v = v.clamp(0.0, max_v);
    let x0 = (u.floor() as usize).min(width - 1);
    let y0 = (v.floor() as usize).min(height - 1);
    let step_x = usize::from(x0 + 1 < width);
    let step_y = if y0 + 1 < height { width } else { 0 };
    Some(Tap {
        base: y0 * width + x0,
        step_x,
        step_y,
        fx: if step_x == 0 { 0.0 } else { u - x0 as f64 },
        fy: if step_y == 0 { 0.0 } else { v - y0 as f64 },
    })
}

/// Everything needed to look up MPI samples from a target view.
#[derive(Debug, Clone)]
pub struct ViewGeometry {
    pub target: Intrinsics,
    pub source_width: usize,
    pub source_height: usize,
    pub homographies: Vec<Matrix3<f64>>,
    pub depths: Vec<f64>,
    pub gaps: Vec<f64>,
}

impl ViewGeometry {
    pub fn new(reference: &Camera, sampling: &DepthSampling, target: &Camera) -> Result<Self> {
        target.validate()?;
        let rel = relative_transform(reference, target);
        let homographies = sampling
            .depths()
            .iter()
            .enumerate()
            .map(|(i, &z)| {
                plane_homography(reference, target, &rel, z).map_err(|e| match e {
                    Error::DegenerateHomography { depth, .. } => {
                        Error::DegenerateHomography { plane: i, depth }
                    }
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ViewGeometry {
            target: target.intrinsics,
            source_width: reference.width(),
            source_height: reference.height(),
            homographies,
            depths: sampling.depths().to_vec(),
            gaps: sampling.gaps(),
        })
    }

    pub fn plane_count(&self) -> usize {
        self.homographies.len()
    }

    /// Bilinear tap for target pixel `(x, y)` on plane `i`, if the target ray
    /// meets the plane in front of the camera and inside the reference image.
    #[inline]
    pub fn tap(&self, plane: usize, x: usize, y: usize) -> Option<Tap> {
        let h = &self.homographies[plane];
        let p = h * Vector3::new(x as f64, y as f64, 1.0);
        if !(p.z > 0.0) {
            return None;
        }
        bilinear_tap(p.x / p.z, p.y / p.z, self.source_width, self.source_height)
    }

    /// Per-plane ray distances `δ_i` at target pixel `(x, y)`.
    #[inline]
    pub fn deltas_into(&self, x: usize, y: usize, out: &mut [f64]) {
        let norm = self.target.ray_norm(x as f64, y as f64);
        for (d, g) in out.iter_mut().zip(&self.gaps) {
            *d = g * norm;
        }
    }
}

/// Per-pixel result of over-compositing.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PixelComposite {
    pub color: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub coverage: f64,
}

/// Front-to-back accumulator for `Σ T_i (1 - exp(-σ_i δ_i)) v_i`.
#[derive(Debug, Clone, Copy)]
pub struct Compositor {
    transmittance: f64,
    out: PixelComposite,
    valid: usize,
    planes: usize,
}

impl Default for Compositor {
    fn default() -> Self {
        Compositor {
            transmittance: 1.0,
            out: PixelComposite::default(),
            valid: 0,
            planes: 0,
        }
    }
}

impl Compositor {
    #[inline]
    pub fn push(&mut self, sample: Option<[f64; CHANNELS]>, delta: f64, depth: f64) {
        self.planes += 1;
        let Some(s) = sample else { return };
        self.valid += 1;
        let decay = (-s[3] * delta).exp();
        let w = self.transmittance * (1.0 - decay);
        for c in 0..3 {
            self.out.color[c] += w * s[c];
        }
        self.out.depth += w * depth;
        self.out.opacity += w;
        self.transmittance *= decay;
    }

    #[inline]
    pub fn finish(mut self) -> PixelComposite {
        self.out.coverage = if self.planes == 0 {
            0.0
        } else {
            self.valid as f64 / self.planes as f64
        };
        self.out
    }
}

/// `T_i = exp(-Σ_{j<i} σ_j δ_j)`, with `T_1 = 1`.
pub fn transmittance(sigmas: &[f64], deltas: &[f64]) -> Vec<f64> {
    let mut acc = 0.0f64;
    sigmas
        .iter()
        .zip(deltas)
        .map(|(s, d)| {
            let t = (-acc).exp();
            acc += s * d;
            t
        })
        .collect()
}

/// MPI planes resampled into a target frustum.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedStack {
    pub width: usize,
    pub height: usize,
    pub sampling: DepthSampling,
    /// `[plane][row][col][r, g, b, σ]`; invalid samples are all zero.
    pub planes: Vec<f32>,
    pub valid: Vec<bool>,
}

impl WarpedStack {
    pub fn plane_count(&self) -> usize {
        self.sampling.count()
    }

    pub fn plane(&self, i: usize) -> &[f32] {
        let n = self.width * self.height * CHANNELS;
        &self.planes[i * n..(i + 1) * n]
    }

    pub fn valid_mask(&self, i: usize) -> &[bool] {
        let n = self.width * self.height;
        &self.valid[i * n..(i + 1) * n]
    }
}

/// Resamples every plane into the target frustum with bilinear lookups.
pub fn warp_to_target(mpi: &MultiplaneImage, target: &Camera) -> Result<WarpedStack> {
    let geom = ViewGeometry::new(mpi.reference(), mpi.sampling(), target)?;
    let (w, h) = (target.width(), target.height());
    let d = mpi.plane_count();
    let mut planes = vec![0.0f32; d * w * h * CHANNELS];
    let mut valid = vec![false; d * w * h];
    planes
        .par_chunks_mut(w * h * CHANNELS)
        .zip(valid.par_chunks_mut(w * h))
        .enumerate()
        .for_each(|(i, (out, mask))| {
            let src = mpi.plane(i);
            for y in 0..h {
                for x in 0..w {
                    if let Some(tap) = geom.tap(i, x, y) {
                        let s = tap.sample(src);
                        let o = (y * w + x) * CHANNELS;
                        for c in 0..CHANNELS {
                            out[o + c] = s[c] as f32;
                        }
                        mask[y * w + x] = true;
                    }
                }
            }
        });
    Ok(WarpedStack {
        width: w,
        height: h,
        sampling: mpi.sampling().clone(),
        planes,
        valid,
    })
}

fn composite_stack(stack: &WarpedStack, target: &Camera) -> Result<Vec<PixelComposite>> {
    if target.width() != stack.width || target.height() != stack.height {
        return Err(Error::ShapeMismatch(format!(
            "warped stack is {}x{}, target camera is {}x{}",
            stack.width,
            stack.height,
            target.width(),
            target.height()
        )));
    }
    let (w, h) = (stack.width, stack.height);
    let d = stack.plane_count();
    let gaps = stack.sampling.gaps();
    let depths = stack.sampling.depths();
    let plane_len = w * h;
    Ok((0..w * h)
        .into_par_iter()
        .map(|p| {
            let norm = target.intrinsics.ray_norm((p % w) as f64, (p / w) as f64);
            let mut comp = Compositor::default();
            for i in 0..d {
                let sample = stack.valid[i * plane_len + p].then(|| {
                    let o = (i * plane_len + p) * CHANNELS;
                    let s = &stack.planes[o..o + CHANNELS];
                    [s[0] as f64, s[1] as f64, s[2] as f64, s[3] as f64]
                });
                comp.push(sample, gaps[i] * norm, depths[i]);
            }
            comp.finish()
        })
        .collect())
}

/// `I = Σ_i T_i (1 - exp(-σ_i δ_i)) C_i` over a warped stack.
pub fn composite_color(stack: &WarpedStack, target: &Camera) -> Result<RgbImage> {
    let px = composite_stack(stack, target)?;
    let data = px
        .iter()
        .flat_map(|p| p.color.map(|c| c as f32))
        .collect();
    Image::from_vec(stack.width, stack.height, 3, data)
}

/// `I_depth = Σ_i T_i (1 - exp(-σ_i δ_i)) z_i`; zero where nothing is hit,
/// so consult the opacity map before trusting it.
pub fn composite_depth(stack: &WarpedStack, target: &Camera) -> Result<Image<f32>> {
    let px = composite_stack(stack, target)?;
    let data = px.iter().map(|p| p.depth as f32).collect();
    Image::from_vec(stack.width, stack.height, 1, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: RgbImage,
    pub depth: Image<f32>,
    /// Accumulated weight `Σ w_i`.
    pub opacity: Image<f32>,
    /// Fraction of planes with a valid sample along each pixel.
    pub coverage: Image<f32>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }
}

/// Renders color, depth, opacity and coverage for `target`.
///
/// Warping and compositing are fused per pixel; the result is identical to
/// [`composite_color`]/[`composite_depth`] applied to [`warp_to_target`]
/// up to the `f32` rounding of the intermediate stack.
pub fn render_novel_view(mpi: &MultiplaneImage, target: &Camera) -> Result<RenderOutput> {
    let geom = ViewGeometry::new(mpi.reference(), mpi.sampling(), target)?;
    let pixels = composite_view(&geom, mpi.planes(), mpi.width() * mpi.height());
    Ok(pack_output(target.width(), target.height(), &pixels))
}

/// Composites every target pixel of `geom` from `planes` (`plane_len`
/// pixels per plane).
pub fn composite_view<P>(geom: &ViewGeometry, planes: &[P], plane_len: usize) -> Vec<PixelComposite>
where
    P: Copy + Into<f64> + Sync,
{
    let (w, h) = (geom.target.width, geom.target.height);
    let d = geom.plane_count();
    let mut pixels = vec![PixelComposite::default(); w * h];
    pixels.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut deltas = vec![0.0; d];
        for (x, out) in row.iter_mut().enumerate() {
            geom.deltas_into(x, y, &mut deltas);
            let mut comp = Compositor::default();
            for i in 0..d {
                let plane = &planes[i * plane_len * CHANNELS..(i + 1) * plane_len * CHANNELS];
                let sample = geom.tap(i, x, y).map(|t| t.sample(plane));
                comp.push(sample, deltas[i], geom.depths[i]);
            }
            *out = comp.finish();
        }
    });
    pixels
}

fn pack_output(w: usize, h: usize, pixels: &[PixelComposite]) -> RenderOutput {
    let mut color = Image::new(w, h, 3);
    let mut depth = Image::new(w, h, 1);
    let mut opacity = Image::new(w, h, 1);
    let mut coverage = Image::new(w, h, 1);
    for (i, p) in pixels.iter().enumerate() {
        for c in 0..3 {
            color.data[i * 3 + c] = p.color[c] as f32;
        }
        depth.data[i] = p.depth as f32;
        opacity.data[i] = p.opacity as f32;
        coverage.data[i] = p.coverage as f32;
    }
    RenderOutput {
        color,
        depth,
        opacity,
        coverage,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_inverse_depths, Intrinsics, RigidTransform};
    use nalgebra::Vector3 as V3;

    fn camera(w: usize, h: usize) -> Camera {
        Camera::new(
            Intrinsics::new(40.0, 40.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap(),
            RigidTransform::identity(),
            2.0,
            8.0,
        )
        .unwrap()
    }

    fn translated(cam: &Camera, tx: f64) -> Camera {
        // Camera center moves by +tx along x.
        Camera {
            world_to_camera: RigidTransform {
                rotation: nalgebra::Matrix3::identity(),
                translation: V3::new(-tx, 0.0, 0.0),
            },
            ..*cam
        }
    }

    fn mpi_from_fn(
        cam: Camera,
        sampling: DepthSampling,
        f: impl Fn(usize, usize, usize) -> [f32; 4],
    ) -> MultiplaneImage {
        let (w, h) = (cam.width(), cam.height());
        let mut planes = Vec::new();
        for i in 0..sampling.count() {
            for y in 0..h {
                for x in 0..w {
                    planes.extend_from_slice(&f(i, x, y));
                }
            }
        }
        MultiplaneImage::new(cam, sampling, planes).unwrap()
    }

    #[test]
    fn rejects_negative_density_and_clamps_color() {
        let cam = camera(2, 1);
        let s = DepthSampling::from_depths(vec![3.0]).unwrap();
        assert!(MultiplaneImage::new(cam, s.clone(), vec![0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        let m = MultiplaneImage::new(cam, s, vec![2.0, -1.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(&m.planes()[..4], &[1.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn transmittance_cases() {
        assert_eq!(transmittance(&[0.0; 4], &[1.0; 4]), vec![1.0; 4]);
        let t = transmittance(&[2f64.ln(), 7.0], &[1.0, 1.0]);
        assert!((t[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_warp_is_bit_exact() {
        let cam = camera(9, 7);
        let s = sample_inverse_depths(2.0, 8.0, 3).unwrap();
        let mpi = mpi_from_fn(cam, s, |i, x, y| {
            [x as f32 / 9.0, y as f32 / 7.0, i as f32 / 3.0, 0.1 + (x * y) as f32 * 0.37]
        });
        let stack = warp_to_target(&mpi, &cam).unwrap();
        assert_eq!(stack.planes, mpi.planes());
        assert!(stack.valid.iter().all(|&v| v));
    }

    #[test]
    fn translation_shifts_by_disparity() {
        // Delta texture at one pixel; each plane shifts by fx * tx / z.
        let cam = camera(64, 8);
        let s = DepthSampling::from_depths(vec![2.0, 4.0, 8.0]).unwrap();
        let mpi = mpi_from_fn(cam, s.clone(), |_, x, y| {
            let on = x == 32 && y == 4;
            [if on { 1.0 } else { 0.0 }, 0.0, 0.0, 1.0]
        });
        let tx = 0.2;
        let target = translated(&cam, tx);
        let stack = warp_to_target(&mpi, &target).unwrap();
        for (i, &z) in s.depths().iter().enumerate() {
            let shift = 40.0 * tx / z;
            let expected_x = 32.0 - shift;
            let plane = stack.plane(i);
            let row: Vec<f32> = (0..64).map(|x| plane[(4 * 64 + x) * 4]).collect();
            let total: f32 = row.iter().sum();
            let centroid: f32 = row.iter().enumerate().map(|(x, v)| x as f32 * v).sum::<f32>() / total;
            assert!((total - 1.0).abs() < 1e-5, "mass preserved on plane {i}");
            assert!((centroid as f64 - expected_x).abs() < 1e-5, "plane {i}: {centroid} vs {expected_x}");
        }
    }

    #[test]
    fn rotation_out_of_view_invalidates_plane() {
        let cam = camera(16, 16);
        let s = sample_inverse_depths(2.0, 8.0, 2).unwrap();
        let mpi = mpi_from_fn(cam, s, |_, _, _| [0.5, 0.5, 0.5, 1.0]);
        let target = Camera {
            world_to_camera: RigidTransform {
                rotation: crate::geometry::axis_angle(V3::new(0.0, 1.0, 0.0), 1.2),
                translation: V3::zeros(),
            },
            ..cam
        };
        let stack = warp_to_target(&mpi, &target).unwrap();
        for i in 0..2 {
            assert!(stack.valid_mask(i).iter().all(|&v| !v));
        }
        let out = render_novel_view(&mpi, &target).unwrap();
        assert!(out.opacity.data.iter().all(|&o| o == 0.0));
    }

    #[test]
    fn opaque_single_plane_saturates() {
        let cam = camera(4, 4);
        // δ at the principal point = single-plane spacing 1.0.
        let s = DepthSampling::from_depths(vec![5.0]).unwrap();
        let mpi = mpi_from_fn(cam, s, |_, _, _| [0.2, 0.4, 0.6, 20.0]);
        let out = render_novel_view(&mpi, &cam).unwrap();
        let c = out.color.index(2, 2, 0);
        assert!((out.color.data[c] - 0.2).abs() < 1e-6);
        assert!((out.color.data[c + 1] - 0.4).abs() < 1e-6);
        assert!((out.color.data[c + 2] - 0.6).abs() < 1e-6);
        assert!((out.depth.get(2, 2, 0) - 5.0).abs() < 1e-5);
    }

    #[test]
    fn two_plane_closed_form() {
        let cam = camera(2, 2);
        let s = DepthSampling::from_depths(vec![3.0, 4.5]).unwrap();
        let colors = [[0.9f32, 0.1, 0.3], [0.2, 0.7, 0.5]];
        let sig = [[0.3f32, 0.8, 1.1, 0.05], [2.0, 0.4, 0.0, 1.5]];
        let mpi = mpi_from_fn(cam, s.clone(), |i, x, y| {
            let c = colors[i];
            [c[0], c[1], c[2], sig[i][y * 2 + x]]
        });
        let stack = warp_to_target(&mpi, &cam).unwrap();
        let color = composite_color(&stack, &cam).unwrap();
        let depth = composite_depth(&stack, &cam).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                let norm = cam.intrinsics.ray_norm(x as f64, y as f64);
                let delta = 1.5 * norm;
                let a1 = 1.0 - (-(sig[0][y * 2 + x] as f64) * delta).exp();
                let a2 = 1.0 - (-(sig[1][y * 2 + x] as f64) * delta).exp();
                for c in 0..3 {
                    let want = a1 * colors[0][c] as f64 + (1.0 - a1) * a2 * colors[1][c] as f64;
                    assert!((color.get(x, y, c) as f64 - want).abs() < 1e-6);
                }
                let want_depth = a1 * 3.0 + (1.0 - a1) * a2 * 4.5;
                assert!((depth.get(x, y, 0) as f64 - want_depth).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn vacuum_renders_black() {
        let cam = camera(5, 3);
        let s = sample_inverse_depths(2.0, 8.0, 4).unwrap();
        let mpi = mpi_from_fn(cam, s, |_, _, _| [0.7, 0.7, 0.7, 0.0]);
        let out = render_novel_view(&mpi, &cam).unwrap();
        assert!(out.color.data.iter().all(|&v| v == 0.0));
        assert!(out.depth.data.iter().all(|&v| v == 0.0));
        assert!(out.opacity.data.iter().all(|&v| v == 0.0));
        assert!(out.coverage.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn fused_render_matches_stack_compositing() {
        let cam = camera(12, 10);
        let s = sample_inverse_depths(2.0, 8.0, 5).unwrap();
        let mpi = mpi_from_fn(cam, s, |i, x, y| {
            [
                ((x + i) % 5) as f32 / 4.0,
                ((y * 3 + i) % 7) as f32 / 6.0,
                0.5,
                (i as f32 + 1.0) * 0.3 + (x % 3) as f32 * 0.2,
            ]
        });
        let target = translated(&cam, 0.15);
        let fused = render_novel_view(&mpi, &target).unwrap();
        let stack = warp_to_target(&mpi, &target).unwrap();
        let color = composite_color(&stack, &target).unwrap();
        for (a, b) in fused.color.data.iter().zip(&color.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
