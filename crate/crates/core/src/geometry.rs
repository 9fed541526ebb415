//! Pinhole cameras, rigid transforms and the plane-induced homographies used
//! to resample multiplane images into other views.
//!
//! Conventions:
//! - pixel centers sit at integer coordinates;
//! - extrinsics are stored world-to-camera, `x_cam = R * x_world + t`;
//! - plane normals point along the reference camera's optical axis.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Tolerance used when validating rotation matrices built in code.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Spacing assigned to a single-plane sampling, where consecutive-plane
/// spacing is undefined.
pub const DEFAULT_SINGLE_PLANE_SPACING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidCamera("non-finite intrinsics".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera(format!(
                "image size must be at least 1x1 (got {}x{})",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// Closed-form inverse of [`Intrinsics::matrix`].
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Camera-frame ray `K⁻¹ [x, y, 1]ᵀ` through a (possibly fractional) pixel.
    #[inline]
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    /// Euclidean norm of [`Intrinsics::ray`]; converts depth gaps into distances.
    #[inline]
    pub fn ray_norm(&self, x: f64, y: f64) -> f64 {
        let rx = (x - self.cx) / self.fx;
        let ry = (y - self.cy) / self.fy;
        (rx * rx + ry * ry + 1.0).sqrt()
    }

    pub fn project(&self, point: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * point.x / point.z + self.cx,
            self.fy * point.y / point.z + self.cy,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, rejecting rotations that are not proper
    /// orthonormal matrices within `tolerance`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, tolerance: f64) -> Result<Self> {
        check_rotation(&rotation, tolerance)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite translation".into()));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn from_matrix4(m: &Matrix4<f64>, tolerance: f64) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidCamera(format!(
                "extrinsic bottom row must be [0 0 0 1], got {bottom:?}"
            )));
        }
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new(rotation, translation, tolerance)
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

pub fn check_rotation(rotation: &Matrix3<f64>, tolerance: f64) -> Result<()> {
    if rotation.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCamera("non-finite rotation".into()));
    }
    let orth_err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
    if orth_err > tolerance {
        return Err(Error::InvalidCamera(format!(
            "rotation is not orthonormal (max |RᵀR - I| = {orth_err:e})"
        )));
    }
    let det = rotation.determinant();
    if (det - 1.0).abs() > tolerance {
        return Err(Error::InvalidCamera(format!(
            "rotation determinant is {det}, expected +1"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub world_to_camera: RigidTransform,
    pub z_near: f64,
    pub z_far: f64,
}

impl Camera {
    pub fn new(
        intrinsics: Intrinsics,
        world_to_camera: RigidTransform,
        z_near: f64,
        z_far: f64,
    ) -> Result<Self> {
        let cam = Camera {
            intrinsics,
            world_to_camera,
            z_near,
            z_far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if !(self.z_near.is_finite() && self.z_far.is_finite()) || self.z_near <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "depth range must be positive and finite (got [{}, {}])",
                self.z_near, self.z_far
            )));
        }
        if self.z_near >= self.z_far {
            return Err(Error::InvalidCamera(format!(
                "z_near ({}) must be smaller than z_far ({})",
                self.z_near, self.z_far
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.world_to_camera.inverse().translation
    }

    /// Same pose with a different image size and principal point scaled
    /// accordingly.
    pub fn with_intrinsics(&self, intrinsics: Intrinsics) -> Camera {
        Camera {
            intrinsics,
            ..*self
        }
    }
}

/// `z · K⁻¹ · [x, y, 1]ᵀ`.
pub fn backproject(x: f64, y: f64, z: f64, intrinsics: &Intrinsics) -> Result<Vector3<f64>> {
    intrinsics.validate()?;
    if !(z > 0.0) {
        return Err(Error::InvalidArgument(format!("depth must be positive, got {z}")));
    }
    let ray = intrinsics.ray(x, y);
    Ok(Vector3::new(z * ray.x, z * ray.y, z))
}

/// Transform taking target-camera coordinates to reference-camera
/// coordinates: `E_ref ∘ E_tgt⁻¹`.
pub fn relative_transform(reference: &Camera, target: &Camera) -> RigidTransform {
    reference
        .world_to_camera
        .compose(&target.world_to_camera.inverse())
}

/// Homography taking target pixels to reference pixels for the plane
/// `Z_ref = plane_depth` (normal along the reference optical axis).
///
/// With `rel = (R, t)` mapping target to reference coordinates, a point on
/// the plane satisfies `x_tgt = Rᵀ (I - t nᵀ / z) x_ref`, so
///
/// ```text
/// H = K_ref · (I - t nᵀ / z)⁻¹ · R · K_tgt⁻¹
///   = K_ref · (R + t nᵀ R / (z - t_z)) · K_tgt⁻¹
/// ```
///
/// The third homogeneous coordinate of `H · [x, y, 1]ᵀ` is positive exactly
/// when the target ray meets the plane in front of the target camera.
pub fn plane_homography(
    reference: &Camera,
    target: &Camera,
    rel: &RigidTransform,
    plane_depth: f64,
) -> Result<Matrix3<f64>> {
    if !(plane_depth > 0.0) || !plane_depth.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "plane depth must be positive, got {plane_depth}"
        )));
    }
    let t = rel.translation;
    let denom = plane_depth - t.z;
    if denom.abs() <= 1e-12 * plane_depth.max(1.0) {
        return Err(Error::DegenerateHomography {
            plane: 0,
            depth: plane_depth,
        });
    }
    let r = rel.rotation;
    let n_r = r.row(2);
    let middle = r + (t * n_r) / denom;
    Ok(reference.intrinsics.matrix() * middle * target.intrinsics.inverse_matrix())
}

/// Plane depths with evenly spaced reciprocals, stored near-to-far.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSampling {
    depths: Vec<f64>,
    single_plane_spacing: f64,
}

impl DepthSampling {
    pub fn from_depths(depths: Vec<f64>) -> Result<Self> {
        if depths.is_empty() {
            return Err(Error::InvalidArgument("depth sampling needs at least one plane".into()));
        }
        if depths.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(Error::InvalidArgument(
                "plane depths must be positive and finite".into(),
            ));
        }
        if depths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "plane depths must be strictly increasing".into(),
            ));
        }
        Ok(DepthSampling {
            depths,
            single_plane_spacing: DEFAULT_SINGLE_PLANE_SPACING,
        })
    }

    pub fn with_single_plane_spacing(mut self, spacing: f64) -> Self {
        self.single_plane_spacing = spacing;
        self
    }

    pub fn count(&self) -> usize {
        self.depths.len()
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn nearest(&self) -> f64 {
        self.depths[0]
    }

    pub fn farthest(&self) -> f64 {
        self.depths[self.depths.len() - 1]
    }

    /// Depth gaps `z_{i+1} - z_i`, with the last gap repeated for the
    /// farthest plane.
    pub fn gaps(&self) -> Vec<f64> {
        let d = self.depths.len();
        if d == 1 {
            return vec![self.single_plane_spacing];
        }
        let mut gaps: Vec<f64> = self.depths.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.push(gaps[d - 2]);
        gaps
    }
}

/// Samples `count` depths with evenly spaced reciprocals,
/// `1/z_i = 1/z_far + (i-1)/D · (1/z_near - 1/z_far)` for `i = 1..=D`.
/// The first sample sits at `z_far`; `z_near` itself is never reached.
pub fn sample_inverse_depths(z_near: f64, z_far: f64, count: usize) -> Result<DepthSampling> {
    if count == 0 {
        return Err(Error::InvalidArgument("depth sample count must be at least 1".into()));
    }
    if !(z_near > 0.0 && z_near < z_far && z_far.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < z_near < z_far, got [{z_near}, {z_far}]"
        )));
    }
    let inv_far = 1.0 / z_far;
    let span = 1.0 / z_near - inv_far;
    let mut depths: Vec<f64> = (1..=count)
        .map(|i| 1.0 / (inv_far + (i - 1) as f64 / count as f64 * span))
        .collect();
    depths.reverse();
    DepthSampling::from_depths(depths)
}

/// Per-plane distances along the ray through `(x, y)`:
/// `δ_i = (z_{i+1} - z_i) · ‖K⁻¹ [x, y, 1]ᵀ‖`.
pub fn plane_spacing(x: f64, y: f64, sampling: &DepthSampling, intrinsics: &Intrinsics) -> Vec<f64> {
    let norm = intrinsics.ray_norm(x, y);
    sampling.gaps().into_iter().map(|g| g * norm).collect()
}

/// Rotation about `axis` (need not be normalized) by `angle` radians.
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

/// World-to-camera transform for a camera at `eye` looking at `target`, with
/// image rows running along `down` as far as possible.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, down: Vector3<f64>) -> Result<RigidTransform> {
    let forward = target - eye;
    if forward.norm() < 1e-12 {
        return Err(Error::InvalidArgument("look_at eye and target coincide".into()));
    }
    let z = forward.normalize();
    let y = down - z * z.dot(&down);
    if y.norm() < 1e-9 {
        return Err(Error::InvalidArgument("look_at down vector is parallel to the view axis".into()));
    }
    let y = y.normalize();
    let x = y.cross(&z);
    let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    RigidTransform::new(rotation, -(rotation * eye), ROTATION_TOLERANCE)
}
