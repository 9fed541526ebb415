#![allow(dead_code)]

use mpi_engine::geometry::{axis_angle, sample_inverse_depths, Camera, Intrinsics, RigidTransform};
use mpi_engine::mpi::MultiplaneImage;
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn intrinsics(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Intrinsics {
    let f = rng.random_range(0.8..2.0) * width as f64;
    let aspect = rng.random_range(0.9..1.1);
    let cx = width as f64 / 2.0 + rng.random_range(-2.0..2.0);
    let cy = height as f64 / 2.0 + rng.random_range(-2.0..2.0);
    Intrinsics::new(f, f * aspect, cx, cy, width, height).unwrap()
}

pub fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> nalgebra::Matrix3<f64> {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis };
    axis_angle(axis, rng.random_range(-max_angle..max_angle))
}

pub fn random_pose(rng: &mut ChaCha8Rng, max_angle: f64, max_shift: f64) -> RigidTransform {
    let t = Vector3::new(
        rng.random_range(-max_shift..max_shift),
        rng.random_range(-max_shift..max_shift),
        rng.random_range(-max_shift..max_shift),
    );
    RigidTransform::new(random_rotation(rng, max_angle), t, 1e-9).unwrap()
}

/// Reference camera with an arbitrary world pose and depth range.
pub fn reference_camera(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Camera {
    let near = rng.random_range(1.5..4.0);
    let far = near * rng.random_range(1.5..5.0);
    Camera::new(intrinsics(rng, width, height), random_pose(rng, 0.5, 2.0), near, far).unwrap()
}

/// A camera displaced from `reference` by at most `max_angle` radians and
/// `max_shift` units (expressed in the reference frame).
pub fn nearby_camera(
    rng: &mut ChaCha8Rng,
    reference: &Camera,
    width: usize,
    height: usize,
    max_angle: f64,
    max_shift: f64,
) -> Camera {
    let offset = random_pose(rng, max_angle, max_shift);
    let pose = offset.compose(&reference.world_to_camera);
    Camera::new(intrinsics(rng, width, height), pose, reference.z_near, reference.z_far).unwrap()
}

/// Random plane stack with per-sample noise colors and densities up to
/// `sigma_scale / mean gap`.
pub fn random_mpi(rng: &mut ChaCha8Rng, reference: Camera, planes: usize, sigma_scale: f64) -> MultiplaneImage {
    let sampling = sample_inverse_depths(reference.z_near, reference.z_far, planes).unwrap();
    let gaps = sampling.gaps();
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let n = planes * reference.width() * reference.height();
    let mut data = Vec::with_capacity(n * 4);
    for _ in 0..n {
        for _ in 0..3 {
            data.push(rng.random_range(0.0..1.0f32));
        }
        data.push((rng.random_range(0.0..1.0) * sigma_scale / mean_gap) as f32);
    }
    MultiplaneImage::new(reference, sampling, data).unwrap()
}
