//! Trainable parameterizations of the plane stack.
//!
//! `Direct` stores one pre-activation per plane sample; `Implicit` stores
//! the weights of a coordinate network evaluated at every
//! `(pixel, plane)` pair. Both decode to `[plane][row][col][r, g, b, σ]`
//! with colors squashed by a sigmoid and densities by a softplus.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mpi::CHANNELS;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `[sin(2⁰πd), cos(2⁰πd), …, sin(2^{L-1}πd), cos(2^{L-1}πd)]`.
pub fn depth_embedding(d: f64, frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * frequencies);
    for k in 0..frequencies {
        let a = (1u64 << k) as f64 * PI * d;
        out.push(a.sin());
        out.push(a.cos());
    }
    out
}

/// Plane ordinal `i` of `count` mapped to `[0, 1]`.
pub fn normalized_ordinal(i: usize, count: usize) -> f64 {
    if count <= 1 {
        0.0
    } else {
        i as f64 / (count - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlaneShape {
    pub planes: usize,
    pub width: usize,
    pub height: usize,
}

impl PlaneShape {
    pub fn samples(&self) -> usize {
        self.planes * self.width * self.height
    }

    pub fn len(&self) -> usize {
        self.samples() * CHANNELS
    }

    pub fn is_empty(&self) -> bool {
        self.samples() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parameterization {
    Direct(DirectPlanes),
    Implicit(ImplicitGenerator),
}

impl Parameterization {
    pub fn params(&self) -> &[f64] {
        match self {
            Parameterization::Direct(p) => &p.values,
            Parameterization::Implicit(g) => &g.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Parameterization::Direct(p) => &mut p.values,
            Parameterization::Implicit(g) => &mut g.params,
        }
    }

    pub fn shape(&self) -> PlaneShape {
        match self {
            Parameterization::Direct(p) => p.shape,
            Parameterization::Implicit(g) => g.shape,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            Parameterization::Direct(_) => "direct",
            Parameterization::Implicit(_) => "implicit",
        }
    }

    /// Decoded planes as `f64` samples.
    pub fn decode(&self) -> Vec<f64> {
        match self {
            Parameterization::Direct(p) => p.decode(),
            Parameterization::Implicit(g) => g.decode(),
        }
    }

    /// Chains a gradient with respect to decoded planes back onto the
    /// parameters.
    pub fn backward(&self, plane_grad: &[f64], deterministic: bool) -> Vec<f64> {
        match self {
            Parameterization::Direct(p) => p.backward(plane_grad),
            Parameterization::Implicit(g) => g.backward(plane_grad, deterministic),
        }
    }
}

/// One unconstrained value per plane sample and channel.
///
/// Activations see `gain · value`, which rescales the effective step size of
/// every pixel without changing what the parameters can express.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectPlanes {
    pub shape: PlaneShape,
    pub gain: f64,
    pub values: Vec<f64>,
}

impl DirectPlanes {
    pub fn zeros(shape: PlaneShape, gain: f64) -> Self {
        DirectPlanes {
            shape,
            gain,
            values: vec![0.0; shape.len()],
        }
    }

    /// Pre-activations reproducing the given decoded planes. Colors are kept
    /// strictly inside `(0, 1)` and densities strictly positive.
    pub fn from_decoded(shape: PlaneShape, gain: f64, planes: &[f64]) -> Result<Self> {
        if planes.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} decoded values for a {} value plane stack",
                planes.len(),
                shape.len()
            )));
        }
        let values = planes
            .chunks_exact(CHANNELS)
            .flat_map(|s| {
                let c = |v: f64| logit(v.clamp(1e-3, 1.0 - 1e-3)) / gain;
                [c(s[0]), c(s[1]), c(s[2]), softplus_inverse(s[3].max(1e-6)) / gain]
            })
            .collect();
        Ok(DirectPlanes {
            shape,
            gain,
            values,
        })
    }

    pub fn decode(&self) -> Vec<f64> {
        let g = self.gain;
        self.values
            .chunks_exact(CHANNELS)
            .flat_map(|p| {
                [
                    sigmoid(g * p[0]),
                    sigmoid(g * p[1]),
                    sigmoid(g * p[2]),
                    softplus(g * p[3]),
                ]
            })
            .collect()
    }

    pub fn backward(&self, plane_grad: &[f64]) -> Vec<f64> {
        let g = self.gain;
        self.values
            .par_chunks_exact(CHANNELS)
            .zip(plane_grad.par_chunks_exact(CHANNELS))
            .flat_map_iter(|(p, d)| {
                let dc = |v: f64, dv: f64| {
                    let s = sigmoid(g * v);
                    dv * s * (1.0 - s) * g
                };
                [
                    dc(p[0], d[0]),
                    dc(p[1], d[1]),
                    dc(p[2], d[2]),
                    d[3] * sigmoid(g * p[3]) * g,
                ]
            })
            .collect()
    }
}

/// Coordinate network `(x/W, y/H, γ(d)) → (r, g, b, σ)` with `tanh` hidden
/// activations. Parameters are stored layer by layer as the row-major
/// weight matrix followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitGenerator {
    pub shape: PlaneShape,
    pub frequencies: usize,
    pub layers: Vec<usize>,
    pub params: Vec<f64>,
}

/// Samples per gradient-reduction chunk; fixed so reductions do not depend
/// on the thread count.
const CHUNK: usize = 512;

impl ImplicitGenerator {
    pub fn input_dim(frequencies: usize) -> usize {
        2 + 2 * frequencies
    }

    fn layer_dims(frequencies: usize, hidden: &[usize]) -> Vec<usize> {
        let mut dims = vec![Self::input_dim(frequencies)];
        dims.extend_from_slice(hidden);
        dims.push(CHANNELS);
        dims
    }

    pub fn param_count(frequencies: usize, hidden: &[usize]) -> usize {
        Self::layer_dims(frequencies, hidden)
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Network with all weights and biases zero.
    pub fn zeros(shape: PlaneShape, frequencies: usize, hidden: &[usize]) -> Self {
        ImplicitGenerator {
            shape,
            frequencies,
            layers: Self::layer_dims(frequencies, hidden),
            params: vec![0.0; Self::param_count(frequencies, hidden)],
        }
    }

    /// Glorot-uniform weights, zero biases except the density output bias,
    /// which starts at `softplus⁻¹(initial_sigma)`.
    pub fn random(
        shape: PlaneShape,
        frequencies: usize,
        hidden: &[usize],
        initial_sigma: f64,
        seed: u64,
    ) -> Self {
        let mut g = Self::zeros(shape, frequencies, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        let last = g.layers.len() - 2;
        for (l, dims) in g.layers.windows(2).enumerate() {
            let (fan_in, fan_out) = (dims[0], dims[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut g.params[offset..offset + fan_in * fan_out] {
                *w = rng.random_range(-limit..limit);
            }
            offset += fan_in * fan_out;
            if l == last && initial_sigma > 0.0 {
                g.params[offset + 3] = softplus_inverse(initial_sigma);
            }
            offset += fan_out;
        }
        g
    }

    fn input(&self, sample: usize, out: &mut [f64]) {
        let PlaneShape {
            planes,
            width,
            height,
        } = self.shape;
        let plane_len = width * height;
        let i = sample / plane_len;
        let p = sample % plane_len;
        out[0] = (p % width) as f64 / width as f64;
        out[1] = (p / width) as f64 / height as f64;
        let d = normalized_ordinal(i, planes);
        for k in 0..self.frequencies {
            let a = (1u64 << k) as f64 * PI * d;
            out[2 + 2 * k] = a.sin();
            out[3 + 2 * k] = a.cos();
        }
    }

    /// Forward pass for one input, recording each layer's activations.
    fn forward(&self, input: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.clear();
        acts.push(input.to_vec());
        let mut offset = 0;
        let n_layers = self.layers.len() - 1;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.layers[l], self.layers[l + 1]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let x = &acts[l];
            let mut y: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
                })
                .collect();
            if l + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(y);
        }
    }

    fn activate(out: &[f64]) -> [f64; CHANNELS] {
        [sigmoid(out[0]), sigmoid(out[1]), sigmoid(out[2]), softplus(out[3])]
    }

    pub fn decode(&self) -> Vec<f64> {
        let n = self.shape.samples();
        let mut planes = vec![0.0; n * CHANNELS];
        planes
            .par_chunks_mut(CHUNK * CHANNELS)
            .enumerate()
            .for_each(|(c, out)| {
                let mut input = vec![0.0; Self::input_dim(self.frequencies)];
                let mut acts = Vec::new();
                for (k, px) in out.chunks_exact_mut(CHANNELS).enumerate() {
                    self.input(c * CHUNK + k, &mut input);
                    self.forward(&input, &mut acts);
                    px.copy_from_slice(&Self::activate(acts.last().unwrap()));
                }
            });
        planes
    }

    fn chunk_gradient(&self, chunk: usize, plane_grad: &[f64]) -> Vec<f64> {
        let n = self.shape.samples();
        let mut grad = vec![0.0; self.params.len()];
        let mut input = vec![0.0; Self::input_dim(self.frequencies)];
        let mut acts = Vec::new();
        let n_layers = self.layers.len() - 1;
        let offsets: Vec<usize> = self
            .layers
            .windows(2)
            .scan(0, |acc, d| {
                let o = *acc;
                *acc += d[0] * d[1] + d[1];
                Some(o)
            })
            .collect();
        for s in chunk * CHUNK..((chunk + 1) * CHUNK).min(n) {
            let dout = &plane_grad[s * CHANNELS..(s + 1) * CHANNELS];
            if dout.iter().all(|&v| v == 0.0) {
                continue;
            }
            self.input(s, &mut input);
            self.forward(&input, &mut acts);
            let raw = acts.last().unwrap();
            let mut delta: Vec<f64> = (0..3)
                .map(|c| {
                    let sg = sigmoid(raw[c]);
                    dout[c] * sg * (1.0 - sg)
                })
                .collect();
            delta.push(dout[3] * sigmoid(raw[3]));
            for l in (0..n_layers).rev() {
                let (fan_in, fan_out) = (self.layers[l], self.layers[l + 1]);
                let off = offsets[l];
                let x = &acts[l];
                for o in 0..fan_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                    grad[off + fan_in * fan_out + o] += d;
                }
                if l > 0 {
                    let w = &self.params[off..off + fan_in * fan_out];
                    let mut prev = vec![0.0; fan_in];
                    for o in 0..fan_out {
                        let d = delta[o];
                        for (pv, wv) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                            *pv += d * wv;
                        }
                    }
                    // acts[l] holds tanh outputs for hidden layers.
                    for (pv, a) in prev.iter_mut().zip(x) {
                        *pv *= 1.0 - a * a;
                    }
                    delta = prev;
                }
            }
        }
        grad
    }

    pub fn backward(&self, plane_grad: &[f64], deterministic: bool) -> Vec<f64> {
        let chunks = self.shape.samples().div_ceil(CHUNK);
        let add = |mut a: Vec<f64>, b: Vec<f64>| {
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            a
        };
        if deterministic {
            let parts: Vec<Vec<f64>> = (0..chunks)
                .into_par_iter()
                .map(|c| self.chunk_gradient(c, plane_grad))
                .collect();
            parts
                .into_iter()
                .fold(vec![0.0; self.params.len()], add)
        } else {
            (0..chunks)
                .into_par_iter()
                .map(|c| self.chunk_gradient(c, plane_grad))
                .reduce(|| vec![0.0; self.params.len()], add)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> PlaneShape {
        PlaneShape {
            planes: 3,
            width: 5,
            height: 4,
        }
    }

    #[test]
    fn embedding_at_zero() {
        assert_eq!(depth_embedding(0.0, 3), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn embedding_at_one() {
        let e = depth_embedding(1.0, 1);
        assert!(e[0].abs() < 1e-15 && (e[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn embedding_length() {
        for l in 1..12 {
            assert_eq!(depth_embedding(0.37, l).len(), 2 * l);
        }
    }

    #[test]
    fn direct_zero_decodes_to_half_and_softplus_zero() {
        let p = DirectPlanes::zeros(shape(), 1.0);
        for s in p.decode().chunks_exact(4) {
            assert_eq!(&s[..3], &[0.5, 0.5, 0.5]);
            assert_eq!(s[3], 2f64.ln());
        }
    }

    #[test]
    fn direct_round_trips_decoded_planes() {
        let planes: Vec<f64> = (0..shape().len())
            .map(|i| if i % 4 == 3 { 0.1 + i as f64 * 0.01 } else { (i % 7) as f64 / 7.0 + 0.05 })
            .collect();
        let p = DirectPlanes::from_decoded(shape(), 4.0, &planes).unwrap();
        for (a, b) in p.decode().iter().zip(&planes) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_network_is_constant() {
        let g = ImplicitGenerator::zeros(shape(), 4, &[8, 8]);
        let planes = g.decode();
        for s in planes.chunks_exact(4) {
            assert_eq!(s, &[0.5, 0.5, 0.5, 2f64.ln()]);
        }
    }

    #[test]
    fn random_network_sigma_bias() {
        let g = ImplicitGenerator::random(shape(), 2, &[6], 0.7, 3);
        assert_eq!(g.params.len(), ImplicitGenerator::param_count(2, &[6]));
        let last_bias = g.params.len() - 4;
        assert!((softplus(g.params[last_bias + 3]) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn softplus_inverse_round_trip() {
        for y in [1e-6, 0.01, 0.7, 3.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() <= 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn implicit_backward_is_thread_order_independent() {
        let g = ImplicitGenerator::random(
            PlaneShape {
                planes: 2,
                width: 40,
                height: 30,
            },
            3,
            &[8, 8],
            0.5,
            9,
        );
        let grad: Vec<f64> = (0..g.shape.len()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let a = g.backward(&grad, true);
        let b = g.backward(&grad, true);
        assert_eq!(a, b);
    }
}
