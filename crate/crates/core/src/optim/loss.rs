//! Multi-scale photometric loss with analytic gradients.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{channel, ssim_channel, Border, GaussianWindow};

pub const PYRAMID_LEVELS: usize = 4;

/// Weights of the photometric terms.
///
/// `lambda_*` balance L1 and SSIM when a generator is trained across scenes;
/// `beta_*` balance the per-scene terms. The perceptual (`beta_lpips`) term
/// is not available and must stay zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub lambda_ssim: f64,
    pub beta_l1: f64,
    pub beta_ssim: f64,
    pub beta_lpips: f64,
    /// Weight of the quadratic total-variation penalty on densities.
    pub tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_l1: 2.0,
            lambda_ssim: 1.0,
            beta_l1: 2.0,
            beta_ssim: 1.0,
            beta_lpips: 0.0,
            tv: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_l1,
            self.lambda_ssim,
            self.beta_l1,
            self.beta_ssim,
            self.beta_lpips,
            self.tv,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        if self.beta_lpips != 0.0 {
            return Err(Error::InvalidArgument(
                "the perceptual loss weight must be 0 (LPIPS is not supported)".into(),
            ));
        }
        Ok(())
    }
}

/// Successive 2×2 box-filtered copies of an image, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub levels: Vec<Image<f64>>,
}

impl Pyramid {
    /// Up to `levels` levels; stops early once a side would drop below one
    /// pixel. Odd trailing rows/columns are dropped when halving.
    pub fn build(image: Image<f64>, levels: usize) -> Pyramid {
        let mut out = vec![image];
        while out.len() < levels.max(1) {
            let prev = out.last().unwrap();
            let (w, h) = (prev.width / 2, prev.height / 2);
            if w == 0 || h == 0 {
                break;
            }
            let ch = prev.channels;
            let mut next = Image::new(w, h, ch);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..ch {
                        let s = prev.get(2 * x, 2 * y, c)
                            + prev.get(2 * x + 1, 2 * y, c)
                            + prev.get(2 * x, 2 * y + 1, c)
                            + prev.get(2 * x + 1, 2 * y + 1, c);
                        next.set(x, y, c, 0.25 * s);
                    }
                }
            }
            out.push(next);
        }
        Pyramid { levels: out }
    }

    /// Adjoint of [`Pyramid::build`]: folds per-level gradients back onto
    /// the finest level.
    pub fn collapse(mut self) -> Image<f64> {
        while self.levels.len() > 1 {
            let coarse = self.levels.pop().unwrap();
            let fine = self.levels.last_mut().unwrap();
            for y in 0..coarse.height {
                for x in 0..coarse.width {
                    for c in 0..coarse.channels {
                        let g = 0.25 * coarse.get(x, y, c);
                        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                            let i = fine.index(2 * x + dx, 2 * y + dy, c);
                            fine.data[i] += g;
                        }
                    }
                }
            }
        }
        self.levels.pop().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    /// Weighted photometric loss (excludes any TV term).
    pub total: f64,
    /// Unweighted L1, summed over levels.
    pub l1: f64,
    /// Unweighted `1 - SSIM`, summed over levels.
    pub ssim_loss: f64,
    /// Gradient of `total` with respect to each rendered level.
    pub grad: Pyramid,
}

/// `Σ_s [w_l1 · L1_s + w_ssim · (1 - SSIM_s)]` with SSIM computed on a
/// clipped, renormalized Gaussian window so every level size is valid.
pub fn image_loss(rendered: &Pyramid, target: &Pyramid, w_l1: f64, w_ssim: f64) -> Result<LossValue> {
    if rendered.levels.len() != target.levels.len() {
        return Err(Error::ShapeMismatch(format!(
            "pyramids have {} and {} levels",
            rendered.levels.len(),
            target.levels.len()
        )));
    }
    let window = GaussianWindow::standard();
    let mut l1_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut grads = Vec::with_capacity(rendered.levels.len());
    for (r, t) in rendered.levels.iter().zip(&target.levels) {
        r.ensure_same_shape(t)?;
        let n = r.data.len() as f64;
        let mut g = Image::new(r.width, r.height, r.channels);
        let mut l1 = 0.0;
        for ((gv, rv), tv) in g.data.iter_mut().zip(&r.data).zip(&t.data) {
            let d = rv - tv;
            l1 += d.abs();
            let sign = if d == 0.0 { 0.0 } else { d.signum() };
            *gv = w_l1 * sign / n;
        }
        l1 /= n;
        let mut ssim = 0.0;
        let ch = r.channels as f64;
        for c in 0..r.channels {
            let x = channel(r, c);
            let y = channel(t, c);
            let res = ssim_channel(&window, &x, &y, r.width, r.height, Border::Renormalized);
            ssim += res.value / ch;
            let dx = res.grad_x.expect("renormalized SSIM provides a gradient");
            for (p, d) in dx.iter().enumerate() {
                g.data[p * r.channels + c] -= w_ssim * d / ch;
            }
        }
        l1_sum += l1;
        ssim_sum += 1.0 - ssim;
        grads.push(g);
    }
    Ok(LossValue {
        total: w_l1 * l1_sum + w_ssim * ssim_sum,
        l1: l1_sum,
        ssim_loss: ssim_sum,
        grad: Pyramid { levels: grads },
    })
}

/// Per-scene photometric loss weighted by `beta_l1`/`beta_ssim`.
pub fn loss(rendered: &Pyramid, target: &Pyramid, weights: &LossWeights) -> Result<LossValue> {
    weights.validate()?;
    image_loss(rendered, target, weights.beta_l1, weights.beta_ssim)
}

/// Cross-scene photometric loss weighted by `lambda_l1`/`lambda_ssim`.
pub fn prior_loss(rendered: &Pyramid, target: &Pyramid, weights: &LossWeights) -> Result<LossValue> {
    weights.validate()?;
    image_loss(rendered, target, weights.lambda_l1, weights.lambda_ssim)
}

/// Mean squared forward difference of the density channel over all planes,
/// with its gradient laid out like the decoded planes (zero on colors).
pub fn density_tv(planes: &[f64], plane_count: usize, width: usize, height: usize) -> (f64, Vec<f64>) {
    use crate::mpi::CHANNELS;
    let n = (plane_count * width * height) as f64;
    let mut grad = vec![0.0; planes.len()];
    let mut value = 0.0;
    let idx = |i: usize, x: usize, y: usize| ((i * height + y) * width + x) * CHANNELS + 3;
    for i in 0..plane_count {
        for y in 0..height {
            for x in 0..width {
                let a = idx(i, x, y);
                let mut pair = |b: usize| {
                    let d = planes[b] - planes[a];
                    value += d * d;
                    grad[b] += 2.0 * d / n;
                    grad[a] -= 2.0 * d / n;
                };
                if x + 1 < width {
                    pair(idx(i, x + 1, y));
                }
                if y + 1 < height {
                    pair(idx(i, x, y + 1));
                }
            }
        }
    }
    (value / n, grad)
}
