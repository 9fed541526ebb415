//! PSNR / SSIM and per-scene evaluation reports.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) with `C1 = 0.01²` and
//! `C2 = 0.03²` for a unit dynamic range, averaged over channels.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mpi::{render_novel_view, MultiplaneImage};
use crate::scene::{Scene, Split};

/// Reported for identical images instead of +∞.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub fn mse<A, B>(a: &Image<A>, b: &Image<B>) -> Result<f64>
where
    A: Copy + Default + Into<f64>,
    B: Copy + Default + Into<f64>,
{
    a.ensure_same_shape(b)?;
    if a.data.is_empty() {
        return Err(Error::ShapeMismatch("empty image".into()));
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x.into() - y.into();
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP_DB`].
pub fn psnr<A, B>(a: &Image<A>, b: &Image<B>) -> Result<f64>
where
    A: Copy + Default + Into<f64>,
    B: Copy + Default + Into<f64>,
{
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM over all window positions that fit inside the image.
pub fn ssim<A, B>(a: &Image<A>, b: &Image<B>) -> Result<f64>
where
    A: Copy + Default + Into<f64>,
    B: Copy + Default + Into<f64>,
{
    a.ensure_same_shape(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: a.width,
            height: a.height,
            window: SSIM_WINDOW,
        });
    }
    let window = GaussianWindow::standard();
    let mut total = 0.0;
    for c in 0..a.channels {
        let x = channel(a, c);
        let y = channel(b, c);
        total += ssim_channel(&window, &x, &y, a.width, a.height, Border::Valid).value;
    }
    Ok(total / a.channels as f64)
}

pub(crate) fn channel<T: Copy + Default + Into<f64>>(img: &Image<T>, c: usize) -> Vec<f64> {
    img.data
        .iter()
        .skip(c)
        .step_by(img.channels)
        .map(|&v| v.into())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Border {
    /// Only positions where the full window fits.
    Valid,
    /// Every pixel, with the window clipped to the image and renormalized.
    Renormalized,
}

#[derive(Debug, Clone)]
pub(crate) struct GaussianWindow {
    taps: Vec<f64>,
}

impl GaussianWindow {
    pub(crate) fn standard() -> Self {
        Self::new(SSIM_WINDOW, SSIM_SIGMA)
    }

    pub(crate) fn new(size: usize, sigma: f64) -> Self {
        let r = (size / 2) as f64;
        let mut taps: Vec<f64> = (0..size)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let s: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= s);
        GaussianWindow { taps }
    }

    fn radius(&self) -> usize {
        self.taps.len() / 2
    }

    /// 1-D pass along rows (`horizontal`) or columns over an `n_out`-long
    /// output axis. In renormalized mode, `normalize` divides by the clipped
    /// window mass.
    fn pass(
        &self,
        src: &[f64],
        w: usize,
        h: usize,
        horizontal: bool,
        border: Border,
        normalize: bool,
    ) -> (Vec<f64>, usize, usize) {
        let r = self.radius();
        let (ow, oh) = match (border, horizontal) {
            (Border::Valid, true) => (w - 2 * r, h),
            (Border::Valid, false) => (w, h - 2 * r),
            (Border::Renormalized, _) => (w, h),
        };
        let mut out = vec![0.0; ow * oh];
        let len = if horizontal { w } else { h };
        for y in 0..oh {
            for x in 0..ow {
                let (pos, base) = if horizontal { (x, y * w) } else { (y, x) };
                let stride = if horizontal { 1 } else { w };
                let mut acc = 0.0;
                let mut mass = 0.0;
                match border {
                    Border::Valid => {
                        for (k, t) in self.taps.iter().enumerate() {
                            acc += t * src[base + (pos + k) * stride];
                        }
                        mass = 1.0;
                    }
                    Border::Renormalized => {
                        let lo = pos.saturating_sub(r);
                        let hi = (pos + r).min(len - 1);
                        for q in lo..=hi {
                            let t = self.taps[q + r - pos];
                            acc += t * src[base + q * stride];
                            mass += t;
                        }
                    }
                }
                out[y * ow + x] = if normalize { acc / mass } else { acc };
            }
        }
        (out, ow, oh)
    }

    pub(crate) fn filter(&self, src: &[f64], w: usize, h: usize, border: Border) -> (Vec<f64>, usize, usize) {
        let (tmp, tw, th) = self.pass(src, w, h, true, border, true);
        self.pass(&tmp, tw, th, false, border, true)
    }

    /// Per-axis clipped window mass for renormalized filtering.
    fn masses(&self, len: usize) -> Vec<f64> {
        let r = self.radius() as isize;
        (0..len as isize)
            .map(|p| {
                (-r..=r)
                    .filter(|k| (0..len as isize).contains(&(p + k)))
                    .map(|k| self.taps[(k + r) as usize])
                    .sum()
            })
            .collect()
    }

    /// Adjoint of the renormalized [`GaussianWindow::filter`].
    pub(crate) fn filter_adjoint(&self, v: &[f64], w: usize, h: usize) -> Vec<f64> {
        let mx = self.masses(w);
        let my = self.masses(h);
        let scaled: Vec<f64> = v
            .iter()
            .enumerate()
            .map(|(i, val)| val / (mx[i % w] * my[i / w]))
            .collect();
        // The unnormalized clipped Gaussian is symmetric.
        let (tmp, _, _) = self.pass(&scaled, w, h, true, Border::Renormalized, false);
        self.pass(&tmp, w, h, false, Border::Renormalized, false).0
    }
}

pub(crate) struct SsimResult {
    pub value: f64,
    /// d(mean SSIM)/dx, present only for renormalized borders.
    pub grad_x: Option<Vec<f64>>,
}

pub(crate) fn ssim_channel(
    window: &GaussianWindow,
    x: &[f64],
    y: &[f64],
    w: usize,
    h: usize,
    border: Border,
) -> SsimResult {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mu_x, _, _) = window.filter(x, w, h, border);
    let (mu_y, _, _) = window.filter(y, w, h, border);
    let (m_xx, _, _) = window.filter(&xx, w, h, border);
    let (m_yy, _, _) = window.filter(&yy, w, h, border);
    let (m_xy, _, _) = window.filter(&xy, w, h, border);
    let n = mu_x.len();
    let want_grad = border == Border::Renormalized;
    let (mut ga, mut gb, mut gc) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    let mut total = 0.0;
    for p in 0..n {
        let (mx, my) = (mu_x[p], mu_y[p]);
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * (m_xy[p] - mx * my) + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = (m_xx[p] - mx * mx) + (m_yy[p] - my * my) + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if want_grad {
            let inv = 1.0 / n as f64;
            ga[p] = inv * ((2.0 * my * a2 - 2.0 * my * a1) / (b1 * b2) - s * (2.0 * mx / b1 - 2.0 * mx / b2));
            gb[p] = inv * (-s / b2);
            gc[p] = inv * (2.0 * a1 / (b1 * b2));
        }
    }
    let value = total / n as f64;
    let grad_x = want_grad.then(|| {
        let fa = window.filter_adjoint(&ga, w, h);
        let fb = window.filter_adjoint(&gb, w, h);
        let fc = window.filter_adjoint(&gc, w, h);
        (0..w * h)
            .map(|q| fa[q] + 2.0 * x[q] * fb[q] + y[q] * fc[q])
            .collect()
    });
    SsimResult { value, grad_x }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub view: String,
    pub split: Split,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitMean {
    pub split: Split,
    pub psnr_db: f64,
    pub ssim: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn mean(&self, split: Split) -> Option<SplitMean> {
        let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.split == split).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some(SplitMean {
            split,
            psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            count: rows.len(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("view,split,psnr_db,ssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.6},{:.6}", r.view, r.split, r.psnr_db, r.ssim);
        }
        for split in [Split::Train, Split::Test] {
            if let Some(m) = self.mean(split) {
                let _ = writeln!(s, "mean_{split},{split},{:.6},{:.6}", m.psnr_db, m.ssim);
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Renders every train/test view of `scene` from `mpi` and scores it.
pub fn evaluate(mpi: &MultiplaneImage, scene: &Scene) -> Result<EvalReport> {
    scene.validate()?;
    let mut rows = Vec::new();
    for (split, indices) in [(Split::Train, &scene.train), (Split::Test, &scene.test)] {
        for &i in indices {
            let view = &scene.views[i];
            let out = render_novel_view(mpi, &view.camera)?;
            rows.push(EvalRow {
                view: view.name.clone(),
                split,
                psnr_db: psnr(&out.color, &view.image)?,
                ssim: ssim(&out.color, &view.image)?,
            });
        }
    }
    Ok(EvalReport { rows })
}
