//! Reverse-mode pass through warping and over-compositing.
//!
//! Camera geometry is fixed during optimization, so bilinear weights are
//! constants and the renderer is differentiated only with respect to plane
//! values. For plane `i` at one pixel, with `w_k = T_k (1 - e^{-σ_k δ_k})`
//! and upstream color gradient `g`:
//!
//! ```text
//! ∂L/∂C_i = w_i g
//! ∂L/∂σ_i = δ_i [ T_{i+1} (g·C_i) - Σ_{k>i} w_k (g·C_k) ]
//! ```

use rayon::prelude::*;

use crate::image::Image;
use crate::mpi::{composite_view, ViewGeometry, CHANNELS};

/// Color rendering of `planes` (`[plane][row][col][r, g, b, σ]`, sized to
/// the geometry's source image) into the target view.
pub fn render_color(geom: &ViewGeometry, planes: &[f64]) -> Image<f64> {
    let plane_len = geom.source_width * geom.source_height;
    let px = composite_view(geom, planes, plane_len);
    let data = px.iter().flat_map(|p| p.color).collect();
    Image {
        width: geom.target.width,
        height: geom.target.height,
        channels: 3,
        data,
    }
}

/// Gradient of `L(render_color(geom, planes))` with respect to `planes`,
/// given `∂L/∂color`.
pub fn backward_render(geom: &ViewGeometry, planes: &[f64], grad_color: &Image<f64>) -> Vec<f64> {
    let (w, h) = (geom.target.width, geom.target.height);
    let d = geom.plane_count();
    let plane_len = geom.source_width * geom.source_height;

    // Per target pixel and plane: gradient with respect to the sampled
    // (r, g, b, σ). Layout [pixel][plane][channel].
    let mut sample_grad = vec![0.0; w * h * d * CHANNELS];
    sample_grad
        .par_chunks_mut(w * d * CHANNELS)
        .enumerate()
        .for_each(|(y, row)| {
            let mut deltas = vec![0.0; d];
            let mut samples: Vec<Option<[f64; CHANNELS]>> = vec![None; d];
            let mut trans = vec![0.0; d + 1];
            let mut weights = vec![0.0; d];
            for x in 0..w {
                let g = {
                    let o = (y * w + x) * 3;
                    [grad_color.data[o], grad_color.data[o + 1], grad_color.data[o + 2]]
                };
                if g == [0.0; 3] {
                    continue;
                }
                geom.deltas_into(x, y, &mut deltas);
                trans[0] = 1.0;
                for i in 0..d {
                    let plane = &planes[i * plane_len * CHANNELS..(i + 1) * plane_len * CHANNELS];
                    samples[i] = geom.tap(i, x, y).map(|t| t.sample(plane));
                    match samples[i] {
                        Some(s) => {
                            let decay = (-s[3] * deltas[i]).exp();
                            weights[i] = trans[i] * (1.0 - decay);
                            trans[i + 1] = trans[i] * decay;
                        }
                        None => {
                            weights[i] = 0.0;
                            trans[i + 1] = trans[i];
                        }
                    }
                }
                let out = &mut row[x * d * CHANNELS..(x + 1) * d * CHANNELS];
                let mut behind = 0.0;
                for i in (0..d).rev() {
                    let Some(s) = samples[i] else { continue };
                    let gc = g[0] * s[0] + g[1] * s[1] + g[2] * s[2];
                    let o = &mut out[i * CHANNELS..(i + 1) * CHANNELS];
                    for c in 0..3 {
                        o[c] = weights[i] * g[c];
                    }
                    o[3] = deltas[i] * (trans[i + 1] * gc - behind);
                    behind += weights[i] * gc;
                }
            }
        });

    // Scatter through the bilinear taps, one plane per task.
    let mut grad = vec![0.0; planes.len()];
    grad.par_chunks_mut(plane_len * CHANNELS)
        .enumerate()
        .for_each(|(i, plane_grad)| {
            for y in 0..h {
                for x in 0..w {
                    let Some(tap) = geom.tap(i, x, y) else { continue };
                    let o = ((y * w + x) * d + i) * CHANNELS;
                    let s = &sample_grad[o..o + CHANNELS];
                    if s == [0.0; CHANNELS] {
                        continue;
                    }
                    for (idx, wt) in tap.corners() {
                        if wt == 0.0 {
                            continue;
                        }
                        for c in 0..CHANNELS {
                            plane_grad[idx * CHANNELS + c] += wt * s[c];
                        }
                    }
                }
            }
        });
    grad
}
