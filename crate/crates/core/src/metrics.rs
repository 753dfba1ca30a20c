//! Image fidelity metrics, the rendering loss, and rate-distortion records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// `10 log10(peak² / MSE)`, capped at [`PSNR_CAP`] (identical images).
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    a.same_shape(b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.data.len() as f64)
}

pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>() / a.data.len() as f64)
}

fn window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" filtering of an `h × w` plane.
fn filter(x: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = (0..SSIM_WINDOW).map(|t| k[t] * x[y * w + xo + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..SSIM_WINDOW).map(|t| k[t] * rows[(yo + t) * ow + xo]).sum();
        }
    }
    out
}

/// Adjoint of [`filter`].
fn filter_adjoint(g: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            let v = g[yo * ow + xo];
            for t in 0..SSIM_WINDOW {
                rows[(yo + t) * ow + xo] += k[t] * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xo in 0..ow {
            let v = rows[y * ow + xo];
            for t in 0..SSIM_WINDOW {
                out[y * w + xo + t] += k[t] * v;
            }
        }
    }
    out
}

fn check_ssim_shape(a: &Image, b: &Image) -> Result<()> {
    a.same_shape(b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height, a.width
        )));
    }
    Ok(())
}

fn channel_plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).map(|&v| v as f64).collect()
}

/// Mean SSIM over valid window positions and channels; with `grad` also
/// returns `∂SSIM/∂a` in the layout of `a`.
fn ssim_impl(a: &Image, b: &Image, grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    check_ssim_shape(a, b)?;
    let (h, w, ch) = (a.height, a.width, a.channels);
    let k = window();
    let (c1, c2) = ((K1 * K1), (K2 * K2));
    let n_map = ((h + 1 - SSIM_WINDOW) * (w + 1 - SSIM_WINDOW)) as f64;
    let mut total = 0.0;
    let mut da = grad.then(|| vec![0.0; a.data.len()]);
    for c in 0..ch {
        let x = channel_plane(a, c);
        let y = channel_plane(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (filter(&x, h, w, &k), filter(&y, h, w, &k));
        let (pxx, pyy, pxy) = (filter(&xx, h, w, &k), filter(&yy, h, w, &k), filter(&xy, h, w, &k));
        let m = mx.len();
        let mut d_mx = vec![0.0; if grad { m } else { 0 }];
        let mut d_pxx = d_mx.clone();
        let mut d_pxy = d_mx.clone();
        for i in 0..m {
            let (ux, uy) = (mx[i], my[i]);
            let sxx = pxx[i] - ux * ux;
            let syy = pyy[i] - uy * uy;
            let sxy = pxy[i] - ux * uy;
            let a1 = 2.0 * ux * uy + c1;
            let a2 = 2.0 * sxy + c2;
            let b1 = ux * ux + uy * uy + c1;
            let b2 = sxx + syy + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if grad {
                d_pxx[i] = -s / b2;
                d_pxy[i] = 2.0 * s / a2;
                d_mx[i] = s * (2.0 * uy / a1 - 2.0 * uy / a2 - 2.0 * ux / b1 + 2.0 * ux / b2);
            }
        }
        if let Some(da) = da.as_mut() {
            let gm = filter_adjoint(&d_mx, h, w, &k);
            let gxx = filter_adjoint(&d_pxx, h, w, &k);
            let gxy = filter_adjoint(&d_pxy, h, w, &k);
            for p in 0..h * w {
                da[p * ch + c] = (gm[p] + 2.0 * x[p] * gxx[p] + y[p] * gxy[p]) / (n_map * ch as f64);
            }
        }
    }
    Ok((total / (n_map * ch as f64), da))
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), no padding.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    let (s, g) = ssim_impl(a, b, true)?;
    Ok((s, g.expect("gradient requested")))
}

/// `L1 + λ·(1 − SSIM)`.
pub fn render_loss(render: &Image, target: &Image, lambda_ssim: f32) -> Result<f32> {
    let mut l = l1(render, target)?;
    if lambda_ssim != 0.0 {
        l += lambda_ssim as f64 * (1.0 - ssim(render, target)?);
    }
    Ok(l as f32)
}

/// Loss value and `∂L/∂render`.
pub fn render_loss_grad(render: &Image, target: &Image, lambda_ssim: f32) -> Result<(f32, Image)> {
    render.same_shape(target)?;
    let n = render.data.len() as f64;
    let mut loss = 0.0;
    let mut g: Vec<f64> = render
        .data
        .iter()
        .zip(&target.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            loss += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    loss /= n;
    if lambda_ssim != 0.0 {
        let (s, ds) = ssim_grad(render, target)?;
        loss += lambda_ssim as f64 * (1.0 - s);
        for (gi, d) in g.iter_mut().zip(ds) {
            *gi -= lambda_ssim as f64 * d;
        }
    }
    let img = Image::new(render.height, render.width, render.channels, g.into_iter().map(|v| v as f32).collect())?;
    Ok((loss as f32, img))
}

/// Degraded and (optionally) restored metrics for one `(scene, level)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdCell {
    pub scene: usize,
    pub level: usize,
    pub bytes: u64,
    pub degraded: Quality,
    pub restored: Option<Quality>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub psnr: f64,
    pub ssim: f64,
    pub perc_proxy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub mean_bytes: f64,
    pub degraded: Quality,
    pub restored: Option<Quality>,
}

/// Rate-distortion table: one cell per `(scene, level)` plus per-level means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdReport {
    pub cells: Vec<RdCell>,
    pub levels: Vec<LevelSummary>,
}

impl RdReport {
    pub fn from_cells(cells: Vec<RdCell>) -> Self {
        let mut level_ids: Vec<usize> = cells.iter().map(|c| c.level).collect();
        level_ids.sort_unstable();
        level_ids.dedup();
        let mean_q = |qs: &[Quality]| -> Quality {
            let n = qs.len().max(1) as f64;
            Quality {
                psnr: qs.iter().map(|q| q.psnr).sum::<f64>() / n,
                ssim: qs.iter().map(|q| q.ssim).sum::<f64>() / n,
                perc_proxy: qs.iter().map(|q| q.perc_proxy).sum::<f64>() / n,
            }
        };
        let levels = level_ids
            .into_iter()
            .map(|level| {
                let sel: Vec<&RdCell> = cells.iter().filter(|c| c.level == level).collect();
                let deg: Vec<Quality> = sel.iter().map(|c| c.degraded).collect();
                let res: Vec<Quality> = sel.iter().filter_map(|c| c.restored).collect();
                LevelSummary {
                    level,
                    mean_bytes: sel.iter().map(|c| c.bytes as f64).sum::<f64>() / sel.len() as f64,
                    degraded: mean_q(&deg),
                    restored: (res.len() == sel.len() && !res.is_empty()).then(|| mean_q(&res)),
                }
            })
            .collect();
        Self { cells, levels }
    }

    pub fn is_finite(&self) -> bool {
        let q = |q: &Quality| q.psnr.is_finite() && q.ssim.is_finite() && q.perc_proxy.is_finite();
        self.cells.iter().all(|c| q(&c.degraded) && c.restored.as_ref().is_none_or(q))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table of the per-level means.
    pub fn to_table(&self) -> String {
        let has_restored = self.levels.iter().any(|l| l.restored.is_some());
        let mut s = String::new();
        s.push_str(&format!("{:>5}  {:>12}  {:>9}  {:>7}  {:>10}", "level", "bytes", "deg-psnr", "deg-ssim", "deg-perc"));
        if has_restored {
            s.push_str(&format!("  {:>9}  {:>8}  {:>10}", "res-psnr", "res-ssim", "res-perc"));
        }
        s.push('\n');
        for l in &self.levels {
            s.push_str(&format!(
                "{:>5}  {:>12.1}  {:>9.3}  {:>8.4}  {:>10.5}",
                l.level, l.mean_bytes, l.degraded.psnr, l.degraded.ssim, l.degraded.perc_proxy
            ));
            if let Some(r) = &l.restored {
                s.push_str(&format!("  {:>9.3}  {:>8.4}  {:>10.5}", r.psnr, r.ssim, r.perc_proxy));
            }
            s.push('\n');
        }
        s
    }

    /// One row per cell; restored columns appear only when every cell has them.
    pub fn to_csv(&self) -> String {
        let with_restored = !self.cells.is_empty() && self.cells.iter().all(|c| c.restored.is_some());
        let mut s = String::from("scene,level,bytes,deg_psnr,deg_ssim,deg_perc_proxy");
        s.push_str(if with_restored { ",res_psnr,res_ssim,res_perc_proxy\n" } else { "\n" });
        for c in &self.cells {
            let d = c.degraded;
            s.push_str(&format!("{},{},{},{},{},{}", c.scene, c.level, c.bytes, d.psnr, d.ssim, d.perc_proxy));
            if let (true, Some(r)) = (with_restored, c.restored) {
                s.push_str(&format!(",{},{},{}", r.psnr, r.ssim, r.perc_proxy));
            }
            s.push('\n');
        }
        s
    }
}
