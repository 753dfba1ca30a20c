//! Depth-sorted alpha compositing of projected Gaussians with analytic
//! gradients.
//!
//! Primitives are sorted by `(depth, index)` and binned into 16×16 tiles
//! using the exact screen ellipse on which `opacity · G = 1/255`, so the
//! binning never drops a contribution the per-pixel skip rule would keep.

mod backward;
mod project;
mod saliency;

pub use backward::{render_backward, render_backward_image, GaussianGrads};
pub use project::{conic, project_gaussian, ScreenGaussian, COV_FLOOR};
pub use saliency::primitive_saliency;

use diffeng::par;

use crate::camera::Camera;
use crate::error::Result;
use crate::gaussian::GaussianSet;
use crate::image::Image;
use crate::math::Vec3;

pub const TILE: usize = 16;
pub const ALPHA_MIN: f32 = 1.0 / 255.0;
pub const ALPHA_MAX: f32 = 0.99;
pub const T_MIN: f32 = 1e-4;

/// A visible primitive prepared for compositing.
#[derive(Clone, Debug)]
pub(crate) struct Splat {
    pub index: usize,
    pub depth: f32,
    pub mean: [f32; 2],
    pub conic: [f32; 3],
    pub opacity: f32,
    pub color: Vec3,
}

/// Render state needed by the backward pass.
#[derive(Clone, Debug)]
pub struct RenderAux {
    pub(crate) splats: Vec<Splat>,
    /// Per tile, positions into `splats` in front-to-back order.
    pub(crate) tiles: Vec<Vec<u32>>,
    pub(crate) final_t: Vec<f32>,
    /// Per pixel, one past the last list entry that contributed.
    pub(crate) n_contrib: Vec<u32>,
    pub(crate) background: Vec3,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    /// `H × W × 3`.
    pub image: Image,
    /// `H × W × 1` accumulated opacity `1 − T_final`.
    pub alpha: Image,
    pub aux: Option<RenderAux>,
}

/// Value of `opacity · exp(-½ dᵀ K d)` and the exponent's Gaussian factor.
#[inline]
pub(crate) fn splat_alpha(s: &Splat, px: f32, py: f32) -> (f32, f32, f32, f32) {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let power = -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
    let g = power.exp();
    let raw = s.opacity * g;
    (raw.min(ALPHA_MAX), g, dx, dy)
}

fn tiles_xy(cam: &Camera) -> (usize, usize) {
    (
        (cam.width as usize).div_ceil(TILE),
        (cam.height as usize).div_ceil(TILE),
    )
}

fn prepare(gs: &GaussianSet, cam: &Camera) -> (Vec<Splat>, Vec<[usize; 4]>) {
    let center = cam.center();
    let (w, h) = (cam.width as f32, cam.height as f32);
    let prepared: Vec<Option<(Splat, [usize; 4])>> = par::map_indexed(gs.len(), |i| {
        let geo = project::geometry(gs.positions[i], gs.rotations[i], gs.log_scales[i], cam)?;
        let opacity = gs.opacity(i);
        if opacity * 255.0 <= 1.0 {
            return None;
        }
        let cov = geo.screen.cov2d;
        let det = cov[0] * cov[2] - cov[1] * cov[1];
        if !(det > 0.0) {
            return None;
        }
        // Exact support of alpha >= 1/255 plus a one-pixel rounding margin.
        let q_max = 2.0 * (255.0 * opacity).ln();
        let rx = (q_max * cov[0]).sqrt() + 1.0;
        let ry = (q_max * cov[2]).sqrt() + 1.0;
        let [mx, my] = geo.screen.mean2d;
        let x0 = (mx - rx - 0.5).ceil().max(0.0);
        let x1 = (mx + rx - 0.5).floor().min(w - 1.0);
        let y0 = (my - ry - 0.5).ceil().max(0.0);
        let y1 = (my + ry - 0.5).floor().min(h - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            return None;
        }
        let (color, _) = project::color(gs, i, center);
        Some((
            Splat {
                index: i,
                depth: geo.screen.depth,
                mean: geo.screen.mean2d,
                conic: project::conic(cov),
                opacity,
                color,
            },
            [x0 as usize, x1 as usize, y0 as usize, y1 as usize],
        ))
    });
    let mut items: Vec<(Splat, [usize; 4])> = prepared.into_iter().flatten().collect();
    items.sort_by(|a, b| a.0.depth.total_cmp(&b.0.depth).then(a.0.index.cmp(&b.0.index)));
    items.into_iter().unzip()
}

fn bin(boxes: &[[usize; 4]], cam: &Camera) -> Vec<Vec<u32>> {
    let (tx, ty) = tiles_xy(cam);
    let mut tiles = vec![Vec::new(); tx * ty];
    for (k, b) in boxes.iter().enumerate() {
        for ty_i in b[2] / TILE..=b[3] / TILE {
            for tx_i in b[0] / TILE..=b[1] / TILE {
                tiles[ty_i * tx + tx_i].push(k as u32);
            }
        }
    }
    tiles
}

/// Renders `gs` from `cam` over `background`; keeps the state for
/// [`render_backward`] when `with_grad` is set.
pub fn render(gs: &GaussianSet, cam: &Camera, background: Vec3, with_grad: bool) -> Result<RenderOutput> {
    gs.validate()?;
    cam.validate()?;
    let (splats, boxes) = prepare(gs, cam);
    let tiles = bin(&boxes, cam);
    let (w, h) = (cam.width as usize, cam.height as usize);
    let (tx, _) = tiles_xy(cam);

    struct TileOut {
        color: Vec<f32>,
        t: Vec<f32>,
        n: Vec<u32>,
    }
    let outs: Vec<TileOut> = par::map_indexed(tiles.len(), |ti| {
        let (ox, oy) = ((ti % tx) * TILE, (ti / tx) * TILE);
        let (tw, th) = (TILE.min(w - ox), TILE.min(h - oy));
        let list = &tiles[ti];
        let mut out = TileOut {
            color: vec![0.0; tw * th * 3],
            t: vec![1.0; tw * th],
            n: vec![0; tw * th],
        };
        for ly in 0..th {
            for lx in 0..tw {
                let px = (ox + lx) as f32 + 0.5;
                let py = (oy + ly) as f32 + 0.5;
                let mut t = 1.0f32;
                let mut c = [0.0f32; 3];
                let mut last = 0u32;
                for (j, &k) in list.iter().enumerate() {
                    let s = &splats[k as usize];
                    let (alpha, ..) = splat_alpha(s, px, py);
                    if alpha < ALPHA_MIN {
                        continue;
                    }
                    let next_t = t * (1.0 - alpha);
                    if next_t < T_MIN {
                        break;
                    }
                    for ch in 0..3 {
                        c[ch] += s.color[ch] * alpha * t;
                    }
                    t = next_t;
                    last = j as u32 + 1;
                }
                let p = ly * tw + lx;
                for ch in 0..3 {
                    out.color[p * 3 + ch] = c[ch] + t * background[ch];
                }
                out.t[p] = t;
                out.n[p] = last;
            }
        }
        out
    });

    let mut image = vec![0.0; w * h * 3];
    let mut final_t = vec![1.0; w * h];
    let mut n_contrib = vec![0; w * h];
    for (ti, o) in outs.iter().enumerate() {
        let (ox, oy) = ((ti % tx) * TILE, (ti / tx) * TILE);
        let tw = TILE.min(w - ox);
        for (p, &t) in o.t.iter().enumerate() {
            let (lx, ly) = (p % tw, p / tw);
            let g = (oy + ly) * w + ox + lx;
            image[g * 3..g * 3 + 3].copy_from_slice(&o.color[p * 3..p * 3 + 3]);
            final_t[g] = t;
            n_contrib[g] = o.n[p];
        }
    }
    let alpha = Image::new(h, w, 1, final_t.iter().map(|t| 1.0 - t).collect())?;
    let image = Image::new(h, w, 3, image)?;
    let aux = with_grad.then_some(RenderAux {
        splats,
        tiles,
        final_t,
        n_contrib,
        background,
    });
    Ok(RenderOutput { image, alpha, aux })
}

/// Renders without an empty-scene check: zero primitives give the background.
pub fn render_or_background(gs: Option<&GaussianSet>, cam: &Camera, background: Vec3) -> Result<Image> {
    match gs {
        Some(gs) => Ok(render(gs, cam, background, false)?.image),
        None => Ok(Image::filled(cam.height as usize, cam.width as usize, &background)),
    }
}
