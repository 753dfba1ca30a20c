use diffeng::par;

use super::project::{self, ScreenGrad};
use super::{splat_alpha, tiles_xy, RenderOutput, ALPHA_MAX, ALPHA_MIN, TILE};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::image::Image;
use crate::math::Vec3;
use crate::metrics;

/// Gradients laid out like the attributes of a [`GaussianSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrads {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<[f32; 4]>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f32>,
    pub sh_coeffs: Vec<f32>,
    pub sh_stride: usize,
}

impl GaussianGrads {
    pub fn zeros(gs: &GaussianSet) -> Self {
        let n = gs.len();
        Self {
            positions: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            log_scales: vec![[0.0; 3]; n],
            opacity_logits: vec![0.0; n],
            sh_coeffs: vec![0.0; n * gs.sh_stride()],
            sh_stride: gs.sh_stride(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// L2 norm of all attribute gradients of primitive `i` taken together.
    pub fn primitive_norm(&self, i: usize) -> f64 {
        let sq = |v: f32| (v as f64) * (v as f64);
        let mut s: f64 = self.positions[i].iter().map(|&v| sq(v)).sum();
        s += self.rotations[i].iter().map(|&v| sq(v)).sum::<f64>();
        s += self.log_scales[i].iter().map(|&v| sq(v)).sum::<f64>();
        s += sq(self.opacity_logits[i]);
        s += self.sh_coeffs[i * self.sh_stride..(i + 1) * self.sh_stride]
            .iter()
            .map(|&v| sq(v))
            .sum::<f64>();
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().flatten().all(|v| v.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.sh_coeffs.iter().all(|v| v.is_finite())
    }
}

/// Back-propagates an image gradient `dL/dimage` (`H × W × 3`) through a
/// render produced with `with_grad = true`.
pub fn render_backward_image(gs: &GaussianSet, cam: &Camera, out: &RenderOutput, dimage: &Image) -> Result<GaussianGrads> {
    let aux = out
        .aux
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("render_backward needs a render made with with_grad = true".into()))?;
    out.image.same_shape(dimage)?;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let (tx, _) = tiles_xy(cam);
    let bg = aux.background;
    let dimg = &dimage.data;

    // Per-tile partial gradients indexed by position in the tile list.
    let partials: Vec<Vec<ScreenGrad>> = par::map_indexed(aux.tiles.len(), |ti| {
        let list = &aux.tiles[ti];
        let mut acc = vec![ScreenGrad::default(); list.len()];
        if list.is_empty() {
            return acc;
        }
        let (ox, oy) = ((ti % tx) * TILE, (ti / tx) * TILE);
        let (tw, th) = (TILE.min(w - ox), TILE.min(h - oy));
        for ly in 0..th {
            for lx in 0..tw {
                let gp = (oy + ly) * w + ox + lx;
                let dc = [dimg[gp * 3], dimg[gp * 3 + 1], dimg[gp * 3 + 2]];
                if dc == [0.0; 3] {
                    continue;
                }
                let px = (ox + lx) as f32 + 0.5;
                let py = (oy + ly) as f32 + 0.5;
                let t_final = aux.final_t[gp];
                let bg_dot = bg[0] * dc[0] + bg[1] * dc[1] + bg[2] * dc[2];
                let mut t = t_final;
                let mut behind = [0.0f32; 3];
                for j in (0..aux.n_contrib[gp] as usize).rev() {
                    let s = &aux.splats[list[j] as usize];
                    let (alpha, g, dx, dy) = splat_alpha(s, px, py);
                    if alpha < ALPHA_MIN {
                        continue;
                    }
                    t /= 1.0 - alpha;
                    let a = &mut acc[j];
                    let mut dalpha = 0.0;
                    for ch in 0..3 {
                        a.color[ch] += alpha * t * dc[ch];
                        dalpha += (s.color[ch] - behind[ch]) * dc[ch];
                        behind[ch] = alpha * s.color[ch] + (1.0 - alpha) * behind[ch];
                    }
                    dalpha *= t;
                    dalpha -= t_final / (1.0 - alpha) * bg_dot;
                    if s.opacity * g > ALPHA_MAX {
                        continue;
                    }
                    a.opacity += g * dalpha;
                    let dg = s.opacity * dalpha * g;
                    a.mean2d[0] += dg * (s.conic[0] * dx + s.conic[1] * dy);
                    a.mean2d[1] += dg * (s.conic[2] * dy + s.conic[1] * dx);
                    a.conic[0] += -0.5 * dg * dx * dx;
                    a.conic[1] += -dg * dx * dy;
                    a.conic[2] += -0.5 * dg * dy * dy;
                }
            }
        }
        acc
    });

    // Deterministic reduction in tile order.
    let mut screen = vec![ScreenGrad::default(); aux.splats.len()];
    for (ti, part) in partials.iter().enumerate() {
        for (j, g) in part.iter().enumerate() {
            screen[aux.tiles[ti][j] as usize].add(g);
        }
    }

    let center = cam.center();
    let stride = gs.sh_stride();
    let per_splat: Vec<Option<(project::PrimitiveGrad, Vec<f32>)>> = par::map_indexed(aux.splats.len(), |k| {
        let s = &aux.splats[k];
        let g = &screen[k];
        let mut pg = project::primitive_backward(gs, s.index, cam, g)?;
        let mut dsh = vec![0.0; stride];
        let dpos = project::color_backward(gs, s.index, center, g.color, &mut dsh);
        for d in 0..3 {
            pg.position[d] += dpos[d];
        }
        Some((pg, dsh))
    });

    let mut grads = GaussianGrads::zeros(gs);
    for (k, item) in per_splat.into_iter().enumerate() {
        let Some((pg, dsh)) = item else { continue };
        let i = aux.splats[k].index;
        grads.positions[i] = pg.position;
        grads.rotations[i] = pg.rotation;
        grads.log_scales[i] = pg.log_scales;
        grads.opacity_logits[i] = pg.opacity_logit;
        grads.sh_coeffs[i * stride..(i + 1) * stride].copy_from_slice(&dsh);
    }
    Ok(grads)
}

/// Rendering loss `L1 + λ·(1 − SSIM)` against `target` and its gradients.
pub fn render_backward(
    gs: &GaussianSet,
    cam: &Camera,
    out: &RenderOutput,
    target: &Image,
    lambda_ssim: f32,
) -> Result<(f32, GaussianGrads)> {
    out.image.same_shape(target)?;
    let (loss, dimg) = metrics::render_loss_grad(&out.image, target, lambda_ssim)?;
    let grads = render_backward_image(gs, cam, out, &dimg)?;
    Ok((loss, grads))
}
