//! Perspective projection of one primitive and its adjoint.

use crate::camera::Camera;
use crate::gaussian::GaussianSet;
use crate::math::{self, Mat3, Vec3};
use crate::sh;

/// Low-pass floor added to every screen covariance, in px².
pub const COV_FLOOR: f32 = 0.3;

/// Screen-space footprint of a primitive. `cov2d` is `[xx, xy, yy]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenGaussian {
    pub mean2d: [f32; 2],
    pub cov2d: [f32; 3],
    pub depth: f32,
}

/// Intermediate values shared between the projection and its adjoint.
pub(crate) struct Geometry {
    pub t: Vec3,
    /// `J W`, the 2×3 Jacobian of the pixel position w.r.t. the world point.
    pub tw: [[f32; 3]; 2],
    pub sigma: Mat3,
    pub m: Mat3,
    pub r: Mat3,
    pub unit_q: [f32; 4],
    pub scales: Vec3,
    pub screen: ScreenGaussian,
}

pub(crate) fn geometry(position: Vec3, rotation: [f32; 4], log_scales: Vec3, cam: &Camera) -> Option<Geometry> {
    let t = cam.to_camera(position);
    if !(t[2] > cam.near && t[2] < cam.far) {
        return None;
    }
    let unit_q = math::quat_normalize(rotation);
    let r = math::quat_to_mat(unit_q);
    let scales = [log_scales[0].exp(), log_scales[1].exp(), log_scales[2].exp()];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * scales[j];
        }
    }
    let sigma = math::mat_mul(&m, &math::transpose(&m));

    let (tx, ty, tz) = (t[0], t[1], t[2]);
    let j = [
        [cam.fx / tz, 0.0, -cam.fx * tx / (tz * tz)],
        [0.0, cam.fy / tz, -cam.fy * ty / (tz * tz)],
    ];
    let w = &cam.rotation;
    let mut tw = [[0.0; 3]; 2];
    for row in 0..2 {
        for col in 0..3 {
            tw[row][col] = j[row][0] * w[0][col] + j[row][1] * w[1][col] + j[row][2] * w[2][col];
        }
    }
    let cov = |a: usize, b: usize| -> f32 {
        let mut s = 0.0;
        for k in 0..3 {
            for l in 0..3 {
                s += tw[a][k] * sigma[k][l] * tw[b][l];
            }
        }
        s
    };
    let cov2d = [cov(0, 0) + COV_FLOOR, cov(0, 1), cov(1, 1) + COV_FLOOR];
    let mean2d = [cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy];
    Some(Geometry {
        t,
        tw,
        sigma,
        m,
        r,
        unit_q,
        scales,
        screen: ScreenGaussian {
            mean2d,
            cov2d,
            depth: tz,
        },
    })
}

/// Projects primitive `i`; `None` when it lies outside the near/far range.
pub fn project_gaussian(gs: &GaussianSet, i: usize, cam: &Camera) -> Option<ScreenGaussian> {
    geometry(gs.positions[i], gs.rotations[i], gs.log_scales[i], cam).map(|g| g.screen)
}

/// Inverse of a symmetric 2×2 matrix `[xx, xy, yy]`.
pub fn conic(cov: [f32; 3]) -> [f32; 3] {
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    [cov[2] / det, -cov[1] / det, cov[0] / det]
}

/// Upstream gradients of one primitive in screen space.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct ScreenGrad {
    pub mean2d: [f32; 2],
    /// w.r.t. conic `[A, B, C]` where the exponent uses `2 B dx dy`.
    pub conic: [f32; 3],
    pub opacity: f32,
    pub color: Vec3,
}

impl ScreenGrad {
    pub fn add(&mut self, o: &ScreenGrad) {
        self.mean2d[0] += o.mean2d[0];
        self.mean2d[1] += o.mean2d[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Per-primitive attribute gradients.
pub(crate) struct PrimitiveGrad {
    pub position: Vec3,
    pub rotation: [f32; 4],
    pub log_scales: Vec3,
    pub opacity_logit: f32,
}

/// Pulls screen-space gradients back to the stored attributes of primitive
/// `i`. The SH part is handled by [`color_backward`].
pub(crate) fn primitive_backward(gs: &GaussianSet, i: usize, cam: &Camera, g: &ScreenGrad) -> Option<PrimitiveGrad> {
    let geo = geometry(gs.positions[i], gs.rotations[i], gs.log_scales[i], cam)?;
    let k = conic(geo.screen.cov2d);
    let gm = [[g.conic[0], 0.5 * g.conic[1]], [0.5 * g.conic[1], g.conic[2]]];
    let km = [[k[0], k[1]], [k[1], k[2]]];
    // dL/dcov = -K Gm K
    let mut kg = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            kg[a][b] = km[a][0] * gm[0][b] + km[a][1] * gm[1][b];
        }
    }
    let mut dcov = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            dcov[a][b] = -(kg[a][0] * km[0][b] + kg[a][1] * km[1][b]);
        }
    }

    let tw = &geo.tw;
    // dL/dΣ = Twᵀ dcov Tw
    let mut dsigma = [[0.0; 3]; 3];
    for p in 0..3 {
        for q in 0..3 {
            let mut s = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    s += tw[a][p] * dcov[a][b] * tw[b][q];
                }
            }
            dsigma[p][q] = s;
        }
    }
    // dL/dTw = 2 dcov Tw Σ
    let mut tws = [[0.0; 3]; 2];
    for a in 0..2 {
        for q in 0..3 {
            tws[a][q] = (0..3).map(|l| tw[a][l] * geo.sigma[l][q]).sum();
        }
    }
    let mut dtw = [[0.0; 3]; 2];
    for a in 0..2 {
        for q in 0..3 {
            dtw[a][q] = 2.0 * (dcov[a][0] * tws[0][q] + dcov[a][1] * tws[1][q]);
        }
    }
    // dL/dJ = dTw Wᵀ
    let w = &cam.rotation;
    let mut dj = [[0.0; 3]; 2];
    for a in 0..2 {
        for kk in 0..3 {
            dj[a][kk] = (0..3).map(|m| dtw[a][m] * w[kk][m]).sum();
        }
    }

    let [tx, ty, tz] = geo.t;
    let (fx, fy) = (cam.fx, cam.fy);
    let tz2 = tz * tz;
    let tz3 = tz2 * tz;
    let mut dt = [0.0f32; 3];
    dt[0] += dj[0][2] * (-fx / tz2);
    dt[1] += dj[1][2] * (-fy / tz2);
    dt[2] += dj[0][0] * (-fx / tz2) + dj[0][2] * (2.0 * fx * tx / tz3) + dj[1][1] * (-fy / tz2) + dj[1][2] * (2.0 * fy * ty / tz3);
    dt[0] += g.mean2d[0] * fx / tz;
    dt[1] += g.mean2d[1] * fy / tz;
    dt[2] += -g.mean2d[0] * fx * tx / tz2 - g.mean2d[1] * fy * ty / tz2;
    let position = math::mat_t_vec(w, dt);

    // Σ = M Mᵀ, M = R diag(s)
    let mut dm = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            dm[a][b] = 2.0 * (0..3).map(|l| dsigma[a][l] * geo.m[l][b]).sum::<f32>();
        }
    }
    let mut log_scales = [0.0; 3];
    let mut dr = [[0.0; 3]; 3];
    for b in 0..3 {
        let ds: f32 = (0..3).map(|a| geo.r[a][b] * dm[a][b]).sum();
        log_scales[b] = ds * geo.scales[b];
        for a in 0..3 {
            dr[a][b] = dm[a][b] * geo.scales[b];
        }
    }
    let dq_unit = math::quat_to_mat_backward(geo.unit_q, &dr);
    let rotation = math::quat_normalize_backward(gs.rotations[i], dq_unit);

    let o = gs.opacity(i);
    Some(PrimitiveGrad {
        position,
        rotation,
        log_scales,
        opacity_logit: g.opacity * o * (1.0 - o),
    })
}

/// Clamped view-dependent color and the per-channel "inside clamp" mask.
pub(crate) fn color(gs: &GaussianSet, i: usize, cam_center: Vec3) -> (Vec3, [bool; 3]) {
    let dir = math::normalize(math::sub(gs.positions[i], cam_center));
    let raw = sh::eval_raw(gs.sh(i), sh_stride(gs), dir, gs.sh_degree);
    let mask = raw.map(|v| (0.0..=1.0).contains(&v));
    (raw.map(|v| v.clamp(0.0, 1.0)), mask)
}

fn sh_stride(gs: &GaussianSet) -> usize {
    crate::gaussian::sh_len(gs.sh_degree)
}

/// Gradients of the clamped color w.r.t. the SH coefficients (written into
/// `dcoeffs`) and w.r.t. the position through the view direction (returned).
pub(crate) fn color_backward(gs: &GaussianSet, i: usize, cam_center: Vec3, dcolor: Vec3, dcoeffs: &mut [f32]) -> Vec3 {
    let diff = math::sub(gs.positions[i], cam_center);
    let len = math::norm(diff);
    let dir = math::scale(diff, 1.0 / len);
    let stride = sh_stride(gs);
    let coeffs = gs.sh(i);
    let raw = sh::eval_raw(coeffs, stride, dir, gs.sh_degree);
    let mut y = [0.0; 16];
    sh::basis(dir, gs.sh_degree, &mut y);
    let mut dy = [[0.0; 3]; 16];
    sh::basis_grad(dir, gs.sh_degree, &mut dy);
    let mut ddir = [0.0f32; 3];
    for c in 0..3 {
        if !(0.0..=1.0).contains(&raw[c]) {
            continue;
        }
        let g = dcolor[c];
        for k in 0..stride {
            dcoeffs[c * stride + k] = g * y[k];
            let coef = coeffs[c * stride + k];
            for d in 0..3 {
                ddir[d] += g * coef * dy[k][d];
            }
        }
    }
    let proj = math::dot(dir, ddir);
    math::scale(math::sub(ddir, math::scale(dir, proj)), 1.0 / len)
}
