//! Brute-force double-precision references for tests: a per-pixel renderer
//! with no tiling, a direct 2-D SSIM, PSNR, entropy and finite differences.
//! Nothing here shares code with the production crates.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};

#[derive(Clone, Debug)]
pub struct RefGaussian {
    pub position: [f64; 3],
    /// `(w, x, y, z)`, not necessarily unit length.
    pub rotation: [f64; 4],
    pub log_scales: [f64; 3],
    pub opacity_logit: f64,
    /// Channel-major, `3 × (degree + 1)²`.
    pub sh: Vec<f64>,
    pub degree: u8,
}

#[derive(Clone, Debug)]
pub struct RefCamera {
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

/// `(H·W·3)` HWC image in f64.
pub type RefImage = Vec<f64>;

fn sh_basis(d: Vector3<f64>, degree: u8) -> Vec<f64> {
    let (x, y, z) = (d.x, d.y, d.z);
    let c0 = 0.5 / std::f64::consts::PI.sqrt();
    let c1 = (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
    let mut b = vec![c0];
    if degree >= 1 {
        b.extend([-c1 * y, c1 * z, -c1 * x]);
    }
    if degree >= 2 {
        let pi = std::f64::consts::PI;
        let a = 0.5 * (15.0 / pi).sqrt();
        let c = 0.25 * (5.0 / pi).sqrt();
        let e = 0.25 * (15.0 / pi).sqrt();
        b.extend([
            a * x * y,
            -a * y * z,
            c * (2.0 * z * z - x * x - y * y),
            -a * x * z,
            e * (x * x - y * y),
        ]);
    }
    if degree >= 3 {
        let pi = std::f64::consts::PI;
        let k0 = 0.25 * (35.0 / (2.0 * pi)).sqrt();
        let k1 = 0.5 * (105.0 / pi).sqrt();
        let k2 = 0.25 * (21.0 / (2.0 * pi)).sqrt();
        let k3 = 0.25 * (7.0 / pi).sqrt();
        let k5 = 0.25 * (105.0 / pi).sqrt();
        b.extend([
            -k0 * y * (3.0 * x * x - y * y),
            k1 * x * y * z,
            -k2 * y * (4.0 * z * z - x * x - y * y),
            k3 * z * (2.0 * z * z - 3.0 * x * x - 3.0 * y * y),
            -k2 * x * (4.0 * z * z - x * x - y * y),
            k5 * z * (x * x - y * y),
            -k0 * x * (x * x - 3.0 * y * y),
        ]);
    }
    b
}

struct Projected {
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    depth: f64,
    opacity: f64,
    color: [f64; 3],
    index: usize,
}

/// Projects one primitive; `None` outside the near/far range or when its
/// peak opacity cannot reach 1/255.
fn project(g: &RefGaussian, index: usize, cam: &RefCamera) -> Option<Projected> {
    let w = Matrix3::from_row_slice(&cam.rotation.concat());
    let p = Vector3::from_row_slice(&g.position);
    let t = w * p + Vector3::from_row_slice(&cam.translation);
    if !(t.z > cam.near && t.z < cam.far) {
        return None;
    }
    let opacity = 1.0 / (1.0 + (-g.opacity_logit).exp());
    if opacity * 255.0 <= 1.0 {
        return None;
    }
    let [qw, qx, qy, qz] = g.rotation;
    let r = UnitQuaternion::from_quaternion(Quaternion::new(qw, qx, qy, qz)).to_rotation_matrix();
    let s = Matrix3::from_diagonal(&Vector3::from_iterator(g.log_scales.iter().map(|v| v.exp())));
    let m = r.matrix() * s;
    let sigma = m * m.transpose();
    let j = Matrix2x3::new(
        cam.fx / t.z,
        0.0,
        -cam.fx * t.x / (t.z * t.z),
        0.0,
        cam.fy / t.z,
        -cam.fy * t.y / (t.z * t.z),
    );
    let tw = j * w;
    let cov = tw * sigma * tw.transpose() + Matrix2::identity() * 0.3;
    let conic = cov.try_inverse()?;
    let mean = Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy);

    let center = -(w.transpose() * Vector3::from_row_slice(&cam.translation));
    let dir = (p - center).normalize();
    let basis = sh_basis(dir, g.degree);
    let k = basis.len();
    let mut color = [0.0; 3];
    for (c, out) in color.iter_mut().enumerate() {
        let raw: f64 = 0.5 + (0..k).map(|i| g.sh[c * k + i] * basis[i]).sum::<f64>();
        *out = raw.clamp(0.0, 1.0);
    }
    Some(Projected {
        mean,
        conic,
        depth: t.z,
        opacity,
        color,
        index,
    })
}

/// Front-to-back compositing over every primitive at every pixel center,
/// ordered by (depth, index). Alpha is capped at 0.99, contributions below
/// 1/255 are skipped, and a pixel stops before the primitive that would push
/// its transmittance under 1e-4.
pub fn render(gaussians: &[RefGaussian], cam: &RefCamera, background: [f64; 3]) -> RefImage {
    let mut prims: Vec<Projected> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project(g, i, cam))
        .collect();
    prims.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    let mut img = vec![0.0; cam.width * cam.height * 3];
    for py in 0..cam.height {
        for px in 0..cam.width {
            let pix = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for p in &prims {
                let d = pix - p.mean;
                let gval = (-0.5 * (d.transpose() * p.conic * d)[(0, 0)]).exp();
                let alpha = (p.opacity * gval).min(0.99);
                if alpha < 1.0 / 255.0 {
                    continue;
                }
                let next = t * (1.0 - alpha);
                if next < 1e-4 {
                    break;
                }
                for k in 0..3 {
                    c[k] += p.color[k] * alpha * t;
                }
                t = next;
            }
            let o = (py * cam.width + px) * 3;
            for k in 0..3 {
                img[o + k] = c[k] + t * background[k];
            }
        }
    }
    img
}

fn gaussian_window() -> Vec<f64> {
    let mut w = Vec::with_capacity(121);
    for i in 0..11 {
        for j in 0..11 {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            w.push((-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp());
        }
    }
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM of two `h × w × ch` images over all valid 11×11 windows with a
/// direct (non-separable) Gaussian weighting, `K1 = 0.01`, `K2 = 0.03`,
/// dynamic range 1.
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize, ch: usize) -> f64 {
    let win = gaussian_window();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut n = 0usize;
    for c in 0..ch {
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = ((y0 + i) * w + x0 + j) * ch + c;
                        let wt = win[i * 11 + j];
                        mx += wt * a[k];
                        my += wt * b[k];
                        sxx += wt * a[k] * a[k];
                        syy += wt * b[k] * b[k];
                        sxy += wt * a[k] * b[k];
                    }
                }
                let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                n += 1;
            }
        }
    }
    total / n as f64
}

/// `10·log10(peak² / MSE)`, infinite for identical inputs.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    10.0 * (peak * peak / mse).log10()
}

/// `mean|a − b| + λ·(1 − SSIM(a, b))`.
pub fn loss(a: &[f64], b: &[f64], h: usize, w: usize, lambda: f64) -> f64 {
    let l1 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    l1 + lambda * (1.0 - ssim(a, b, h, w, 3))
}

/// Shannon entropy of the empirical symbol distribution, bits per symbol.
pub fn entropy_bits(symbols: &[u8]) -> f64 {
    let mut counts = [0usize; 256];
    for &s in symbols {
        counts[s as usize] += 1;
    }
    let n = symbols.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Total code length in bits of `symbols` under integer frequencies `freqs`.
pub fn cross_entropy_bits(symbols: &[u8], freqs: &[u32]) -> f64 {
    let total: f64 = freqs.iter().map(|&f| f as f64).sum();
    symbols.iter().map(|&s| -(freqs[s as usize] as f64 / total).log2()).sum()
}

/// Central difference `(f(x + h) − f(x − h)) / 2h`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
