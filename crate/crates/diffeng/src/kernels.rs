//! Raw numeric kernels on flat slices. Shapes are validated by the callers.

use crate::par;

/// `c = op(a) * op(b) (+ c if accumulate)` with `op(a)` of shape m×k and
/// `op(b)` of shape k×n, all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices; `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        let oh = (self.height + 2 * self.pad - self.kh) / self.stride + 1;
        let ow = (self.width + 2 * self.pad - self.kw) / self.stride + 1;
        (oh, ow)
    }

    pub fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }
}

/// Unfold one image `[C, H, W]` into `[C*kh*kw, oh*ow]`.
pub fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let (oh, ow) = g.out_hw();
    let plane = oh * ow;
    for ci in 0..g.channels {
        let xc = &x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[C, H, W]`.
pub fn col2im(cols: &[f32], g: &ConvGeom, x: &mut [f32]) {
    let (oh, ow) = g.out_hw();
    let plane = oh * ow;
    for ci in 0..g.channels {
        let xc = &mut x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let drow = &mut xc[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            drow[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched convolution, `x: [B, C, H, W]`, `w: [O, C, kh, kw]`.
pub fn conv2d_forward(x: &[f32], batch: usize, w: &[f32], out_ch: usize, g: &ConvGeom) -> Vec<f32> {
    let (oh, ow) = g.out_hw();
    let in_len = g.channels * g.height * g.width;
    let out_len = out_ch * oh * ow;
    let mut out = vec![0.0; batch * out_len];
    par::for_each_chunk_mut(&mut out, out_len, |b, ob| {
        let mut cols = vec![0.0; g.patch() * oh * ow];
        im2col(&x[b * in_len..(b + 1) * in_len], g, &mut cols);
        gemm(out_ch, g.patch(), oh * ow, w, false, &cols, false, ob, false);
    });
    out
}

/// Returns `(dx, dw)` for [`conv2d_forward`] given the upstream gradient.
pub fn conv2d_backward(
    x: &[f32],
    batch: usize,
    w: &[f32],
    out_ch: usize,
    g: &ConvGeom,
    dout: &[f32],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let (oh, ow) = g.out_hw();
    let plane = oh * ow;
    let in_len = g.channels * g.height * g.width;
    let out_len = out_ch * plane;
    let k = g.patch();
    let parts: Vec<(Vec<f32>, Vec<f32>)> = par::map_indexed(batch, |b| {
        let db = &dout[b * out_len..(b + 1) * out_len];
        let mut cols = vec![0.0; k * plane];
        let mut dw = Vec::new();
        if need_dw {
            im2col(&x[b * in_len..(b + 1) * in_len], g, &mut cols);
            dw = vec![0.0; out_ch * k];
            gemm(out_ch, plane, k, db, false, &cols, true, &mut dw, false);
        }
        let mut dx = Vec::new();
        if need_dx {
            gemm(k, out_ch, plane, w, true, db, false, &mut cols, false);
            dx = vec![0.0; in_len];
            col2im(&cols, g, &mut dx);
        }
        (dx, dw)
    });
    let dx = need_dx.then(|| {
        let mut dx = Vec::with_capacity(batch * in_len);
        for (p, _) in &parts {
            dx.extend_from_slice(p);
        }
        dx
    });
    let dw = need_dw.then(|| {
        let mut dw = vec![0.0; out_ch * k];
        for (_, p) in &parts {
            for (a, b) in dw.iter_mut().zip(p) {
                *a += b;
            }
        }
        dw
    });
    (dx, dw)
}

/// `[N, H, W] -> [N, 2H, 2W]` nearest-neighbour upsampling.
pub fn upsample2x(x: &[f32], planes: usize, h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0; planes * 4 * h * w];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward(dout: &[f32], planes: usize, h: usize, w: usize) -> Vec<f32> {
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &dout[p * 4 * h * w..(p + 1) * 4 * h * w];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
            }
        }
    }
    dx
}

/// `[N, H, W] -> [N, H/2, W/2]` 2×2 mean pooling (H, W even).
pub fn avgpool2x(x: &[f32], planes: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                let s = src[2 * y * w + 2 * xx]
                    + src[2 * y * w + 2 * xx + 1]
                    + src[(2 * y + 1) * w + 2 * xx]
                    + src[(2 * y + 1) * w + 2 * xx + 1];
                dst[y * ow + xx] = 0.25 * s;
            }
        }
    }
    out
}

pub fn avgpool2x_backward(dout: &[f32], planes: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &dout[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let g = 0.25 * src[y * ow + xx];
                dst[2 * y * w + 2 * xx] += g;
                dst[2 * y * w + 2 * xx + 1] += g;
                dst[(2 * y + 1) * w + 2 * xx] += g;
                dst[(2 * y + 1) * w + 2 * xx + 1] += g;
            }
        }
    }
    dx
}
