#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatfix_core::math::{self, Vec3};
use splatfix_core::{Camera, GaussianSet, Image};
use splatfix_oracle::{RefCamera, RefGaussian};

pub fn ref_gaussians(gs: &GaussianSet) -> Vec<RefGaussian> {
    (0..gs.len())
        .map(|i| RefGaussian {
            position: gs.positions[i].map(f64::from),
            rotation: gs.rotations[i].map(f64::from),
            log_scales: gs.log_scales[i].map(f64::from),
            opacity_logit: gs.opacity_logits[i] as f64,
            sh: gs.sh(i).iter().map(|&v| v as f64).collect(),
            degree: gs.sh_degree,
        })
        .collect()
}

pub fn ref_camera(c: &Camera) -> RefCamera {
    RefCamera {
        rotation: c.rotation.map(|r| r.map(f64::from)),
        translation: c.translation.map(f64::from),
        fx: c.fx as f64,
        fy: c.fy as f64,
        cx: c.cx as f64,
        cy: c.cy as f64,
        width: c.width as usize,
        height: c.height as usize,
        near: c.near as f64,
        far: c.far as f64,
    }
}

pub fn to_f64(img: &Image) -> Vec<f64> {
    img.data.iter().map(|&v| v as f64).collect()
}

pub fn front_camera(size: u32) -> Camera {
    Camera::look_at([0.0, -3.0, 0.0], [0.0, 0.0, 0.0], 60f32.to_radians(), size, size).unwrap()
}

/// World point seen at pixel `(u, v)` and camera depth `z`.
pub fn unproject(cam: &Camera, u: f32, v: f32, z: f32) -> Vec3 {
    let pc = [(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z];
    math::mat_t_vec(&cam.rotation, math::sub(pc, cam.translation))
}

/// Five broad, semi-transparent primitives at distinct depths whose
/// 1/255 alpha contour lies outside a 32×32 frame, with unclamped colors.
/// Compositing is then smooth in every parameter.
pub fn smooth_scene(seed: u64, cam: &Camera) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 5;
    let deg = 1u8;
    let mut depths: Vec<f32> = (0..n).map(|k| 2.6 + 0.2 * k as f32 + rng.random_range(0.0..0.1)).collect();
    for k in (1..n).rev() {
        depths.swap(k, rng.random_range(0..=k));
    }
    let s = cam.width as f32;
    let positions = depths
        .iter()
        .map(|&z| unproject(cam, rng.random_range(0.35 * s..0.65 * s), rng.random_range(0.35 * s..0.65 * s), z))
        .collect();
    let rotations = (0..n)
        .map(|_| [rng.random_range(0.5..1.0), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
        .collect();
    let log_scales = (0..n).map(|_| [0; 3].map(|_| rng.random_range(0.55f32..0.9))).collect();
    let opacity_logits = (0..n).map(|_| rng.random_range(-0.8f32..0.3)).collect();
    let sh_coeffs = (0..n * 3 * 4)
        .map(|j| if j % 4 == 0 { rng.random_range(-0.5f32..0.5) } else { rng.random_range(-0.08f32..0.08) })
        .collect();
    GaussianSet::new(positions, rotations, log_scales, opacity_logits, sh_coeffs, deg).unwrap()
}

/// `render ± 0.25` in a random per-pixel sign pattern, keeping every pixel
/// far from the L1 kink.
pub fn offset_target(render: &Image, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = render.data.iter().map(|&v| if rng.random_bool(0.5) { v + 0.25 } else { v - 0.25 }).collect();
    Image::new(render.height, render.width, render.channels, data).unwrap()
}

/// Every scalar parameter of a set as `(group, flat index)`.
pub fn parameter_slots(gs: &GaussianSet) -> Vec<(&'static str, usize)> {
    let n = gs.len();
    let mut v = Vec::new();
    v.extend((0..3 * n).map(|i| ("positions", i)));
    v.extend((0..4 * n).map(|i| ("rotations", i)));
    v.extend((0..3 * n).map(|i| ("log_scales", i)));
    v.extend((0..n).map(|i| ("opacity_logits", i)));
    v.extend((0..gs.sh_coeffs.len()).map(|i| ("sh_coeffs", i)));
    v
}

pub fn slot_mut<'a>(gs: &'a mut GaussianSet, slot: (&str, usize)) -> &'a mut f32 {
    let (g, i) = slot;
    match g {
        "positions" => &mut gs.positions[i / 3][i % 3],
        "rotations" => &mut gs.rotations[i / 4][i % 4],
        "log_scales" => &mut gs.log_scales[i / 3][i % 3],
        "opacity_logits" => &mut gs.opacity_logits[i],
        _ => &mut gs.sh_coeffs[i],
    }
}

pub fn grad_at(g: &splatfix_core::raster::GaussianGrads, slot: (&str, usize)) -> f32 {
    let (name, i) = slot;
    match name {
        "positions" => g.positions[i / 3][i % 3],
        "rotations" => g.rotations[i / 4][i % 4],
        "log_scales" => g.log_scales[i / 3][i % 3],
        "opacity_logits" => g.opacity_logits[i],
        _ => g.sh_coeffs[i],
    }
}

/// Central difference of the reference loss in f64, perturbing one stored
/// parameter by `±h`.
pub fn reference_fd(gs: &GaussianSet, cam: &Camera, bg: Vec3, target: &Image, lambda: f64, slot: (&str, usize), h: f64) -> f64 {
    let rc = ref_camera(cam);
    let tgt = to_f64(target);
    let base = ref_gaussians(gs);
    let eval = |delta: f64| {
        let mut g = base.clone();
        let (name, i) = slot;
        let p = match name {
            "positions" => &mut g[i / 3].position[i % 3],
            "rotations" => &mut g[i / 4].rotation[i % 4],
            "log_scales" => &mut g[i / 3].log_scales[i % 3],
            "opacity_logits" => &mut g[i].opacity_logit,
            _ => {
                let stride = g[0].sh.len();
                &mut g[i / stride].sh[i % stride]
            }
        };
        *p += delta;
        let img = splatfix_oracle::render(&g, &rc, bg.map(f64::from));
        splatfix_oracle::loss(&img, &tgt, cam.height as usize, cam.width as usize, lambda)
    };
    splatfix_oracle::central_diff(eval, 0.0, h)
}
