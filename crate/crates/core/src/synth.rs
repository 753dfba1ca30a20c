//! Procedural scenes with ring cameras, and their on-disk bundle form.
//!
//! A bundle directory holds `scene.ply` and `bundle.json`, the latter
//! listing the background, the PLY file name and every camera.

use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{sh_len, GaussianSet};
use crate::math::{self, Vec3};
use crate::ply;
use crate::sh::C0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Style {
    TexturedBoxes,
    RandomBlobs,
}

impl std::str::FromStr for Style {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "textured-boxes" => Ok(Style::TexturedBoxes),
            "random-blobs" => Ok(Style::RandomBlobs),
            other => Err(Error::InvalidArgument(format!(
                "unknown style `{other}` (expected textured-boxes or random-blobs)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_primitives: usize,
    pub n_train_views: usize,
    pub n_test_views: usize,
    pub style: Style,
    pub image_size: u32,
    pub sh_degree: u8,
    pub fov_deg: f32,
    pub camera_radius: f32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_primitives: 4096,
            n_train_views: 8,
            n_test_views: 4,
            style: Style::TexturedBoxes,
            image_size: 64,
            sh_degree: 1,
            fov_deg: 50.0,
            camera_radius: 3.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub gaussians: GaussianSet,
    pub train_views: Vec<Camera>,
    pub test_views: Vec<Camera>,
    pub background: Vec3,
}

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    ply: String,
    background: Vec3,
    train_views: Vec<Camera>,
    test_views: Vec<Camera>,
}

pub const DEFAULT_BACKGROUND: Vec3 = [0.55, 0.65, 0.8];

impl SceneBundle {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        ply::save_ply(&self.gaussians, dir.join("scene.ply"))?;
        let m = BundleManifest {
            ply: "scene.ply".into(),
            background: self.background,
            train_views: self.train_views.clone(),
            test_views: self.test_views.clone(),
        };
        fs::write(dir.join("bundle.json"), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m: BundleManifest = serde_json::from_str(&fs::read_to_string(dir.join("bundle.json"))?)?;
        let gaussians = ply::load_ply(dir.join(&m.ply))?;
        for c in m.train_views.iter().chain(&m.test_views) {
            c.validate()?;
        }
        Ok(Self {
            gaussians,
            train_views: m.train_views,
            test_views: m.test_views,
            background: m.background,
        })
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    StandardNormal.sample(rng)
}

struct Face {
    origin: Vec3,
    u: Vec3,
    v: Vec3,
    /// Axis index of the face normal.
    axis: usize,
    colors: [Vec3; 2],
    pattern: Pattern,
}

#[derive(Clone, Copy)]
enum Pattern {
    Checker(f32),
    Stripes(f32),
}

impl Face {
    fn area(&self) -> f32 {
        math::norm(self.u) * math::norm(self.v)
    }

    fn color_at(&self, a: f32, b: f32) -> Vec3 {
        let (lu, lv) = (a * math::norm(self.u), b * math::norm(self.v));
        let pick = match self.pattern {
            Pattern::Checker(cell) => ((lu / cell).floor() as i64 + (lv / cell).floor() as i64).rem_euclid(2),
            Pattern::Stripes(w) => ((lu + lv) / w).floor() as i64 % 2,
        };
        self.colors[pick.unsigned_abs() as usize % 2]
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> Vec3 {
    [rng.random_range(0.1..0.95), rng.random_range(0.1..0.95), rng.random_range(0.1..0.95)]
}

fn box_faces(rng: &mut ChaCha8Rng) -> Vec<Face> {
    let mut faces = vec![Face {
        origin: [-1.2, -1.2, 0.0],
        u: [2.4, 0.0, 0.0],
        v: [0.0, 2.4, 0.0],
        axis: 2,
        colors: [[0.25, 0.25, 0.22], [0.7, 0.68, 0.6]],
        pattern: Pattern::Checker(rng.random_range(0.25..0.4)),
    }];
    let n_boxes = rng.random_range(2..=4);
    for _ in 0..n_boxes {
        let size = [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), rng.random_range(0.3..0.9)];
        let c = [rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7)];
        let lo = [c[0] - size[0] / 2.0, c[1] - size[1] / 2.0, 0.0];
        let colors = [random_color(rng), random_color(rng)];
        let pattern = if rng.random_bool(0.5) {
            Pattern::Checker(rng.random_range(0.08..0.2))
        } else {
            Pattern::Stripes(rng.random_range(0.06..0.15))
        };
        let (sx, sy, sz) = (size[0], size[1], size[2]);
        let mut add = |origin: Vec3, u: Vec3, v: Vec3, axis: usize| {
            faces.push(Face {
                origin,
                u,
                v,
                axis,
                colors,
                pattern,
            })
        };
        add([lo[0], lo[1], sz], [sx, 0.0, 0.0], [0.0, sy, 0.0], 2);
        add(lo, [0.0, sy, 0.0], [0.0, 0.0, sz], 0);
        add([lo[0] + sx, lo[1], 0.0], [0.0, sy, 0.0], [0.0, 0.0, sz], 0);
        add(lo, [sx, 0.0, 0.0], [0.0, 0.0, sz], 1);
        add([lo[0], lo[1] + sy, 0.0], [sx, 0.0, 0.0], [0.0, 0.0, sz], 1);
    }
    faces
}

fn dc_from_color(c: f32) -> f32 {
    (c - 0.5) / C0
}

fn push_sh(sh: &mut Vec<f32>, color: Vec3, degree: u8, rng: &mut ChaCha8Rng) {
    let k = sh_len(degree);
    for &ch in &color {
        sh.push(dc_from_color(ch));
        for _ in 1..k {
            sh.push(0.05 * normal(rng));
        }
    }
}

fn textured_boxes(n: usize, degree: u8, rng: &mut ChaCha8Rng) -> GaussianSet {
    let faces = box_faces(rng);
    let total: f32 = faces.iter().map(Face::area).sum();
    let spacing = (total / n as f32).sqrt();
    let mut gs = GaussianSet {
        positions: Vec::with_capacity(n),
        rotations: Vec::with_capacity(n),
        log_scales: Vec::with_capacity(n),
        opacity_logits: Vec::with_capacity(n),
        sh_coeffs: Vec::with_capacity(n * 3 * sh_len(degree)),
        sh_degree: degree,
    };
    // Cumulative areas select a face per primitive.
    let mut cum = Vec::with_capacity(faces.len());
    let mut acc = 0.0;
    for f in &faces {
        acc += f.area();
        cum.push(acc);
    }
    for _ in 0..n {
        let r = rng.random_range(0.0..total);
        let fi = cum.iter().position(|&c| r < c).unwrap_or(faces.len() - 1);
        let f = &faces[fi];
        let (a, b) = (rng.random_range(0.0..1.0f32), rng.random_range(0.0..1.0f32));
        let p = math::add(f.origin, math::add(math::scale(f.u, a), math::scale(f.v, b)));
        let theta = rng.random_range(0.0..PI);
        let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
        let mut q = [c, 0.0, 0.0, 0.0];
        q[1 + f.axis] = s;
        let mut ls = [
            (spacing * rng.random_range(0.55..0.9)).ln(),
            (spacing * rng.random_range(0.55..0.9)).ln(),
            (spacing * rng.random_range(0.55..0.9)).ln(),
        ];
        ls[f.axis] = (spacing * 0.08).ln();
        gs.positions.push(p);
        gs.rotations.push(q);
        gs.log_scales.push(ls);
        gs.opacity_logits.push(math::logit(rng.random_range(0.85..0.97)));
        let color = f.color_at(a, b);
        push_sh(&mut gs.sh_coeffs, color, degree, rng);
    }
    gs
}

fn random_blobs(n: usize, degree: u8, rng: &mut ChaCha8Rng) -> GaussianSet {
    let mut gs = GaussianSet {
        positions: Vec::with_capacity(n),
        rotations: Vec::with_capacity(n),
        log_scales: Vec::with_capacity(n),
        opacity_logits: Vec::with_capacity(n),
        sh_coeffs: Vec::with_capacity(n * 3 * sh_len(degree)),
        sh_degree: degree,
    };
    let base = 0.9 / (n as f32).cbrt();
    for _ in 0..n {
        let p = [0.5 * normal(rng), 0.5 * normal(rng), 0.5 + 0.35 * normal(rng)];
        gs.positions.push(p.map(|v| v.clamp(-1.2, 1.8)));
        let q = [normal(rng), normal(rng), normal(rng), normal(rng)];
        gs.rotations.push(if q.iter().all(|&v| v == 0.0) { [1.0, 0.0, 0.0, 0.0] } else { math::quat_normalize(q) });
        gs.log_scales
            .push([0; 3].map(|_| (base * rng.random_range(0.4..1.6f32)).ln()));
        gs.opacity_logits.push(math::logit(rng.random_range(0.4..0.9)));
        let color = random_color(rng);
        push_sh(&mut gs.sh_coeffs, color, degree, rng);
    }
    gs
}

fn ring(n: usize, phase: f32, elevations: &[f32], radius: f32, target: Vec3, p: &SynthParams) -> Result<Vec<Camera>> {
    (0..n)
        .map(|k| {
            let az = 2.0 * PI * (k as f32 + phase) / n as f32;
            let el = elevations[k % elevations.len()].to_radians();
            let eye = [
                target[0] + radius * el.cos() * az.cos(),
                target[1] + radius * el.cos() * az.sin(),
                target[2] + radius * el.sin(),
            ];
            Camera::look_at(eye, target, p.fov_deg.to_radians(), p.image_size, p.image_size)
        })
        .collect()
}

/// Deterministic synthetic scene for `seed`. Train cameras sit on a ring at
/// alternating elevations; test cameras on a ring shifted by half a step at
/// a different elevation, so the two sets never share a pose.
pub fn synth_scene(seed: u64, params: &SynthParams) -> Result<SceneBundle> {
    if params.n_primitives == 0 {
        return Err(Error::InvalidArgument("n_primitives must be at least 1".into()));
    }
    if params.sh_degree > 3 {
        return Err(Error::InvalidArgument(format!("SH degree {} > 3", params.sh_degree)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = match params.style {
        Style::TexturedBoxes => textured_boxes(params.n_primitives, params.sh_degree, &mut rng),
        Style::RandomBlobs => random_blobs(params.n_primitives, params.sh_degree, &mut rng),
    };
    gaussians.validate()?;
    let target = [0.0, 0.0, 0.25];
    let train_views = ring(params.n_train_views, 0.0, &[24.0, 36.0], params.camera_radius, target, params)?;
    let test_views = ring(params.n_test_views, 0.5, &[30.0], params.camera_radius, target, params)?;
    Ok(SceneBundle {
        gaussians,
        train_views,
        test_views,
        background: DEFAULT_BACKGROUND,
    })
}
