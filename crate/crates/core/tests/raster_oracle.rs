mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatfix_core::gaussian::sh_len;
use splatfix_core::raster::{primitive_saliency, render, render_backward, render_backward_image, render_or_background};
use splatfix_core::sh::C0;
use splatfix_core::{GaussianSet, Image};

const BG: [f32; 3] = [0.5, 0.5, 0.5];

fn within(analytic: f64, numeric: f64) -> bool {
    let err = (analytic - numeric).abs();
    err <= 1e-5 || err <= 1e-2 * numeric.abs()
}

#[test]
fn smooth_scenes_match_reference_render() {
    let cam = front_camera(32);
    for seed in 0..5 {
        let gs = smooth_scene(seed, &cam);
        let ours = render(&gs, &cam, BG, false).unwrap().image;
        let reference = splatfix_oracle::render(&ref_gaussians(&gs), &ref_camera(&cam), BG.map(f64::from));
        let max = ours.data.iter().zip(&reference).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
        assert!(max < 1e-5, "seed {seed}: max abs difference {max}");
    }
}

#[test]
fn random_scenes_match_reference_render_almost_everywhere() {
    let cam = front_camera(48);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let mut gs = GaussianSet::random(40, 2, &mut rng);
        for p in gs.positions.iter_mut() {
            *p = [p[0] * 0.6, p[1] * 0.3, p[2] * 0.6];
        }
        for s in gs.log_scales.iter_mut() {
            *s = s.map(|v| v + 1.5);
        }
        let ours = render(&gs, &cam, BG, false).unwrap().image;
        let reference = splatfix_oracle::render(&ref_gaussians(&gs), &ref_camera(&cam), BG.map(f64::from));
        let off = ours.data.iter().zip(&reference).filter(|(a, b)| (**a as f64 - **b).abs() > 1e-4).count();
        assert!(off * 100 <= ours.data.len(), "{off} of {} values differ", ours.data.len());
    }
}

#[test]
fn gradients_match_reference_finite_differences() {
    let cam = front_camera(32);
    for seed in 0..4 {
        let gs = smooth_scene(100 + seed, &cam);
        let out = render(&gs, &cam, BG, true).unwrap();
        let target = offset_target(&out.image, seed);
        let (_, grads) = render_backward(&gs, &cam, &out, &target, 0.2).unwrap();
        for slot in parameter_slots(&gs) {
            let a = grad_at(&grads, slot) as f64;
            let n = reference_fd(&gs, &cam, BG, &target, 0.2, slot, 1e-3);
            assert!(within(a, n), "seed {seed} {slot:?}: analytic {a} vs numeric {n}");
        }
    }
}

#[test]
fn two_half_transparent_layers() {
    let cam = front_camera(16);
    let c1 = [0.9, 0.1, 0.2];
    let c2 = [0.1, 0.8, 0.3];
    let center = [cam.cx - 0.5, cam.cy - 0.5];
    let mut pos = Vec::new();
    for z in [2.0, 3.0] {
        pos.push(unproject(&cam, center[0], center[1], z));
    }
    let logit = 0.0; // opacity 0.5, G = 1 at the shared center
    let dc = |c: [f32; 3]| c.map(|v| (v - 0.5) / C0);
    let mut sh = dc(c1).to_vec();
    sh.extend(dc(c2));
    let gs = GaussianSet::new(pos, vec![[1.0, 0.0, 0.0, 0.0]; 2], vec![[-2.0; 3]; 2], vec![logit; 2], sh, 0).unwrap();
    let bg = [0.2, 0.3, 0.9];
    let img = render(&gs, &cam, bg, false).unwrap().image;
    let px = img.pixel(center[1] as usize, center[0] as usize);
    for k in 0..3 {
        let expected = 0.5 * c1[k] + 0.25 * c2[k] + 0.25 * bg[k];
        assert!((px[k] - expected).abs() < 1e-5, "channel {k}: {} vs {expected}", px[k]);
    }
}

#[test]
fn opaque_wide_primitive_shows_its_color() {
    let cam = front_camera(16);
    let c = [0.3f32, 0.6, 0.9];
    let gs = GaussianSet::new(
        vec![unproject(&cam, 8.5, 8.5, 3.0)],
        vec![[1.0, 0.0, 0.0, 0.0]],
        vec![[2.0; 3]],
        vec![12.0],
        c.map(|v| (v - 0.5) / C0).to_vec(),
        0,
    )
    .unwrap();
    let img = render(&gs, &cam, BG, false).unwrap().image;
    let px = img.pixel(8, 8);
    for k in 0..3 {
        assert!((px[k] - c[k]).abs() <= 0.01 * c[k], "{} vs {}", px[k], c[k]);
    }
}

#[test]
fn empty_scene_is_background() {
    let cam = front_camera(16);
    let img = render_or_background(None, &cam, BG).unwrap();
    assert!(img.data.iter().all(|&v| v == 0.5));
    // A primitive behind the camera leaves the background untouched too.
    let mut gs = smooth_scene(1, &cam);
    gs = gs.select(&[0]);
    gs.positions[0] = [0.0, -10.0, 0.0];
    let img = render(&gs, &cam, BG, false).unwrap().image;
    assert!(img.data.iter().all(|&v| v == 0.5));
}

#[test]
fn exact_target_gives_zero_l1_gradient() {
    let cam = front_camera(32);
    let gs = smooth_scene(3, &cam);
    let out = render(&gs, &cam, BG, true).unwrap();
    let (loss, g) = render_backward(&gs, &cam, &out, &out.image.clone(), 0.0).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.positions.iter().flatten().all(|&v| v == 0.0));
    assert!(g.sh_coeffs.iter().all(|&v| v == 0.0));
}

#[test]
fn dc_color_gradient_of_single_primitive() {
    let cam = front_camera(32);
    let gs = smooth_scene(8, &cam).select(&[2]);
    let out = render(&gs, &cam, BG, true).unwrap();
    let target = offset_target(&out.image, 1);
    let (_, g) = render_backward(&gs, &cam, &out, &target, 0.0).unwrap();
    let k = sh_len(gs.sh_degree);
    for c in 0..3 {
        let slot = ("sh_coeffs", c * k);
        let n = reference_fd(&gs, &cam, BG, &target, 0.0, slot, 1e-3);
        let a = g.sh_coeffs[c * k] as f64;
        assert!((a - n).abs() <= 1e-2 * n.abs(), "channel {c}: {a} vs {n}");
    }
}

#[test]
fn fully_occluded_primitive_gets_no_gradient() {
    let cam = front_camera(16);
    let front = [8.5, 8.5];
    let mut pos = Vec::new();
    for z in [2.0, 2.1, 2.2, 4.0] {
        pos.push(unproject(&cam, front[0], front[1], z));
    }
    // Three nearly opaque wide layers drive T below 1e-4 before the last one.
    let gs = GaussianSet::new(
        pos,
        vec![[1.0, 0.0, 0.0, 0.0]; 4],
        vec![[1.5; 3], [1.5; 3], [1.5; 3], [-1.0; 3]],
        vec![8.0; 4],
        vec![0.1; 12],
        0,
    )
    .unwrap();
    let out = render(&gs, &cam, BG, true).unwrap();
    let dimg = Image::filled(16, 16, &[1.0, -1.0, 0.5]);
    let g = render_backward_image(&gs, &cam, &out, &dimg).unwrap();
    assert!(g.primitive_norm(3) < 1e-7, "{}", g.primitive_norm(3));
    assert!(g.primitive_norm(0) > 1e-3);
}

#[test]
fn mismatched_target_is_rejected() {
    let cam = front_camera(16);
    let gs = smooth_scene(2, &cam);
    let out = render(&gs, &cam, BG, true).unwrap();
    let target = Image::filled(8, 8, &BG);
    assert!(render_backward(&gs, &cam, &out, &target, 0.2).is_err());
}

#[test]
fn saliency_ranking_matches_finite_difference_norms() {
    let cam = front_camera(32);
    let gs = smooth_scene(21, &cam).select(&[0, 2, 4]);
    let out = render(&gs, &cam, BG, false).unwrap();
    let target = offset_target(&out.image, 5);
    let scores = primitive_saliency(&gs, std::slice::from_ref(&cam), std::slice::from_ref(&target), BG, 0.2).unwrap();
    let mut fd = [0.0f64; 3];
    let per_prim = |name: &str, i: usize| match name {
        "positions" | "log_scales" => i / 3,
        "rotations" => i / 4,
        "opacity_logits" => i,
        _ => i / gs.sh_stride(),
    };
    for slot in parameter_slots(&gs) {
        let d = reference_fd(&gs, &cam, BG, &target, 0.2, slot, 1e-3);
        fd[per_prim(slot.0, slot.1)] += d * d;
    }
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
        idx
    };
    assert_eq!(rank(&scores), rank(&fd.map(f64::sqrt)));
    for (s, f) in scores.iter().zip(fd.map(f64::sqrt)) {
        assert!((s - f).abs() <= 1e-2 * f, "{s} vs {f}");
    }
}

#[test]
fn saliency_is_zero_outside_the_frustum_and_equivariant() {
    let cam = front_camera(32);
    let mut gs = smooth_scene(4, &cam);
    gs.positions[1] = [0.0, -8.0, 0.0];
    let out = render(&gs, &cam, BG, false).unwrap();
    let target = offset_target(&out.image, 2);
    let views = [cam.clone()];
    let targets = [target];
    let s = primitive_saliency(&gs, &views, &targets, BG, 0.2).unwrap();
    assert_eq!(s[1], 0.0);
    assert!(s.iter().all(|&v| v >= 0.0));

    let perm = [3, 0, 4, 1, 2];
    let p = primitive_saliency(&gs.select(&perm), &views, &targets, BG, 0.2).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert!((p[k] - s[i]).abs() <= 1e-6 * s[i].max(1e-6), "{} vs {}", p[k], s[i]);
    }
}

#[test]
fn random_perturbations_stay_finite() {
    let cam = front_camera(16);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let base = smooth_scene(6, &cam);
    let mut prev: Option<f64> = None;
    for _ in 0..10_000 {
        let mut gs = base.clone();
        let i = rng.random_range(0..gs.len());
        let k = rng.random_range(0..3);
        gs.positions[i][k] += rng.random_range(-1e-3..1e-3);
        let img = render(&gs, &cam, BG, false).unwrap().image;
        assert!(img.data.iter().all(|v| v.is_finite()));
        let energy: f64 = img.data.iter().map(|&v| v as f64).sum();
        if let Some(p) = prev {
            assert!((energy - p).abs() < 5.0, "energy jumped from {p} to {energy}");
        }
        prev = Some(energy);
    }
}
