//! Acceptance suite: one pass/fail line per criterion on stdout.
//!
//! Runs without the libtest harness so the lines are printed even when
//! everything passes. Positional arguments select criteria by number
//! (`cargo test --test acceptance -- 1 5`). Criteria 6, 8, 9 and 10 share one
//! pipeline run and are always reported together. Artifacts and a
//! `summary.json` land in `<cargo target tmpdir>/acceptance`.

mod common;
#[path = "../../core/tests/common/mod.rs"]
mod raster;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use diffeng::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;
use splatfix_core::codec::{
    compress, compress_chain, decompress, entropy_decode, entropy_encode, level_schedule, quantize_channel, CodedScene,
    FinetuneConfig, FreqTable,
};
use splatfix_core::metrics::RdReport;
use splatfix_core::raster::{render, render_backward};
use splatfix_core::synth::{synth_scene, SynthParams};
use splatfix_restore::distill::{dmd_signal, train, DistillConfig, Distiller, Sample};
use splatfix_restore::latent::lincomb;
use splatfix_restore::model::one_step_with;
use splatfix_restore::{Adapter, DenoiserNet, DiffusionSchedule, LoraConfig, NetConfig, RestorerState, Which};

use common::{path, run_ok};

const SEEDS: [u64; 3] = [0, 1, 2];
const T0_ABLATION: &str = "1000";

#[derive(Serialize, Clone)]
struct Line {
    criterion: u8,
    mandatory: bool,
    pass: bool,
    seconds: f64,
    detail: String,
}

fn report(line: &Line) {
    let verdict = match (line.pass, line.mandatory) {
        (true, _) => "PASS",
        (false, true) => "FAIL",
        (false, false) => "FAIL (advisory)",
    };
    println!("criterion {:>2}: {verdict:<15} [{:.1} s] {}", line.criterion, line.seconds, line.detail);
}

/// Runs `f`, turning errors and panics into a failing line.
fn judge(criterion: u8, mandatory: bool, f: impl FnOnce() -> Result<(bool, String)>) -> Line {
    let start = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => (false, format!("error: {e:#}")),
        Err(p) => {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        }
    };
    let line = Line {
        criterion,
        mandatory,
        pass,
        seconds: start.elapsed().as_secs_f64(),
        detail,
    };
    report(&line);
    line
}

fn max_abs(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).abs()).fold(0.0, f64::max)
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// One-step reconstruction with the velocity `(x_t − x)/σ` of the straight
/// path through the clean image.
fn one_step_exactness() -> Result<(bool, String)> {
    let start = Instant::now();
    let s = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = [1, 3, 32, 32];
    let mut worst = 0.0f64;
    for t0 in [1, 199, 500, 999] {
        for _ in 0..100 {
            let x = uniform_tensor(&mut rng, shape);
            let x_tilde = uniform_tensor(&mut rng, shape);
            let eps = Tensor::randn(shape, 1.0, &mut rng);
            let oracle = |xt: &Tensor, t: u32| {
                let sig = s.sigma(t) as f64;
                let v = xt.data().iter().zip(x.data()).map(|(&a, &b)| ((a as f64 - b as f64) / sig) as f32);
                Ok(Tensor::new(xt.shape().to_vec(), v.collect()).unwrap())
            };
            let out = one_step_with(&s, t0, &x_tilde, &eps, oracle)?;
            worst = worst.max(max_abs(&out, &x));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((worst <= 1e-5 && secs < 60.0, format!("max abs error {worst:.2e} over 4 x 100 images (<= 1e-5), {secs:.1} s (< 60 s)")))
}

/// Analytic rasterizer gradients against central differences of the f64
/// reference renderer.
fn gradient_fidelity() -> Result<(bool, String)> {
    let start = Instant::now();
    let cam = raster::front_camera(32);
    let bg = [0.5f32; 3];
    let (mut checked, mut failed) = (0usize, 0usize);
    let mut groups = BTreeSet::new();
    let mut worst = (0.0f64, String::new());
    for seed in 0..20 {
        let gs = raster::smooth_scene(1000 + seed, &cam);
        ensure!(gs.len() == 5, "scene has {} primitives", gs.len());
        let out = render(&gs, &cam, bg, true)?;
        let target = raster::offset_target(&out.image, seed);
        let (_, grads) = render_backward(&gs, &cam, &out, &target, 0.2)?;
        for slot in raster::parameter_slots(&gs) {
            let a = raster::grad_at(&grads, slot) as f64;
            let n = raster::reference_fd(&gs, &cam, bg, &target, 0.2, slot, 1e-3);
            let err = (a - n).abs();
            let ok = err <= 1e-5 || err <= 1e-2 * n.abs();
            checked += 1;
            groups.insert(slot.0);
            if !ok {
                failed += 1;
            }
            let rel = err / n.abs().max(1e-5);
            if rel > worst.0 {
                worst = (rel, format!("scene {seed} {}[{}]", slot.0, slot.1));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        failed == 0 && groups.len() == 5 && secs < 600.0,
        format!(
            "{failed} of {checked} partials outside rel 1e-2 / abs 1e-5 across {} groups, worst rel {:.2e} at {}, {secs:.1} s (< 600 s)",
            groups.len(),
            worst.0,
            worst.1
        ),
    ))
}

fn codec_bit_exactness() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let len = rng.random_range(0..600);
        let skew = rng.random_range(0..8u32);
        let symbols: Vec<u8> = (0..len).map(|_| rng.random::<u8>() >> skew).collect();
        let table = FreqTable::from_symbols(&symbols);
        let bytes = entropy_encode(&symbols, &table)?;
        if entropy_decode(&bytes, &table, symbols.len())? != symbols {
            mismatches += 1;
        }
    }

    let params = SynthParams {
        n_primitives: 1024,
        ..SynthParams::default()
    };
    let scene = synth_scene(5, &params)?;
    let targets: Vec<_> = scene
        .train_views
        .iter()
        .map(|c| Ok(render(&scene.gaussians, c, scene.background, false)?.image))
        .collect::<Result<_>>()?;
    let schedule = level_schedule(1024, 64, 3)?;
    let cfg = FinetuneConfig {
        iters: 10,
        ..FinetuneConfig::default()
    };
    let chain = compress_chain(&scene.gaussians, &schedule, 0, &scene.train_views, &targets, scene.background, &cfg, 1)?;
    let zero = FinetuneConfig { iters: 0, ..cfg };
    let mut reencode_diffs = 0;
    for lv in &chain {
        let decoded = decompress(&lv.coded)?;
        let again = compress(&decoded, &schedule, lv.level, &scene.train_views, &targets, scene.background, &zero, 1)?;
        reencode_diffs += usize::from(again.to_bytes() != lv.coded.to_bytes());
        reencode_diffs += usize::from(CodedScene::encode(&decoded, lv.level as u8)?.to_bytes() != lv.coded.to_bytes());
    }

    let bytes = chain[0].coded.to_bytes();
    let mut accepted = 0;
    for _ in 0..100 {
        let mut bad = bytes.clone();
        let bit = rng.random_range(0..bad.len() * 8);
        bad[bit / 8] ^= 1 << (bit % 8);
        accepted += usize::from(CodedScene::from_bytes(&bad).is_ok());
    }
    Ok((
        mismatches == 0 && reencode_diffs == 0 && accepted == 0,
        format!(
            "{mismatches} of 10000 entropy roundtrips mismatched, {reencode_diffs} of {} re-encodes differ, {accepted} of 100 bit flips accepted",
            2 * chain.len()
        ),
    ))
}

fn quantization_bound() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let n = rng.random_range(2..3000);
        let scale = 10f32.powf(rng.random_range(-3.0..1.0));
        let center = rng.random_range(-5.0f32..5.0);
        let vals: Vec<f32> = (0..n).map(|_| center + scale * rng.random_range(-1.0f32..1.0)).collect();
        let (q, p) = quantize_channel(&vals)?;
        for (v, &s) in vals.iter().zip(&q) {
            let err = (*v as f64 - p.dequantize(s) as f64).abs();
            worst_excess = worst_excess.max(err - p.step as f64 / 2.0);
        }
    }
    Ok((
        worst_excess <= 1e-6,
        format!("max (error - step/2) = {worst_excess:.3e} over 1000 channels (<= 1e-6)"),
    ))
}

fn schedule_example() -> Result<(bool, String)> {
    let got = level_schedule(65536, 4096, 3)?.cardinalities;
    Ok((got == [4096, 16384, 65536], format!("level_schedule(65536, 4096, 3) = {got:?}")))
}

fn distill_state(seed: u64) -> Result<RestorerState> {
    let base = DenoiserNet::new(NetConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(RestorerState::new(base, LoraConfig::default(), DiffusionSchedule::default(), seed + 1)?)
}

fn perturb(ad: &mut Adapter, rng: &mut ChaCha8Rng, scale: f32) {
    for f in &mut ad.factors {
        let data = (0..f.b.numel()).map(|_| scale * rng.random_range(-1.0f32..1.0)).collect();
        f.b = Tensor::new(f.b.shape().to_vec(), data).unwrap();
    }
}

fn samples(n: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let clean = Tensor::new([3, 16, 16], (0..768).map(|k| (0.6 * ((k % 16) as f32 * 0.4 + (k / 256) as f32).sin()) + rng.random_range(-0.1..0.1)).collect()).unwrap();
            let degraded = clean.map(|v| 0.8 * v + 0.05);
            Sample {
                clean,
                degraded,
                cond: Some(i as u32 % 4),
            }
        })
        .collect()
}

fn dmd_identities() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut s = distill_state(70)?;
    perturb(&mut s.phi_plus, &mut rng, 0.05);
    let mut worst = 0.0f64;
    let mut smallest_signal = f64::INFINITY;
    for _ in 0..5 {
        let shape = [2, 3, 16, 16];
        let x_hat = uniform_tensor(&mut rng, shape);
        let x = uniform_tensor(&mut rng, shape);
        let t = vec![rng.random_range(20..=980), rng.random_range(20..=980)];
        let eps = Tensor::randn(shape, 1.0, &mut rng);
        let cond = vec![Some(1), None];
        let got = dmd_signal(&s, &x_hat, &x, &t, &eps, &cond, 1.0, 7.5)?;
        let mut noised = Vec::new();
        let per = x_hat.numel() / 2;
        for (i, &ti) in t.iter().enumerate() {
            let r = i * per..(i + 1) * per;
            noised.extend(s.schedule.diffuse(&x_hat.data()[r.clone()], ti, &eps.data()[r]));
        }
        let xh_t = Tensor::new(shape, noised)?;
        let fake = s.denoised_estimate(Which::PhiPlus, &xh_t, &t, &cond, 7.5)?;
        let real = s.denoised_estimate(Which::Base, &xh_t, &t, &cond, 7.5)?;
        let want = lincomb(1.0, &fake, -1.0, &real)?;
        smallest_signal = smallest_signal.min(max_abs(&want, &Tensor::zeros(shape)));
        worst = worst.max(max_abs(&got, &want));
    }

    let fresh = distill_state(71)?;
    let before = fresh.phi_minus.clone();
    let cfg = DistillConfig {
        alpha: 1.0,
        lambda_l2: 0.0,
        lambda_perc: 0.0,
        weight_decay: 0.0,
        batch: 2,
        checkpoint_every: 0,
        ..DistillConfig::default()
    };
    let mut d = Distiller::new(fresh, cfg)?;
    let r = d.step_phi_minus(&samples(2, &mut rng), 0)?;
    let fixed_point = r.grad_norm_minus == 0.0 && d.state.phi_minus == before;

    let s = distill_state(72)?;
    let base = s.base.clone();
    let cfg = DistillConfig {
        steps: 100,
        batch: 2,
        checkpoint_every: 0,
        ..DistillConfig::default()
    };
    let (out, _) = train(s, &mut samples(8, &mut rng), &cfg, None, |_| {})?;
    let moved: Vec<&str> = base
        .params
        .iter()
        .zip(&out.base.params)
        .filter(|((_, a), (_, b))| a.data().iter().zip(b.data()).any(|(x, y)| x.to_bits() != y.to_bits()))
        .map(|((n, _), _)| n.as_str())
        .collect();
    Ok((
        worst <= 1e-6 && smallest_signal > 1e-4 && fixed_point && moved.is_empty(),
        format!(
            "critic-only signal vs fake - real: max abs {worst:.2e} (<= 1e-6, signal >= {smallest_signal:.2e}); fixed point grad-norm {} {}; {} base tensors moved over 100 steps",
            r.grad_norm_minus,
            if fixed_point { "and restorer unchanged" } else { "but restorer changed" },
            moved.len()
        ),
    ))
}

/// Level-0 (lowest rate) means of a report.
#[derive(Clone, Copy, Debug, Serialize)]
struct LowRate {
    deg_psnr: f64,
    deg_perc: f64,
    res_psnr: f64,
    res_perc: f64,
}

fn low_rate(report_dir: &Path) -> Result<LowRate> {
    let r: RdReport = serde_json::from_slice(&fs::read(report_dir.join("rd_report.json"))?)?;
    let l = r.levels.iter().find(|l| l.level == 0).context("no level 0 in report")?;
    let res = l.restored.context("report has no restored columns")?;
    Ok(LowRate {
        deg_psnr: l.degraded.psnr,
        deg_perc: l.degraded.perc_proxy,
        res_psnr: res.psnr,
        res_perc: res.perc_proxy,
    })
}

fn cli(args: &[&str]) {
    let start = Instant::now();
    let mut full: Vec<&str> = args.to_vec();
    full.extend(["--threads", "1"]);
    run_ok(&full);
    println!("    {} done in {:.0} s", args[0], start.elapsed().as_secs_f64());
}

struct SeedRun {
    root: PathBuf,
    scenes: PathBuf,
    dataset: PathBuf,
}

impl SeedRun {
    fn new(root: PathBuf) -> Self {
        Self {
            scenes: root.join("scenes"),
            dataset: root.join("dataset"),
            root,
        }
    }

    /// Scenes, dataset and the degraded-only report; returns its wall time.
    fn rd(&self, seed: &str) -> f64 {
        let start = Instant::now();
        cli(&["synth", "--seed", seed, "--out", path(&self.scenes)]);
        cli(&["make-dataset", "--seed", seed, "--scenes", path(&self.scenes), "--out", path(&self.dataset)]);
        self.evaluate(seed, None, "rd");
        start.elapsed().as_secs_f64()
    }

    fn evaluate(&self, seed: &str, restorer: Option<&Path>, name: &str) -> PathBuf {
        let out = self.root.join(name);
        let mut args = vec!["evaluate", "--seed", seed, "--dataset", path(&self.dataset), "--scenes", path(&self.scenes), "--out", path(&out)];
        if let Some(r) = restorer {
            args.extend(["--restorer", path(r)]);
        }
        cli(&args);
        out
    }

    fn pretrain(&self, seed: &str) -> PathBuf {
        let out = self.root.join("base");
        cli(&["pretrain-base", "--seed", seed, "--dataset", path(&self.dataset), "--out", path(&out)]);
        out.join("base.ckpt")
    }

    /// Distills at the given `t0` (the default when `None`) and evaluates.
    fn restorer(&self, seed: &str, base: &Path, t0: Option<&str>, name: &str) -> PathBuf {
        let out = self.root.join(format!("{name}_model"));
        let mut args = vec!["train-restorer", "--seed", seed, "--dataset", path(&self.dataset), "--base", path(base), "--out", path(&out)];
        if let Some(t0) = t0 {
            args.extend(["--schedule.t0", t0]);
        }
        cli(&args);
        self.evaluate(seed, Some(&out.join("restorer.ckpt")), name)
    }
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Vec<String> {
    names
        .iter()
        .filter(|n| fs::read(a.join(n)).ok() != fs::read(b.join(n)).ok() || !a.join(n).exists())
        .map(|n| n.to_string())
        .collect()
}

const REPORT_FILES: [&str; 3] = ["rd_report.json", "rd_report.csv", "rd_report.txt"];

fn trends(report_dir: &Path) -> Result<(bool, String)> {
    let r: RdReport = serde_json::from_slice(&fs::read(report_dir.join("rd_report.json"))?)?;
    let scenes: BTreeSet<usize> = r.cells.iter().map(|c| c.scene).collect();
    let mut size_violations = 0;
    for s in &scenes {
        let mut cells: Vec<_> = r.cells.iter().filter(|c| c.scene == *s).collect();
        cells.sort_by_key(|c| c.level);
        size_violations += cells.windows(2).filter(|w| w[1].bytes <= w[0].bytes).count();
    }
    let psnr: Vec<f64> = r.levels.iter().map(|l| l.degraded.psnr).collect();
    let bytes: Vec<f64> = r.levels.iter().map(|l| l.mean_bytes).collect();
    let monotone = psnr.windows(2).all(|w| w[1] >= w[0]);
    Ok((
        scenes.len() >= 10 && size_violations == 0 && monotone && r.levels.len() >= 2,
        format!(
            "{} scenes; per-scene size decreases with level: {size_violations}; mean bytes by level {bytes:.0?}; mean degraded PSNR by level {psnr:.2?}",
            scenes.len()
        ),
    ))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Criteria 6, 8, 9 and 10 from one set of command-line runs.
fn pipeline(work: &Path) -> Vec<Line> {
    let mut lines = Vec::new();
    let mut rd_secs = 0.0;
    let mut main_runs = Vec::new();
    let mut ablation_runs = Vec::new();
    let started = Instant::now();

    let mut failure: Option<String> = None;
    for seed in SEEDS {
        let s = seed.to_string();
        let run = SeedRun::new(work.join(format!("seed_{seed}")));
        println!("  seed {seed}: scenes, dataset and rate-distortion report");
        let step = catch_unwind(AssertUnwindSafe(|| {
            let secs = run.rd(&s);
            println!("  seed {seed}: base pretraining");
            let base = run.pretrain(&s);
            println!("  seed {seed}: restorer at the default t0");
            let main = run.restorer(&s, &base, None, "restored");
            println!("  seed {seed}: restorer at t0 = T");
            let ablation = run.restorer(&s, &base, Some(T0_ABLATION), "restored_t0_full");
            (secs, low_rate(&main), low_rate(&ablation))
        }));
        match step {
            Ok((secs, Ok(m), Ok(a))) => {
                if seed == SEEDS[0] {
                    rd_secs = secs;
                }
                println!("  seed {seed}: level 0 {m:?}; t0 = T {a:?}");
                main_runs.push(m);
                ablation_runs.push(a);
            }
            Ok((_, m, a)) => {
                failure = Some(format!("seed {seed}: {:?} / {:?}", m.err(), a.err()));
                break;
            }
            Err(p) => {
                let msg = p.downcast_ref::<String>().cloned().unwrap_or_default();
                failure = Some(format!("seed {seed}: {msg}"));
                break;
            }
        }
    }

    let first = SeedRun::new(work.join(format!("seed_{}", SEEDS[0])));
    lines.push(judge(6, true, || {
        let (ok, detail) = trends(&first.root.join("rd"))?;
        Ok((ok && rd_secs < 1800.0, format!("{detail}; {rd_secs:.0} s (< 1800 s)")))
    }));

    let pipeline_secs = started.elapsed().as_secs_f64();
    let per_seed = |runs: &[LowRate]| {
        runs.iter()
            .map(|r| format!("({:.2} -> {:.2} dB, perc {:.4} -> {:.4})", r.deg_psnr, r.res_psnr, r.deg_perc, r.res_perc))
            .collect::<Vec<_>>()
            .join(" ")
    };
    lines.push(judge(8, true, || {
        if let Some(f) = &failure {
            anyhow::bail!("pipeline failed: {f}");
        }
        let deg_psnr = mean(main_runs.iter().map(|r| r.deg_psnr));
        let res_psnr = mean(main_runs.iter().map(|r| r.res_psnr));
        let deg_perc = mean(main_runs.iter().map(|r| r.deg_perc));
        let res_perc = mean(main_runs.iter().map(|r| r.res_perc));
        Ok((
            main_runs.len() == SEEDS.len() && res_psnr >= deg_psnr + 1.0 && res_perc <= deg_perc,
            format!(
                "mean over {} seeds at level 0: PSNR {deg_psnr:.3} -> {res_psnr:.3} dB (gain {:+.3}, needs >= +1.0), perc-proxy {deg_perc:.5} -> {res_perc:.5}; per seed {}; pipeline {pipeline_secs:.0} s",
                main_runs.len(),
                res_psnr - deg_psnr,
                per_seed(&main_runs)
            ),
        ))
    }));
    lines.push(judge(9, false, || {
        ensure!(failure.is_none() && ablation_runs.len() == SEEDS.len(), "pipeline incomplete");
        let full = mean(ablation_runs.iter().map(|r| r.res_perc));
        let main = mean(main_runs.iter().map(|r| r.res_perc));
        let full_psnr = mean(ablation_runs.iter().map(|r| r.res_psnr));
        let main_psnr = mean(main_runs.iter().map(|r| r.res_psnr));
        Ok((
            full >= main,
            format!(
                "restored perc-proxy at t0 = T {full:.5} vs default t0 {main:.5} (PSNR {full_psnr:.3} vs {main_psnr:.3} dB); per seed at t0 = T {}",
                per_seed(&ablation_runs)
            ),
        ))
    }));
    lines.push(judge(10, true, || {
        ensure!(failure.is_none(), "pipeline incomplete");
        let seed = SEEDS[0].to_string();
        let again = SeedRun::new(work.join("rerun"));
        println!("  rerun of seed {seed}");
        again.rd(&seed);
        let base = again.pretrain(&seed);
        again.restorer(&seed, &base, None, "restored");
        let rd_diff = same_files(&first.root.join("rd"), &again.root.join("rd"), &REPORT_FILES);
        let res_diff = same_files(&first.root.join("restored"), &again.root.join("restored"), &REPORT_FILES);
        let model_diff = same_files(&first.root.join("restored_model"), &again.root.join("restored_model"), &["restorer.ckpt"]);
        Ok((
            rd_diff.is_empty() && res_diff.is_empty(),
            format!(
                "rerun of seed {seed} with --threads 1: rate-distortion report differs in {rd_diff:?}, restoration report differs in {res_diff:?}, restorer checkpoint {}",
                if model_diff.is_empty() { "identical" } else { "differs" }
            ),
        ))
    }));
    lines
}

/// A fast criterion: whether it passed, plus a detail line.
type Check = fn() -> Result<(bool, String)>;

fn main() -> ExitCode {
    let selected: BTreeSet<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |c: u8| selected.is_empty() || selected.contains(&c);
    let work = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&work).expect("creating the acceptance work directory");

    let mut lines = Vec::new();
    let fast: [(u8, Check); 6] = [
        (1, one_step_exactness),
        (2, gradient_fidelity),
        (3, codec_bit_exactness),
        (4, quantization_bound),
        (5, schedule_example),
        (7, dmd_identities),
    ];
    for (c, f) in fast {
        if wants(c) {
            lines.push(judge(c, true, f));
        }
    }
    if [6, 8, 9, 10].into_iter().any(wants) {
        for d in SEEDS.iter().map(|s| format!("seed_{s}")).chain(["rerun".to_string()]) {
            let _ = fs::remove_dir_all(work.join(d));
        }
        println!("end-to-end pipeline in {}", work.display());
        lines.extend(pipeline(&work));
    }

    lines.sort_by_key(|l| l.criterion);
    println!("\nacceptance summary");
    for l in &lines {
        report(l);
    }
    let summary: Vec<Value> = lines.iter().map(|l| serde_json::to_value(l).unwrap()).collect();
    let _ = fs::write(work.join("summary.json"), serde_json::to_string_pretty(&summary).unwrap());
    if lines.iter().all(|l| l.pass || !l.mandatory) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
