//! Subcommand implementations. Each writes its outputs and the effective
//! configuration into `--out`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use splatfix_core::codec::{compress_chain, CodedScene, FinetuneConfig};
use splatfix_core::dataset::{synthesize_dataset, DatasetManifest};
use splatfix_core::metrics::{psnr, render_loss};
use splatfix_core::ply::save_ply;
use splatfix_core::raster::render;
use splatfix_core::synth::synth_scene;
use splatfix_core::{GaussianSet, Image, SceneBundle};
use splatfix_restore::eval::restore_images;
use splatfix_restore::model::{load_base, save_base};
use splatfix_restore::{
    manifest_renders, pretrain, rd_evaluate, train, DenoiserNet, PairPool, RestorerState,
};

use crate::args::Command;
use crate::config::{derive_seed, Config, Stream};
use crate::io::{load_image, scene_dirs};
use crate::logging::JsonLines;

pub const REPORT_JSON: &str = "rd_report.json";
pub const REPORT_CSV: &str = "rd_report.csv";
pub const REPORT_TABLE: &str = "rd_report.txt";
pub const BASE_FILE: &str = "base.ckpt";
pub const RESTORER_FILE: &str = "restorer.ckpt";
pub const LOG_FILE: &str = "log.jsonl";
pub const ABORT_FILE: &str = "abort.json";

pub fn run(cmd: &Command, cfg: &Config) -> Result<()> {
    let out = &cmd.common().out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match cmd {
        Command::Synth { .. } => synth(cfg, out)?,
        Command::FitCheck { scene, .. } => fit_check(cfg, scene.as_deref(), out)?,
        Command::Compress { scene, level, .. } => compress(cfg, scene, *level, out)?,
        Command::Decompress { input, scene, .. } => decompress(input, scene.as_deref(), out)?,
        Command::MakeDataset { scenes, .. } => make_dataset(cfg, scenes, out)?,
        Command::PretrainBase { dataset, .. } => pretrain_base(cfg, dataset, out)?,
        Command::TrainRestorer { dataset, base, .. } => train_restorer(cfg, dataset, base, out)?,
        Command::Restore {
            restorer,
            identity,
            image,
            scene,
            coded,
            condition,
            ..
        } => {
            let state = restorer_state(cfg, restorer.as_deref(), *identity)?;
            let inputs = Inputs {
                images: image,
                scene: scene.as_deref(),
                coded: coded.as_deref(),
            };
            restore(cfg, &state, inputs, *condition, out)?
        }
        Command::Evaluate {
            dataset, scenes, restorer, ..
        } => evaluate(cfg, dataset, scenes, restorer.as_deref(), out)?,
    }
    cfg.snapshot(out)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn scene_seed(cfg: &Config, i: usize) -> u64 {
    derive_seed(cfg.seed, Stream::Scene(i))
}

fn synth(cfg: &Config, out: &Path) -> Result<()> {
    let params = cfg.synth.params();
    let mut listing = Vec::new();
    for i in 0..cfg.synth.scenes {
        let seed = scene_seed(cfg, i);
        let bundle = synth_scene(seed, &params)?;
        let name = format!("scene_{i:03}");
        bundle.save(out.join(&name))?;
        info!("wrote {name} ({} primitives)", bundle.gaussians.len());
        listing.push(serde_json::json!({ "dir": name, "seed": seed, "primitives": bundle.gaussians.len() }));
    }
    write_json(&out.join("scenes.json"), &listing)
}

fn clean_renders(bundle: &SceneBundle, test: bool) -> Result<Vec<Image>> {
    let views = if test { &bundle.test_views } else { &bundle.train_views };
    views
        .iter()
        .map(|c| Ok(render(&bundle.gaussians, c, bundle.background, false)?.image))
        .collect()
}

fn load_or_synth(cfg: &Config, scene: Option<&Path>) -> Result<SceneBundle> {
    match scene {
        Some(dir) => SceneBundle::load(dir).with_context(|| format!("loading scene {}", dir.display())),
        None => Ok(synth_scene(scene_seed(cfg, 0), &cfg.synth.params())?),
    }
}

#[derive(Serialize)]
struct FitReport {
    iters: usize,
    perturb: f32,
    initial_loss: f64,
    final_loss: f64,
    initial_psnr: f64,
    final_psnr: f64,
    improved: bool,
}

fn spread(values: impl Iterator<Item = f32>) -> f32 {
    let v: Vec<f64> = values.map(f64::from).collect();
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    ((v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()) as f32
}

fn perturb(gs: &GaussianSet, rel: f32, seed: u64) -> GaussianSet {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = gs.clone();
    let mut jitter = |scale: f32, v: &mut f32| {
        if scale > 0.0 {
            *v += Normal::new(0.0, scale).expect("positive scale").sample(&mut rng);
        }
    };
    let sp = rel * spread(gs.positions.iter().flatten().copied());
    for p in out.positions.iter_mut().flatten() {
        jitter(sp, p);
    }
    let so = rel * spread(gs.opacity_logits.iter().copied()).max(1.0);
    for o in &mut out.opacity_logits {
        jitter(so, o);
    }
    let sc = rel * spread(gs.sh_coeffs.iter().copied());
    for c in &mut out.sh_coeffs {
        jitter(sc, c);
    }
    out
}

fn mean_fit(gs: &GaussianSet, bundle: &SceneBundle, targets: &[Image], ft: &FinetuneConfig) -> Result<(f64, f64)> {
    let (mut loss, mut q) = (0.0, 0.0);
    for (cam, t) in bundle.train_views.iter().zip(targets) {
        let img = render(gs, cam, bundle.background, false)?.image;
        loss += render_loss(&img, t, ft.lambda_ssim)? as f64;
        q += psnr(&img, t, 1.0)?;
    }
    let n = targets.len() as f64;
    Ok((loss / n, q / n))
}

fn fit_check(cfg: &Config, scene: Option<&Path>, out: &Path) -> Result<()> {
    let bundle = load_or_synth(cfg, scene)?;
    let targets = clean_renders(&bundle, false)?;
    let mut gs = perturb(&bundle.gaussians, cfg.fit.perturb, derive_seed(cfg.seed, Stream::Fit));
    let ft = FinetuneConfig {
        iters: cfg.fit.iters,
        ..cfg.codec.finetune.clone()
    };
    let (initial_loss, initial_psnr) = mean_fit(&gs, &bundle, &targets, &ft)?;
    splatfix_core::codec::finetune(&mut gs, &bundle.train_views, &targets, bundle.background, &ft, derive_seed(cfg.seed, Stream::Fit))?;
    let (final_loss, final_psnr) = mean_fit(&gs, &bundle, &targets, &ft)?;
    let report = FitReport {
        iters: ft.iters,
        perturb: cfg.fit.perturb,
        initial_loss,
        final_loss,
        initial_psnr,
        final_psnr,
        improved: final_loss < initial_loss,
    };
    info!("fit-check loss {initial_loss:.5} -> {final_loss:.5}, PSNR {initial_psnr:.2} -> {final_psnr:.2} dB");
    write_json(&out.join("fit_check.json"), &report)
}

#[derive(Serialize)]
struct CodedEntry {
    level: usize,
    primitives: u32,
    bytes: usize,
    file: String,
}

fn compress(cfg: &Config, scene: &Path, level: Option<usize>, out: &Path) -> Result<()> {
    let bundle = SceneBundle::load(scene).with_context(|| format!("loading scene {}", scene.display()))?;
    let schedule = cfg.codec.schedule(bundle.gaussians.len())?;
    let down_to = level.unwrap_or(0);
    if down_to >= schedule.levels {
        bail!("level {down_to} out of range for {} levels", schedule.levels);
    }
    let targets = clean_renders(&bundle, false)?;
    let chain = compress_chain(
        &bundle.gaussians,
        &schedule,
        down_to,
        &bundle.train_views,
        &targets,
        bundle.background,
        &cfg.codec.finetune,
        derive_seed(cfg.seed, Stream::Dataset),
    )?;
    let mut entries = Vec::new();
    for lv in chain.iter().filter(|l| level.is_none_or(|want| l.level == want)) {
        let file = format!("level_{}.nifi", lv.level);
        lv.coded.save(out.join(&file))?;
        info!("level {}: {} primitives, {} bytes", lv.level, lv.coded.count, lv.coded.size_bytes());
        entries.push(CodedEntry {
            level: lv.level,
            primitives: lv.coded.count,
            bytes: lv.coded.size_bytes(),
            file,
        });
    }
    write_json(&out.join("compress.json"), &entries)
}

#[derive(Serialize)]
struct DecodeQuality {
    primitives: usize,
    view_psnr: Vec<f64>,
    mean_psnr: f64,
}

fn decompress(input: &Path, scene: Option<&Path>, out: &Path) -> Result<()> {
    let coded = CodedScene::load(input).with_context(|| format!("loading {}", input.display()))?;
    let gs = coded.decode()?;
    save_ply(&gs, out.join("scene.ply"))?;
    if let Some(dir) = scene {
        let bundle = SceneBundle::load(dir).with_context(|| format!("loading scene {}", dir.display()))?;
        let clean = clean_renders(&bundle, true)?;
        let mut view_psnr = Vec::new();
        for (k, (cam, c)) in bundle.test_views.iter().zip(&clean).enumerate() {
            let img = render(&gs, cam, bundle.background, false)?.image;
            img.save_png(out.join(format!("view_{k}.png")))?;
            view_psnr.push(psnr(&img, c, 1.0)?);
        }
        let mean_psnr = view_psnr.iter().sum::<f64>() / view_psnr.len().max(1) as f64;
        info!("decoded {} primitives, test-view PSNR {mean_psnr:.2} dB", gs.len());
        write_json(
            &out.join("quality.json"),
            &DecodeQuality {
                primitives: gs.len(),
                view_psnr,
                mean_psnr,
            },
        )?;
    }
    Ok(())
}

fn load_bundles(dir: &Path) -> Result<Vec<SceneBundle>> {
    let dirs = scene_dirs(dir)?;
    if dirs.is_empty() {
        bail!("no scene_* bundles in {}", dir.display());
    }
    dirs.iter()
        .map(|d| SceneBundle::load(d).with_context(|| format!("loading scene {}", d.display())))
        .collect()
}

/// The dataset lives in `<out>/data` so the snapshot can sit beside it.
pub fn dataset_dir(out: &Path) -> PathBuf {
    out.join("data")
}

fn make_dataset(cfg: &Config, scenes: &Path, out: &Path) -> Result<()> {
    let bundles = load_bundles(scenes)?;
    let generator = serde_json::json!({
        "codec": cfg.codec,
        "condition_classes": cfg.dataset.condition_classes,
        "scenes": bundles.len(),
    });
    let m = synthesize_dataset(
        &bundles,
        &cfg.codec,
        cfg.dataset.condition_classes,
        dataset_dir(out),
        derive_seed(cfg.seed, Stream::Dataset),
        generator,
    )?;
    info!("dataset: {} scenes, {} pairs, {} coded levels", m.n_scenes, m.pairs.len(), m.coded.len());
    Ok(())
}

/// Accepts either the `make-dataset` output directory or the dataset itself.
fn open_dataset(path: &Path) -> Result<DatasetManifest> {
    let root = if path.join(splatfix_core::dataset::MANIFEST_FILE).exists() {
        path.to_path_buf()
    } else {
        dataset_dir(path)
    };
    DatasetManifest::load(&root).with_context(|| format!("loading dataset {}", path.display()))
}

/// Records the failing report before the error propagates (exit code 4).
fn dump_abort(out: &Path, err: &splatfix_restore::Error) {
    if let splatfix_restore::Error::NonFinite { step, detail } = err {
        let body = serde_json::json!({ "step": step, "detail": detail });
        let _ = write_json(&out.join(ABORT_FILE), &body);
    }
}

fn pretrain_base(cfg: &Config, dataset: &Path, out: &Path) -> Result<()> {
    let manifest = open_dataset(dataset)?;
    let pool = PairPool::load(manifest, cfg.net.n_classes)?;
    let clean = pool.clean_samples();
    let mut net = DenoiserNet::new(cfg.net, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::Base)))?;
    info!("pretraining {} parameters on {} clean views", net.param_count(), clean.len());
    let mut log = JsonLines::create(&out.join(LOG_FILE))?;
    let mut io_err = None;
    let result = pretrain(&mut net, &cfg.schedule, &clean, &cfg.pretrain, derive_seed(cfg.seed, Stream::Pretrain), |r| {
        if let Err(e) = log.write(r) {
            io_err.get_or_insert(e);
        }
        if (r.step + 1) % 100 == 0 {
            info!("pretrain step {} loss {:.5} grad-norm {:.4}", r.step + 1, r.loss, r.grad_norm);
        }
    });
    log.finish()?;
    if let Err(e) = result {
        dump_abort(out, &e);
        return Err(e.into());
    }
    if let Some(e) = io_err {
        return Err(e);
    }
    save_base(&net, &cfg.schedule, out.join(BASE_FILE))?;
    Ok(())
}

fn train_restorer(cfg: &Config, dataset: &Path, base: &Path, out: &Path) -> Result<()> {
    let (net, base_schedule) = load_base(base).with_context(|| format!("loading base {}", base.display()))?;
    if base_schedule.steps != cfg.schedule.steps {
        bail!("base was trained with T = {}, configuration has T = {}", base_schedule.steps, cfg.schedule.steps);
    }
    let manifest = open_dataset(dataset)?;
    let mut pool = PairPool::load(manifest, net.config.n_classes)?;
    let state = RestorerState::new(net, cfg.lora, cfg.schedule, derive_seed(cfg.seed, Stream::Adapters))?;
    let dc = cfg.distill_config();
    info!("distilling for {} steps at t0 = {}", dc.steps, dc.t0);
    let mut log = JsonLines::create(&out.join(LOG_FILE))?;
    let mut io_err = None;
    let result = train(state, &mut pool, &dc, Some(out), |r| {
        if let Err(e) = log.write(r) {
            io_err.get_or_insert(e);
        }
        if (r.step + 1) % 50 == 0 {
            info!(
                "distill step {} kl {:.4} l2 {:.5} perc {:.5} critic {:.4}",
                r.step + 1,
                r.l_kl,
                r.l2,
                r.perceptual,
                r.l_phi_plus
            );
        }
    });
    log.finish()?;
    let (state, _) = match result {
        Ok(v) => v,
        Err(e) => {
            dump_abort(out, &e);
            return Err(e.into());
        }
    };
    if let Some(e) = io_err {
        return Err(e);
    }
    state.save(out.join(RESTORER_FILE))?;
    Ok(())
}

fn restorer_state(cfg: &Config, path: Option<&Path>, identity: bool) -> Result<RestorerState> {
    match path {
        Some(p) if !identity => RestorerState::load(p).with_context(|| format!("loading restorer {}", p.display())),
        _ => Ok(RestorerState::identity(cfg.schedule)?),
    }
}

struct Inputs<'a> {
    images: &'a [PathBuf],
    scene: Option<&'a Path>,
    coded: Option<&'a Path>,
}

fn write_pair(out: &Path, stem: &str, img: &Image) -> Result<()> {
    img.save_png(out.join(format!("{stem}.png")))?;
    img.save_f32img(out.join(format!("{stem}.f32img")))?;
    Ok(())
}

fn restore(cfg: &Config, state: &RestorerState, inputs: Inputs<'_>, condition: Option<u32>, out: &Path) -> Result<()> {
    let ev = cfg.eval_config();
    let mut rng = ChaCha8Rng::seed_from_u64(ev.seed);
    for path in inputs.images {
        let img = load_image(path)?;
        let restored = restore_images(state, std::slice::from_ref(&img), condition, &ev, &mut rng)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
        write_pair(out, &format!("{stem}.restored"), &restored[0])?;
        info!("restored {}", path.display());
    }
    if let (Some(scene), Some(coded)) = (inputs.scene, inputs.coded) {
        let bundle = SceneBundle::load(scene).with_context(|| format!("loading scene {}", scene.display()))?;
        let gs = CodedScene::load(coded).with_context(|| format!("loading {}", coded.display()))?.decode()?;
        let degraded: Vec<Image> = bundle
            .test_views
            .iter()
            .map(|c| Ok(render(&gs, c, bundle.background, false)?.image))
            .collect::<Result<_>>()?;
        let restored = restore_images(state, &degraded, condition, &ev, &mut rng)?;
        for (k, (d, r)) in degraded.iter().zip(&restored).enumerate() {
            write_pair(out, &format!("view_{k}.degraded"), d)?;
            write_pair(out, &format!("view_{k}.restored"), r)?;
        }
        info!("restored {} test views", restored.len());
    }
    Ok(())
}

fn evaluate(cfg: &Config, dataset: &Path, scenes: &Path, restorer: Option<&Path>, out: &Path) -> Result<()> {
    let manifest = open_dataset(dataset)?;
    let bundles = load_bundles(scenes)?;
    let renders = manifest_renders(&manifest, &bundles)?;
    let state = restorer
        .map(|p| RestorerState::load(p).with_context(|| format!("loading restorer {}", p.display())))
        .transpose()?;
    let report = rd_evaluate(&renders, state.as_ref(), &cfg.eval_config())?;
    fs::write(out.join(REPORT_JSON), report.to_json()?)?;
    fs::write(out.join(REPORT_CSV), report.to_csv())?;
    let table = report.to_table();
    fs::write(out.join(REPORT_TABLE), &table)?;
    print!("{table}");
    Ok(())
}
