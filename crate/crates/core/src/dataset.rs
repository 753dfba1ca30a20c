//! Paired (degraded, clean) training images from coded scenes.
//!
//! Layout under the dataset root:
//! `scene_<id>/level_<l>/view_<v>.{clean,degraded}.f32img` plus the coded
//! scene `scene_<id>/level_<l>/scene.nifi` and a `manifest.json` index with a
//! CRC-32 per image file.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{compress_chain, CodecConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::render;
use crate::synth::SceneBundle;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_CONDITION_CLASSES: u32 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub scene: usize,
    pub view: usize,
    pub level: usize,
    pub condition: u32,
    pub clean: String,
    pub degraded: String,
    pub clean_crc32: u32,
    pub degraded_crc32: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodedLevel {
    pub scene: usize,
    pub level: usize,
    pub primitives: usize,
    pub bytes: usize,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n_scenes: usize,
    pub levels: usize,
    pub n_condition_classes: u32,
    /// Snapshot of whatever parameters produced the scenes and codec runs.
    pub generator: serde_json::Value,
    pub coded: Vec<CodedLevel>,
    pub pairs: Vec<PairEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub degraded: Image,
    pub clean: Image,
    pub condition: u32,
    pub scene: usize,
    pub view: usize,
    pub level: usize,
}

/// Condition class of a scene: a fixed 64-bit mix of its index modulo
/// `classes`.
pub fn condition_tag(scene: usize, classes: u32) -> u32 {
    let mut z = (scene as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z % classes.max(1) as u64) as u32
}

fn write_image(root: &Path, rel: &str, img: &Image) -> Result<u32> {
    let bytes = img.to_f32img_bytes();
    fs::write(root.join(rel), &bytes)?;
    Ok(crc32fast::hash(&bytes))
}

fn build(
    root: &Path,
    scenes: &[SceneBundle],
    codec: &CodecConfig,
    classes: u32,
    seed: u64,
    generator: serde_json::Value,
) -> Result<DatasetManifest> {
    let mut pairs = Vec::new();
    let mut coded_levels = Vec::new();
    for (s, scene) in scenes.iter().enumerate() {
        let clean: Vec<Image> = scene
            .train_views
            .iter()
            .map(|cam| render(&scene.gaussians, cam, scene.background, false).map(|o| o.image))
            .collect::<Result<_>>()?;
        let schedule = codec.schedule(scene.gaussians.len())?;
        let chain = compress_chain(
            &scene.gaussians,
            &schedule,
            0,
            &scene.train_views,
            &clean,
            scene.background,
            &codec.finetune,
            seed.wrapping_add(s as u64),
        )?;
        let condition = condition_tag(s, classes);
        for lv in chain {
            let dir = format!("scene_{s}/level_{}", lv.level);
            fs::create_dir_all(root.join(&dir))?;
            let coded_rel = format!("{dir}/scene.nifi");
            lv.coded.save(root.join(&coded_rel))?;
            coded_levels.push(CodedLevel {
                scene: s,
                level: lv.level,
                primitives: lv.coded.count as usize,
                bytes: lv.coded.size_bytes(),
                path: coded_rel,
            });
            let decoded = lv.coded.decode()?;
            for (v, cam) in scene.train_views.iter().enumerate() {
                let degraded = render(&decoded, cam, scene.background, false)?.image;
                let clean_rel = format!("{dir}/view_{v}.clean.f32img");
                let degraded_rel = format!("{dir}/view_{v}.degraded.f32img");
                let clean_crc32 = write_image(root, &clean_rel, &clean[v])?;
                let degraded_crc32 = write_image(root, &degraded_rel, &degraded)?;
                pairs.push(PairEntry {
                    scene: s,
                    view: v,
                    level: lv.level,
                    condition,
                    clean: clean_rel,
                    degraded: degraded_rel,
                    clean_crc32,
                    degraded_crc32,
                });
            }
        }
    }
    coded_levels.sort_by_key(|c| (c.scene, c.level));
    pairs.sort_by_key(|p| (p.scene, p.level, p.view));
    let manifest = DatasetManifest {
        seed,
        n_scenes: scenes.len(),
        levels: codec.levels,
        n_condition_classes: classes,
        generator,
        coded: coded_levels,
        pairs,
        root: root.to_path_buf(),
    };
    fs::write(root.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Renders every training view of every scene at every codec level and
/// writes the pairs under `out_dir`, which must be absent or empty. Work
/// happens in a sibling staging directory that is removed on failure, so a
/// failed run leaves nothing behind.
pub fn synthesize_dataset(
    scenes: &[SceneBundle],
    codec: &CodecConfig,
    classes: u32,
    out_dir: impl AsRef<Path>,
    seed: u64,
    generator: serde_json::Value,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("no scenes to synthesize from".into()));
    }
    if let Some(s) = scenes.iter().position(|s| s.train_views.is_empty()) {
        return Err(Error::InvalidArgument(format!("scene {s} has no training views")));
    }
    if out_dir.exists() && fs::read_dir(out_dir)?.next().is_some() {
        return Err(Error::InvalidArgument(format!("output directory {} is not empty", out_dir.display())));
    }
    let name = out_dir
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("bad output directory {}", out_dir.display())))?;
    let staging = out_dir.with_file_name(format!(".{}.partial", name.to_string_lossy()));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    match build(&staging, scenes, codec, classes, seed, generator) {
        Ok(mut m) => {
            if out_dir.exists() {
                fs::remove_dir(out_dir)?;
            }
            fs::rename(&staging, out_dir)?;
            m.root = out_dir.to_path_buf();
            Ok(m)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

impl DatasetManifest {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut m: Self = serde_json::from_str(&fs::read_to_string(root.join(MANIFEST_FILE))?)?;
        m.root = root.to_path_buf();
        Ok(m)
    }

    fn read_checked(&self, rel: &str, crc: u32) -> Result<Image> {
        let bytes = fs::read(self.root.join(rel))?;
        let computed = crc32fast::hash(&bytes);
        if computed != crc {
            return Err(Error::Checksum { stored: crc, computed });
        }
        Image::from_f32img_bytes(&bytes)
    }

    pub fn load_pair(&self, e: &PairEntry) -> Result<TrainingPair> {
        Ok(TrainingPair {
            degraded: self.read_checked(&e.degraded, e.degraded_crc32)?,
            clean: self.read_checked(&e.clean, e.clean_crc32)?,
            condition: e.condition,
            scene: e.scene,
            view: e.view,
            level: e.level,
        })
    }

    /// Checks that every indexed image exists and matches its checksum.
    pub fn verify(&self) -> Result<()> {
        for e in &self.pairs {
            self.load_pair(e)?;
        }
        Ok(())
    }

    /// Entries of one scene.
    pub fn scene_pairs(&self, scene: usize) -> Vec<&PairEntry> {
        self.pairs.iter().filter(|p| p.scene == scene).collect()
    }

    /// Draws `batch` pairs from distinct scenes, chosen without replacement;
    /// view and level are uniform within each scene.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&PairEntry>> {
        let scenes: Vec<usize> = {
            let mut ids: Vec<usize> = self.pairs.iter().map(|p| p.scene).collect();
            ids.dedup();
            ids
        };
        if batch == 0 || batch > scenes.len() {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch} needs between 1 and {} distinct scenes",
                scenes.len()
            )));
        }
        Ok(sample(rng, scenes.len(), batch)
            .into_iter()
            .map(|k| {
                let of_scene = self.scene_pairs(scenes[k]);
                of_scene[rng.random_range(0..of_scene.len())]
            })
            .collect())
    }
}
