//! Bridges a synthesized pair dataset to the trainers.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use splatfix_core::codec::CodedScene;
use splatfix_core::dataset::DatasetManifest;
use splatfix_core::SceneBundle;

use crate::distill::{BatchSource, Sample};
use crate::error::{Error, Result};
use crate::eval::{scene_renders, SceneRenders};
use crate::latent;
use crate::pretrain::CleanSample;

/// Every pair of a manifest decoded once into latents, keyed by manifest
/// order. Batches follow the manifest's own sampler: distinct scenes per
/// batch, uniform view and level within a scene.
pub struct PairPool {
    manifest: DatasetManifest,
    samples: Vec<Sample>,
    index: BTreeMap<(usize, usize, usize), usize>,
}

impl PairPool {
    /// Loads and checksums every pair. Conditions must be below `n_classes`.
    pub fn load(manifest: DatasetManifest, n_classes: usize) -> Result<Self> {
        if manifest.n_condition_classes as usize > n_classes {
            return Err(Error::InvalidConfig(format!(
                "dataset uses {} condition classes, the network has {n_classes}",
                manifest.n_condition_classes
            )));
        }
        let samples = manifest
            .pairs
            .iter()
            .map(|e| {
                let p = manifest.load_pair(e)?;
                Ok(Sample {
                    clean: latent::encode(&p.clean)?,
                    degraded: latent::encode(&p.degraded)?,
                    cond: Some(p.condition),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let index = manifest.pairs.iter().enumerate().map(|(i, e)| ((e.scene, e.level, e.view), i)).collect();
        Ok(Self { manifest, samples, index })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// One clean latent per `(scene, view)`, in scene then view order.
    pub fn clean_samples(&self) -> Vec<CleanSample> {
        let mut seen = BTreeMap::new();
        for (e, s) in self.manifest.pairs.iter().zip(&self.samples) {
            seen.entry((e.scene, e.view)).or_insert_with(|| CleanSample {
                latent: s.clean.clone(),
                cond: s.cond,
            });
        }
        seen.into_values().collect()
    }
}

impl BatchSource for PairPool {
    fn next_batch(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Sample>> {
        let picks = self.manifest.sample_batch(n, rng)?;
        Ok(picks
            .into_iter()
            .map(|e| self.samples[self.index[&(e.scene, e.level, e.view)]].clone())
            .collect())
    }
}

/// Test-view renders for every scene of `manifest`, decoding its stored
/// levels. `bundles[i]` must be the scene the dataset indexed as `i`.
pub fn manifest_renders(manifest: &DatasetManifest, bundles: &[SceneBundle]) -> Result<Vec<SceneRenders>> {
    if bundles.len() != manifest.n_scenes {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} scenes, {} bundles given",
            manifest.n_scenes,
            bundles.len()
        )));
    }
    bundles
        .iter()
        .enumerate()
        .map(|(s, bundle)| {
            let coded = manifest
                .coded
                .iter()
                .filter(|c| c.scene == s)
                .map(|c| Ok(CodedScene::load(manifest.root.join(&c.path))?))
                .collect::<Result<Vec<_>>>()?;
            let condition = manifest.pairs.iter().find(|p| p.scene == s).map(|p| p.condition);
            scene_renders(s, bundle, &coded, condition)
        })
        .collect()
}
