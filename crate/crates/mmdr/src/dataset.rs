//! Seeded scene splits and their on-disk layout
//! `<root>/{train,val,test}/scene_<seed>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use mmdr_core::scene::{sample_scene, Scene, SceneConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }

    pub fn size(self, cfg: &RunConfig) -> usize {
        match self {
            Split::Train => cfg.splits.train,
            Split::Val => cfg.splits.val,
            Split::Test => cfg.splits.test,
        }
    }
}

/// SplitMix64 finalizer; turns structured seed material into well-spread
/// stream seeds.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Scene seeds of a split, in dataset order.
pub fn scene_seeds(cfg: &RunConfig, split: Split) -> Vec<u64> {
    let base = mix(cfg.seeds.data, split.tag());
    (0..split.size(cfg) as u64).map(|i| mix(base, i)).collect()
}

pub fn generate_split(scene: &SceneConfig, seeds: &[u64]) -> Result<Vec<Scene>> {
    seeds
        .par_iter()
        .map(|&s| sample_scene(scene, s).map_err(Error::from))
        .collect()
}

pub fn scene_path(root: &Path, split: Split, seed: u64) -> PathBuf {
    root.join(split.as_str()).join(format!("scene_{seed}.json"))
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    let text = serde_json::to_string_pretty(scene).expect("scene serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Generates every split and writes it under `root`. Returns the number of
/// files written.
pub fn write_dataset(cfg: &RunConfig, root: &Path) -> Result<usize> {
    let mut n = 0;
    for split in Split::ALL {
        let dir = root.join(split.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let seeds = scene_seeds(cfg, split);
        let scenes = generate_split(&cfg.scene, &seeds)?;
        scenes
            .par_iter()
            .zip(&seeds)
            .try_for_each(|(s, &seed)| write_scene(&scene_path(root, split, seed), s))?;
        n += scenes.len();
        log::info!("{}: {} scenes", split.as_str(), scenes.len());
    }
    Ok(n)
}

/// Scenes of one split: read from `root` when given, otherwise regenerated
/// from the data seed.
pub fn load_split(cfg: &RunConfig, split: Split, root: Option<&Path>) -> Result<Vec<Scene>> {
    let seeds = scene_seeds(cfg, split);
    match root {
        None => generate_split(&cfg.scene, &seeds),
        Some(root) => seeds.par_iter().map(|&s| read_scene(&scene_path(root, split, s))).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_seeds_are_distinct() {
        let cfg = RunConfig::default();
        let mut all: Vec<u64> = Split::ALL.iter().flat_map(|&s| scene_seeds(&cfg, s)).collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
        assert_eq!(n, 300);
    }
}
