//! `root/images/*.png`, `root/masks/*.png`, optional `root/hf/*.png`, matched
//! by file stem, with a `manifest.json` recording the split.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_sample, save_mask, save_rgb, split_dataset, synth_scene, Sample};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const IMAGES: &str = "images";
const MASKS: &str = "masks";
const HF: &str = "hf";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Paths relative to the dataset root.
    pub image: String,
    pub mask: String,
    pub hf: Option<String>,
    pub split: SplitName,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

fn assign_splits(n: usize, seed: u64) -> Result<Vec<SplitName>> {
    let mut names = vec![SplitName::Train; n];
    if n >= 10 {
        let s = split_dataset(n, seed)?;
        s.val.iter().for_each(|&i| names[i] = SplitName::Val);
        s.test.iter().for_each(|&i| names[i] = SplitName::Test);
    }
    Ok(names)
}

impl DatasetManifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.root = root.to_path_buf();
        m.check_files()?;
        Ok(m)
    }

    pub fn save(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Builds a manifest by matching `images/` against `masks/` and `hf/`.
    /// Fewer than 10 entries all go to training.
    pub fn scan(root: &Path, seed: u64) -> Result<Self> {
        let dir = root.join(IMAGES);
        let listing = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut stems = Vec::new();
        for entry in listing {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                if let Some(s) = p.file_stem() {
                    stems.push(s.to_string_lossy().into_owned());
                }
            }
        }
        stems.sort();
        let splits = assign_splits(stems.len(), seed)?;
        let mut entries = Vec::with_capacity(stems.len());
        for (stem, split) in stems.into_iter().zip(splits) {
            let mask = format!("{MASKS}/{stem}.png");
            if !root.join(&mask).is_file() {
                return Err(Error::Invalid(format!("image {stem} has no mask at {}", root.join(&mask).display())));
            }
            let hf = format!("{HF}/{stem}.png");
            entries.push(ManifestEntry {
                image: format!("{IMAGES}/{stem}.png"),
                mask,
                hf: root.join(&hf).is_file().then_some(hf),
                id: stem,
                split,
            });
        }
        Ok(DatasetManifest {
            seed,
            entries,
            root: root.to_path_buf(),
        })
    }

    fn check_files(&self) -> Result<()> {
        for e in &self.entries {
            for f in [Some(&e.image), Some(&e.mask), e.hf.as_ref()].into_iter().flatten() {
                let p = self.root.join(f);
                if !p.is_file() {
                    return Err(Error::Invalid(format!("manifest entry {} references missing {}", e.id, p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn load_entry(&self, e: &ManifestEntry, size: Option<usize>) -> Result<Sample> {
        let hf = e.hf.as_ref().map(|h| self.root.join(h));
        let mut s = load_sample(&self.root.join(&e.image), &self.root.join(&e.mask), hf.as_deref(), size)?;
        s.id = e.id.clone();
        Ok(s)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, name: SplitName) -> &[Sample] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Loads every sample, using `manifest.json` when present and scanning the
/// layout otherwise.
pub fn load_dataset(root: &Path, size: Option<usize>, seed: u64) -> Result<Dataset> {
    let manifest = if root.join(MANIFEST_FILE).is_file() {
        DatasetManifest::load(root)?
    } else {
        DatasetManifest::scan(root, seed)?
    };
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for e in &manifest.entries {
        let s = manifest.load_entry(e, size)?;
        match e.split {
            SplitName::Train => train.push(s),
            SplitName::Val => val.push(s),
            SplitName::Test => test.push(s),
        }
    }
    Ok(Dataset {
        manifest,
        train,
        val,
        test,
    })
}

/// Materialises `n` synthetic scenes under `dir`. A non-empty `dir` is only
/// overwritten with `force`.
pub fn write_synthetic_dataset(dir: &Path, n: usize, size: usize, seed: u64, force: bool) -> Result<DatasetManifest> {
    if dir.exists() {
        let mut listing = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if listing.next().is_some() {
            if !force {
                return Err(Error::Invalid(format!(
                    "{} is not empty; pass --force to overwrite",
                    dir.display()
                )));
            }
            for sub in [IMAGES, MASKS, HF] {
                let p = dir.join(sub);
                if p.exists() {
                    std::fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
        }
    }
    for sub in [IMAGES, MASKS, HF] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splits = assign_splits(n, seed)?;
    let width = n.saturating_sub(1).to_string().len().max(4);
    let mut entries = Vec::with_capacity(n);
    for (i, split) in splits.into_iter().enumerate() {
        let blobs = rng.random_range(1..=2);
        let ridges = rng.random_range(1..=3);
        let s = synth_scene(&mut rng, size, blobs, ridges)?;
        let id = format!("synth_{i:0width$}");
        let entry = ManifestEntry {
            image: format!("{IMAGES}/{id}.png"),
            mask: format!("{MASKS}/{id}.png"),
            hf: Some(format!("{HF}/{id}.png")),
            id,
            split,
        };
        save_rgb(&dir.join(&entry.image), &s.image)?;
        save_mask(&dir.join(&entry.mask), &s.mask)?;
        if let (Some(hf), Some(region)) = (&entry.hf, &s.hf_region) {
            save_mask(&dir.join(hf), region)?;
        }
        entries.push(entry);
    }
    let manifest = DatasetManifest {
        seed,
        entries,
        root: dir.to_path_buf(),
    };
    manifest.save()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_synthetic_dataset(dir.path(), 12, 32, 3, false).unwrap();
        let counts = |s| m.entries.iter().filter(|e| e.split == s).count();
        assert_eq!((counts(SplitName::Train), counts(SplitName::Val), counts(SplitName::Test)), (10, 1, 1));
        let ds = load_dataset(dir.path(), None, 0).unwrap();
        assert_eq!(ds.train.len(), 10);
        assert!(ds.train.iter().all(|s| s.hf_region.is_some()));
        assert!(write_synthetic_dataset(dir.path(), 2, 32, 3, false).is_err());
        write_synthetic_dataset(dir.path(), 2, 32, 3, true).unwrap();
        assert_eq!(load_dataset(dir.path(), None, 0).unwrap().train.len(), 2);
    }

    #[test]
    fn scan_without_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_dataset(dir.path(), 3, 32, 1, false).unwrap();
        std::fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
        std::fs::remove_file(dir.path().join("hf/synth_0001.png")).unwrap();
        let m = DatasetManifest::scan(dir.path(), 0).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert!(m.entries[1].hf.is_none());
        std::fs::remove_file(dir.path().join("masks/synth_0002.png")).unwrap();
        assert!(DatasetManifest::scan(dir.path(), 0).is_err());
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_synthetic_dataset(&dir.path().join("d"), 0, 32, 1, false).unwrap();
        assert!(m.entries.is_empty());
        let loaded = DatasetManifest::load(&dir.path().join("d")).unwrap();
        assert!(loaded.entries.is_empty());
    }
}
