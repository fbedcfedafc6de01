//! Dataset manifest: frame/mask paths with a train/val split.
//!
//! Relative paths are resolved against the directory holding the manifest.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{read_image, read_mask};
use super::Sample;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub frame: PathBuf,
    pub mask_left: PathBuf,
    pub mask_right: PathBuf,
    pub split: Split,
}

impl ManifestEntry {
    pub fn frame_id(&self) -> String {
        self.frame
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    entries: Vec<ManifestEntry>,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    counts: Option<SplitCounts>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            entries,
            version: MANIFEST_VERSION,
        }
    }

    pub fn counts(&self) -> SplitCounts {
        let train = self.entries.iter().filter(|e| e.split == Split::Train).count();
        SplitCounts {
            train,
            val: self.entries.len() - train,
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Decode every entry of `split`, resolving paths against `base`.
    pub fn load_samples(&self, base: &Path, split: Split) -> Result<Vec<Sample>> {
        self.split(split).map(|e| load_entry(base, e)).collect()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Directory that relative entries in the manifest at `path` refer to.
pub fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn load_entry(base: &Path, entry: &ManifestEntry) -> Result<Sample> {
    let image = read_image(&resolve(base, &entry.frame))?;
    let left = read_mask(&resolve(base, &entry.mask_left))?;
    let right = read_mask(&resolve(base, &entry.mask_right))?;
    Sample::new(image, left, right, entry.frame_id()).map_err(|e| Error::Manifest {
        path: resolve(base, &entry.frame),
        reason: e.to_string(),
    })
}

/// Parse and validate: version, counts and every referenced file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if file.version != MANIFEST_VERSION {
        return Err(bad(format!("unsupported version {}", file.version)));
    }
    let manifest = DatasetManifest {
        entries: file.entries,
        version: file.version,
    };
    if let Some(counts) = file.counts {
        if counts != manifest.counts() {
            return Err(bad(format!(
                "declared counts {counts:?} disagree with entries {:?}",
                manifest.counts()
            )));
        }
    }
    let base = manifest_dir(path);
    for entry in &manifest.entries {
        load_entry(&base, entry)?;
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let file = ManifestFile {
        entries: manifest.entries.clone(),
        version: manifest.version,
        counts: Some(manifest.counts()),
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::io::{write_image, write_mask};
    use crate::raster::{Mask, RgbImage};

    fn write_files(dir: &Path) {
        let mut l = Mask::new(4, 6);
        l.set(1, 1, 1);
        write_image(&dir.join("f.png"), &RgbImage::new(4, 6)).unwrap();
        write_mask(&dir.join("l.png"), &l).unwrap();
        write_mask(&dir.join("r.png"), &Mask::new(4, 6)).unwrap();
    }

    fn entry(split: Split) -> ManifestEntry {
        ManifestEntry {
            frame: "f.png".into(),
            mask_left: "l.png".into(),
            mask_right: "r.png".into(),
            split,
        }
    }

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path());
        let m = DatasetManifest::new(vec![entry(Split::Train), entry(Split::Val)]);
        let p = dir.path().join("manifest.json");
        save_manifest(&m, &p).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), m);
        let samples = m.load_samples(dir.path(), Split::Train).unwrap();
        assert_eq!(samples[0].mask_union.count(), 1);
    }

    #[test]
    fn missing_mask_names_path() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path());
        let mut e = entry(Split::Train);
        e.mask_right = "gone.png".into();
        let p = dir.path().join("manifest.json");
        save_manifest(&DatasetManifest::new(vec![e]), &p).unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("gone.png"), "{err}");
    }

    #[test]
    fn malformed_record_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        std::fs::write(&p, r#"{"entries":[{"frame":"f.png","split":"test"}],"version":1}"#).unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Manifest { .. })));
    }
}
