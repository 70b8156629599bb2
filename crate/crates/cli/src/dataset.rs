//! Patch discovery and manifests.
//!
//! A patch file `<image>_<k>.<ext>` belongs to image `<image>`; a stem
//! without `_` is a single-patch image. Patches of one image are ordered by
//! natural sort of their file names, which gives the row-major scan order.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPos {
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub id: String,
    pub file: PathBuf,
    pub parent_image_id: String,
    /// Position in the image's patch stream.
    pub index: usize,
    /// Known once the image has been stitched.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grid: Option<GridPos>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageGroup {
    pub id: String,
    /// Indices into [`Manifest::patches`], in stream order.
    pub patches: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub patches: Vec<PatchRecord>,
    pub images: Vec<ImageGroup>,
}

pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    natord::compare(a, b).then_with(|| a.cmp(b))
}

pub fn parent_of(stem: &str) -> &str {
    stem.rsplit_once('_').map_or(stem, |(p, _)| p)
}

impl Manifest {
    /// Lists files in `dir` whose extension is in `exts` (case-insensitive).
    pub fn discover(dir: &Path, exts: &[&str]) -> anyhow::Result<Self> {
        let mut files: Vec<(String, PathBuf)> = Vec::new();
        for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase);
            if !path.is_file() || !ext.is_some_and(|e| exts.contains(&e.as_str())) {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                bail!("non UTF-8 file name {}", path.display());
            };
            files.push((stem.to_string(), path));
        }
        if files.is_empty() {
            bail!("{} contains no {} files", dir.display(), exts.join("/"));
        }
        files.sort_by(|a, b| {
            let (fa, fb) = (a.1.file_name().unwrap(), b.1.file_name().unwrap());
            natural_cmp(&fa.to_string_lossy(), &fb.to_string_lossy())
        });
        Self::from_files(files)
    }

    fn from_files(files: Vec<(String, PathBuf)>) -> anyhow::Result<Self> {
        let mut manifest = Manifest::default();
        let mut seen = std::collections::HashSet::new();
        for (stem, file) in files {
            if !seen.insert(stem.clone()) {
                bail!("duplicate patch id `{stem}` ({})", file.display());
            }
            let parent = parent_of(&stem).to_string();
            let group = match manifest.images.iter().position(|g| g.id == parent) {
                Some(g) => g,
                None => {
                    manifest.images.push(ImageGroup {
                        id: parent.clone(),
                        patches: Vec::new(),
                    });
                    manifest.images.len() - 1
                }
            };
            let index = manifest.images[group].patches.len();
            manifest.images[group].patches.push(manifest.patches.len());
            manifest.patches.push(PatchRecord {
                id: stem,
                file,
                parent_image_id: parent,
                index,
                grid: None,
            });
        }
        Ok(manifest)
    }

    /// Records the row-major grid of `image` once its layout is known.
    pub fn set_layout(&mut self, image: usize, cols: usize) {
        for &p in &self.images[image].patches {
            let k = self.patches[p].index;
            self.patches[p].grid = Some(GridPos {
                row: k / cols,
                col: k % cols,
            });
        }
    }
}

/// Source and target manifests of one run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub source: Manifest,
    pub target: Manifest,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natural_order_and_grouping() {
        let dir = tempfile::tempdir().unwrap();
        for name in [
            "b_10.raw",
            "b_2.raw",
            "a_1.raw",
            "b_1.raw",
            "solo.raw",
            "notes.txt",
        ] {
            std::fs::write(dir.path().join(name), b"").unwrap();
        }
        let m = Manifest::discover(dir.path(), &["raw"]).unwrap();
        let ids: Vec<&str> = m.patches.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["a_1", "b_1", "b_2", "b_10", "solo"]);
        let groups: Vec<(&str, usize)> = m
            .images
            .iter()
            .map(|g| (g.id.as_str(), g.patches.len()))
            .collect();
        assert_eq!(groups, [("a", 1), ("b", 3), ("solo", 1)]);
        assert_eq!(m.patches[3].index, 2);
    }

    #[test]
    fn empty_dir_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Manifest::discover(dir.path(), &["raw"]).is_err());
    }

    #[test]
    fn duplicate_stems_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x_1.png"), b"").unwrap();
        std::fs::write(dir.path().join("x_1.jpg"), b"").unwrap();
        assert!(Manifest::discover(dir.path(), &["png", "jpg"]).is_err());
    }

    #[test]
    fn layout_assigns_row_major_grid() {
        let files = (0..6)
            .map(|k| (format!("im_{k}"), PathBuf::from(format!("im_{k}.raw"))))
            .collect();
        let mut m = Manifest::from_files(files).unwrap();
        m.set_layout(0, 3);
        assert_eq!(m.patches[4].grid, Some(GridPos { row: 1, col: 1 }));
        assert_eq!(m.patches[2].grid, Some(GridPos { row: 0, col: 2 }));
    }
}
