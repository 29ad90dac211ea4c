use std::path::{Path, PathBuf};

use super::LabelSpace;
use crate::error::{Error, Result};
use crate::imaging::{load_image, GrayImage};

const IMAGE_EXTENSIONS: [&str; 3] = ["pgm", "pnm", "png"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub image: GrayImage,
}

/// Images found under a root with one sub-directory per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageManifest {
    pub root: PathBuf,
    pub label_space: LabelSpace,
    pub entries: Vec<ManifestEntry>,
}

impl ImageManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.label_space.len()];
        for e in &self.entries {
            counts[e.label] += 1;
        }
        counts
    }
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_children(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Classes are the sub-directories of `root` in lexicographic order; files
/// inside each are taken in lexicographic order too. Files without a
/// `.pgm`/`.pnm`/`.png` extension are skipped.
pub fn load_manifest(root: impl AsRef<Path>) -> Result<ImageManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::FileNotFound(root.to_path_buf()));
    }
    let class_dirs: Vec<PathBuf> = sorted_children(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.is_empty() {
        return Err(Error::invalid(format!(
            "{} contains no class directories",
            root.display()
        )));
    }
    let mut names = Vec::with_capacity(class_dirs.len());
    let mut entries = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::invalid(format!("class directory {} is not UTF-8", dir.display())))?;
        names.push(name.to_owned());
        let files: Vec<PathBuf> = sorted_children(dir)?.into_iter().filter(|p| is_image(p)).collect();
        if files.is_empty() {
            return Err(Error::invalid(format!(
                "class directory {} contains no images",
                dir.display()
            )));
        }
        for path in files {
            let image = load_image(&path)?;
            entries.push(ManifestEntry { path, label, image });
        }
    }
    Ok(ImageManifest {
        root: root.to_path_buf(),
        label_space: LabelSpace::new(names)?,
        entries,
    })
}
