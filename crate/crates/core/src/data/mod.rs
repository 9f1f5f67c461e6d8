//! Dataset discovery, splitting, image loading, augmentation and batching.

mod augment;
mod batch;
mod image_io;
mod split;
mod synth;

pub use augment::{augment, brightness, flip_horizontal, flip_vertical, rotate, AugmentConfig};
pub use batch::{Batch, BatchIterator};
pub use image_io::{image_from_rgb8, load_image, resize_bilinear};
pub use split::{partition_counts, read_manifest, split_dataset, write_manifest, Partition, Sample, Split};
pub use synth::{generate_synthetic_dataset, SynthOptions};

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];
pub const MIN_CLASS_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassEntry {
    pub crop: String,
    pub disease: String,
    pub directory: String,
    /// Paths relative to the dataset root, sorted.
    pub files: Vec<PathBuf>,
}

/// Class-per-directory image tree. Class indices follow the lexicographic
/// order of the directory names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub classes: Vec<ClassEntry>,
}

impl DatasetIndex {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.directory.clone()).collect()
    }

    pub fn total_files(&self) -> usize {
        self.classes.iter().map(|c| c.files.len()).sum()
    }
}

/// `Crop___Disease` (PlantVillage style) or `Crop_Disease`; a bare name is a crop.
fn crop_and_disease(dir: &str) -> (String, String) {
    if let Some((crop, disease)) = dir.split_once("___") {
        return (crop.to_string(), disease.to_string());
    }
    match dir.split_once('_') {
        Some((crop, disease)) => (crop.to_string(), disease.to_string()),
        None => (dir.to_string(), String::new()),
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Indexes `root/<class>/<image>`. Every listed file has a readable image header.
pub fn scan_dataset(root: &Path) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} is not a directory", root.display())));
    }
    let mut dirs: Vec<String> = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            dirs.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Data(format!("no class directories under {}", root.display())));
    }

    let mut classes = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let class_path = root.join(&dir);
        let mut files = Vec::new();
        for entry in fs::read_dir(&class_path).map_err(|e| Error::io(&class_path, e))? {
            let path = entry.map_err(|e| Error::io(&class_path, e))?.path();
            if path.is_file() && is_image(&path) {
                files.push(PathBuf::from(&dir).join(path.file_name().expect("file name")));
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!("class directory {} contains no images", class_path.display())));
        }
        if files.len() < MIN_CLASS_SIZE {
            return Err(Error::Data(format!(
                "class directory {} has {} images; at least {MIN_CLASS_SIZE} are needed for an 80/10/10 split",
                class_path.display(),
                files.len()
            )));
        }
        for f in &files {
            let full = root.join(f);
            image::ImageReader::open(&full)
                .map_err(|e| Error::io(&full, e))?
                .with_guessed_format()
                .map_err(|e| Error::io(&full, e))?
                .into_dimensions()
                .map_err(|e| Error::Decode { path: full.clone(), msg: e.to_string() })?;
        }
        let (crop, disease) = crop_and_disease(&dir);
        classes.push(ClassEntry {
            crop,
            disease,
            directory: dir,
            files,
        });
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        classes,
    })
}
