//! Images, labels, dataset layout on disk, augmentations and split statistics.
//!
//! Layout under a dataset root:
//!
//! ```text
//! manifest.txt              one "<split> <id>" line per image
//! images/<split>/<id>.ppm   (or .pgm)
//! labels/<split>/<id>.txt
//! ```

mod annotations;
mod pnm;
mod stats;
mod transforms;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub use annotations::{
    box_in_bounds, format_annotations, parse_annotation_text, parse_annotations, snap, snap_box,
};
pub use pnm::{decode_pnm, encode_pnm, image_extent, load_image, load_raw, save_ppm, save_raw, RawImage};
pub use stats::{dataset_stats, DatasetStats, Histogram2d, HISTOGRAM_BINS};
pub use transforms::{
    augment_flip, augment_random_crop, crop_to, flip_horizontal, gaussian_kernel, preprocess,
    transform_brightness_contrast, transform_gaussian_blur, transform_grayscale, CropWindow,
    CROP_SCALE_RANGE, LUMA_WEIGHTS, MIN_VISIBLE_FRACTION, NORMALIZE_MEAN, NORMALIZE_SCALE,
};

use crate::error::{Error, Result};
use crate::head::Detection;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub id: String,
    /// `(H, W, 3)` in `[0, 1]`.
    pub pixels: Tensor,
    pub boxes: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: String,
    pub items: Vec<AnnotatedImage>,
}

impl DatasetSplit {
    pub fn new(name: impl Into<String>, items: Vec<AnnotatedImage>) -> Result<Self> {
        let name = name.into();
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate id {:?} in split {name}", item.id)));
            }
        }
        Ok(Self { name, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn box_count(&self) -> usize {
        self.items.iter().map(|i| i.boxes.len()).sum()
    }
}

pub fn image_dir(root: &Path, split: &str) -> PathBuf {
    root.join("images").join(split)
}

pub fn label_dir(root: &Path, split: &str) -> PathBuf {
    root.join("labels").join(split)
}

/// `(split, id)` pairs in file order.
pub fn read_manifest(root: &Path) -> Result<Vec<(String, String)>> {
    let path = root.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(split), Some(id), None) => entries.push((split.to_string(), id.to_string())),
            _ => {
                return Err(Error::Annotation {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: "expected \"<split> <id>\"".into(),
                })
            }
        }
    }
    Ok(entries)
}

fn image_path(root: &Path, split: &str, id: &str) -> Result<PathBuf> {
    let dir = image_dir(root, split);
    for ext in ["ppm", "pgm"] {
        let p = dir.join(format!("{id}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(format!("{id}.ppm")),
        std::io::Error::new(std::io::ErrorKind::NotFound, "no .ppm or .pgm image"),
    ))
}

/// Load every manifest entry of `split`.
pub fn load_split(root: impl AsRef<Path>, split: &str) -> Result<DatasetSplit> {
    let root = root.as_ref();
    let mut items = Vec::new();
    for (s, id) in read_manifest(root)? {
        if s != split {
            continue;
        }
        let pixels = load_image(image_path(root, &s, &id)?)?;
        let boxes = parse_annotations(label_dir(root, &s).join(format!("{id}.txt")))?;
        items.push(AnnotatedImage { id, pixels, boxes });
    }
    DatasetSplit::new(split, items)
}

/// Write `split` under `root` and append its ids to the manifest.
pub fn write_split(root: impl AsRef<Path>, split: &DatasetSplit) -> Result<()> {
    let root = root.as_ref();
    let (images, labels) = (image_dir(root, &split.name), label_dir(root, &split.name));
    for dir in [&images, &labels] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut manifest = String::new();
    for item in &split.items {
        save_ppm(images.join(format!("{}.ppm", item.id)), &item.pixels)?;
        let label = labels.join(format!("{}.txt", item.id));
        std::fs::write(&label, format_annotations(&item.boxes)).map_err(|e| Error::io(&label, e))?;
        writeln!(manifest, "{} {}", split.name, item.id).unwrap();
    }
    let path = root.join(MANIFEST_FILE);
    let mut existing = match std::fs::read_to_string(&path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(&path, e)),
    };
    existing.push_str(&manifest);
    std::fs::write(&path, existing).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::BBox;

    fn item(id: &str) -> AnnotatedImage {
        AnnotatedImage {
            id: id.into(),
            pixels: Tensor::from_fn(&[4, 6, 3], |i| (i % 256) as f32 / 255.0),
            boxes: vec![Detection::ground_truth(snap_box(BBox::new(0.5, 0.5, 0.25, 0.5)), 0)],
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(DatasetSplit::new("train", vec![item("a"), item("a")]).is_err());
    }

    #[test]
    fn split_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let train = DatasetSplit::new("train", vec![item("a"), item("b")]).unwrap();
        let val = DatasetSplit::new("val", vec![item("c")]).unwrap();
        write_split(dir.path(), &train).unwrap();
        write_split(dir.path(), &val).unwrap();
        assert_eq!(load_split(dir.path(), "train").unwrap(), train);
        assert_eq!(load_split(dir.path(), "val").unwrap(), val);
        assert!(load_split(dir.path(), "test").unwrap().is_empty());
        assert_eq!(read_manifest(dir.path()).unwrap().len(), 3);
    }
}
