//! Seeded synthetic thermal scenes: a grid of PV modules on a warm background with
//! elliptical hot blobs and a box around each one.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{self, snap_box, AnnotatedImage, DatasetSplit};
use crate::error::{Error, Result};
use crate::head::Detection;
use crate::postprocess::BBox;
use crate::tensor::Tensor;

const PLACEMENT_RETRIES: usize = 64;
/// Blob profile falls to `exp(-FALLOFF)` of its peak at the ellipse rim.
const FALLOFF: f32 = 2.0;
/// Relative gap between modules, as a fraction of the module pitch.
const MODULE_GAP: f32 = 0.12;
const MODULE_LIFT: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Module rows and columns.
    pub grid: (usize, usize),
    /// Inclusive.
    pub hotspot_count: (usize, usize),
    /// Range of the longer box side, normalized.
    pub hotspot_size: (f32, f32),
    pub gradient_strength: f32,
    pub noise_amplitude: f32,
    /// Uniform background heat.
    pub irradiance: f32,
    /// Peak intensity a blob adds over its surroundings.
    pub hotspot_contrast: f32,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 96,
            height: 96,
            grid: (2, 3),
            hotspot_count: (1, 4),
            hotspot_size: (0.05, 0.25),
            gradient_strength: 0.1,
            noise_amplitude: 0.02,
            irradiance: 0.25,
            hotspot_contrast: 0.45,
        }
    }
}

impl SceneSpec {
    /// Hot uniform background with weaker hotspot contrast.
    pub fn high_irradiance() -> Self {
        Self {
            irradiance: 0.5,
            hotspot_contrast: 0.3,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "high-irradiance" => Ok(Self::high_irradiance()),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset {other:?} (expected default or high-irradiance)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.width < 8 || self.height < 8 {
            return bad(format!("scene {}x{} smaller than 8x8", self.width, self.height));
        }
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return bad("module grid must have at least one row and column".into());
        }
        if self.hotspot_count.0 > self.hotspot_count.1 {
            return bad(format!("hotspot count range {:?} is empty", self.hotspot_count));
        }
        let (lo, hi) = self.hotspot_size;
        if !(lo > 0.0 && lo <= hi && hi <= 0.3) {
            return bad(format!("hotspot size range ({lo}, {hi}) must lie in (0, 0.3]"));
        }
        for (name, v) in [
            ("gradient_strength", self.gradient_strength),
            ("noise_amplitude", self.noise_amplitude),
            ("irradiance", self.irradiance),
            ("hotspot_contrast", self.hotspot_contrast),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Minimum intensity lift at a blob center, used by self-checks.
    pub fn contrast_margin(&self) -> f32 {
        0.25 * self.hotspot_contrast
    }
}

/// A rendered scene plus the scalar heat maps behind it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: AnnotatedImage,
    /// Heat before the blobs were added, row-major `H x W`.
    pub background: Vec<f32>,
    /// Final heat, row-major `H x W`.
    pub intensity: Vec<f32>,
    pub requested: usize,
}

impl Scene {
    pub fn placed(&self) -> usize {
        self.image.boxes.len()
    }
}

/// Monotone false-color map from heat in `[0, 1]` to RGB.
pub fn palette(t: f32) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0);
    [(1.25 * t).min(1.0), t * t, ((t - 0.6) / 0.4).clamp(0.0, 1.0)]
}

/// Module rectangles in pixels, `(x0, y0, x1, y1)` exclusive of the far edge.
fn module_rects(spec: &SceneSpec) -> Vec<(f32, f32, f32, f32)> {
    let (rows, cols) = spec.grid;
    let (pw, ph) = (spec.width as f32 / cols as f32, spec.height as f32 / rows as f32);
    let (gx, gy) = (pw * MODULE_GAP / 2.0, ph * MODULE_GAP / 2.0);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (x0, y0) = (c as f32 * pw, r as f32 * ph);
            out.push((x0 + gx, y0 + gy, x0 + pw - gx, y0 + ph - gy));
        }
    }
    out
}

fn overlaps(a: &BBox, b: &BBox) -> bool {
    let [a1, a2, a3, a4] = a.corners();
    let [b1, b2, b3, b4] = b.corners();
    a1 < b3 && b1 < a3 && a2 < b4 && b2 < a4
}

fn place_blob<R: Rng>(spec: &SceneSpec, modules: &[(f32, f32, f32, f32)], placed: &[BBox], rng: &mut R) -> Option<BBox> {
    let (w, h) = (spec.width as f32, spec.height as f32);
    for _ in 0..PLACEMENT_RETRIES {
        let (lo, hi) = spec.hotspot_size;
        // skewed toward small sizes
        let u: f32 = rng.gen();
        let long = lo + (hi - lo) * u * u;
        let short = long * rng.gen_range(0.6f32..=1.0);
        let (bw, bh) = if rng.gen_bool(0.5) { (long, short) } else { (short, long) };
        let (x0, y0, x1, y1) = modules[rng.gen_range(0..modules.len())];
        let (mx0, my0, mx1, my1) = (x0 / w, y0 / h, x1 / w, y1 / h);
        // at least two pixels across so the nearest pixel center sits well inside the rim
        if bw * w < 2.0 || bh * h < 2.0 || bw > mx1 - mx0 || bh > my1 - my0 {
            continue;
        }
        let cx = rng.gen_range(mx0 + bw / 2.0..=mx1 - bw / 2.0);
        let cy = rng.gen_range(my0 + bh / 2.0..=my1 - bh / 2.0);
        let text = data::format_annotations(&[Detection::ground_truth(BBox::new(cx, cy, bw, bh), 0)]);
        let bbox = match data::parse_annotation_text(&text, "generated") {
            Ok(mut v) => snap_box(v.remove(0).bbox),
            Err(_) => continue,
        };
        if placed.iter().any(|p| overlaps(p, &bbox)) {
            continue;
        }
        return Some(bbox);
    }
    None
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let modules = module_rects(spec);

    let mut background = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let in_module = modules
                .iter()
                .any(|&(x0, y0, x1, y1)| px >= x0 && px < x1 && py >= y0 && py < y1);
            let ramp = spec.gradient_strength * ((px / w as f32 + py / h as f32) / 2.0 - 0.5);
            let noise = rng.gen_range(-1.0f32..=1.0) * spec.noise_amplitude;
            let lift = if in_module { MODULE_LIFT } else { 0.0 };
            background[y * w + x] = (spec.irradiance + lift + ramp + noise).clamp(0.0, 1.0);
        }
    }

    let requested = rng.gen_range(spec.hotspot_count.0..=spec.hotspot_count.1);
    let mut boxes: Vec<BBox> = Vec::with_capacity(requested);
    for _ in 0..requested {
        if let Some(b) = place_blob(spec, &modules, &boxes, &mut rng) {
            boxes.push(b);
        }
    }

    let mut intensity = background.clone();
    for b in &boxes {
        let (cx, cy) = (b.x * w as f32, b.y * h as f32);
        let (ax, ay) = (b.w * w as f32 / 2.0, b.h * h as f32 / 2.0);
        let (x_lo, x_hi) = (((cx - ax).floor().max(0.0)) as usize, ((cx + ax).ceil() as usize).min(w));
        let (y_lo, y_hi) = (((cy - ay).floor().max(0.0)) as usize, ((cy + ay).ceil() as usize).min(h));
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                let dx = (x as f32 + 0.5 - cx) / ax;
                let dy = (y as f32 + 0.5 - cy) / ay;
                let r2 = dx * dx + dy * dy;
                if r2 <= 1.0 {
                    let v = &mut intensity[y * w + x];
                    *v = (*v + spec.hotspot_contrast * (-FALLOFF * r2).exp()).min(1.0);
                }
            }
        }
    }

    let mut pixels = Vec::with_capacity(w * h * 3);
    for &t in &intensity {
        // quantized so the in-memory scene equals what a reload from disk yields
        pixels.extend(palette(t).map(|v| (v * 255.0).round() / 255.0));
    }
    let image = AnnotatedImage {
        id: format!("scene_{:016x}", spec.seed),
        pixels: Tensor::new(&[h, w, 3], pixels)?,
        boxes: boxes.into_iter().map(|b| Detection::ground_truth(b, 0)).collect(),
    };
    Ok(Scene {
        image,
        background,
        intensity,
        requested,
    })
}

/// Render `count` scenes from `template` with per-scene seeds drawn from `seed`.
pub fn generate_split_scenes(template: &SceneSpec, name: &str, count: usize, seed: u64) -> Result<DatasetSplit> {
    if count == 0 {
        return Err(Error::InvalidArgument("scene count must be at least 1".into()));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(count);
    for i in 0..count {
        let spec = SceneSpec {
            seed: seeds.gen(),
            ..template.clone()
        };
        let mut image = generate_scene(&spec)?.image;
        image.id = format!("{name}_{i:05}");
        items.push(image);
    }
    DatasetSplit::new(name, items)
}

/// Render and write a split under `root` in the dataset layout.
pub fn generate_split(root: impl AsRef<Path>, template: &SceneSpec, name: &str, count: usize, seed: u64) -> Result<DatasetSplit> {
    let split = generate_split_scenes(template, name, count, seed)?;
    data::write_split(root, &split)?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::box_in_bounds;

    #[test]
    fn zero_hotspots_empty_labels() {
        let spec = SceneSpec {
            hotspot_count: (0, 0),
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        assert!(scene.image.boxes.is_empty());
        assert_eq!(scene.background, scene.intensity);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SceneSpec { seed: 11, ..SceneSpec::default() };
        let (a, b) = (generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
        assert_eq!(a.image, b.image);
        let other = generate_scene(&SceneSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.image.pixels, other.image.pixels);
    }

    #[test]
    fn blob_centers_exceed_background_by_margin() {
        for seed in 0..40 {
            let spec = SceneSpec { seed, ..SceneSpec::default() };
            let scene = generate_scene(&spec).unwrap();
            let (w, h) = (spec.width, spec.height);
            for d in &scene.image.boxes {
                let x = ((d.bbox.x * w as f32) as usize).min(w - 1);
                let y = ((d.bbox.y * h as f32) as usize).min(h - 1);
                let i = y * w + x;
                assert!(
                    scene.intensity[i] >= scene.background[i] + spec.contrast_margin(),
                    "seed {seed}: {} vs {}",
                    scene.intensity[i],
                    scene.background[i]
                );
            }
        }
    }

    #[test]
    fn boxes_in_bounds_and_disjoint() {
        for seed in 0..40 {
            let scene = generate_scene(&SceneSpec { seed, hotspot_count: (3, 6), ..SceneSpec::default() }).unwrap();
            let boxes = &scene.image.boxes;
            for (i, a) in boxes.iter().enumerate() {
                assert!(box_in_bounds(&a.bbox));
                for b in &boxes[i + 1..] {
                    assert_eq!(a.bbox.iou(&b.bbox), 0.0);
                }
            }
            assert!(scene.placed() <= scene.requested);
        }
    }

    #[test]
    fn pixels_in_unit_range() {
        let scene = generate_scene(&SceneSpec::high_irradiance()).unwrap();
        assert!(scene.image.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn palette_monotone() {
        let mut prev = palette(0.0);
        for i in 1..=1000 {
            let cur = palette(i as f32 / 1000.0);
            for c in 0..3 {
                assert!(cur[c] >= prev[c]);
            }
            prev = cur;
        }
    }

    #[test]
    fn high_irradiance_has_warmer_background() {
        let spec = SceneSpec { hotspot_count: (0, 0), ..SceneSpec::default() };
        let hot = SceneSpec { hotspot_count: (0, 0), ..SceneSpec::high_irradiance() };
        let mean = |s: &SceneSpec| generate_scene(s).unwrap().background.iter().sum::<f32>();
        assert!(mean(&hot) > mean(&spec));
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = SceneSpec { hotspot_size: (0.1, 0.5), ..SceneSpec::default() };
        assert!(generate_scene(&bad).is_err());
        assert!(SceneSpec::preset("nope").is_err());
        assert!(generate_split_scenes(&SceneSpec::default(), "train", 0, 1).is_err());
    }

    #[test]
    fn split_on_disk_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec { width: 32, height: 32, ..SceneSpec::default() };
        let split = generate_split(dir.path(), &spec, "train", 4, 7).unwrap();
        assert_eq!(crate::data::load_split(dir.path(), "train").unwrap(), split);
    }
}
