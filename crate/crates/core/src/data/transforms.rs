//! Preprocessing, training augmentations and the photometric robustness transforms.
//!
//! Image tensors are `(H, W, 3)` (or `(1, H, W, 3)`) with values in `[0, 1]`.

use rand::Rng;

use super::annotations::{box_in_bounds, snap_box};
use super::pnm::image_extent;
use super::AnnotatedImage;
use crate::error::{Error, Result};
use crate::head::Detection;
use crate::postprocess::BBox;
use crate::tensor::{self, Tensor};

pub const NORMALIZE_MEAN: f32 = 0.5;
pub const NORMALIZE_SCALE: f32 = 0.5;
pub const CROP_SCALE_RANGE: (f64, f64) = (0.8, 1.0);
pub const MIN_VISIBLE_FRACTION: f64 = 0.3;

fn as_batch(img: &Tensor) -> Result<Tensor> {
    let (h, w) = image_extent(img)?;
    img.clone().reshape(&[1, h, w, 3])
}

/// Resize to `target` with corner-aligned bilinear sampling, then map `[0, 1]` to `[-1, 1]`.
/// Returns a `(1, H, W, 3)` batch.
pub fn preprocess(img: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let resized = tensor::resize_bilinear(&as_batch(img)?, target.0, target.1)?;
    Ok(resized.map(|v| (v - NORMALIZE_MEAN) / NORMALIZE_SCALE))
}

pub fn flip_horizontal(img: &Tensor) -> Result<Tensor> {
    let (h, w) = image_extent(img)?;
    let src = img.data();
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let s = (y * w + x) * 3;
            let d = (y * w + (w - 1 - x)) * 3;
            out[d..d + 3].copy_from_slice(&src[s..s + 3]);
        }
    }
    Tensor::new(img.shape(), out)
}

/// Mirror left-right when `coin` is set; boxes map `cx -> 1 - cx`.
pub fn augment_flip(img: &AnnotatedImage, coin: bool) -> Result<AnnotatedImage> {
    if !coin {
        return Ok(img.clone());
    }
    let boxes = img
        .boxes
        .iter()
        .map(|d| {
            let mut d = d.clone();
            d.bbox.x = 1.0 - d.bbox.x;
            d
        })
        .collect();
    Ok(AnnotatedImage {
        id: img.id.clone(),
        pixels: flip_horizontal(&img.pixels)?,
        boxes,
    })
}

/// Pixel window `(x0, y0, width, height)` of a crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl CropWindow {
    /// Side scales drawn uniformly from [`CROP_SCALE_RANGE`], offsets uniformly over the valid range.
    pub fn sample<R: Rng>(h: usize, w: usize, rng: &mut R) -> Self {
        let (lo, hi) = CROP_SCALE_RANGE;
        let sx: f64 = rng.gen_range(lo..=hi);
        let sy: f64 = rng.gen_range(lo..=hi);
        let width = ((sx * w as f64).round() as usize).clamp(1, w);
        let height = ((sy * h as f64).round() as usize).clamp(1, h);
        let x0 = rng.gen_range(0..=w - width);
        let y0 = rng.gen_range(0..=h - height);
        Self { x0, y0, width, height }
    }
}

/// Crop to `win`, resize back to the original extent, remap boxes, and drop boxes
/// with less than [`MIN_VISIBLE_FRACTION`] of their area inside the window.
pub fn crop_to(img: &AnnotatedImage, win: CropWindow) -> Result<AnnotatedImage> {
    let (h, w) = image_extent(&img.pixels)?;
    if win.width == 0 || win.height == 0 || win.x0 + win.width > w || win.y0 + win.height > h {
        return Err(Error::InvalidArgument(format!("crop window {win:?} outside {w}x{h} image")));
    }
    if win == (CropWindow { x0: 0, y0: 0, width: w, height: h }) {
        return Ok(img.clone());
    }
    let src = img.pixels.data();
    let mut cropped = Vec::with_capacity(win.width * win.height * 3);
    for y in win.y0..win.y0 + win.height {
        let row = (y * w + win.x0) * 3;
        cropped.extend_from_slice(&src[row..row + win.width * 3]);
    }
    let cropped = Tensor::new(&[1, win.height, win.width, 3], cropped)?;
    let pixels = tensor::resize_bilinear(&cropped, h, w)?.reshape(img.pixels.shape())?;

    let (ox, oy) = (win.x0 as f64 / w as f64, win.y0 as f64 / h as f64);
    let (sx, sy) = (win.width as f64 / w as f64, win.height as f64 / h as f64);
    let boxes = img
        .boxes
        .iter()
        .filter_map(|d| remap_box(d, (ox, oy), (sx, sy)))
        .collect();
    Ok(AnnotatedImage {
        id: img.id.clone(),
        pixels,
        boxes,
    })
}

fn remap_box(d: &Detection, origin: (f64, f64), scale: (f64, f64)) -> Option<Detection> {
    let [x1, y1, x2, y2] = d.bbox.corners();
    let map = |v: f64, o: f64, s: f64| ((v - o) / s).clamp(0.0, 1.0);
    let (nx1, nx2) = (map(x1, origin.0, scale.0), map(x2, origin.0, scale.0));
    let (ny1, ny2) = (map(y1, origin.1, scale.1), map(y2, origin.1, scale.1));
    let visible = (nx2 - nx1) * (ny2 - ny1) * scale.0 * scale.1;
    if visible <= 0.0 || visible < MIN_VISIBLE_FRACTION * d.bbox.area() {
        return None;
    }
    let bbox = snap_box(BBox::new(
        ((nx1 + nx2) / 2.0) as f32,
        ((ny1 + ny2) / 2.0) as f32,
        (nx2 - nx1) as f32,
        (ny2 - ny1) as f32,
    ));
    box_in_bounds(&bbox).then(|| Detection::ground_truth(bbox, d.class_id))
}

pub fn augment_random_crop<R: Rng>(img: &AnnotatedImage, rng: &mut R) -> Result<AnnotatedImage> {
    let (h, w) = image_extent(&img.pixels)?;
    crop_to(img, CropWindow::sample(h, w, rng))
}

/// `clamp((v - 0.5) * contrast + 0.5 + brightness, 0, 1)` per channel value.
pub fn transform_brightness_contrast(img: &Tensor, brightness_delta: f32, contrast_factor: f32) -> Result<Tensor> {
    if !(-1.0..=1.0).contains(&brightness_delta) {
        return Err(Error::InvalidArgument(format!(
            "brightness delta {brightness_delta} outside [-1, 1]"
        )));
    }
    if contrast_factor <= 0.0 || !contrast_factor.is_finite() {
        return Err(Error::InvalidArgument(format!("contrast factor {contrast_factor} must be > 0")));
    }
    let (b, c) = (brightness_delta as f64, contrast_factor as f64);
    Ok(img.map(|v| ((v as f64 - 0.5) * c + 0.5 + b).clamp(0.0, 1.0) as f32))
}

pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Replace each pixel with its luminance on all three channels.
pub fn transform_grayscale(img: &Tensor) -> Result<Tensor> {
    image_extent(img)?;
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let l = (LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2]).clamp(0.0, 1.0);
        px.fill(l);
    }
    Ok(out)
}

/// Normalized 1-D Gaussian taps over `[-ceil(3 sigma), ceil(3 sigma)]`.
pub fn gaussian_kernel(sigma: f32) -> Result<Vec<f32>> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("blur sigma {sigma} must be > 0")));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * (sigma as f64).powi(2))).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| (v / total) as f32).collect())
}

/// Separable Gaussian blur with clamped edges.
pub fn transform_gaussian_blur(img: &Tensor, sigma: f32) -> Result<Tensor> {
    let (h, w) = image_extent(img)?;
    let kernel = gaussian_kernel(sigma)?;
    let r = (kernel.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let src = img.data();
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for (k, &wt) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + k as isize - r, w);
                let p = (y * w + sx) * 3;
                for c in 0..3 {
                    acc[c] += wt * src[p + c];
                }
            }
            tmp[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for (k, &wt) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + k as isize - r, h);
                let p = (sy * w + x) * 3;
                for c in 0..3 {
                    acc[c] += wt * tmp[p + c];
                }
            }
            for c in 0..3 {
                out[(y * w + x) * 3 + c] = acc[c].clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(img.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probe(h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[h, w, 3], |i| ((i * 37) % 256) as f32 / 255.0)
    }

    fn annotated(boxes: Vec<Detection>) -> AnnotatedImage {
        AnnotatedImage {
            id: "probe".into(),
            pixels: probe(20, 30),
            boxes,
        }
    }

    fn gt(x: f32, y: f32, w: f32, h: f32) -> Detection {
        Detection::ground_truth(snap_box(BBox::new(x, y, w, h)), 0)
    }

    #[test]
    fn preprocess_examples() {
        let img = Tensor::filled(&[640, 640, 3], 0.5);
        let out = preprocess(&img, (224, 224)).unwrap();
        assert_eq!(out.shape(), &[1, 224, 224, 3]);
        assert!(out.data().iter().all(|&v| v == 0.0));

        let p = probe(8, 8);
        let same = preprocess(&p, (8, 8)).unwrap();
        for (a, b) in same.data().iter().zip(p.data()) {
            assert_eq!(*a, (b - 0.5) / 0.5);
        }
    }

    #[test]
    fn flip_examples() {
        let img = annotated(vec![gt(0.3, 0.4, 0.1, 0.2), gt(0.5, 0.5, 0.2, 0.2)]);
        let f = augment_flip(&img, true).unwrap();
        assert!((f.boxes[0].bbox.x - 0.7).abs() < 1e-6);
        assert_eq!(f.boxes[0].bbox.y, img.boxes[0].bbox.y);
        assert_eq!(f.boxes[1].bbox, img.boxes[1].bbox);
        let back = augment_flip(&f, true).unwrap();
        assert_eq!(back, img);
        assert_eq!(augment_flip(&img, false).unwrap(), img);
    }

    #[test]
    fn full_crop_is_identity() {
        let img = annotated(vec![gt(0.3, 0.4, 0.1, 0.2)]);
        let win = CropWindow { x0: 0, y0: 0, width: 30, height: 20 };
        assert_eq!(crop_to(&img, win).unwrap(), img);
    }

    #[test]
    fn crop_remaps_inside_box_affinely() {
        let img = annotated(vec![gt(0.5, 0.5, 0.1, 0.1)]);
        let win = CropWindow { x0: 3, y0: 2, width: 24, height: 16 };
        let out = crop_to(&img, win).unwrap();
        let b = out.boxes[0].bbox;
        let (ox, sx) = (3.0 / 30.0, 24.0 / 30.0);
        let (oy, sy) = (2.0 / 20.0, 16.0 / 20.0);
        assert!((b.x as f64 - (0.5 - ox) / sx).abs() < 1e-6);
        assert!((b.y as f64 - (0.5 - oy) / sy).abs() < 1e-6);
        assert!((b.w as f64 - 0.1 / sx).abs() < 1e-6);
        assert!((b.h as f64 - 0.1 / sy).abs() < 1e-6);
        assert_eq!(out.pixels.shape(), img.pixels.shape());
    }

    #[test]
    fn crop_drops_mostly_hidden_box() {
        // box spans x in [0.0, 0.1]; window starts at x = 0.09 so 90% is cut away
        let img = annotated(vec![gt(0.05, 0.5, 0.1, 0.1), gt(0.6, 0.5, 0.1, 0.1)]);
        let win = CropWindow { x0: 3, y0: 0, width: 27, height: 20 };
        let out = crop_to(&img, win).unwrap();
        assert_eq!(out.boxes.len(), 1);
        assert!(out.boxes[0].bbox.x > 0.5);
    }

    #[test]
    fn random_crop_is_seeded() {
        let img = annotated(vec![gt(0.5, 0.5, 0.2, 0.2)]);
        let a = augment_random_crop(&img, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = augment_random_crop(&img, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn brightness_contrast_closed_form() {
        let p = probe(4, 4);
        assert_eq!(transform_brightness_contrast(&p, 0.0, 1.0).unwrap(), p);
        let mid = Tensor::filled(&[2, 2, 3], 0.5);
        assert_eq!(transform_brightness_contrast(&mid, 0.0, 0.6).unwrap(), mid);
        let white = Tensor::filled(&[1, 1, 3], 1.0);
        let out = transform_brightness_contrast(&white, -0.4, 0.6).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
        assert!(transform_brightness_contrast(&p, 1.5, 1.0).is_err());
        assert!(transform_brightness_contrast(&p, 0.0, 0.0).is_err());
    }

    #[test]
    fn grayscale_examples() {
        let red = Tensor::new(&[1, 1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        assert!(transform_grayscale(&red).unwrap().data().iter().all(|&v| (v - 0.299).abs() < 1e-7));
        let white = Tensor::filled(&[2, 2, 3], 1.0);
        assert_eq!(transform_grayscale(&white).unwrap(), white);
        let gray = transform_grayscale(&probe(5, 5)).unwrap();
        let again = transform_grayscale(&gray).unwrap();
        for (a, b) in gray.data().iter().zip(again.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn blur_examples() {
        let c = Tensor::filled(&[9, 9, 3], 0.25);
        let out = transform_gaussian_blur(&c, 1.5).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));

        let k = gaussian_kernel(1.0).unwrap();
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(gaussian_kernel(0.0).is_err());
    }
}
