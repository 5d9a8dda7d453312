//! Box overlap and greedy non-maximum suppression.

use crate::error::{Error, Result};
use crate::head::Detection;

/// Axis-aligned box in center form, normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl BBox {
    pub const fn new(x: f32, y: f32, w: f32, h: f32) -> Self {
        Self { x, y, w, h }
    }

    /// Build from corner coordinates `(x1, y1, x2, y2)`.
    pub fn from_corners(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        Self {
            x: (x1 + x2) / 2.0,
            y: (y1 + y2) / 2.0,
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    /// `(x1, y1, x2, y2)` in f64.
    pub fn corners(&self) -> [f64; 4] {
        let (x, y, w, h) = (self.x as f64, self.y as f64, self.w as f64, self.h as f64);
        [x - w / 2.0, y - h / 2.0, x + w / 2.0, y + h / 2.0]
    }

    pub fn area(&self) -> f64 {
        self.w as f64 * self.h as f64
    }

    pub fn max_side(&self) -> f32 {
        self.w.max(self.h)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    /// Intersection over union; assumes both boxes have positive extent.
    pub fn iou(&self, other: &BBox) -> f64 {
        let [ax1, ay1, ax2, ay2] = self.corners();
        let [bx1, by1, bx2, by2] = other.corners();
        let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
        let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
        let inter = iw * ih;
        if inter == 0.0 {
            return 0.0;
        }
        let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
        (inter / union).clamp(0.0, 1.0)
    }
}

/// IoU of two center-form boxes; boxes with non-positive width or height are rejected.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    for bx in [a, b] {
        if !bx.is_valid() {
            return Err(Error::InvalidArgument(format!(
                "iou requires positive box extents, got w={} h={}",
                bx.w, bx.h
            )));
        }
    }
    Ok(a.iou(b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    pub iou_threshold: f64,
    pub max_detections: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            max_detections: 300,
        }
    }
}

impl NmsConfig {
    pub fn new(iou_threshold: f64) -> Result<Self> {
        let cfg = Self {
            iou_threshold,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::InvalidArgument(format!(
                "NMS IoU threshold must lie in [0, 1], got {}",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// Greedy per-class suppression.
///
/// Candidates are visited by descending confidence, ties by input position. A
/// visited survivor removes every later same-class candidate whose IoU with it
/// exceeds the threshold.
pub fn nms(dets: &[Detection], cfg: &NmsConfig) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));

    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        if keep.len() == cfg.max_detections {
            break;
        }
        keep.push(dets[i].clone());
        for &j in &order[rank + 1..] {
            if !suppressed[j]
                && dets[j].class_id == dets[i].class_id
                && dets[i].bbox.iou(&dets[j].bbox) > cfg.iou_threshold
            {
                suppressed[j] = true;
            }
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: BBox, conf: f32) -> Detection {
        Detection::new(b, 0, conf)
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.5, 0.5, 0.2, 0.2);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let far = BBox::new(0.1, 0.1, 0.05, 0.05);
        assert_eq!(iou(&a, &far).unwrap(), 0.0);
        let c1 = BBox::from_corners(0.0, 0.0, 2.0, 2.0);
        let c2 = BBox::from_corners(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&c1, &c2).unwrap() - 1.0 / 7.0).abs() < 1e-12);
        assert!((iou(&c2, &c1).unwrap() - iou(&c1, &c2).unwrap()).abs() == 0.0);
        assert!(iou(&a, &BBox::new(0.5, 0.5, 0.0, 0.1)).is_err());
        assert!(iou(&BBox::new(0.5, 0.5, 0.1, -0.1), &a).is_err());
    }

    #[test]
    fn nms_examples() {
        assert!(nms(&[], &NmsConfig::default()).is_empty());
        let one = vec![det(BBox::new(0.3, 0.3, 0.1, 0.1), 0.4)];
        assert_eq!(nms(&one, &NmsConfig::default()), one);

        // IoU of these two is 0.8: widths 0.5 vs 0.4 sharing the left edge region
        let a = BBox::from_corners(0.0, 0.0, 0.5, 1.0);
        let b = BBox::from_corners(0.1, 0.0, 0.5, 1.0);
        assert!((a.iou(&b) - 0.8).abs() < 1e-6);
        let out = nms(&[det(b, 0.87), det(a, 0.90)], &NmsConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].confidence, 0.90);
    }

    #[test]
    fn nms_is_per_class_and_capped() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let dets = vec![Detection::new(b, 0, 0.9), Detection::new(b, 1, 0.8), det(b, 0.7)];
        let out = nms(&dets, &NmsConfig::default());
        assert_eq!(out.len(), 2);
        let capped = nms(
            &dets,
            &NmsConfig {
                max_detections: 1,
                ..NmsConfig::default()
            },
        );
        assert_eq!(capped.len(), 1);
    }

    #[test]
    fn ties_follow_input_order() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let dets = vec![Detection::new(b, 0, 0.5), Detection::new(BBox::new(0.51, 0.5, 0.2, 0.2), 0, 0.5)];
        let out = nms(&dets, &NmsConfig::default());
        assert_eq!(out, vec![dets[0].clone()]);
    }

    #[test]
    fn threshold_validation() {
        assert!(NmsConfig::new(1.5).is_err());
        assert!(NmsConfig::new(-0.1).is_err());
        assert!(NmsConfig::new(0.0).is_ok());
    }
}
