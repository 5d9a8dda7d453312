//! Normalized label files: one `class cx cy w h` box per line.

use std::path::Path;

use crate::error::{Error, Result};
use crate::head::Detection;
use crate::postprocess::BBox;

const EDGE_TOLERANCE: f32 = 1e-6;

/// Snap a normalized coordinate onto the 2^-24 lattice. On that lattice `1 - v` is
/// exact in f32, so mirroring a box twice reproduces it bit for bit.
pub fn snap(v: f32) -> f32 {
    const SCALE: f64 = (1u64 << 24) as f64;
    ((v as f64 * SCALE).round() / SCALE) as f32
}

pub fn snap_box(b: BBox) -> BBox {
    BBox::new(snap(b.x), snap(b.y), snap(b.w), snap(b.h))
}

/// Whether a box has positive extent and lies inside the unit square.
pub fn box_in_bounds(b: &BBox) -> bool {
    let [x1, y1, x2, y2] = b.corners();
    let tol = EDGE_TOLERANCE as f64;
    b.w > 0.0 && b.h > 0.0 && x1 >= -tol && y1 >= -tol && x2 <= 1.0 + tol && y2 <= 1.0 + tol
}

pub fn parse_annotation_text(text: &str, source: &str) -> Result<Vec<Detection>> {
    let mut boxes = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Annotation {
            path: source.to_string(),
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields (class cx cy w h), found {}", fields.len())));
        }
        let class: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("class {:?} is not a non-negative integer", fields[0])))?;
        let mut vals = [0f32; 4];
        for (i, (name, field)) in ["cx", "cy", "w", "h"].iter().zip(&fields[1..]).enumerate() {
            let v: f32 = field
                .parse()
                .map_err(|_| err(format!("{name} {field:?} is not a number")))?;
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(err(format!("{name} {v} out of range [0, 1]")));
            }
            vals[i] = v;
        }
        let bbox = snap_box(BBox::new(vals[0], vals[1], vals[2], vals[3]));
        if bbox.w <= 0.0 || bbox.h <= 0.0 {
            return Err(err(format!("degenerate box with w={} h={}", vals[2], vals[3])));
        }
        if !box_in_bounds(&bbox) {
            return Err(err("box extends beyond the image".into()));
        }
        boxes.push(Detection::ground_truth(bbox, class));
    }
    Ok(boxes)
}

pub fn parse_annotations(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotation_text(&text, &path.display().to_string())
}

pub fn format_annotations(boxes: &[Detection]) -> String {
    boxes
        .iter()
        .map(|d| {
            format!(
                "{} {:.6} {:.6} {:.6} {:.6}\n",
                d.class_id, d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_valid_lines() {
        let boxes = parse_annotation_text("0 0.5 0.5 0.1 0.2\n\n", "t").unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].class_id, 0);
        assert_eq!(boxes[0].bbox, BBox::new(0.5, 0.5, snap(0.1), snap(0.2)));
        assert!(parse_annotation_text("", "t").unwrap().is_empty());
    }

    #[test]
    fn each_malformed_class_reports_its_line() {
        let cases = [
            ("0 0.5 0.5 0.1\n", "expected 5 fields"),
            ("x 0.5 0.5 0.1 0.1\n", "class"),
            ("-1 0.5 0.5 0.1 0.1\n", "class"),
            ("0 abc 0.5 0.1 0.1\n", "not a number"),
            ("0 1.5 0.5 0.1 0.2\n", "cx 1.5 out of range"),
            ("0 0.5 0.5 0 0.2\n", "degenerate"),
            ("0 0.98 0.5 0.1 0.1\n", "beyond the image"),
        ];
        for (body, needle) in cases {
            let text = format!("0 0.5 0.5 0.1 0.1\n{body}");
            match parse_annotation_text(&text, "labels.txt") {
                Err(Error::Annotation { line, message, .. }) => {
                    assert_eq!(line, 2, "{body}");
                    assert!(message.contains(needle), "{message} lacks {needle}");
                }
                other => panic!("{body}: {other:?}"),
            }
        }
        let msg = parse_annotation_text("0 1.5 0.5 0.1 0.2", "a.txt").unwrap_err().to_string();
        assert!(msg.starts_with("a.txt:1:"), "{msg}");
    }

    #[test]
    fn snapped_values_mirror_exactly() {
        for v in [0.3f32, 0.1, 1e-7, 0.999_999, 0.123_456_7] {
            let s = snap(v);
            assert_eq!(1.0 - (1.0 - s), s);
        }
    }
}
