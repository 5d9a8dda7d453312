//! Box outlines drawn straight into 8-bit RGB buffers.

use hotspot_core::data::RawImage;
use hotspot_core::Detection;

/// Outline colours by confidence band: high, medium, low.
pub const BAND_COLORS: [[u8; 3]; 3] = [[255, 0, 0], [255, 200, 0], [0, 200, 255]];
pub const HIGH_BAND: f32 = 0.75;
pub const MEDIUM_BAND: f32 = 0.5;

pub fn band_color(confidence: f32) -> [u8; 3] {
    if confidence >= HIGH_BAND {
        BAND_COLORS[0]
    } else if confidence >= MEDIUM_BAND {
        BAND_COLORS[1]
    } else {
        BAND_COLORS[2]
    }
}

/// Pixel rectangle `(x0, y0, x1, y1)`, inclusive, covered by a normalized box.
pub fn pixel_rect(d: &Detection, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    let [x1, y1, x2, y2] = d.bbox.corners();
    let to_px = |v: f64, n: usize| (v * n as f64).clamp(0.0, n as f64);
    let (x0, x1) = (to_px(x1, width).round() as usize, to_px(x2, width).round() as usize);
    let (y0, y1) = (to_px(y1, height).round() as usize, to_px(y2, height).round() as usize);
    (x1 > x0 && y1 > y0).then(|| (x0, y0, x1 - 1, y1 - 1))
}

/// RGB copy of `img` with a one-pixel outline per detection.
pub fn draw_outlines(img: &RawImage, detections: &[Detection]) -> RawImage {
    let data = match img.channels {
        1 => img.data.iter().flat_map(|&v| [v, v, v]).collect(),
        _ => img.data.clone(),
    };
    let mut out = RawImage {
        width: img.width,
        height: img.height,
        channels: 3,
        data,
    };
    for d in detections {
        let Some((x0, y0, x1, y1)) = pixel_rect(d, img.width, img.height) else {
            continue;
        };
        let color = band_color(d.confidence);
        let mut put = |x: usize, y: usize| {
            let p = (y * out.width + x) * 3;
            out.data[p..p + 3].copy_from_slice(&color);
        };
        for x in x0..=x1 {
            put(x, y0);
            put(x, y1);
        }
        for y in y0..=y1 {
            put(x0, y);
            put(x1, y);
        }
    }
    out
}
