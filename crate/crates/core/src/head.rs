//! Anchor-free detection heads, grid decoding, target assignment and the
//! composite box/class/confidence loss.
//!
//! Every head is a 3x3 conv over the unified map producing, per cell,
//! `[tx, ty, tw, th, t_conf, t_class...]`. Decoding places the box center inside
//! its cell with a sigmoid offset and bounds width/height with a sigmoid, so a
//! decoded box never leaves `[0, 1]` in center or size.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{join, Conv, HasParams};
use crate::postprocess::BBox;
use crate::summary::LayerRow;
use crate::tensor::{shape_str, sigmoid_scalar, ConvKernel, Param, Tensor};

pub const NUM_HEADS: usize = 3;
pub const BOX_CHANNELS: usize = 5;
pub const DEFAULT_NUM_CLASSES: usize = 1;
pub const DEFAULT_SIZE_RANGES: [(f32, f32); NUM_HEADS] = [(0.0, 0.1), (0.1, 0.3), (0.3, 1.0)];
pub const HEAD_NAMES: [&str; NUM_HEADS] = ["small", "medium", "large"];

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub confidence: f32,
}

impl Detection {
    pub fn new(bbox: BBox, class_id: usize, confidence: f32) -> Self {
        Self {
            bbox,
            class_id,
            confidence,
        }
    }

    pub fn ground_truth(bbox: BBox, class_id: usize) -> Self {
        Self::new(bbox, class_id, 1.0)
    }

    /// One record: `image-id class-id confidence x y w h`.
    pub fn to_line(&self, image_id: &str) -> String {
        format!(
            "{} {} {:.4} {:.6} {:.6} {:.6} {:.6}",
            image_id, self.class_id, self.confidence, self.bbox.x, self.bbox.y, self.bbox.w, self.bbox.h
        )
    }

    pub fn parse_line(line: &str) -> Result<(String, Detection)> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::InvalidArgument(format!("malformed detection line {line:?}"));
        let [id, class, conf, x, y, w, h] = fields.as_slice() else {
            return Err(bad());
        };
        let f = |s: &str| s.parse::<f32>().map_err(|_| bad());
        let det = Detection::new(
            BBox::new(f(x)?, f(y)?, f(w)?, f(h)?),
            class.parse().map_err(|_| bad())?,
            f(conf)?,
        );
        Ok((id.to_string(), det))
    }
}

impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "class {} conf {:.4} box ({:.4}, {:.4}, {:.4}, {:.4})",
            self.class_id, self.confidence, self.bbox.x, self.bbox.y, self.bbox.w, self.bbox.h
        )
    }
}

#[derive(Debug, Clone)]
pub struct HeadSet {
    pub heads: [Conv; NUM_HEADS],
    size_ranges: [(f32, f32); NUM_HEADS],
    num_classes: usize,
}

impl HeadSet {
    pub fn zeros(in_channels: usize, num_classes: usize, size_ranges: [(f32, f32); NUM_HEADS]) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be >= 1".into()));
        }
        validate_ranges(&size_ranges)?;
        let out = BOX_CHANNELS + num_classes;
        let mk = || Conv::new(ConvKernel::standard(3, 3, in_channels, out, 1, 1));
        Ok(Self {
            heads: [mk(), mk(), mk()],
            size_ranges,
            num_classes,
        })
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        for h in &mut self.heads {
            h.init(rng);
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn size_ranges(&self) -> [(f32, f32); NUM_HEADS] {
        self.size_ranges
    }

    pub fn channels_per_cell(&self) -> usize {
        BOX_CHANNELS + self.num_classes
    }

    /// Head whose `(lo, hi]` range holds `max_side`.
    pub fn head_for(&self, max_side: f32) -> usize {
        self.size_ranges
            .iter()
            .position(|&(lo, hi)| max_side > lo && max_side <= hi)
            .unwrap_or(if max_side <= self.size_ranges[0].0 { 0 } else { NUM_HEADS - 1 })
    }

    pub fn forward(&self, unified: &Tensor) -> Result<[Tensor; NUM_HEADS]> {
        Ok([
            self.heads[0].forward(unified)?,
            self.heads[1].forward(unified)?,
            self.heads[2].forward(unified)?,
        ])
    }

    pub fn forward_train(&mut self, unified: &Tensor) -> Result<[Tensor; NUM_HEADS]> {
        let [a, b, c] = &mut self.heads;
        Ok([a.forward_train(unified)?, b.forward_train(unified)?, c.forward_train(unified)?])
    }

    /// Gradient of the unified map, summed over the three heads.
    pub fn backward(&mut self, grads: &[Tensor; NUM_HEADS]) -> Result<Tensor> {
        let mut total: Option<Tensor> = None;
        for (head, g) in self.heads.iter_mut().zip(grads) {
            let d = head.backward(g)?;
            match total.as_mut() {
                Some(t) => t.add_assign(&d)?,
                None => total = Some(d),
            }
        }
        Ok(total.expect("three heads"))
    }

    pub fn summarize(&self, grid: (usize, usize)) -> Vec<LayerRow> {
        let c = self.heads[0].kernel.in_channels();
        self.heads
            .iter()
            .zip(HEAD_NAMES)
            .map(|(h, name)| {
                LayerRow::conv(
                    &format!("Head.{name}"),
                    &h.kernel,
                    [grid.0, grid.1, c],
                    [grid.0, grid.1, self.channels_per_cell()],
                    Some(3.5),
                )
            })
            .collect()
    }
}

impl HasParams for HeadSet {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (h, name) in self.heads.iter().zip(HEAD_NAMES) {
            h.collect_params(&join(prefix, name), out);
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (h, name) in self.heads.iter_mut().zip(HEAD_NAMES) {
            h.collect_params_mut(&join(prefix, name), out);
        }
    }
}

pub fn validate_ranges(ranges: &[(f32, f32); NUM_HEADS]) -> Result<()> {
    let ok = ranges[0].0 == 0.0
        && ranges[NUM_HEADS - 1].1 == 1.0
        && ranges.iter().all(|(lo, hi)| lo < hi)
        && ranges.windows(2).all(|w| w[0].1 == w[1].0);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "head size ranges {ranges:?} must partition (0, 1] without overlap"
        )))
    }
}

fn grid_dims(raw: &[Tensor; NUM_HEADS]) -> Result<(usize, usize, usize, usize)> {
    let dims = raw[0].dims4()?;
    for r in raw.iter() {
        if r.shape() != raw[0].shape() {
            return Err(Error::shape("decode", shape_str(raw[0].shape()), shape_str(r.shape())));
        }
    }
    if dims.3 <= BOX_CHANNELS {
        return Err(Error::shape(
            "decode",
            "at least 6 channels per cell",
            shape_str(raw[0].shape()),
        ));
    }
    Ok(dims)
}

/// Decode one cell's raw channels at grid position `(row, col)`.
pub fn decode_cell(cell: &[f32], row: usize, col: usize, grid: (usize, usize)) -> Detection {
    let (gh, gw) = grid;
    let x = (col as f32 + sigmoid_scalar(cell[0])) / gw as f32;
    let y = (row as f32 + sigmoid_scalar(cell[1])) / gh as f32;
    let w = sigmoid_scalar(cell[2]);
    let h = sigmoid_scalar(cell[3]);
    let obj = sigmoid_scalar(cell[4]);
    let (class_id, class_p) = cell[BOX_CHANNELS..]
        .iter()
        .map(|&t| sigmoid_scalar(t))
        .enumerate()
        .fold((0, f32::MIN), |best, (i, p)| if p > best.1 { (i, p) } else { best });
    Detection::new(BBox::new(x, y, w, h), class_id, obj * class_p)
}

/// Decode every cell of every head; detections with confidence below
/// `conf_threshold` are dropped. Returns one list per batch item.
pub fn decode(raw: &[Tensor; NUM_HEADS], conf_threshold: f32) -> Result<Vec<Vec<Detection>>> {
    let (n, gh, gw, d) = grid_dims(raw)?;
    let mut out = vec![Vec::new(); n];
    for grid in raw {
        for (b, item) in grid.data().chunks_exact(gh * gw * d).enumerate() {
            for (cell_idx, cell) in item.chunks_exact(d).enumerate() {
                let det = decode_cell(cell, cell_idx / gw, cell_idx % gw, (gh, gw));
                if det.confidence >= conf_threshold && det.confidence > 0.0 {
                    out[b].push(det);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellTarget {
    pub bbox: BBox,
    pub class_id: usize,
}

/// Per-head, per-cell positives for one image. `None` marks a negative cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTargets {
    pub grid: (usize, usize),
    pub cells: [Vec<Option<CellTarget>>; NUM_HEADS],
}

impl ImageTargets {
    pub fn positives(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_some()).count()
    }

    pub fn get(&self, head: usize, row: usize, col: usize) -> Option<&CellTarget> {
        self.cells[head][row * self.grid.1 + col].as_ref()
    }
}

/// Cell holding a normalized center coordinate.
pub fn cell_of(bbox: &BBox, grid: (usize, usize)) -> (usize, usize) {
    let row = ((bbox.y * grid.0 as f32).floor().max(0.0) as usize).min(grid.0 - 1);
    let col = ((bbox.x * grid.1 as f32).floor().max(0.0) as usize).min(grid.1 - 1);
    (row, col)
}

/// Each ground truth becomes a positive on exactly one head (by its larger side)
/// at the cell containing its center. When two share a cell, the larger area wins;
/// equal areas keep the earlier box.
pub fn assign_targets(gt: &[Detection], heads: &HeadSet, grid: (usize, usize)) -> Result<ImageTargets> {
    let empty = vec![None; grid.0 * grid.1];
    let mut cells = [empty.clone(), empty.clone(), empty];
    for g in gt {
        if !g.bbox.is_valid() {
            return Err(Error::InvalidArgument(format!(
                "ground-truth box has non-positive extent: {:?}",
                g.bbox
            )));
        }
        if g.class_id >= heads.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "ground-truth class {} outside 0..{}",
                g.class_id,
                heads.num_classes()
            )));
        }
        let head = heads.head_for(g.bbox.max_side());
        let (row, col) = cell_of(&g.bbox, grid);
        let slot: &mut Option<CellTarget> = &mut cells[head][row * grid.1 + col];
        let replace = match slot {
            Some(existing) => g.bbox.area() > existing.bbox.area(),
            None => true,
        };
        if replace {
            *slot = Some(CellTarget {
                bbox: g.bbox,
                class_id: g.class_id,
            });
        }
    }
    Ok(ImageTargets { grid, cells })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub box_weight: f64,
    pub class_weight: f64,
    pub conf_weight: f64,
    /// Down-weight on negative-cell confidence terms.
    pub neg_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            box_weight: 1.0,
            class_weight: 1.0,
            conf_weight: 1.0,
            neg_weight: 0.1,
        }
    }
}

/// Weighted loss components; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub box_loss: f64,
    pub class_loss: f64,
    pub conf_loss: f64,
    pub positives: usize,
}

#[inline]
fn sigmoid64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, numerically stable form.
#[inline]
fn bce_logit(z: f64, target: f64) -> f64 {
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

/// IoU of two center-form boxes `[x, y, w, h]` and its gradient with respect to the first.
pub fn iou_with_grad(p: [f64; 4], g: [f64; 4]) -> (f64, [f64; 4]) {
    let (px1, px2) = (p[0] - p[2] / 2.0, p[0] + p[2] / 2.0);
    let (py1, py2) = (p[1] - p[3] / 2.0, p[1] + p[3] / 2.0);
    let (gx1, gx2) = (g[0] - g[2] / 2.0, g[0] + g[2] / 2.0);
    let (gy1, gy2) = (g[1] - g[3] / 2.0, g[1] + g[3] / 2.0);

    let iw = px2.min(gx2) - px1.max(gx1);
    let ih = py2.min(gy2) - py1.max(gy1);
    let parea = p[2] * p[3];
    let garea = g[2] * g[3];
    if iw <= 0.0 || ih <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    let inter = iw * ih;
    let union = parea + garea - inter;
    let iou = inter / union;

    // d(iw)/d(px2), d(iw)/d(px1) and likewise for y
    let diw_r = if px2 < gx2 { 1.0 } else { 0.0 };
    let diw_l = if px1 > gx1 { -1.0 } else { 0.0 };
    let dih_b = if py2 < gy2 { 1.0 } else { 0.0 };
    let dih_t = if py1 > gy1 { -1.0 } else { 0.0 };
    let diw = [diw_r + diw_l, 0.0, 0.5 * (diw_r - diw_l), 0.0];
    let dih = [0.0, dih_b + dih_t, 0.0, 0.5 * (dih_b - dih_t)];
    let dparea = [0.0, 0.0, p[3], p[2]];

    let mut grad = [0.0; 4];
    for k in 0..4 {
        let dinter = diw[k] * ih + dih[k] * iw;
        let dunion = dparea[k] - dinter;
        grad[k] = (dinter * union - inter * dunion) / (union * union);
    }
    (iou, grad)
}

/// Composite loss over a batch and its gradient with respect to the raw head grids.
///
/// * box: mean over positives of `1 - IoU(decoded, gt)`
/// * class: mean BCE over positives' class channels
/// * conf: BCE over all cells (target 1 at positives), negatives scaled by
///   `neg_weight`, averaged over every cell of every head
pub fn detection_loss(
    raw: &[Tensor; NUM_HEADS],
    targets: &[ImageTargets],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, [Tensor; NUM_HEADS])> {
    let (n, gh, gw, d) = grid_dims(raw)?;
    if targets.len() != n {
        return Err(Error::shape(
            "detection_loss",
            format!("{n} target sets"),
            format!("{}", targets.len()),
        ));
    }
    if let Some(t) = targets.iter().find(|t| t.grid != (gh, gw)) {
        return Err(Error::shape(
            "detection_loss",
            format!("targets on a {gh}x{gw} grid"),
            format!("{}x{}", t.grid.0, t.grid.1),
        ));
    }
    let num_classes = d - BOX_CHANNELS;
    let positives: usize = targets.iter().map(ImageTargets::positives).sum();
    let total_cells = (n * NUM_HEADS * gh * gw) as f64;
    let pos_norm = if positives > 0 { 1.0 / positives as f64 } else { 0.0 };
    let cls_norm = pos_norm / num_classes as f64;
    let conf_norm = 1.0 / total_cells;

    let mut box_sum = 0.0;
    let mut cls_sum = 0.0;
    let mut conf_sum = 0.0;
    let mut grads: [Vec<f32>; NUM_HEADS] = std::array::from_fn(|h| vec![0.0; raw[h].len()]);

    for (head, grid) in raw.iter().enumerate() {
        let g = &mut grads[head];
        for (b, tgt) in targets.iter().enumerate() {
            for row in 0..gh {
                for col in 0..gw {
                    let base = ((b * gh + row) * gw + col) * d;
                    let cell = &grid.data()[base..base + d];
                    let target = tgt.get(head, row, col);

                    let zc = cell[4] as f64;
                    let (t, weight) = if target.is_some() { (1.0, 1.0) } else { (0.0, cfg.neg_weight) };
                    conf_sum += weight * bce_logit(zc, t);
                    g[base + 4] = (cfg.conf_weight * conf_norm * weight * (sigmoid64(zc) - t)) as f32;

                    let Some(target) = target else { continue };

                    for k in 0..num_classes {
                        let z = cell[BOX_CHANNELS + k] as f64;
                        let t = if k == target.class_id { 1.0 } else { 0.0 };
                        cls_sum += bce_logit(z, t);
                        g[base + BOX_CHANNELS + k] = (cfg.class_weight * cls_norm * (sigmoid64(z) - t)) as f32;
                    }

                    let s: [f64; 4] = std::array::from_fn(|k| sigmoid64(cell[k] as f64));
                    let pred = [
                        (col as f64 + s[0]) / gw as f64,
                        (row as f64 + s[1]) / gh as f64,
                        s[2],
                        s[3],
                    ];
                    let gt = [
                        target.bbox.x as f64,
                        target.bbox.y as f64,
                        target.bbox.w as f64,
                        target.bbox.h as f64,
                    ];
                    let (iou, diou) = iou_with_grad(pred, gt);
                    box_sum += 1.0 - iou;
                    let scale = [1.0 / gw as f64, 1.0 / gh as f64, 1.0, 1.0];
                    for k in 0..4 {
                        let dl = -diou[k] * scale[k] * s[k] * (1.0 - s[k]);
                        g[base + k] = (cfg.box_weight * pos_norm * dl) as f32;
                    }
                }
            }
        }
    }

    let box_loss = cfg.box_weight * box_sum * pos_norm;
    let class_loss = cfg.class_weight * cls_sum * cls_norm;
    let conf_loss = cfg.conf_weight * conf_sum * conf_norm;
    let breakdown = LossBreakdown {
        total: box_loss + class_loss + conf_loss,
        box_loss,
        class_loss,
        conf_loss,
        positives,
    };
    let [g0, g1, g2] = grads;
    let shape = raw[0].shape();
    Ok((breakdown, [Tensor::new(shape, g0)?, Tensor::new(shape, g1)?, Tensor::new(shape, g2)?]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heads() -> HeadSet {
        HeadSet::zeros(4, 1, DEFAULT_SIZE_RANGES).unwrap()
    }

    fn gt(x: f32, y: f32, w: f32, h: f32) -> Detection {
        Detection::ground_truth(BBox::new(x, y, w, h), 0)
    }

    #[test]
    fn six_channels_for_one_class() {
        let hs = heads();
        assert_eq!(hs.channels_per_cell(), 6);
        let raw = hs.forward(&Tensor::filled(&[1, 5, 5, 4], 0.3)).unwrap();
        for r in &raw {
            assert_eq!(r.shape(), &[1, 5, 5, 6]);
            assert!(r.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_cell_decodes_to_closed_form() {
        let det = decode_cell(&[0.0; 6], 14, 14, (28, 28));
        assert!((det.bbox.x - 14.5 / 28.0).abs() < 1e-6);
        assert!((det.bbox.x - 0.5179).abs() < 1e-4);
        assert!((det.bbox.y - 0.5179).abs() < 1e-4);
        assert_eq!((det.bbox.w, det.bbox.h), (0.5, 0.5));
        assert_eq!(det.confidence, 0.25);
    }

    #[test]
    fn saturated_confidence_emits_nothing() {
        let mut t = Tensor::zeros(&[1, 2, 2, 6]);
        for cell in t.data_mut().chunks_mut(6) {
            cell[4] = -40.0;
        }
        let raw = [t.clone(), t.clone(), t];
        assert!(decode(&raw, 1e-9).unwrap()[0].is_empty());
    }

    #[test]
    fn threshold_keeps_confident_detection() {
        // sigmoid(a) * sigmoid(b) = 0.87 with b large
        let mut t = Tensor::filled(&[1, 1, 1, 6], 0.0);
        t.data_mut()[4] = (0.87f32 / 0.13).ln();
        t.data_mut()[5] = 30.0;
        let neg = Tensor::filled(&[1, 1, 1, 6], -30.0);
        let dets = decode(&[t, neg.clone(), neg], 0.5).unwrap();
        assert_eq!(dets[0].len(), 1);
        assert!((dets[0][0].confidence - 0.87).abs() < 1e-5);
    }

    #[test]
    fn assignment_rules() {
        let hs = heads();
        let t = assign_targets(&[gt(0.5, 0.5, 0.05, 0.04)], &hs, (28, 28)).unwrap();
        assert!(t.get(0, 14, 14).is_some());
        assert_eq!(t.positives(), 1);
        assert_eq!(hs.head_for(0.05), 0);
        assert_eq!(hs.head_for(0.1), 0);
        assert_eq!(hs.head_for(0.2), 1);
        assert_eq!(hs.head_for(0.9), 2);

        let small = gt(0.51, 0.51, 0.04, 0.04);
        let larger = gt(0.50, 0.50, 0.08, 0.06);
        let t = assign_targets(&[small.clone(), larger.clone()], &hs, (28, 28)).unwrap();
        assert_eq!(t.positives(), 1);
        assert_eq!(t.get(0, 14, 14).unwrap().bbox, larger.bbox);
        let t = assign_targets(&[larger.clone(), small], &hs, (28, 28)).unwrap();
        assert_eq!(t.get(0, 14, 14).unwrap().bbox, larger.bbox);

        assert!(assign_targets(&[gt(0.5, 0.5, 0.0, 0.1)], &hs, (28, 28)).is_err());
    }

    #[test]
    fn size_range_validation() {
        assert!(validate_ranges(&DEFAULT_SIZE_RANGES).is_ok());
        assert!(validate_ranges(&[(0.0, 0.1), (0.2, 0.3), (0.3, 1.0)]).is_err());
        assert!(validate_ranges(&[(0.0, 0.1), (0.1, 0.3), (0.3, 0.9)]).is_err());
    }

    #[test]
    fn empty_image_loss_closed_form() {
        let raw = [Tensor::zeros(&[1, 4, 4, 6]), Tensor::zeros(&[1, 4, 4, 6]), Tensor::zeros(&[1, 4, 4, 6])];
        let t = assign_targets(&[], &heads(), (4, 4)).unwrap();
        let (loss, _) = detection_loss(&raw, &[t], &LossConfig::default()).unwrap();
        assert_eq!(loss.box_loss, 0.0);
        assert_eq!(loss.class_loss, 0.0);
        assert!((loss.conf_loss - 0.1 * std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(loss.total, loss.conf_loss);
    }

    #[test]
    fn exact_box_has_zero_box_loss() {
        // choose raw values that decode exactly onto the ground truth
        let grid = (4, 4);
        let logit = |p: f64| (p / (1.0 - p)).ln() as f32;
        let (row, col) = (1, 2);
        let target = gt(((col as f64 + 0.25) / 4.0) as f32, ((row as f64 + 0.75) / 4.0) as f32, 0.5, 0.25);
        let mut g = Tensor::zeros(&[1, 4, 4, 6]);
        let base = (row * 4 + col) * 6;
        g.data_mut()[base..base + 4].copy_from_slice(&[logit(0.25), logit(0.75), logit(0.5), logit(0.25)]);
        let hs = heads();
        let t = assign_targets(&[target], &hs, grid).unwrap();
        assert!(t.get(2, row, col).is_some());
        let z = Tensor::zeros(&[1, 4, 4, 6]);
        let (loss, _) = detection_loss(&[z.clone(), z, g], &[t], &LossConfig::default()).unwrap();
        assert!(loss.box_loss.abs() < 1e-6, "{}", loss.box_loss);
    }

    #[test]
    fn detection_line_format() {
        let d = Detection::new(BBox::new(0.5, 0.25, 0.125, 0.0625), 0, 0.87);
        let line = d.to_line("scene_0001");
        assert_eq!(line, "scene_0001 0 0.8700 0.500000 0.250000 0.125000 0.062500");
        let (id, back) = Detection::parse_line(&line).unwrap();
        assert_eq!(id, "scene_0001");
        assert_eq!(back, d);
        assert!(Detection::parse_line("x 0 0.5").is_err());
    }
}
