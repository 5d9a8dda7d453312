//! Greedy IoU matching, all-point average precision and mAP reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::head::Detection;

pub const DEFAULT_EVAL_IOU: f64 = 0.5;

/// A prediction after matching against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub detection: Detection,
    pub true_positive: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageMatch {
    pub labeled: Vec<Labeled>,
    pub false_negatives: usize,
}

/// Stable descending-confidence order; equal confidences keep input order.
fn by_confidence<T>(items: &mut [T], conf: impl Fn(&T) -> f32) {
    items.sort_by(|a, b| conf(b).total_cmp(&conf(a)));
}

/// Match one image's predictions to its ground truth, per class.
pub fn match_detections(preds: &[Detection], gts: &[Detection], iou_threshold: f64) -> ImageMatch {
    let mut order: Vec<&Detection> = preds.iter().collect();
    by_confidence(&mut order, |d| d.confidence);
    let mut used = vec![false; gts.len()];
    let mut labeled = Vec::with_capacity(preds.len());
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if used[gi] || g.class_id != p.class_id {
                continue;
            }
            let iou = p.bbox.iou(&g.bbox);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        let hit = match best {
            Some((gi, iou)) if iou >= iou_threshold => {
                used[gi] = true;
                true
            }
            _ => false,
        };
        labeled.push(Labeled {
            detection: p.clone(),
            true_positive: hit,
        });
    }
    ImageMatch {
        labeled,
        false_negatives: used.iter().filter(|u| !**u).count(),
    }
}

/// `(recall, precision)` after each prediction in ranked order.
pub fn pr_curve(labels: &[(f32, bool)], total_gt: usize) -> Vec<(f64, f64)> {
    let mut ranked = labels.to_vec();
    by_confidence(&mut ranked, |l| l.0);
    let (mut tp, mut fp) = (0usize, 0usize);
    ranked
        .iter()
        .map(|&(_, hit)| {
            if hit {
                tp += 1;
            } else {
                fp += 1;
            }
            let recall = if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 };
            (recall, tp as f64 / (tp + fp) as f64)
        })
        .collect()
}

/// All-point interpolated AP over `(confidence, is_tp)` labels.
pub fn average_precision(labels: &[(f32, bool)], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return if labels.is_empty() { 1.0 } else { 0.0 };
    }
    let curve = pr_curve(labels, total_gt);
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (&(recall, _), &p) in curve.iter().zip(&envelope) {
        ap += (recall - prev_recall) * p;
        prev_recall = recall;
    }
    ap
}

pub fn mean_average_precision(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::InvalidArgument("mAP needs at least one class".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// `0.908 -> "90.8%"`.
pub fn format_percent(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class_ap: BTreeMap<usize, f64>,
    pub map_value: f64,
    /// Ranked over all classes pooled.
    pub pr_points: Vec<(f64, f64)>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub iou_threshold: f64,
}

/// Evaluate per-image predictions against per-image ground truth, pooling
/// predictions across the split per class.
pub fn evaluate(preds: &[Vec<Detection>], gts: &[Vec<Detection>], num_classes: usize, iou_threshold: f64) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} prediction lists for {} images",
            preds.len(),
            gts.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::InvalidArgument("mAP needs at least one class".into()));
    }
    let mut per_class: Vec<Vec<(f32, bool)>> = vec![Vec::new(); num_classes];
    let mut gt_per_class = vec![0usize; num_classes];
    let mut pooled = Vec::new();
    let mut fn_total = 0;
    for (p, g) in preds.iter().zip(gts) {
        for d in g.iter().chain(p) {
            if d.class_id >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "class {} outside 0..{num_classes}",
                    d.class_id
                )));
            }
        }
        for d in g {
            gt_per_class[d.class_id] += 1;
        }
        let m = match_detections(p, g, iou_threshold);
        fn_total += m.false_negatives;
        for l in m.labeled {
            per_class[l.detection.class_id].push((l.detection.confidence, l.true_positive));
            pooled.push((l.detection.confidence, l.true_positive));
        }
    }
    let per_class_ap: BTreeMap<usize, f64> = per_class
        .iter()
        .zip(&gt_per_class)
        .enumerate()
        .map(|(c, (labels, &n))| (c, average_precision(labels, n)))
        .collect();
    let aps: Vec<f64> = per_class_ap.values().copied().collect();
    let tp = pooled.iter().filter(|l| l.1).count();
    Ok(EvalReport {
        map_value: mean_average_precision(&aps)?,
        per_class_ap,
        pr_points: pr_curve(&pooled, gt_per_class.iter().sum()),
        true_positives: tp,
        false_positives: pooled.len() - tp,
        false_negatives: fn_total,
        iou_threshold,
    })
}

impl EvalReport {
    pub fn summary_line(&self) -> String {
        format!(
            "map@{:.2} {:.6} classes {} tp {} fp {} fn {}",
            self.iou_threshold,
            self.map_value,
            self.per_class_ap.len(),
            self.true_positives,
            self.false_positives,
            self.false_negatives
        )
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "mAP@{:.2}: {}", self.iou_threshold, format_percent(self.map_value)).unwrap();
        for (c, ap) in &self.per_class_ap {
            writeln!(out, "  class {c}: AP {}", format_percent(*ap)).unwrap();
        }
        writeln!(
            out,
            "  tp {} fp {} fn {}",
            self.true_positives, self.false_positives, self.false_negatives
        )
        .unwrap();
        out.push_str(&self.summary_line());
        out.push('\n');
        out
    }
}

/// Parse a summary line back into `(map, classes, tp, fp, fn)`.
pub fn parse_summary_line(line: &str) -> Option<(f64, usize, usize, usize, usize)> {
    let f: Vec<&str> = line.split_whitespace().collect();
    match f.as_slice() {
        [m, map, "classes", n, "tp", tp, "fp", fp, "fn", fneg] if m.starts_with("map@") => Some((
            map.parse().ok()?,
            n.parse().ok()?,
            tp.parse().ok()?,
            fp.parse().ok()?,
            fneg.parse().ok()?,
        )),
        _ => None,
    }
}

pub fn read_epoch_curve(path: impl AsRef<Path>) -> Result<Vec<(usize, f64)>> {
    let path = path.as_ref();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_once(' ')
            .and_then(|(e, m)| Some((e.parse().ok()?, m.trim().parse().ok()?)));
        rows.push(row.ok_or_else(|| Error::Annotation {
            path: path.display().to_string(),
            line: idx + 1,
            message: "expected \"<epoch> <map>\"".into(),
        })?);
    }
    Ok(rows)
}

/// Insert or replace the row for `epoch`, keeping rows sorted by epoch.
pub fn epoch_curve_append(path: impl AsRef<Path>, epoch: usize, map_value: f64) -> Result<()> {
    if epoch == 0 {
        return Err(Error::InvalidArgument("epochs are numbered from 1".into()));
    }
    let path = path.as_ref();
    let mut rows: BTreeMap<usize, f64> = read_epoch_curve(path)?.into_iter().collect();
    rows.insert(epoch, map_value);
    let mut text = String::new();
    for (e, m) in rows {
        writeln!(text, "{e} {m}").unwrap();
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::BBox;

    fn det(x: f32, conf: f32) -> Detection {
        Detection::new(BBox::new(x, 0.5, 0.2, 0.2), 0, conf)
    }

    fn gt(x: f32) -> Detection {
        Detection::ground_truth(BBox::new(x, 0.5, 0.2, 0.2), 0)
    }

    #[test]
    fn exact_hit() {
        let m = match_detections(&[det(0.5, 0.9)], &[gt(0.5)], 0.5);
        assert!(m.labeled[0].true_positive);
        assert_eq!(m.false_negatives, 0);
    }

    #[test]
    fn duplicate_is_false_positive() {
        let m = match_detections(&[det(0.51, 0.6), det(0.5, 0.9)], &[gt(0.5)], 0.5);
        assert_eq!(m.labeled[0].detection.confidence, 0.9);
        assert!(m.labeled[0].true_positive);
        assert!(!m.labeled[1].true_positive);
    }

    #[test]
    fn below_threshold_is_miss() {
        // widths 0.2, offset chosen so IoU = 0.4: overlap o satisfies o / (0.4 - o) = 0.4
        let o = 0.4 * 0.4 / 1.4;
        let p = Detection::new(BBox::new(0.5 + (0.2 - o as f32), 0.5, 0.2, 0.2), 0, 0.9);
        assert!((p.bbox.iou(&gt(0.5).bbox) - 0.4).abs() < 1e-6);
        let m = match_detections(&[p], &[gt(0.5)], 0.5);
        assert!(!m.labeled[0].true_positive);
        assert_eq!(m.false_negatives, 1);
    }

    #[test]
    fn ap_ordering_pair() {
        assert_eq!(average_precision(&[(0.9, true), (0.8, false)], 1), 1.0);
        assert_eq!(average_precision(&[(0.9, false), (0.8, true)], 1), 0.5);
        assert_eq!(average_precision(&[], 0), 1.0);
        assert_eq!(average_precision(&[(0.5, false)], 0), 0.0);
        assert_eq!(average_precision(&[], 3), 0.0);
    }

    #[test]
    fn map_examples() {
        assert_eq!(format_percent(mean_average_precision(&[0.908]).unwrap()), "90.8%");
        assert_eq!(mean_average_precision(&[1.0, 0.0]).unwrap(), 0.5);
        assert!((mean_average_precision(&[0.6, 0.9, 0.3]).unwrap() - 0.6).abs() < 1e-12);
        assert!(mean_average_precision(&[]).is_err());
    }

    #[test]
    fn report_line_parses() {
        let r = evaluate(&[vec![det(0.5, 0.9)]], &[vec![gt(0.5)]], 1, 0.5).unwrap();
        assert_eq!(r.map_value, 1.0);
        let line = r.summary_line();
        assert_eq!(line, "map@0.50 1.000000 classes 1 tp 1 fp 0 fn 0");
        assert_eq!(parse_summary_line(&line), Some((1.0, 1, 1, 0, 0)));
    }

    #[test]
    fn curve_upserts_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("curve.txt");
        for (e, m) in [(2, 0.5), (1, 0.25), (3, 0.75), (2, 0.6)] {
            epoch_curve_append(&p, e, m).unwrap();
        }
        assert_eq!(read_epoch_curve(&p).unwrap(), vec![(1, 0.25), (2, 0.6), (3, 0.75)]);
        assert!(epoch_curve_append(&p, 0, 0.1).is_err());
        let bad = dir.path().join("missing").join("curve.txt");
        assert!(epoch_curve_append(&bad, 1, 0.1).is_err());
    }
}
