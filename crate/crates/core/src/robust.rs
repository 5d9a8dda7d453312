//! Photometric robustness sweep: rerun detection under brightness, contrast,
//! grayscale and blur changes and compare against the untouched images.

use std::fmt::Write as _;

use crate::data::{self, DatasetSplit};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::head::Detection;
use crate::model::Detector;
use crate::postprocess::NmsConfig;
use crate::tensor::Tensor;
use crate::train;

/// IoU needed to pair a transformed detection with a baseline one.
pub const PAIR_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Identity,
    BrightnessContrast { delta: f32, factor: f32 },
    Grayscale,
    Blur { sigma: f32 },
}

impl Transform {
    pub fn name(&self) -> String {
        match *self {
            Transform::Identity => "identity".into(),
            Transform::BrightnessContrast { delta, factor } => {
                let pct = |v: f32| (v * 100.0).round() as i32;
                match (pct(delta), pct(factor - 1.0)) {
                    (b, 0) => format!("brightness{b:+}"),
                    (0, c) => format!("contrast{c:+}"),
                    (b, c) => format!("brightness{b:+}_contrast{c:+}"),
                }
            }
            Transform::Grayscale => "grayscale".into(),
            Transform::Blur { sigma } => format!("blur_sigma{sigma}"),
        }
    }

    pub fn apply(&self, img: &Tensor) -> Result<Tensor> {
        match *self {
            Transform::Identity => Ok(img.clone()),
            Transform::BrightnessContrast { delta, factor } => data::transform_brightness_contrast(img, delta, factor),
            Transform::Grayscale => data::transform_grayscale(img),
            Transform::Blur { sigma } => data::transform_gaussian_blur(img, sigma),
        }
    }
}

/// A percentage change `p` maps to a delta of `p / 100` for brightness and a factor
/// of `1 + p / 100` for contrast.
pub fn brightness_contrast(brightness_pct: f32, contrast_pct: f32) -> Transform {
    Transform::BrightnessContrast {
        delta: brightness_pct / 100.0,
        factor: 1.0 + contrast_pct / 100.0,
    }
}

pub const SUITES: [&str; 4] = ["brightness-contrast", "grayscale", "blur", "all"];

/// Transforms of a named suite, always led by the identity control.
pub fn suite(name: &str) -> Result<Vec<Transform>> {
    let bc = [
        brightness_contrast(-40.0, -40.0),
        brightness_contrast(25.0, 0.0),
        brightness_contrast(0.0, 25.0),
        brightness_contrast(-35.0, -35.0),
    ];
    let blur = [Transform::Blur { sigma: 1.0 }, Transform::Blur { sigma: 2.0 }];
    let mut out = vec![Transform::Identity];
    match name {
        "brightness-contrast" => out.extend(bc),
        "grayscale" => out.push(Transform::Grayscale),
        "blur" => out.extend(blur),
        "all" => {
            out.extend(bc);
            out.push(Transform::Grayscale);
            out.extend(blur);
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown suite {other:?} (expected one of {})",
                SUITES.join(", ")
            )))
        }
    }
    Ok(out)
}

/// One baseline detection and the confidence of its best transformed partner.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidencePair {
    pub baseline: f32,
    /// `None` when nothing overlapping survived the transform.
    pub transformed: Option<f32>,
}

impl ConfidencePair {
    /// A lost detection counts as falling to zero.
    pub fn delta(&self) -> f64 {
        self.transformed.unwrap_or(0.0) as f64 - self.baseline as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDeltas {
    pub id: String,
    pub pairs: Vec<ConfidencePair>,
    pub detections: Vec<Detection>,
}

impl ImageDeltas {
    pub fn mean_delta(&self) -> Option<f64> {
        (!self.pairs.is_empty()).then(|| self.pairs.iter().map(ConfidencePair::delta).sum::<f64>() / self.pairs.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustRow {
    pub transform: Transform,
    pub report: EvalReport,
    pub images: Vec<ImageDeltas>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustReport {
    pub baseline: Vec<Vec<Detection>>,
    pub rows: Vec<RobustRow>,
}

fn pair(baseline: &[Detection], transformed: &[Detection]) -> Vec<ConfidencePair> {
    baseline
        .iter()
        .map(|b| {
            let best = transformed
                .iter()
                .filter(|t| t.class_id == b.class_id)
                .map(|t| (b.bbox.iou(&t.bbox), t.confidence))
                .filter(|&(iou, _)| iou >= PAIR_IOU)
                .max_by(|x, y| x.0.total_cmp(&y.0));
            ConfidencePair {
                baseline: b.confidence,
                transformed: best.map(|(_, c)| c),
            }
        })
        .collect()
}

pub fn run_robustness(
    model: &Detector,
    split: &DatasetSplit,
    transforms: &[Transform],
    conf: f32,
    nms: &NmsConfig,
    iou_threshold: f64,
) -> Result<RobustReport> {
    let batch = 16;
    let baseline = train::predict_split(model, split, conf, nms, batch)?;
    let gts: Vec<Vec<Detection>> = split.items.iter().map(|i| i.boxes.clone()).collect();
    let num_classes = model.config().num_classes;
    let mut rows = Vec::with_capacity(transforms.len());
    for &t in transforms {
        let items = split
            .items
            .iter()
            .map(|i| {
                Ok(data::AnnotatedImage {
                    pixels: t.apply(&i.pixels)?,
                    ..i.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let shifted = DatasetSplit::new(split.name.clone(), items)?;
        let preds = train::predict_split(model, &shifted, conf, nms, batch)?;
        let images = split
            .items
            .iter()
            .zip(&baseline)
            .zip(&preds)
            .map(|((item, b), p)| ImageDeltas {
                id: item.id.clone(),
                pairs: pair(b, p),
                detections: p.clone(),
            })
            .collect();
        rows.push(RobustRow {
            transform: t,
            report: eval::evaluate(&preds, &gts, num_classes, iou_threshold)?,
            images,
        });
    }
    Ok(RobustReport { baseline, rows })
}

impl RobustReport {
    pub fn row(&self, name: &str) -> Option<&RobustRow> {
        self.rows.iter().find(|r| r.transform.name() == name)
    }

    /// `transform,map,mean_delta,lost`
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("transform,map,mean_delta,lost\n");
        for r in &self.rows {
            let pairs: Vec<&ConfidencePair> = r.images.iter().flat_map(|i| &i.pairs).collect();
            let mean = if pairs.is_empty() {
                0.0
            } else {
                pairs.iter().map(|p| p.delta()).sum::<f64>() / pairs.len() as f64
            };
            let lost = pairs.iter().filter(|p| p.transformed.is_none()).count();
            writeln!(out, "{},{:.6},{:.6},{lost}", r.transform.name(), r.report.map_value, mean).unwrap();
        }
        out
    }

    /// `transform,image,baseline_conf,transformed_conf,delta`; lost detections leave
    /// `transformed_conf` empty.
    pub fn deltas_csv(&self) -> String {
        let mut out = String::from("transform,image,baseline_conf,transformed_conf,delta\n");
        for r in &self.rows {
            for img in &r.images {
                for p in &img.pairs {
                    let t = p.transformed.map(|c| format!("{c:.6}")).unwrap_or_default();
                    writeln!(
                        out,
                        "{},{},{:.6},{t},{:.6}",
                        r.transform.name(),
                        img.id,
                        p.baseline,
                        p.delta()
                    )
                    .unwrap();
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::BBox;

    #[test]
    fn suite_contents() {
        let all: Vec<String> = suite("all").unwrap().iter().map(Transform::name).collect();
        assert_eq!(
            all,
            [
                "identity",
                "brightness-40_contrast-40",
                "brightness+25",
                "contrast+25",
                "brightness-35_contrast-35",
                "grayscale",
                "blur_sigma1",
                "blur_sigma2"
            ]
        );
        assert_eq!(suite("grayscale").unwrap()[0], Transform::Identity);
        assert!(suite("fog").is_err());
    }

    #[test]
    fn percent_mapping() {
        assert_eq!(
            brightness_contrast(-40.0, -40.0),
            Transform::BrightnessContrast { delta: -0.4, factor: 0.6 }
        );
    }

    #[test]
    fn pairing_and_deltas() {
        let b = Detection::new(BBox::new(0.5, 0.5, 0.2, 0.2), 0, 0.9);
        let near = Detection::new(BBox::new(0.51, 0.5, 0.2, 0.2), 0, 0.7);
        let far = Detection::new(BBox::new(0.1, 0.1, 0.05, 0.05), 0, 0.8);
        let pairs = pair(std::slice::from_ref(&b), &[far.clone(), near]);
        assert_eq!(pairs[0].transformed, Some(0.7));
        assert!((pairs[0].delta() + 0.2).abs() < 1e-6);
        let lost = pair(&[b], &[far]);
        assert_eq!(lost[0].transformed, None);
        assert!((lost[0].delta() + 0.9).abs() < 1e-6);
    }
}
