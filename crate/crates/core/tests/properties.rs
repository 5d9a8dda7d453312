use hotspot_core::data::{self, format_annotations, parse_annotation_text, snap_box, AnnotatedImage};
use hotspot_core::eval::average_precision;
use hotspot_core::postprocess::nms;
use hotspot_core::{BBox, Detection, NmsConfig, Tensor};
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BBox> {
    (0.05f32..0.5, 0.05f32..0.5, 0.0f32..1.0, 0.0f32..1.0).prop_map(|(w, h, fx, fy)| {
        BBox::new(w / 2.0 + fx * (1.0 - w), h / 2.0 + fy * (1.0 - h), w, h)
    })
}

fn detections() -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec((bbox(), 0usize..3, 1u32..=32), 0..24)
        .prop_map(|v| v.into_iter().map(|(b, c, q)| Detection::new(b, c, q as f32 / 32.0)).collect())
}

fn image() -> impl Strategy<Value = Tensor> {
    (1usize..8, 1usize..8).prop_flat_map(|(h, w)| {
        prop::collection::vec(0u8..=255, h * w * 3)
            .prop_map(move |px| Tensor::new(&[h, w, 3], px.into_iter().map(|v| v as f32 / 255.0).collect()).unwrap())
    })
}

proptest! {
    #[test]
    fn nms_output_is_a_suppressed_ranking(dets in detections(), thr in 0.0f64..=1.0) {
        let cfg = NmsConfig { iou_threshold: thr, max_detections: 300 };
        let kept = nms(&dets, &cfg);
        prop_assert!(kept.iter().all(|k| dets.contains(k)));
        prop_assert!(kept.windows(2).all(|w| w[0].confidence >= w[1].confidence));
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.class_id != b.class_id || a.bbox.iou(&b.bbox) <= thr);
            }
        }
        prop_assert_eq!(nms(&kept, &cfg), kept.clone());
        if let Some(top) = dets.iter().map(|d| d.confidence).reduce(f32::max) {
            prop_assert_eq!(kept[0].confidence, top);
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let ab = a.iou(&b);
        prop_assert_eq!(ab, b.iou(&a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((a.iou(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flip_is_an_involution(pixels in image(), boxes in prop::collection::vec(bbox(), 0..5)) {
        let img = AnnotatedImage {
            id: "p".into(),
            pixels,
            boxes: boxes.into_iter().map(|b| Detection::ground_truth(snap_box(b), 0)).collect(),
        };
        let twice = data::augment_flip(&data::augment_flip(&img, true).unwrap(), true).unwrap();
        prop_assert_eq!(twice, img);
    }

    #[test]
    fn photometric_transforms_stay_in_range(img in image(), delta in -1.0f32..=1.0, factor in 0.05f32..3.0) {
        for out in [
            data::transform_brightness_contrast(&img, delta, factor).unwrap(),
            data::transform_grayscale(&img).unwrap(),
            data::transform_gaussian_blur(&img, 1.0).unwrap(),
        ] {
            prop_assert_eq!(out.shape(), img.shape());
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn ap_depends_only_on_ranking(hits in prop::collection::vec(any::<bool>(), 1..30), extra_gt in 0usize..5) {
        let total = hits.iter().filter(|h| **h).count() + extra_gt;
        prop_assume!(total > 0);
        let n = hits.len() as f32;
        let linear: Vec<(f32, bool)> = hits.iter().enumerate().map(|(i, &h)| (1.0 - i as f32 / n, h)).collect();
        let squashed: Vec<(f32, bool)> = linear.iter().map(|&(c, h)| (c * c * 0.5, h)).collect();
        let ap = average_precision(&linear, total);
        prop_assert_eq!(ap, average_precision(&squashed, total));
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn annotations_round_trip(boxes in prop::collection::vec((bbox(), 0usize..4), 0..8)) {
        let dets: Vec<Detection> = boxes.into_iter().map(|(b, c)| Detection::ground_truth(snap_box(b), c)).collect();
        let text = format_annotations(&dets);
        let parsed = parse_annotation_text(&text, "p").unwrap();
        prop_assert_eq!(format_annotations(&parsed), text);
    }
}
