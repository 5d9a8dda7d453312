//! Box position and size distributions over a split.

use std::fmt::Write as _;

use super::DatasetSplit;

pub const HISTOGRAM_BINS: usize = 32;

/// Counts over the unit square, `bins x bins`, row-major in `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram2d {
    pub bins: usize,
    pub counts: Vec<u64>,
}

impl Histogram2d {
    pub fn new(bins: usize) -> Self {
        Self {
            bins,
            counts: vec![0; bins * bins],
        }
    }

    fn bin(&self, v: f32) -> usize {
        ((v.clamp(0.0, 1.0) * self.bins as f32) as usize).min(self.bins - 1)
    }

    pub fn add(&mut self, x: f32, y: f32) {
        let (bx, by) = (self.bin(x), self.bin(y));
        self.counts[by * self.bins + bx] += 1;
    }

    pub fn get(&self, bx: usize, by: usize) -> u64 {
        self.counts[by * self.bins + bx]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn nonzero_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Marginal {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub split: String,
    pub images: usize,
    pub instances: usize,
    /// `(cx, cy)`.
    pub centers: Histogram2d,
    /// `(w, h)`.
    pub sizes: Histogram2d,
    /// cx, cy, w, h in that order.
    pub marginals: [Marginal; 4],
}

pub fn dataset_stats(split: &DatasetSplit) -> DatasetStats {
    let mut centers = Histogram2d::new(HISTOGRAM_BINS);
    let mut sizes = Histogram2d::new(HISTOGRAM_BINS);
    let mut values: [Vec<f64>; 4] = Default::default();
    for d in split.items.iter().flat_map(|i| &i.boxes) {
        let b = d.bbox;
        centers.add(b.x, b.y);
        sizes.add(b.w, b.h);
        for (slot, v) in values.iter_mut().zip([b.x, b.y, b.w, b.h]) {
            slot.push(v as f64);
        }
    }
    let marginals = values.map(|v| {
        if v.is_empty() {
            return Marginal::default();
        }
        Marginal {
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: v.iter().sum::<f64>() / v.len() as f64,
        }
    });
    DatasetStats {
        split: split.name.clone(),
        images: split.len(),
        instances: split.box_count(),
        centers,
        sizes,
        marginals,
    }
}

impl DatasetStats {
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        writeln!(out, "split,{}", self.split).unwrap();
        writeln!(out, "images,{}", self.images).unwrap();
        writeln!(out, "instances,{}", self.instances).unwrap();
        for (name, m) in ["cx", "cy", "w", "h"].iter().zip(&self.marginals) {
            writeln!(out, "{name}_min,{:.6}", m.min).unwrap();
            writeln!(out, "{name}_max,{:.6}", m.max).unwrap();
            writeln!(out, "{name}_mean,{:.6}", m.mean).unwrap();
        }
        out
    }

    /// Nonzero bins only.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("histogram,bin_x,bin_y,count\n");
        for (name, h) in [("center", &self.centers), ("size", &self.sizes)] {
            for by in 0..h.bins {
                for bx in 0..h.bins {
                    let c = h.get(bx, by);
                    if c > 0 {
                        writeln!(out, "{name},{bx},{by},{c}").unwrap();
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AnnotatedImage;
    use crate::head::Detection;
    use crate::postprocess::BBox;
    use crate::tensor::Tensor;

    #[test]
    fn single_box_single_bin() {
        let img = AnnotatedImage {
            id: "a".into(),
            pixels: Tensor::zeros(&[2, 2, 3]),
            boxes: vec![Detection::ground_truth(BBox::new(0.5, 0.5, 0.1, 0.1), 0)],
        };
        let s = dataset_stats(&DatasetSplit::new("train", vec![img]).unwrap());
        assert_eq!(s.instances, 1);
        assert_eq!(s.centers.nonzero_bins(), 1);
        assert_eq!(s.sizes.nonzero_bins(), 1);
        assert_eq!(s.centers.get(16, 16), 1);
        assert_eq!(s.sizes.get(3, 3), 1);
        assert!(s.histogram_csv().contains("center,16,16,1"));
    }

    #[test]
    fn empty_split_zero_counts() {
        let s = dataset_stats(&DatasetSplit::new("val", vec![]).unwrap());
        assert_eq!((s.images, s.instances, s.centers.total()), (0, 0, 0));
        assert!(s.summary_csv().starts_with("metric,value\n"));
    }
}
