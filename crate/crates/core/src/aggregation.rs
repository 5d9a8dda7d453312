//! Multi-scale feature aggregation.
//!
//! The three backbone taps differ in both resolution and width, so each is
//! bilinearly resized to the unified grid and projected to a common width with a
//! 1x1 conv before the element-wise sum. A final 1x1 conv fuses the sum. No
//! activation follows the fuse.

use rand::Rng;

use crate::backbone::BackboneFeatures;
use crate::error::{Error, Result};
use crate::layers::{join, Conv, HasParams};
use crate::summary::LayerRow;
use crate::tensor::{self, shape_str, ConvKernel, Param, Tensor};

#[derive(Debug, Clone)]
pub struct AggregationBlock {
    /// Projections for the shallow, intermediate and deep taps.
    pub lateral: [Conv; 3],
    pub fuse: Conv,
    unified: (usize, usize),
    saved_shapes: Option<[Vec<usize>; 3]>,
}

impl AggregationBlock {
    pub fn zeros(in_channels: [usize; 3], channels: usize, unified: (usize, usize)) -> Result<Self> {
        if channels == 0 || unified.0 == 0 || unified.1 == 0 {
            return Err(Error::InvalidArgument("aggregation extents must be positive".into()));
        }
        let proj = |cin| Conv::new(ConvKernel::standard(1, 1, cin, channels, 1, 0));
        Ok(Self {
            lateral: [proj(in_channels[0]), proj(in_channels[1]), proj(in_channels[2])],
            fuse: Conv::new(ConvKernel::standard(1, 1, channels, channels, 1, 0)),
            unified,
            saved_shapes: None,
        })
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        for l in &mut self.lateral {
            l.init(rng);
        }
        self.fuse.init(rng);
    }

    pub fn unified_resolution(&self) -> (usize, usize) {
        self.unified
    }

    pub fn channels(&self) -> usize {
        self.fuse.kernel.out_channels()
    }

    fn check(&self, features: &BackboneFeatures) -> Result<()> {
        for (tap, proj) in features.taps().into_iter().zip(&self.lateral) {
            let (_, _, _, c) = tap.dims4()?;
            if c != proj.kernel.in_channels() {
                return Err(Error::shape(
                    "aggregate",
                    format!("{} channels", proj.kernel.in_channels()),
                    shape_str(tap.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn forward(&self, features: &BackboneFeatures) -> Result<Tensor> {
        self.check(features)?;
        let (h, w) = self.unified;
        let mut sum: Option<Tensor> = None;
        for (tap, proj) in features.taps().into_iter().zip(&self.lateral) {
            let p = proj.forward(&tensor::resize_bilinear(tap, h, w)?)?;
            match sum.as_mut() {
                Some(s) => s.add_assign(&p)?,
                None => sum = Some(p),
            }
        }
        self.fuse.forward(&sum.expect("three taps"))
    }

    pub fn forward_train(&mut self, features: &BackboneFeatures) -> Result<Tensor> {
        self.check(features)?;
        let (h, w) = self.unified;
        let mut sum: Option<Tensor> = None;
        for (tap, proj) in features.taps().into_iter().zip(self.lateral.iter_mut()) {
            let p = proj.forward_train(&tensor::resize_bilinear(tap, h, w)?)?;
            match sum.as_mut() {
                Some(s) => s.add_assign(&p)?,
                None => sum = Some(p),
            }
        }
        let taps = features.taps();
        self.saved_shapes = Some([
            taps[0].shape().to_vec(),
            taps[1].shape().to_vec(),
            taps[2].shape().to_vec(),
        ]);
        self.fuse.forward_train(&sum.expect("three taps"))
    }

    /// Gradients for the three taps given the gradient of the fused map.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<BackboneFeatures> {
        let shapes = self.saved_shapes.take().ok_or(Error::NoForward("aggregate"))?;
        let dsum = self.fuse.backward(upstream)?;
        let mut grads = Vec::with_capacity(3);
        for (proj, shape) in self.lateral.iter_mut().zip(&shapes) {
            let d = proj.backward(&dsum)?;
            grads.push(tensor::resize_bilinear_backward(shape, &d)?);
        }
        let deep = grads.pop().unwrap();
        let intermediate = grads.pop().unwrap();
        let shallow = grads.pop().unwrap();
        Ok(BackboneFeatures {
            shallow,
            intermediate,
            deep,
        })
    }

    pub fn summarize(&self, tap_dims: [[usize; 3]; 3]) -> Vec<LayerRow> {
        let (h, w) = self.unified;
        let c = self.channels();
        let names = ["Aggregation.lateral_low", "Aggregation.lateral_mid", "Aggregation.lateral_high"];
        let mut rows: Vec<LayerRow> = self
            .lateral
            .iter()
            .zip(names)
            .zip(tap_dims)
            .map(|((proj, name), d)| {
                let mut row = LayerRow::conv(name, &proj.kernel, [h, w, d[2]], [h, w, c], None);
                row.input = d;
                row
            })
            .collect();
        rows.push(LayerRow::conv(
            "Aggregation.fuse",
            &self.fuse.kernel,
            [h, w, c],
            [h, w, c],
            Some(2.5),
        ));
        rows
    }
}

impl HasParams for AggregationBlock {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (l, name) in self.lateral.iter().zip(["low", "mid", "high"]) {
            l.collect_params(&join(prefix, name), out);
        }
        self.fuse.collect_params(&join(prefix, "fuse"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (l, name) in self.lateral.iter_mut().zip(["low", "mid", "high"]) {
            l.collect_params_mut(&join(prefix, name), out);
        }
        self.fuse.collect_params_mut(&join(prefix, "fuse"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn features(v: [f32; 3], res: usize) -> BackboneFeatures {
        BackboneFeatures {
            shallow: Tensor::filled(&[1, res * 4, res * 4, 4], v[0]),
            intermediate: Tensor::filled(&[1, res * 2, res * 2, 6], v[1]),
            deep: Tensor::filled(&[1, res, res, 8], v[2]),
        }
    }

    #[test]
    fn table_shapes() {
        let block = AggregationBlock::zeros([64, 128, 256], 256, (28, 28)).unwrap();
        let f = BackboneFeatures {
            shallow: Tensor::zeros(&[1, 112, 112, 64]),
            intermediate: Tensor::zeros(&[1, 56, 56, 128]),
            deep: Tensor::zeros(&[1, 28, 28, 256]),
        };
        let out = block.forward(&f).unwrap();
        assert_eq!(out.shape(), &[1, 28, 28, 256]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let block = AggregationBlock::zeros([4, 6, 8], 5, (3, 3)).unwrap();
        let mut f = features([0.0; 3], 3);
        f.intermediate = Tensor::zeros(&[1, 6, 6, 7]);
        assert!(block.forward(&f).is_err());
    }

    #[test]
    fn constant_shallow_map_propagates() {
        // Identity-like projections: every lateral maps its channel 0 to output channel 0.
        let mut block = AggregationBlock::zeros([4, 6, 8], 5, (3, 3)).unwrap();
        for l in &mut block.lateral {
            l.kernel.weights.value.data_mut()[0] = 1.0;
        }
        block.fuse.kernel.weights.value.data_mut()[0] = 1.0; // one-hot fuse onto channel 0
        let v = 1.625;
        let out = block.forward(&features([v, 0.0, 0.0], 3)).unwrap();
        for px in out.data().chunks(5) {
            assert_eq!(px, &[v, 0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn additive_across_scales() {
        let mut block = AggregationBlock::zeros([4, 6, 8], 5, (3, 3)).unwrap();
        block.init(&mut ChaCha8Rng::seed_from_u64(8));
        let mk = |s: f32, i: f32, d: f32| BackboneFeatures {
            shallow: Tensor::from_fn(&[1, 12, 12, 4], |k| s * ((k % 13) as f32 - 6.0)),
            intermediate: Tensor::from_fn(&[1, 6, 6, 6], |k| i * ((k % 7) as f32 - 3.0)),
            deep: Tensor::from_fn(&[1, 3, 3, 8], |k| d * ((k % 5) as f32 - 2.0)),
        };
        let full = block.forward(&mk(1.0, 1.0, 1.0)).unwrap();
        let mut parts = block.forward(&mk(1.0, 0.0, 0.0)).unwrap();
        parts.add_assign(&block.forward(&mk(0.0, 1.0, 0.0)).unwrap()).unwrap();
        parts.add_assign(&block.forward(&mk(0.0, 0.0, 1.0)).unwrap()).unwrap();
        for (a, b) in full.data().iter().zip(parts.data()) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }
}
