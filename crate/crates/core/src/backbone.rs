//! Depthwise-separable feature extractor: a strided 3x3 stem followed by three
//! blocks of depthwise 3x3, pointwise 1x1, channel affine, SE attention and ReLU.
//! The outputs of blocks 1-3 are the shallow, intermediate and deep taps.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{join, Affine, Conv, HasParams, Relu};
use crate::se::{SeBlock, DEFAULT_REDUCTION};
use crate::summary::LayerRow;
use crate::tensor::{shape_str, ConvKernel, Param, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub input_resolution: (usize, usize),
    /// Stem width followed by the three block widths.
    pub widths: Vec<usize>,
    /// Stem stride followed by the three depthwise strides.
    pub strides: Vec<usize>,
    pub se_reduction: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_resolution: (224, 224),
            widths: vec![32, 64, 128, 256],
            strides: vec![2, 1, 2, 2],
            se_reduction: DEFAULT_REDUCTION,
        }
    }
}

impl BackboneConfig {
    pub fn with_resolution(mut self, h: usize, w: usize) -> Self {
        self.input_resolution = (h, w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 4 || self.strides.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "backbone needs 4 widths and 4 strides (stem + 3 blocks), got {} and {}",
                self.widths.len(),
                self.strides.len()
            )));
        }
        if self.widths.iter().chain(&self.strides).any(|&v| v == 0) {
            return Err(Error::InvalidArgument("backbone widths and strides must be positive".into()));
        }
        if self.se_reduction == 0 || self.widths[1..].iter().any(|w| w % self.se_reduction != 0) {
            return Err(Error::InvalidArgument(format!(
                "SE reduction {} must divide every block width {:?}",
                self.se_reduction,
                &self.widths[1..]
            )));
        }
        let total: usize = self.strides.iter().product();
        let (h, w) = self.input_resolution;
        if h == 0 || w == 0 || h % total != 0 || w % total != 0 {
            return Err(Error::InvalidArgument(format!(
                "input resolution {h}x{w} is not divisible by the cumulative stride {total}"
            )));
        }
        Ok(())
    }

    /// Spatial extent after the stem and after each block.
    pub fn stage_extents(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = self.input_resolution;
        self.strides
            .iter()
            .map(|&s| {
                h /= s;
                w /= s;
                (h, w)
            })
            .collect()
    }
}

/// The three backbone taps for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneFeatures {
    pub shallow: Tensor,
    pub intermediate: Tensor,
    pub deep: Tensor,
}

impl BackboneFeatures {
    pub fn taps(&self) -> [&Tensor; 3] {
        [&self.shallow, &self.intermediate, &self.deep]
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub depthwise: Conv,
    pub pointwise: Conv,
    pub affine: Affine,
    pub se: SeBlock,
    relu: Relu,
}

impl Block {
    fn new(cin: usize, cout: usize, stride: usize, reduction: usize) -> Result<Self> {
        Ok(Self {
            depthwise: Conv::new(ConvKernel::depthwise(3, 3, cin, stride, 1)),
            pointwise: Conv::new(ConvKernel::standard(1, 1, cin, cout, 1, 0)),
            affine: Affine::new(cout),
            se: SeBlock::new(cout, reduction)?,
            relu: Relu::default(),
        })
    }

    fn init<R: Rng>(&mut self, rng: &mut R) {
        self.depthwise.init(rng);
        self.pointwise.init(rng);
        self.se.init(rng);
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = self.depthwise.forward(x)?;
        let x = self.pointwise.forward(&x)?;
        let x = self.affine.forward(&x)?;
        let x = self.se.forward(&x)?;
        Ok(self.relu.forward(&x))
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let x = self.depthwise.forward_train(x)?;
        let x = self.pointwise.forward_train(&x)?;
        let x = self.affine.forward_train(&x)?;
        let x = self.se.forward_train(&x)?;
        Ok(self.relu.forward_train(&x))
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let g = self.relu.backward(g)?;
        let g = self.se.backward(&g)?;
        let g = self.affine.backward(&g)?;
        let g = self.pointwise.backward(&g)?;
        self.depthwise.backward(&g)
    }
}

impl HasParams for Block {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.depthwise.collect_params(&join(prefix, "dw"), out);
        self.pointwise.collect_params(&join(prefix, "pw"), out);
        self.affine.collect_params(&join(prefix, "affine"), out);
        self.se.collect_params(&join(prefix, "se"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.depthwise.collect_params_mut(&join(prefix, "dw"), out);
        self.pointwise.collect_params_mut(&join(prefix, "pw"), out);
        self.affine.collect_params_mut(&join(prefix, "affine"), out);
        self.se.collect_params_mut(&join(prefix, "se"), out);
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    config: BackboneConfig,
    pub stem: Conv,
    stem_relu: Relu,
    pub blocks: Vec<Block>,
}

impl Backbone {
    /// Zero-initialized backbone; see [`Backbone::build`] for a seeded one.
    pub fn zeros(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let w = &config.widths;
        let s = &config.strides;
        let stem = Conv::new(ConvKernel::standard(3, 3, 3, w[0], s[0], 1));
        let blocks = (1..4)
            .map(|i| Block::new(w[i - 1], w[i], s[i], config.se_reduction))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            stem,
            stem_relu: Relu::default(),
            blocks,
        })
    }

    /// Allocate and initialize every parameter deterministically from `rng`.
    pub fn build<R: Rng>(config: BackboneConfig, rng: &mut R) -> Result<Self> {
        let mut bb = Self::zeros(config)?;
        bb.stem.init(rng);
        for block in &mut bb.blocks {
            block.init(rng);
        }
        Ok(bb)
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        let (_, h, w, c) = image.dims4()?;
        let (eh, ew) = self.config.input_resolution;
        if (h, w, c) != (eh, ew, 3) {
            return Err(Error::shape(
                "backbone_forward",
                format!("(N x {eh} x {ew} x 3)"),
                shape_str(image.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, image: &Tensor) -> Result<BackboneFeatures> {
        self.check_input(image)?;
        let x = self.stem_relu.forward(&self.stem.forward(image)?);
        let shallow = self.blocks[0].forward(&x)?;
        let intermediate = self.blocks[1].forward(&shallow)?;
        let deep = self.blocks[2].forward(&intermediate)?;
        Ok(BackboneFeatures {
            shallow,
            intermediate,
            deep,
        })
    }

    pub fn forward_train(&mut self, image: &Tensor) -> Result<BackboneFeatures> {
        self.check_input(image)?;
        let x = self.stem.forward_train(image)?;
        let x = self.stem_relu.forward_train(&x);
        let shallow = self.blocks[0].forward_train(&x)?;
        let intermediate = self.blocks[1].forward_train(&shallow)?;
        let deep = self.blocks[2].forward_train(&intermediate)?;
        Ok(BackboneFeatures {
            shallow,
            intermediate,
            deep,
        })
    }

    /// Backpropagate gradients arriving at the three taps; returns the image gradient.
    pub fn backward(&mut self, grads: BackboneFeatures) -> Result<Tensor> {
        let BackboneFeatures {
            mut shallow,
            mut intermediate,
            deep,
        } = grads;
        let g = self.blocks[2].backward(&deep)?;
        intermediate.add_assign(&g)?;
        let g = self.blocks[1].backward(&intermediate)?;
        shallow.add_assign(&g)?;
        let g = self.blocks[0].backward(&shallow)?;
        let g = self.stem_relu.backward(&g)?;
        self.stem.backward(&g)
    }

    /// Per-layer analytic parameter and FLOP counts for a single image.
    pub fn summarize(&self) -> Vec<LayerRow> {
        const PUBLISHED_MPARAMS: [(f64, f64); 3] = [(1.5, 4.5), (1.2, 5.6), (2.1, 7.3)];
        let (h0, w0) = self.config.input_resolution;
        let extents = self.config.stage_extents();
        let widths = &self.config.widths;
        let mut rows = vec![LayerRow::conv(
            "Conv1",
            &self.stem.kernel,
            [h0, w0, 3],
            [extents[0].0, extents[0].1, widths[0]],
            Some(0.9),
        )];
        for (i, block) in self.blocks.iter().enumerate() {
            let (ih, iw) = extents[i];
            let (oh, ow) = extents[i + 1];
            let cin = widths[i];
            let cout = widths[i + 1];
            let name = format!("Block{}", i + 1);
            rows.push(LayerRow::conv(
                &format!("{name}.depthwise"),
                &block.depthwise.kernel,
                [ih, iw, cin],
                [oh, ow, cin],
                Some(PUBLISHED_MPARAMS[i].0),
            ));
            rows.push(LayerRow::conv(
                &format!("{name}.pointwise"),
                &block.pointwise.kernel,
                [oh, ow, cin],
                [oh, ow, cout],
                Some(PUBLISHED_MPARAMS[i].1),
            ));
            rows.push(LayerRow {
                name: format!("{name}.affine"),
                kind: "ChannelAffine".into(),
                kernel: "-".into(),
                stride: 1,
                input: [oh, ow, cout],
                output: [oh, ow, cout],
                params: 2 * cout,
                flops: 2 * (oh * ow * cout) as u64,
                published_mparams: None,
            });
            rows.push(LayerRow::se(&format!("{name}.se"), &block.se, [oh, ow, cout]));
        }
        rows
    }
}

impl HasParams for Backbone {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.stem.collect_params(&join(prefix, "stem"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_params(&join(prefix, &format!("block{}", i + 1)), out);
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.stem.collect_params_mut(&join(prefix, "stem"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_params_mut(&join(prefix, &format!("block{}", i + 1)), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded(config: BackboneConfig, seed: u64) -> Backbone {
        Backbone::build(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(BackboneConfig::default().validate().is_ok());
        assert!(BackboneConfig::default().with_resolution(100, 100).validate().is_err());
        let mut bad = BackboneConfig::default();
        bad.widths.pop();
        assert!(bad.validate().is_err());
        let mut bad = BackboneConfig::default();
        bad.se_reduction = 3;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stem_geometry_and_count() {
        let bb = Backbone::zeros(BackboneConfig::default()).unwrap();
        let k = &bb.stem.kernel;
        assert_eq!((k.kh(), k.kw(), k.stride), (3, 3, 2));
        assert_eq!((k.in_channels(), k.out_channels()), (3, 32));
        assert_eq!(bb.stem.param_count(), 896);
        assert_eq!(bb.blocks[0].depthwise.param_count(), 320);
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = BackboneConfig::default().with_resolution(32, 32);
        let a = seeded(cfg.clone(), 11);
        let b = seeded(cfg.clone(), 11);
        let c = seeded(cfg, 12);
        let collect = |bb: &Backbone| {
            let mut v = Vec::new();
            bb.collect_params("", &mut v);
            v.into_iter().flat_map(|(_, p)| p.value.data().to_vec()).collect::<Vec<f32>>()
        };
        assert_eq!(collect(&a), collect(&b));
        assert_ne!(collect(&a), collect(&c));
    }

    #[test]
    fn wrong_input_rejected() {
        let bb = Backbone::zeros(BackboneConfig::default().with_resolution(32, 32)).unwrap();
        assert!(bb.forward(&Tensor::zeros(&[1, 32, 32, 1])).is_err());
        assert!(bb.forward(&Tensor::zeros(&[1, 64, 64, 3])).is_err());
    }

    #[test]
    fn zero_image_gives_zero_features() {
        let bb = seeded(BackboneConfig::default().with_resolution(32, 32), 5);
        let f = bb.forward(&Tensor::zeros(&[1, 32, 32, 3])).unwrap();
        for t in f.taps() {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn batch_composition_invariant() {
        let bb = seeded(BackboneConfig::default().with_resolution(16, 16), 2);
        let a = Tensor::from_fn(&[1, 16, 16, 3], |i| ((i * 7919) % 97) as f32 / 97.0 - 0.5);
        let b = Tensor::from_fn(&[1, 16, 16, 3], |i| ((i * 104729) % 89) as f32 / 89.0 - 0.5);
        let both = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        let fb = bb.forward(&both).unwrap();
        let fa = bb.forward(&a).unwrap();
        let f2 = bb.forward(&b).unwrap();
        for (batched, single, item) in [(&fb.deep, &fa.deep, 0), (&fb.deep, &f2.deep, 1)] {
            let got = batched.batch_item(item).unwrap();
            for (x, y) in got.data().iter().zip(single.data()) {
                assert!((x - y).abs() <= 1e-5);
            }
        }
    }
}
