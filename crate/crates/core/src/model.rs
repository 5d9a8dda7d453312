//! The full detector: backbone, aggregation and heads behind one forward/backward.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::AggregationBlock;
use crate::backbone::{Backbone, BackboneConfig};
use crate::data::preprocess;
use crate::error::{Error, Result};
use crate::head::{self, Detection, HeadSet, DEFAULT_NUM_CLASSES, DEFAULT_SIZE_RANGES, NUM_HEADS};
use crate::layers::HasParams;
use crate::postprocess::{nms, NmsConfig};
use crate::summary::{LayerRow, ModelSummary};
use crate::tensor::{Param, Tensor};

pub const DEFAULT_AGG_CHANNELS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub agg_channels: usize,
    pub unified_resolution: (usize, usize),
    pub num_classes: usize,
    pub size_ranges: [(f32, f32); NUM_HEADS],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_backbone(BackboneConfig::default())
    }
}

impl ModelConfig {
    /// Unified grid defaults to the deepest tap's extent.
    pub fn with_backbone(backbone: BackboneConfig) -> Self {
        let unified = *backbone.stage_extents().last().unwrap();
        Self {
            backbone,
            agg_channels: DEFAULT_AGG_CHANNELS,
            unified_resolution: unified,
            num_classes: DEFAULT_NUM_CLASSES,
            size_ranges: DEFAULT_SIZE_RANGES,
        }
    }

    pub fn for_resolution(h: usize, w: usize) -> Self {
        Self::with_backbone(BackboneConfig::default().with_resolution(h, w))
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        head::validate_ranges(&self.size_ranges)?;
        if self.agg_channels == 0 || self.num_classes == 0 {
            return Err(Error::InvalidArgument("agg_channels and num_classes must be positive".into()));
        }
        if self.unified_resolution.0 == 0 || self.unified_resolution.1 == 0 {
            return Err(Error::InvalidArgument("unified resolution must be positive".into()));
        }
        Ok(())
    }

    pub fn input_resolution(&self) -> (usize, usize) {
        self.backbone.input_resolution
    }

    /// Stable `key=value` rendering used in checkpoints.
    pub fn to_kv(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let b = &self.backbone;
        let ranges = self
            .size_ranges
            .iter()
            .map(|(lo, hi)| format!("{lo}:{hi}"))
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "input_resolution={}x{}\nwidths={}\nstrides={}\nse_reduction={}\nagg_channels={}\nunified_resolution={}x{}\nnum_classes={}\nsize_ranges={}\n",
            b.input_resolution.0,
            b.input_resolution.1,
            list(&b.widths),
            list(&b.strides),
            b.se_reduction,
            self.agg_channels,
            self.unified_resolution.0,
            self.unified_resolution.1,
            self.num_classes,
            ranges
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let bad = |k: &str, v: &str| Error::Checkpoint(format!("bad config value {k}={v}"));
        let mut cfg = ModelConfig::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad config line {line:?}")))?;
            let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(k, v));
            let pair = |s: &str| -> Result<(usize, usize)> {
                let (a, b) = s.split_once('x').ok_or_else(|| bad(k, v))?;
                Ok((num(a)?, num(b)?))
            };
            let list = |s: &str| s.split(',').map(num).collect::<Result<Vec<_>>>();
            match k {
                "input_resolution" => cfg.backbone.input_resolution = pair(v)?,
                "widths" => cfg.backbone.widths = list(v)?,
                "strides" => cfg.backbone.strides = list(v)?,
                "se_reduction" => cfg.backbone.se_reduction = num(v)?,
                "agg_channels" => cfg.agg_channels = num(v)?,
                "unified_resolution" => cfg.unified_resolution = pair(v)?,
                "num_classes" => cfg.num_classes = num(v)?,
                "size_ranges" => {
                    let parsed = v
                        .split(',')
                        .map(|r| {
                            let (lo, hi) = r.split_once(':').ok_or_else(|| bad(k, v))?;
                            Ok((
                                lo.parse::<f32>().map_err(|_| bad(k, v))?,
                                hi.parse::<f32>().map_err(|_| bad(k, v))?,
                            ))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    cfg.size_ranges = parsed.try_into().map_err(|_| bad(k, v))?;
                }
                other => return Err(Error::Checkpoint(format!("unknown config key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct Detector {
    config: ModelConfig,
    pub backbone: Backbone,
    pub aggregation: AggregationBlock,
    pub heads: HeadSet,
}

impl Detector {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::zeros(config.backbone.clone())?;
        let w = &config.backbone.widths;
        let aggregation =
            AggregationBlock::zeros([w[1], w[2], w[3]], config.agg_channels, config.unified_resolution)?;
        let heads = HeadSet::zeros(config.agg_channels, config.num_classes, config.size_ranges)?;
        Ok(Self {
            config,
            backbone,
            aggregation,
            heads,
        })
    }

    /// Seeded initialization; identical seeds give bit-identical parameters.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.backbone = Backbone::build(model.config.backbone.clone(), &mut rng)?;
        model.aggregation.init(&mut rng);
        model.heads.init(&mut rng);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn grid(&self) -> (usize, usize) {
        self.config.unified_resolution
    }

    /// Unified multi-scale map for a preprocessed batch.
    pub fn unified(&self, images: &Tensor) -> Result<Tensor> {
        let features = self.backbone.forward(images)?;
        self.aggregation.forward(&features)
    }

    /// Raw head grids for a preprocessed `(N, H, W, 3)` batch.
    pub fn forward(&self, images: &Tensor) -> Result<[Tensor; NUM_HEADS]> {
        self.heads.forward(&self.unified(images)?)
    }

    pub fn forward_train(&mut self, images: &Tensor) -> Result<[Tensor; NUM_HEADS]> {
        let features = self.backbone.forward_train(images)?;
        let unified = self.aggregation.forward_train(&features)?;
        self.heads.forward_train(&unified)
    }

    /// Accumulate parameter gradients from the raw-grid gradients of the last
    /// `forward_train`.
    pub fn backward(&mut self, grads: &[Tensor; NUM_HEADS]) -> Result<()> {
        let d_unified = self.heads.backward(grads)?;
        let d_taps = self.aggregation.backward(&d_unified)?;
        self.backbone.backward(d_taps)?;
        Ok(())
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        self.collect_params_mut("", &mut out);
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Decode and suppress detections for a preprocessed batch.
    pub fn detect(&self, images: &Tensor, conf_threshold: f32, nms_cfg: &NmsConfig) -> Result<Vec<Vec<Detection>>> {
        let raw = self.forward(images)?;
        Ok(head::decode(&raw, conf_threshold)?
            .iter()
            .map(|dets| nms(dets, nms_cfg))
            .collect())
    }

    /// Resize + normalize one `(H, W, 3)` or `(1, H, W, 3)` image in `[0, 1]`, then detect.
    pub fn detect_image(&self, pixels: &Tensor, conf_threshold: f32, nms_cfg: &NmsConfig) -> Result<Vec<Detection>> {
        let input = preprocess(pixels, self.config.input_resolution())?;
        Ok(self.detect(&input, conf_threshold, nms_cfg)?.remove(0))
    }

    pub fn summarize(&self) -> ModelSummary {
        let mut rows: Vec<LayerRow> = self.backbone.summarize();
        let ext = self.config.backbone.stage_extents();
        let w = &self.config.backbone.widths;
        let taps = [
            [ext[1].0, ext[1].1, w[1]],
            [ext[2].0, ext[2].1, w[2]],
            [ext[3].0, ext[3].1, w[3]],
        ];
        rows.extend(self.aggregation.summarize(taps));
        rows.extend(self.heads.summarize(self.grid()));
        ModelSummary { rows }
    }
}

impl HasParams for Detector {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.backbone.collect_params(&crate::layers::join(prefix, "backbone"), out);
        self.aggregation.collect_params(&crate::layers::join(prefix, "aggregation"), out);
        self.heads.collect_params(&crate::layers::join(prefix, "head"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.backbone.collect_params_mut(&crate::layers::join(prefix, "backbone"), out);
        self.aggregation.collect_params_mut(&crate::layers::join(prefix, "aggregation"), out);
        self.heads.collect_params_mut(&crate::layers::join(prefix, "head"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_kv_round_trip() {
        let mut cfg = ModelConfig::for_resolution(64, 64);
        cfg.size_ranges = [(0.0, 0.15), (0.15, 0.35), (0.35, 1.0)];
        let text = cfg.to_kv();
        assert_eq!(ModelConfig::from_kv(&text).unwrap(), cfg);
        assert!(ModelConfig::from_kv("bogus=1").is_err());
    }

    #[test]
    fn default_grid_is_28() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.unified_resolution, (28, 28));
        assert_eq!(ModelConfig::for_resolution(64, 64).unified_resolution, (8, 8));
    }

    #[test]
    fn param_names_are_unique_and_ordered() {
        let m = Detector::zeros(ModelConfig::for_resolution(32, 32)).unwrap();
        let names: Vec<String> = m.params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "backbone.stem.weight");
        assert_eq!(names.last().unwrap(), "head.large.bias");
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut m = Detector::zeros(ModelConfig::for_resolution(32, 32)).unwrap();
        let g = Tensor::zeros(&[1, 4, 4, 6]);
        assert!(m.backward(&[g.clone(), g.clone(), g]).is_err());
    }
}
