//! Analytic parameter/FLOP accounting and wall-clock benchmarking.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::se::SeBlock;
use crate::tensor::ConvKernel;

/// Published totals for the reference model, printed for comparison only.
pub const PUBLISHED_REFERENCE_LINE: &str = "published: 36.10M params, 25.53 GFLOPs, 25.22 ms";

pub const WARMUP_RUNS: usize = 2;
pub const MIN_BENCH_RUNS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub name: String,
    pub kind: String,
    pub kernel: String,
    pub stride: usize,
    /// `(H, W, C)` for one image.
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub params: usize,
    pub flops: u64,
    /// The per-layer value printed in the published layer table, in millions.
    pub published_mparams: Option<f64>,
}

impl LayerRow {
    /// Conv FLOPs use the multiply-add count `2 * kh * kw * Cin * Cout * Hout * Wout`;
    /// depthwise kernels have an effective `Cin` of one.
    pub fn conv(name: &str, k: &ConvKernel, input: [usize; 3], output: [usize; 3], published: Option<f64>) -> Self {
        let (kh, kw) = (k.kh(), k.kw());
        let cin = if k.is_depthwise() { 1 } else { k.in_channels() };
        let flops = 2 * (kh * kw * cin * k.out_channels() * output[0] * output[1]) as u64;
        let kind = if k.is_depthwise() {
            "DepthwiseConv"
        } else if kh == 1 && kw == 1 {
            "PointwiseConv"
        } else {
            "Conv2D"
        };
        Self {
            name: name.to_string(),
            kind: kind.to_string(),
            kernel: format!("{kh}x{kw}"),
            stride: k.stride,
            input,
            output,
            params: k.param_count(),
            flops,
            published_mparams: published,
        }
    }

    /// Pooling adds, both FC layers as multiply-adds, and the channel rescale.
    pub fn se(name: &str, se: &SeBlock, dims: [usize; 3]) -> Self {
        let spatial = (dims[0] * dims[1] * dims[2]) as u64;
        let fc = 2 * 2 * (se.channels() * se.hidden()) as u64;
        Self {
            name: name.to_string(),
            kind: "SEBlock".into(),
            kernel: "-".into(),
            stride: 1,
            input: dims,
            output: dims,
            params: se.param_count(),
            flops: spatial + fc + spatial,
            published_mparams: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub rows: Vec<LayerRow>,
}

impl ModelSummary {
    pub fn total_params(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.rows.iter().map(|r| r.flops).sum()
    }

    pub fn row(&self, name: &str) -> Option<&LayerRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn render(&self) -> String {
        let dims = |d: &[usize; 3]| format!("{}x{}x{}", d[0], d[1], d[2]);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<26} {:<14} {:>6} {:>6} {:>14} {:>14} {:>10} {:>14} {:>12}",
            "layer", "type", "kernel", "stride", "input", "output", "params", "flops", "published(M)"
        );
        for r in &self.rows {
            let published = r.published_mparams.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<26} {:<14} {:>6} {:>6} {:>14} {:>14} {:>10} {:>14} {:>12}",
                r.name,
                r.kind,
                r.kernel,
                r.stride,
                dims(&r.input),
                dims(&r.output),
                r.params,
                r.flops,
                published
            );
        }
        let _ = writeln!(
            s,
            "total: {} params ({:.4}M), {} FLOPs ({:.4} GFLOPs)",
            self.total_params(),
            self.total_params() as f64 / 1e6,
            self.total_flops(),
            self.total_flops() as f64 / 1e9
        );
        let _ = writeln!(s, "{PUBLISHED_REFERENCE_LINE}");
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchStats {
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub std_ms: f64,
}

impl BenchStats {
    pub fn from_samples(samples_ms: Vec<f64>) -> Self {
        let n = samples_ms.len() as f64;
        let mean = samples_ms.iter().sum::<f64>() / n;
        let var = if samples_ms.len() > 1 {
            samples_ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            samples_ms,
            mean_ms: mean,
            std_ms: var.sqrt(),
        }
    }

    pub fn render(&self) -> String {
        format!(
            "runs {} mean_ms {:.3} std_ms {:.3}\n{}\n",
            self.samples_ms.len(),
            self.mean_ms,
            self.std_ms,
            PUBLISHED_REFERENCE_LINE
        )
    }
}

/// Time `runs` calls of `f` after [`WARMUP_RUNS`] untimed calls.
pub fn bench<F: FnMut() -> Result<()>>(runs: usize, mut f: F) -> Result<BenchStats> {
    if runs < MIN_BENCH_RUNS {
        return Err(Error::InvalidArgument(format!(
            "bench needs at least {MIN_BENCH_RUNS} runs, got {runs}"
        )));
    }
    for _ in 0..WARMUP_RUNS {
        f()?;
    }
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(BenchStats::from_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_known_samples() {
        let s = BenchStats::from_samples(vec![1.0, 2.0, 3.0]);
        assert_eq!(s.mean_ms, 2.0);
        assert!((s.std_ms - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bench_counts_calls() {
        let mut calls = 0;
        let stats = bench(10, || {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(stats.samples_ms.len(), 10);
        assert_eq!(calls, 12);
        assert!(bench(2, || Ok(())).is_err());
    }

    #[test]
    fn conv_row_counts() {
        let k = ConvKernel::standard(3, 3, 3, 32, 2, 1);
        let row = LayerRow::conv("Conv1", &k, [224, 224, 3], [112, 112, 32], Some(0.9));
        assert_eq!(row.params, 896);
        assert_eq!(row.flops, 2 * 27 * 32 * 112 * 112);
        let dw = ConvKernel::depthwise(3, 3, 32, 1, 1);
        let row = LayerRow::conv("dw", &dw, [112, 112, 32], [112, 112, 32], None);
        assert_eq!(row.params, 320);
        assert_eq!(row.flops, 2 * 9 * 32 * 112 * 112);
    }
}
