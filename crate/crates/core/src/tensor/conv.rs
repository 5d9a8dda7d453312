use super::{axpy, dot, shape_str, Param, Tensor};
use crate::error::{Error, Result};

/// Convolution weights plus geometry.
///
/// Standard and pointwise kernels are `(kh, kw, in, out)`; depthwise kernels are
/// `(kh, kw, channels)` and never mix channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weights: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvKernel {
    pub fn new(weights: Tensor, bias: Vec<f32>, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("convolution stride must be >= 1".into()));
        }
        let out = match weights.shape() {
            [_, _, _, out] => *out,
            [_, _, c] => *c,
            other => {
                return Err(Error::shape(
                    "conv kernel",
                    "(kh,kw,in,out) or (kh,kw,channels)",
                    shape_str(other),
                ))
            }
        };
        if bias.len() != out {
            return Err(Error::shape(
                "conv kernel",
                format!("{out} bias values"),
                format!("{}", bias.len()),
            ));
        }
        let bias = Tensor::new(&[out], bias)?;
        Ok(Self {
            weights: Param::new(weights),
            bias: Param::new(bias),
            stride,
            padding,
        })
    }

    /// Zero-initialized standard kernel.
    pub fn standard(kh: usize, kw: usize, cin: usize, cout: usize, stride: usize, padding: usize) -> Self {
        Self::new(Tensor::zeros(&[kh, kw, cin, cout]), vec![0.0; cout], stride, padding)
            .expect("valid standard kernel")
    }

    /// Zero-initialized depthwise kernel.
    pub fn depthwise(kh: usize, kw: usize, channels: usize, stride: usize, padding: usize) -> Self {
        Self::new(Tensor::zeros(&[kh, kw, channels]), vec![0.0; channels], stride, padding)
            .expect("valid depthwise kernel")
    }

    pub fn is_depthwise(&self) -> bool {
        self.weights.value.rank() == 3
    }

    pub fn kh(&self) -> usize {
        self.weights.value.shape()[0]
    }

    pub fn kw(&self) -> usize {
        self.weights.value.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.value.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        *self.weights.value.shape().last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw, p, s) = (self.kh(), self.kw(), self.padding, self.stride);
        if h + 2 * p < kh || w + 2 * p < kw {
            return Err(Error::InvalidArgument(format!(
                "kernel {kh}x{kw} with padding {p} does not fit a {h}x{w} input"
            )));
        }
        Ok(((h + 2 * p - kh) / s + 1, (w + 2 * p - kw) / s + 1))
    }
}

fn check_input(op: &'static str, input: &Tensor, kernel: &ConvKernel) -> Result<(usize, usize, usize, usize)> {
    let dims = input.dims4()?;
    if dims.3 != kernel.in_channels() {
        return Err(Error::shape(
            op,
            format!(
                "input channels {} for kernel {}",
                kernel.in_channels(),
                shape_str(kernel.weights.value.shape())
            ),
            format!("input {}", shape_str(input.shape())),
        ));
    }
    if !input.is_finite() {
        return Err(Error::NonFinite { op });
    }
    Ok(dims)
}

/// Input coordinate for output index `o` and kernel tap `k`, if inside the unpadded image.
#[inline]
fn source(o: usize, k: usize, stride: usize, padding: usize, extent: usize) -> Option<usize> {
    let pos = (o * stride + k) as isize - padding as isize;
    (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
}

/// Standard 2-D convolution with zero padding.
pub fn conv2d(input: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    if kernel.is_depthwise() {
        return Err(Error::InvalidArgument(
            "conv2d requires a (kh,kw,in,out) kernel; use depthwise_conv2d".into(),
        ));
    }
    let (n, h, w, cin) = check_input("conv2d", input, kernel)?;
    let (kh, kw, cout) = (kernel.kh(), kernel.kw(), kernel.out_channels());
    let (s, p) = (kernel.stride, kernel.padding);
    let (oh, ow) = kernel.output_extent(h, w)?;
    let weights = kernel.weights.value.data();
    let bias = kernel.bias.value.data();
    let x = input.data();

    let mut out = vec![0.0f32; n * oh * ow * cout];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o0 = ((b * oh + oy) * ow + ox) * cout;
                let out_px = &mut out[o0..o0 + cout];
                out_px.copy_from_slice(bias);
                for ky in 0..kh {
                    let Some(iy) = source(oy, ky, s, p, h) else { continue };
                    for kx in 0..kw {
                        let Some(ix) = source(ox, kx, s, p, w) else { continue };
                        let i0 = ((b * h + iy) * w + ix) * cin;
                        let w0 = (ky * kw + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[i0 + ci];
                            if xv != 0.0 {
                                let row = &weights[w0 + ci * cout..w0 + (ci + 1) * cout];
                                axpy(out_px, xv, row);
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, oh, ow, cout], out)
}

/// A 1x1 standard convolution; any other kernel size is rejected.
pub fn pointwise_conv2d(input: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    if kernel.is_depthwise() || kernel.kh() != 1 || kernel.kw() != 1 {
        return Err(Error::InvalidArgument(format!(
            "pointwise_conv2d requires a 1x1 kernel, got {}",
            shape_str(kernel.weights.value.shape())
        )));
    }
    conv2d(input, kernel)
}

fn check_upstream(op: &'static str, upstream: &Tensor, expected: [usize; 4]) -> Result<()> {
    if upstream.shape() != expected {
        return Err(Error::shape(op, shape_str(&expected), shape_str(upstream.shape())));
    }
    Ok(())
}

/// Gradients of [`conv2d`] with respect to its input, weights and bias.
pub fn conv2d_backward(input: &Tensor, kernel: &ConvKernel, upstream: &Tensor) -> Result<ConvGrads> {
    if kernel.is_depthwise() {
        return Err(Error::InvalidArgument("conv2d_backward requires a standard kernel".into()));
    }
    let (n, h, w, cin) = check_input("conv2d_backward", input, kernel)?;
    let (kh, kw, cout) = (kernel.kh(), kernel.kw(), kernel.out_channels());
    let (s, p) = (kernel.stride, kernel.padding);
    let (oh, ow) = kernel.output_extent(h, w)?;
    check_upstream("conv2d_backward", upstream, [n, oh, ow, cout])?;

    let weights = kernel.weights.value.data();
    let x = input.data();
    let dy = upstream.data();
    let mut dx = vec![0.0f32; x.len()];
    let mut dw = vec![0.0f32; weights.len()];
    let mut db = vec![0.0f32; cout];

    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o0 = ((b * oh + oy) * ow + ox) * cout;
                let g = &dy[o0..o0 + cout];
                for (acc, v) in db.iter_mut().zip(g) {
                    *acc += v;
                }
                for ky in 0..kh {
                    let Some(iy) = source(oy, ky, s, p, h) else { continue };
                    for kx in 0..kw {
                        let Some(ix) = source(ox, kx, s, p, w) else { continue };
                        let i0 = ((b * h + iy) * w + ix) * cin;
                        let w0 = (ky * kw + kx) * cin * cout;
                        for ci in 0..cin {
                            let r = w0 + ci * cout..w0 + (ci + 1) * cout;
                            dx[i0 + ci] += dot(&weights[r.clone()], g);
                            let xv = x[i0 + ci];
                            if xv != 0.0 {
                                axpy(&mut dw[r], xv, g);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), dx)?,
        weights: Tensor::new(kernel.weights.value.shape(), dw)?,
        bias: Tensor::new(&[cout], db)?,
    })
}

/// Per-channel spatial convolution: output channel `k` reads only input channel `k`.
pub fn depthwise_conv2d(input: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    if !kernel.is_depthwise() {
        return Err(Error::InvalidArgument(
            "depthwise_conv2d requires a (kh,kw,channels) kernel".into(),
        ));
    }
    let (n, h, w, c) = check_input("depthwise_conv2d", input, kernel)?;
    let (kh, kw) = (kernel.kh(), kernel.kw());
    let (s, p) = (kernel.stride, kernel.padding);
    let (oh, ow) = kernel.output_extent(h, w)?;
    let weights = kernel.weights.value.data();
    let bias = kernel.bias.value.data();
    let x = input.data();

    let mut out = vec![0.0f32; n * oh * ow * c];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o0 = ((b * oh + oy) * ow + ox) * c;
                let out_px = &mut out[o0..o0 + c];
                out_px.copy_from_slice(bias);
                for ky in 0..kh {
                    let Some(iy) = source(oy, ky, s, p, h) else { continue };
                    for kx in 0..kw {
                        let Some(ix) = source(ox, kx, s, p, w) else { continue };
                        let i0 = ((b * h + iy) * w + ix) * c;
                        let w0 = (ky * kw + kx) * c;
                        let xs = &x[i0..i0 + c];
                        let ws = &weights[w0..w0 + c];
                        for ((o, xv), wv) in out_px.iter_mut().zip(xs).zip(ws) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, oh, ow, c], out)
}

pub fn depthwise_conv2d_backward(input: &Tensor, kernel: &ConvKernel, upstream: &Tensor) -> Result<ConvGrads> {
    if !kernel.is_depthwise() {
        return Err(Error::InvalidArgument(
            "depthwise_conv2d_backward requires a depthwise kernel".into(),
        ));
    }
    let (n, h, w, c) = check_input("depthwise_conv2d_backward", input, kernel)?;
    let (kh, kw) = (kernel.kh(), kernel.kw());
    let (s, p) = (kernel.stride, kernel.padding);
    let (oh, ow) = kernel.output_extent(h, w)?;
    check_upstream("depthwise_conv2d_backward", upstream, [n, oh, ow, c])?;

    let weights = kernel.weights.value.data();
    let x = input.data();
    let dy = upstream.data();
    let mut dx = vec![0.0f32; x.len()];
    let mut dw = vec![0.0f32; weights.len()];
    let mut db = vec![0.0f32; c];

    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o0 = ((b * oh + oy) * ow + ox) * c;
                let g = &dy[o0..o0 + c];
                for (acc, v) in db.iter_mut().zip(g) {
                    *acc += v;
                }
                for ky in 0..kh {
                    let Some(iy) = source(oy, ky, s, p, h) else { continue };
                    for kx in 0..kw {
                        let Some(ix) = source(ox, kx, s, p, w) else { continue };
                        let i0 = ((b * h + iy) * w + ix) * c;
                        let w0 = (ky * kw + kx) * c;
                        for k in 0..c {
                            dx[i0 + k] += weights[w0 + k] * g[k];
                            dw[w0 + k] += x[i0 + k] * g[k];
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), dx)?,
        weights: Tensor::new(kernel.weights.value.shape(), dw)?,
        bias: Tensor::new(&[c], db)?,
    })
}
