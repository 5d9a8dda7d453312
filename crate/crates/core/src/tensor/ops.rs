use super::{dot, shape_str, Tensor};
use crate::error::{Error, Result};

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Gradient of ReLU, evaluated at the forward input.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    same_shape("relu_backward", input, upstream)?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), data)
}

#[inline]
pub fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

/// Gradient of the sigmoid, evaluated from the forward *output*.
pub fn sigmoid_backward(output: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    same_shape("sigmoid_backward", output, upstream)?;
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor::new(output.shape(), data)
}

/// Spatial mean per channel: `(N,H,W,C) -> (N,1,1,C)`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = input.dims4()?;
    let mut out = vec![0.0f32; n * c];
    let area = (h * w) as f32;
    for b in 0..n {
        let acc = &mut out[b * c..(b + 1) * c];
        for px in input.data()[b * h * w * c..(b + 1) * h * w * c].chunks_exact(c) {
            for (a, v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= area);
    }
    Tensor::new(&[n, 1, 1, c], out)
}

/// Spreads `upstream[n,c] / (H*W)` over every spatial cell.
pub fn global_avg_pool_backward(input_shape: &[usize], upstream: &Tensor) -> Result<Tensor> {
    let [n, h, w, c] = *input_shape else {
        return Err(Error::shape("global_avg_pool_backward", "rank-4 input shape", shape_str(input_shape)));
    };
    if upstream.shape() != [n, 1, 1, c] {
        return Err(Error::shape(
            "global_avg_pool_backward",
            shape_str(&[n, 1, 1, c]),
            shape_str(upstream.shape()),
        ));
    }
    let area = (h * w) as f32;
    let mut out = vec![0.0f32; n * h * w * c];
    for b in 0..n {
        let g = &upstream.data()[b * c..(b + 1) * c];
        for px in out[b * h * w * c..(b + 1) * h * w * c].chunks_exact_mut(c) {
            for (o, v) in px.iter_mut().zip(g) {
                *o = v / area;
            }
        }
    }
    Tensor::new(input_shape, out)
}

#[derive(Debug, Clone)]
pub struct FcGrads {
    pub input: Vec<f32>,
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

fn check_fc(op: &'static str, input: &[f32], weights: &Tensor, bias_len: usize) -> Result<(usize, usize)> {
    let &[rows, cols] = weights.shape() else {
        return Err(Error::shape(op, "rank-2 weight matrix", shape_str(weights.shape())));
    };
    if cols != input.len() {
        return Err(Error::shape(
            op,
            format!("input of length {cols} for weights {}", shape_str(weights.shape())),
            format!("length {}", input.len()),
        ));
    }
    if bias_len != rows {
        return Err(Error::shape(op, format!("bias of length {rows}"), format!("length {bias_len}")));
    }
    Ok((rows, cols))
}

/// `weights · input + bias` with `weights` stored as `(out, in)`.
pub fn fully_connected(input: &[f32], weights: &Tensor, bias: &[f32]) -> Result<Vec<f32>> {
    let (rows, cols) = check_fc("fully_connected", input, weights, bias.len())?;
    let w = weights.data();
    Ok((0..rows)
        .map(|r| dot(&w[r * cols..(r + 1) * cols], input) + bias[r])
        .collect())
}

pub fn fully_connected_backward(input: &[f32], weights: &Tensor, upstream: &[f32]) -> Result<FcGrads> {
    let (rows, cols) = check_fc("fully_connected_backward", input, weights, upstream.len())?;
    let w = weights.data();
    let mut dx = vec![0.0f32; cols];
    let mut dw = vec![0.0f32; rows * cols];
    for r in 0..rows {
        let g = upstream[r];
        for c in 0..cols {
            dx[c] += w[r * cols + c] * g;
            dw[r * cols + c] = g * input[c];
        }
    }
    Ok(FcGrads {
        input: dx,
        weights: Tensor::new(weights.shape(), dw)?,
        bias: upstream.to_vec(),
    })
}

/// Per-channel `x * scale[c] + shift[c]`.
pub fn channel_affine(input: &Tensor, scale: &[f32], shift: &[f32]) -> Result<Tensor> {
    let (_, _, _, c) = input.dims4()?;
    if scale.len() != c || shift.len() != c {
        return Err(Error::shape(
            "channel_affine",
            format!("{c} scale/shift values"),
            format!("{}/{}", scale.len(), shift.len()),
        ));
    }
    let mut out = input.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        for ((v, s), t) in px.iter_mut().zip(scale).zip(shift) {
            *v = *v * s + t;
        }
    }
    Ok(out)
}

/// Returns `(d_input, d_scale, d_shift)`.
pub fn channel_affine_backward(
    input: &Tensor,
    scale: &[f32],
    upstream: &Tensor,
) -> Result<(Tensor, Vec<f32>, Vec<f32>)> {
    same_shape("channel_affine_backward", input, upstream)?;
    let (_, _, _, c) = input.dims4()?;
    let mut dx = upstream.clone();
    let mut dscale = vec![0.0f32; c];
    let mut dshift = vec![0.0f32; c];
    for ((g, x), d) in upstream
        .data()
        .chunks_exact(c)
        .zip(input.data().chunks_exact(c))
        .zip(dx.data_mut().chunks_exact_mut(c))
    {
        for k in 0..c {
            dscale[k] += g[k] * x[k];
            dshift[k] += g[k];
            d[k] = g[k] * scale[k];
        }
    }
    Ok((dx, dscale, dshift))
}

pub fn elementwise_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("elementwise_add", a, b)?;
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

/// Per-axis interpolation table for corner-aligned resampling.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    (0..dst)
        .map(|i| {
            if dst == 1 || src == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (pos - i0 as f64) as f32)
        })
        .collect()
}

/// Bilinear resampling with corner alignment. Constant fields are reproduced exactly.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, h, w, c) = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize target extents must be >= 1".into()));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(input.clone());
    }
    let ys = axis_taps(h, out_h);
    let xs = axis_taps(w, out_w);
    let x = input.data();
    let mut out = vec![0.0f32; n * out_h * out_w * c];
    for b in 0..n {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let o0 = ((b * out_h + oy) * out_w + ox) * c;
                let p00 = ((b * h + y0) * w + x0) * c;
                let p01 = ((b * h + y0) * w + x1) * c;
                let p10 = ((b * h + y1) * w + x0) * c;
                let p11 = ((b * h + y1) * w + x1) * c;
                for k in 0..c {
                    let top = x[p00 + k] + fx * (x[p01 + k] - x[p00 + k]);
                    let bot = x[p10 + k] + fx * (x[p11 + k] - x[p10 + k]);
                    out[o0 + k] = top + fy * (bot - top);
                }
            }
        }
    }
    Tensor::new(&[n, out_h, out_w, c], out)
}

pub fn resize_bilinear_backward(input_shape: &[usize], upstream: &Tensor) -> Result<Tensor> {
    let [n, h, w, c] = *input_shape else {
        return Err(Error::shape("resize_bilinear_backward", "rank-4 input shape", shape_str(input_shape)));
    };
    let (un, out_h, out_w, uc) = upstream.dims4()?;
    if (un, uc) != (n, c) {
        return Err(Error::shape(
            "resize_bilinear_backward",
            format!("upstream batch {n} channels {c}"),
            shape_str(upstream.shape()),
        ));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(upstream.clone());
    }
    let ys = axis_taps(h, out_h);
    let xs = axis_taps(w, out_w);
    let g = upstream.data();
    let mut dx = vec![0.0f32; n * h * w * c];
    for b in 0..n {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let o0 = ((b * out_h + oy) * out_w + ox) * c;
                let taps = [
                    (((b * h + y0) * w + x0) * c, (1.0 - fy) * (1.0 - fx)),
                    (((b * h + y0) * w + x1) * c, (1.0 - fy) * fx),
                    (((b * h + y1) * w + x0) * c, fy * (1.0 - fx)),
                    (((b * h + y1) * w + x1) * c, fy * fx),
                ];
                for (p, wgt) in taps {
                    if wgt == 0.0 {
                        continue;
                    }
                    for k in 0..c {
                        dx[p + k] += wgt * g[o0 + k];
                    }
                }
            }
        }
    }
    Tensor::new(input_shape, dx)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, shape_str(a.shape()), shape_str(b.shape())));
    }
    Ok(())
}
