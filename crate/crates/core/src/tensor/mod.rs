//! Dense channels-last tensors and the forward/backward kernels the detector needs.
//!
//! Feature maps are rank-4 `(batch, height, width, channels)` in row-major order.
//! Every op here is a pure function; gradients come from a matching hand-written
//! backward function rather than a recorded graph. The stateful wrappers in
//! [`crate::layers`] pair the two.

mod conv;
mod ops;

pub use conv::{
    conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, pointwise_conv2d,
    ConvGrads, ConvKernel,
};
pub use ops::{
    channel_affine, channel_affine_backward, elementwise_add, fully_connected,
    fully_connected_backward, global_avg_pool, global_avg_pool_backward, relu, relu_backward,
    resize_bilinear, resize_bilinear_backward, sigmoid, sigmoid_backward, sigmoid_scalar,
    FcGrads,
};

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub(crate) fn shape_str(shape: &[usize]) -> String {
    let parts: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("({})", parts.join("x"))
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {}",
                shape_str(shape)
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} elements for shape {}", len, shape_str(shape)),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// `(n, h, w, c)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, h, w, c] => Ok((n, h, w, c)),
            _ => Err(Error::shape(
                "tensor",
                "rank-4 (N,H,W,C)",
                shape_str(&self.shape),
            )),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                shape_str(shape),
                shape_str(&self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f32) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add_assign",
                shape_str(&self.shape),
                shape_str(&other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f32) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Item `n` of a batch as its own rank-4 tensor with batch extent 1.
    pub fn batch_item(&self, n: usize) -> Result<Tensor> {
        let (batch, h, w, c) = self.dims4()?;
        if n >= batch {
            return Err(Error::InvalidArgument(format!(
                "batch index {n} out of range for batch of {batch}"
            )));
        }
        let stride = h * w * c;
        Tensor::new(&[1, h, w, c], self.data[n * stride..(n + 1) * stride].to_vec())
    }

    /// Concatenate rank-4 tensors of identical `(H, W, C)` along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack an empty list".into()))?;
        let (_, h, w, c) = first.dims4()?;
        let mut data = Vec::with_capacity(items.iter().map(Tensor::len).sum());
        let mut n = 0;
        for item in items {
            let (bn, bh, bw, bc) = item.dims4()?;
            if (bh, bw, bc) != (h, w, c) {
                return Err(Error::shape(
                    "stack",
                    shape_str(&[bn, h, w, c]),
                    shape_str(item.shape()),
                ));
            }
            n += bn;
            data.extend_from_slice(&item.data);
        }
        Tensor::new(&[n, h, w, c], data)
    }
}

/// A learnable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes
/// while keeping a fixed summation order.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let xa = &a[i * 8..i * 8 + 8];
        let xb = &b[i * 8..i * 8 + 8];
        for k in 0..8 {
            acc[k] += xa[k] * xb[k];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `dst += alpha * src`
#[inline]
pub(crate) fn axpy(dst: &mut [f32], alpha: f32, src: &[f32]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[0, 2], vec![]).is_err());
        assert!(Tensor::new(&[2, 2], vec![1.0; 4]).is_ok());
    }

    #[test]
    fn stack_and_split_batch() {
        let a = Tensor::filled(&[1, 2, 2, 1], 1.0);
        let b = Tensor::filled(&[1, 2, 2, 1], 2.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2, 1]);
        assert_eq!(s.batch_item(1).unwrap(), b);
        assert_eq!(s.batch_item(0).unwrap(), a);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f32> = (0..19).map(|i| i as f32 * 0.5).collect();
        let b: Vec<f32> = (0..19).map(|i| 1.0 - i as f32 * 0.1).collect();
        let naive: f32 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-4);
    }
}
