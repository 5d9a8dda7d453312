//! Stateful layer wrappers: each remembers its forward input during training so the
//! matching backward can run, and accumulates parameter gradients in place.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, ConvKernel, Param, Tensor};

/// Named parameter access in a fixed declaration order.
pub trait HasParams {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>);
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Fan-in scaled uniform init, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn init_fan_in<R: Rng>(param: &mut Param, fan_in: usize, rng: &mut R) {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    for v in param.value.data_mut() {
        *v = rng.gen_range(-bound..bound);
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub kernel: ConvKernel,
    saved: Option<Tensor>,
}

impl Conv {
    pub fn new(kernel: ConvKernel) -> Self {
        Self { kernel, saved: None }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        let k = &self.kernel;
        let fan_in = if k.is_depthwise() {
            k.kh() * k.kw()
        } else {
            k.kh() * k.kw() * k.in_channels()
        };
        init_fan_in(&mut self.kernel.weights, fan_in, rng);
        self.kernel.bias.value.fill(0.0);
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if self.kernel.is_depthwise() {
            tensor::depthwise_conv2d(x, &self.kernel)
        } else {
            tensor::conv2d(x, &self.kernel)
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward(x)?;
        self.saved = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self.saved.take().ok_or(Error::NoForward("conv"))?;
        let grads = if self.kernel.is_depthwise() {
            tensor::depthwise_conv2d_backward(&x, &self.kernel, upstream)?
        } else {
            tensor::conv2d_backward(&x, &self.kernel, upstream)?
        };
        self.kernel.weights.grad.add_assign(&grads.weights)?;
        self.kernel.bias.grad.add_assign(&grads.bias)?;
        Ok(grads.input)
    }

    pub fn param_count(&self) -> usize {
        self.kernel.param_count()
    }
}

impl HasParams for Conv {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.kernel.weights));
        out.push((join(prefix, "bias"), &self.kernel.bias));
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.kernel.weights));
        out.push((join(prefix, "bias"), &mut self.kernel.bias));
    }
}

/// Learnable per-channel scale and shift (stands in for batch norm).
#[derive(Debug, Clone)]
pub struct Affine {
    pub scale: Param,
    pub shift: Param,
    saved: Option<Tensor>,
}

impl Affine {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: Param::new(Tensor::filled(&[channels], 1.0)),
            shift: Param::new(Tensor::zeros(&[channels])),
            saved: None,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        tensor::channel_affine(x, self.scale.value.data(), self.shift.value.data())
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward(x)?;
        self.saved = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self.saved.take().ok_or(Error::NoForward("affine"))?;
        let (dx, dscale, dshift) = tensor::channel_affine_backward(&x, self.scale.value.data(), upstream)?;
        for (g, d) in self.scale.grad.data_mut().iter_mut().zip(&dscale) {
            *g += d;
        }
        for (g, d) in self.shift.grad.data_mut().iter_mut().zip(&dshift) {
            *g += d;
        }
        Ok(dx)
    }
}

impl HasParams for Affine {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "scale"), &self.scale));
        out.push((join(prefix, "shift"), &self.shift));
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "scale"), &mut self.scale));
        out.push((join(prefix, "shift"), &mut self.shift));
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    saved: Option<Tensor>,
}

impl Relu {
    pub fn forward(&self, x: &Tensor) -> Tensor {
        tensor::relu(x)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let y = tensor::relu(x);
        self.saved = Some(x.clone());
        y
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self.saved.take().ok_or(Error::NoForward("relu"))?;
        tensor::relu_backward(&x, upstream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_requires_forward() {
        let mut conv = Conv::new(ConvKernel::standard(3, 3, 2, 2, 1, 1));
        let g = Tensor::zeros(&[1, 4, 4, 2]);
        assert!(matches!(conv.backward(&g), Err(Error::NoForward(_))));
        conv.forward_train(&Tensor::zeros(&[1, 4, 4, 2])).unwrap();
        assert!(conv.backward(&g).is_ok());
        // the record is consumed
        assert!(conv.backward(&g).is_err());

        let mut relu = Relu::default();
        assert!(relu.backward(&g).is_err());
        let mut aff = Affine::new(2);
        assert!(aff.backward(&g).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let mk = || {
            let mut c = Conv::new(ConvKernel::standard(3, 3, 4, 8, 1, 1));
            c.init(&mut ChaCha8Rng::seed_from_u64(3));
            c
        };
        let a = mk();
        let b = mk();
        assert_eq!(a.kernel, b.kernel);
        let bound = (6.0f32 / 36.0).sqrt();
        assert!(a.kernel.weights.value.data().iter().all(|v| v.abs() <= bound));
        assert!(a.kernel.bias.value.data().iter().all(|&v| v == 0.0));
    }
}
