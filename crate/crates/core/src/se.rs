//! Squeeze-and-Excitation channel attention.
//!
//! Each channel is squeezed to its spatial mean, passed through a bottleneck
//! `C -> C/r -> C` with ReLU in between, and the sigmoid of the result rescales
//! the channel.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{init_fan_in, join, HasParams};
use crate::tensor::{self, sigmoid_scalar, Param, Tensor};

pub const DEFAULT_REDUCTION: usize = 4;

#[derive(Debug, Clone)]
pub struct SeBlock {
    channels: usize,
    reduction: usize,
    /// `(C/r, C)`
    pub w1: Param,
    pub b1: Param,
    /// `(C, C/r)`
    pub w2: Param,
    pub b2: Param,
    saved: Option<SeCache>,
}

#[derive(Debug, Clone)]
struct SeCache {
    input: Tensor,
    squeezed: Tensor,
    hidden_pre: Vec<Vec<f32>>,
    hidden: Vec<Vec<f32>>,
    gates: Vec<Vec<f32>>,
}

/// Gradients from [`SeBlock::backward_pure`].
#[derive(Debug, Clone)]
pub struct SeGrads {
    pub input: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl SeBlock {
    /// Zero-initialized block. Fails unless `reduction` divides `channels`.
    pub fn new(channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::InvalidArgument(format!(
                "SE reduction ratio {reduction} must divide channel count {channels}"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            channels,
            reduction,
            w1: Param::new(Tensor::zeros(&[hidden, channels])),
            b1: Param::new(Tensor::zeros(&[hidden])),
            w2: Param::new(Tensor::zeros(&[channels, hidden])),
            b2: Param::new(Tensor::zeros(&[channels])),
            saved: None,
        })
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        init_fan_in(&mut self.w1, self.channels, rng);
        let hidden = self.hidden();
        init_fan_in(&mut self.w2, hidden, rng);
        self.b1.value.fill(0.0);
        self.b2.value.fill(0.0);
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn check(&self, input: &Tensor) -> Result<(usize, usize, usize, usize)> {
        let dims = input.dims4()?;
        if dims.3 != self.channels {
            return Err(Error::shape(
                "se_forward",
                format!("{} channels", self.channels),
                tensor::shape_str(input.shape()),
            ));
        }
        Ok(dims)
    }

    fn run(&self, input: &Tensor) -> Result<(Tensor, SeCache)> {
        let (n, _, _, c) = self.check(input)?;
        let squeezed = tensor::global_avg_pool(input)?;
        let mut hidden_pre = Vec::with_capacity(n);
        let mut hidden = Vec::with_capacity(n);
        let mut gates = Vec::with_capacity(n);
        for b in 0..n {
            let s = &squeezed.data()[b * c..(b + 1) * c];
            let z1 = tensor::fully_connected(s, &self.w1.value, self.b1.value.data())?;
            let h: Vec<f32> = z1.iter().map(|v| v.max(0.0)).collect();
            let z2 = tensor::fully_connected(&h, &self.w2.value, self.b2.value.data())?;
            gates.push(z2.into_iter().map(sigmoid_scalar).collect::<Vec<_>>());
            hidden_pre.push(z1);
            hidden.push(h);
        }
        let mut out = input.clone();
        let per_item = out.len() / n;
        for (b, item) in out.data_mut().chunks_exact_mut(per_item).enumerate() {
            for px in item.chunks_exact_mut(c) {
                for (v, g) in px.iter_mut().zip(&gates[b]) {
                    *v *= g;
                }
            }
        }
        let cache = SeCache {
            input: input.clone(),
            squeezed,
            hidden_pre,
            hidden,
            gates,
        };
        Ok((out, cache))
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.run(input).map(|(out, _)| out)
    }

    /// Per-item channel gates `sigmoid(W2 relu(W1 s + b1) + b2)`.
    pub fn gates(&self, input: &Tensor) -> Result<Vec<Vec<f32>>> {
        self.run(input).map(|(_, cache)| cache.gates)
    }

    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let (out, cache) = self.run(input)?;
        self.saved = Some(cache);
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self.saved.take().ok_or(Error::NoForward("se_block"))?;
        let grads = self.backward_from(&cache, upstream)?;
        self.w1.grad.add_assign(&grads.w1)?;
        self.b1.grad.add_assign(&grads.b1)?;
        self.w2.grad.add_assign(&grads.w2)?;
        self.b2.grad.add_assign(&grads.b2)?;
        Ok(grads.input)
    }

    /// Gradients for `input` and every block parameter without touching stored state.
    pub fn backward_pure(&self, input: &Tensor, upstream: &Tensor) -> Result<SeGrads> {
        let (_, cache) = self.run(input)?;
        self.backward_from(&cache, upstream)
    }

    fn backward_from(&self, cache: &SeCache, upstream: &Tensor) -> Result<SeGrads> {
        let input = &cache.input;
        if upstream.shape() != input.shape() {
            return Err(Error::shape(
                "se_backward",
                tensor::shape_str(input.shape()),
                tensor::shape_str(upstream.shape()),
            ));
        }
        let (n, h, w, c) = input.dims4()?;
        let hidden = self.hidden();
        let per_item = h * w * c;

        let mut dx = vec![0.0f32; input.len()];
        let mut dw1 = Tensor::zeros(self.w1.value.shape());
        let mut db1 = Tensor::zeros(&[hidden]);
        let mut dw2 = Tensor::zeros(self.w2.value.shape());
        let mut db2 = Tensor::zeros(&[c]);
        let mut dsqueezed = vec![0.0f32; n * c];

        for b in 0..n {
            let gates = &cache.gates[b];
            let x = &input.data()[b * per_item..(b + 1) * per_item];
            let g = &upstream.data()[b * per_item..(b + 1) * per_item];
            let dxi = &mut dx[b * per_item..(b + 1) * per_item];

            // out = x * gate: direct path and gate gradient
            let mut dgate = vec![0.0f32; c];
            for ((xp, gp), dp) in x.chunks_exact(c).zip(g.chunks_exact(c)).zip(dxi.chunks_exact_mut(c)) {
                for k in 0..c {
                    dgate[k] += gp[k] * xp[k];
                    dp[k] = gp[k] * gates[k];
                }
            }
            let dz2: Vec<f32> = dgate
                .iter()
                .zip(gates)
                .map(|(d, s)| d * s * (1.0 - s))
                .collect();
            let fc2 = tensor::fully_connected_backward(&cache.hidden[b], &self.w2.value, &dz2)?;
            dw2.add_assign(&fc2.weights)?;
            for (acc, v) in db2.data_mut().iter_mut().zip(&fc2.bias) {
                *acc += v;
            }
            let dz1: Vec<f32> = fc2
                .input
                .iter()
                .zip(&cache.hidden_pre[b])
                .map(|(d, &z)| if z > 0.0 { *d } else { 0.0 })
                .collect();
            let s = &cache.squeezed.data()[b * c..(b + 1) * c];
            let fc1 = tensor::fully_connected_backward(s, &self.w1.value, &dz1)?;
            dw1.add_assign(&fc1.weights)?;
            for (acc, v) in db1.data_mut().iter_mut().zip(&fc1.bias) {
                *acc += v;
            }
            dsqueezed[b * c..(b + 1) * c].copy_from_slice(&fc1.input);
        }

        let dsq = Tensor::new(&[n, 1, 1, c], dsqueezed)?;
        let mut dinput = Tensor::new(input.shape(), dx)?;
        dinput.add_assign(&tensor::global_avg_pool_backward(input.shape(), &dsq)?)?;
        Ok(SeGrads {
            input: dinput,
            w1: dw1,
            b1: db1,
            w2: dw2,
            b2: db2,
        })
    }
}

impl HasParams for SeBlock {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "w1"), &self.w1));
        out.push((join(prefix, "b1"), &self.b1));
        out.push((join(prefix, "w2"), &self.w2));
        out.push((join(prefix, "b2"), &self.b2));
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "w1"), &mut self.w1));
        out.push((join(prefix, "b1"), &mut self.b1));
        out.push((join(prefix, "w2"), &mut self.w2));
        out.push((join(prefix, "b2"), &mut self.b2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reduction_must_divide() {
        assert!(SeBlock::new(64, 4).is_ok());
        assert!(SeBlock::new(10, 4).is_err());
        assert!(SeBlock::new(8, 0).is_err());
        assert_eq!(SeBlock::new(256, 4).unwrap().hidden(), 64);
    }

    #[test]
    fn zero_weights_halve_input() {
        let se = SeBlock::new(3, 1).unwrap();
        let x = Tensor::from_fn(&[2, 3, 3, 3], |i| i as f32 - 20.0);
        let y = se.forward(&x).unwrap();
        assert_eq!(y, x.map(|v| v * 0.5));
    }

    #[test]
    fn shape_preserved_at_table_size() {
        let mut se = SeBlock::new(64, 4).unwrap();
        se.init(&mut ChaCha8Rng::seed_from_u64(1));
        let x = Tensor::filled(&[1, 112, 112, 64], 0.1);
        assert_eq!(se.forward(&x).unwrap().shape(), &[1, 112, 112, 64]);
    }

    #[test]
    fn single_channel_closed_form() {
        let mut se = SeBlock::new(1, 1).unwrap();
        se.w1.value.data_mut()[0] = 1.0;
        se.w2.value.data_mut()[0] = 1.0;
        let x = Tensor::filled(&[1, 4, 4, 1], 2.0);
        let y = se.forward(&x).unwrap();
        let expected = 2.0 / (1.0 + (-2.0f64).exp());
        for &v in y.data() {
            assert!((v as f64 - expected).abs() < 1e-6);
        }
        assert!((expected - 1.7616).abs() < 1e-4);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let se = SeBlock::new(4, 2).unwrap();
        assert!(se.forward(&Tensor::zeros(&[1, 2, 2, 3])).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut se = SeBlock::new(4, 2).unwrap();
        se.init(&mut ChaCha8Rng::seed_from_u64(9));
        let x = Tensor::from_fn(&[1, 4, 4, 4], |i| (i as f32 * 0.37).sin());
        let g = se.backward_pure(&x, &Tensor::zeros(x.shape())).unwrap();
        for t in [&g.input, &g.w1, &g.b1, &g.w2, &g.b2] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn b2_gradient_chain_rule() {
        // d(sum out)/d b2[c] = sum_hw F_c * s_c (1 - s_c)
        let mut se = SeBlock::new(4, 2).unwrap();
        se.init(&mut ChaCha8Rng::seed_from_u64(4));
        let x = Tensor::from_fn(&[1, 3, 3, 4], |i| (i as f32 * 0.21).cos());
        let gates = se.gates(&x).unwrap().remove(0);
        let grads = se.backward_pure(&x, &Tensor::filled(x.shape(), 1.0)).unwrap();
        for c in 0..4 {
            let sum: f32 = x.data().iter().skip(c).step_by(4).sum();
            let expected = sum * gates[c] * (1.0 - gates[c]);
            assert!((grads.b2.data()[c] - expected).abs() < 1e-5);
        }
    }
}
