use alloc::string::String;

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;
use crate::math;

fn uniform_tensor<R: Rng + ?Sized>(rng: &mut R, shape: [usize; 4], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Convolution layer `(out_c, in_c, k, k)` with bias.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Registers `<name>.w` / `<name>.b`, uniform in `±sqrt(1 / fan_in)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = math::sqrt(1.0 / (in_c * k * k) as f64);
        let weight = store.add(join(name, "w"), uniform_tensor(rng, [out_c, in_c, k, k], bound))?;
        let bias = store.add(join(name, "b"), uniform_tensor(rng, [1, out_c, 1, 1], bound))?;
        Ok(Conv {
            weight,
            bias,
            stride,
            pad,
        })
    }

    /// Same-padded 3x3 convolution.
    pub fn same3<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, rng: &mut R) -> Result<Self> {
        Self::new(store, name, in_c, out_c, 3, 1, 1, rng)
    }

    /// 3x3 stride-2 downsampling convolution.
    pub fn down3<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, rng: &mut R) -> Result<Self> {
        Self::new(store, name, in_c, out_c, 3, 2, 1, rng)
    }

    pub fn pointwise<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, rng: &mut R) -> Result<Self> {
        Self::new(store, name, in_c, out_c, 1, 1, 0, rng)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p[self.weight], Some(p[self.bias]), self.stride, self.pad)
    }
}

/// Transposed convolution `(in_c, out_c, k, k)` with bias.
#[derive(Debug, Clone, Copy)]
pub struct ConvTranspose {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose {
    /// Registers `<name>.w` / `<name>.b`. Each output pixel receives about
    /// `in_c * (k / stride)^2` taps, which sets the init bound.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let taps = (in_c * k * k) as f64 / (stride * stride) as f64;
        let bound = math::sqrt(1.0 / taps.max(1.0));
        let weight = store.add(join(name, "w"), uniform_tensor(rng, [in_c, out_c, k, k], bound))?;
        let bias = store.add(join(name, "b"), uniform_tensor(rng, [1, out_c, 1, 1], bound))?;
        Ok(ConvTranspose {
            weight,
            bias,
            stride,
            pad,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv_transpose2d(x, p[self.weight], Some(p[self.bias]), self.stride, self.pad)
    }
}

fn join(prefix: &str, leaf: &str) -> String {
    let mut s = String::with_capacity(prefix.len() + leaf.len() + 1);
    s.push_str(prefix);
    s.push('.');
    s.push_str(leaf);
    s
}
