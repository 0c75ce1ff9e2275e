//! Execution context shared by the model forward passes.
//!
//! [`Exec`] picks the convolution kernel and tallies the floating-point
//! operations actually executed, using the same cost convention as the
//! analytic profiler: `2 * kh * kw * cin * cout * ho * wo` per convolution and
//! one operation per output element for activations, resampling,
//! concatenation and residual adds.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::Result;
use crate::tensor::{self, ConvSpec, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvKernel {
    /// Tiled im2col with a blocked matrix product.
    #[default]
    Blocked,
    /// Direct nested-loop summation; the reference oracle.
    Naive,
}

#[derive(Debug, Default)]
pub struct Exec {
    kernel: ConvKernel,
    flops: AtomicU64,
}

impl Exec {
    pub fn new(kernel: ConvKernel) -> Self {
        Exec {
            kernel,
            flops: AtomicU64::new(0),
        }
    }

    pub fn kernel(&self) -> ConvKernel {
        self.kernel
    }

    /// Operations executed so far.
    pub fn flops(&self) -> u64 {
        self.flops.load(Ordering::Relaxed)
    }

    fn tally(&self, n: usize) {
        self.flops.fetch_add(n as u64, Ordering::Relaxed);
    }

    pub fn conv(&self, x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
        let y = match self.kernel {
            ConvKernel::Blocked => tensor::conv2d(x, spec)?,
            ConvKernel::Naive => tensor::conv2d_naive(x, spec)?,
        };
        let s = y.shape();
        self.tally(2 * spec.kernel.0 * spec.kernel.1 * spec.in_channels * s.numel());
        Ok(y)
    }

    pub fn leaky(&self, x: &Tensor, slope: f32) -> Tensor {
        self.tally(x.shape().numel());
        tensor::leaky_relu(x, slope)
    }

    pub fn up2(&self, x: &Tensor) -> Tensor {
        let y = tensor::upsample_nearest2x(x);
        self.tally(y.shape().numel());
        y
    }

    pub fn down2(&self, x: &Tensor) -> Result<Tensor> {
        let y = tensor::downsample_avg2x(x)?;
        self.tally(y.shape().numel());
        Ok(y)
    }

    pub fn cat(&self, xs: &[&Tensor]) -> Result<Tensor> {
        let y = tensor::concat_channels(xs)?;
        self.tally(y.shape().numel());
        Ok(y)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let y = tensor::add(a, b)?;
        self.tally(y.shape().numel());
        Ok(y)
    }
}
