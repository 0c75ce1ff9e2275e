use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// A 2-D cross-correlation with zero padding, borrowing its parameters.
///
/// `weights` is laid out `(out_channels, in_channels, kh, kw)`.
#[derive(Debug, Clone, Copy)]
pub struct ConvSpec<'a> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub weights: &'a [f32],
    pub bias: &'a [f32],
}

impl<'a> ConvSpec<'a> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        weights: &'a [f32],
        bias: &'a [f32],
    ) -> Result<Self> {
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights,
            bias,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Square kernel, equal stride and padding on both axes.
    pub fn square(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weights: &'a [f32],
        bias: &'a [f32],
    ) -> Result<Self> {
        Self::new(
            in_channels,
            out_channels,
            (kernel, kernel),
            (stride, stride),
            (padding, padding),
            weights,
            bias,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::shape("convolution channel counts must be >= 1"));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::shape("convolution kernel must be >= 1 in each axis"));
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::shape("convolution stride must be >= 1 in each axis"));
        }
        let expected = self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1;
        if self.weights.len() != expected {
            return Err(Error::shape(format!(
                "conv weights have {} values, expected {expected} ({}x{}x{}x{})",
                self.weights.len(),
                self.out_channels,
                self.in_channels,
                self.kernel.0,
                self.kernel.1
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::shape(format!(
                "conv bias has {} values, expected {}",
                self.bias.len(),
                self.out_channels
            )));
        }
        Ok(())
    }

    /// Checks `input` against the spec and returns the output spatial dims.
    fn check_input(&self, input: &Tensor) -> Result<(usize, usize)> {
        self.validate()?;
        let s = input.shape();
        if s.c != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, s.c
            )));
        }
        conv_output_dims(s.h, s.w, self.kernel, self.stride, self.padding)
    }
}

/// Output `(height, width)` of a convolution, `(h + 2p - k) / s + 1` per axis.
///
/// The division must be exact; a stride that does not tile the padded input
/// is rejected rather than silently truncated.
pub fn conv_output_dims(
    h: usize,
    w: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(usize, usize)> {
    let axis = |size: usize, k: usize, s: usize, p: usize, name: &str| -> Result<usize> {
        let padded = size + 2 * p;
        if padded < k {
            return Err(Error::shape(format!(
                "{name}: padded extent {padded} is smaller than kernel {k}"
            )));
        }
        if (padded - k) % s != 0 {
            return Err(Error::shape(format!(
                "{name}: ({size} + 2*{p} - {k}) is not divisible by stride {s}"
            )));
        }
        Ok((padded - k) / s + 1)
    };
    Ok((
        axis(h, kernel.0, stride.0, padding.0, "height")?,
        axis(w, kernel.1, stride.1, padding.1, "width")?,
    ))
}

/// Output positions processed per tile; the column tile is `K x TILE`.
const TILE: usize = 256;
/// Output channels accumulated together so each column row is read once per block.
const OC_BLOCK: usize = 4;

/// Convolution via tiled im2col and a register-blocked matrix product.
///
/// Each output element accumulates its `in_channels * kh * kw` products in
/// the same order as [`conv2d_naive`], starting from zero and adding the bias
/// last, so the two agree bit-for-bit.
pub fn conv2d(input: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let (ho, wo) = spec.check_input(input)?;
    let s = input.shape();
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let k_len = cin * spec.kernel.0 * spec.kernel.1;
    let p_len = ho * wo;
    let out_shape = Shape::new(s.n, cout, ho, wo);

    let mut out = vec![0.0f32; out_shape.numel()];
    let mut col = vec![0.0f32; k_len * TILE.min(p_len)];
    let mut acc = vec![0.0f32; OC_BLOCK * TILE.min(p_len)];

    let in_batch = cin * s.plane();
    for n in 0..s.n {
        let x = &input.data()[n * in_batch..(n + 1) * in_batch];
        let out_n = &mut out[n * cout * p_len..(n + 1) * cout * p_len];
        let mut p0 = 0;
        while p0 < p_len {
            let tp = TILE.min(p_len - p0);
            fill_columns(&mut col[..k_len * tp], x, s, spec, wo, p0, tp);
            let mut oc = 0;
            while oc < cout {
                let nb = OC_BLOCK.min(cout - oc);
                let acc = &mut acc[..nb * tp];
                acc.fill(0.0);
                for k in 0..k_len {
                    let row = &col[k * tp..(k + 1) * tp];
                    for b in 0..nb {
                        let wv = spec.weights[(oc + b) * k_len + k];
                        let lane = &mut acc[b * tp..(b + 1) * tp];
                        for (a, &r) in lane.iter_mut().zip(row) {
                            *a += r * wv;
                        }
                    }
                }
                for b in 0..nb {
                    let bias = spec.bias[oc + b];
                    let dst = &mut out_n[(oc + b) * p_len + p0..(oc + b) * p_len + p0 + tp];
                    for (d, &a) in dst.iter_mut().zip(&acc[b * tp..(b + 1) * tp]) {
                        *d = a + bias;
                    }
                }
                oc += nb;
            }
            p0 += tp;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Unrolls the receptive fields of output positions `[p0, p0 + tp)` into
/// `col`, one row per `(ic, ky, kx)`; padding positions are written as zero.
fn fill_columns(col: &mut [f32], x: &[f32], s: Shape, spec: &ConvSpec, wo: usize, p0: usize, tp: usize) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let plane = s.plane();
    for ic in 0..spec.in_channels {
        let xc = &x[ic * plane..(ic + 1) * plane];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ic * kh + ky) * kw + kx) * tp;
                let dst = &mut col[row..row + tp];
                for (j, d) in dst.iter_mut().enumerate() {
                    let p = p0 + j;
                    let iy = (p / wo * sh + ky) as isize - ph as isize;
                    let ix = (p % wo * sw + kx) as isize - pw as isize;
                    *d = if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                        xc[iy as usize * s.w + ix as usize]
                    } else {
                        0.0
                    };
                }
            }
        }
    }
}

/// Reference convolution: literal nested-loop direct summation.
///
/// This is the oracle for [`conv2d`] and deliberately shares none of its
/// indexing or accumulation code.
pub fn conv2d_naive(input: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let (ho, wo) = spec.check_input(input)?;
    let s = input.shape();
    let (kh, kw) = spec.kernel;
    let out_shape = Shape::new(s.n, spec.out_channels, ho, wo);
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        for oc in 0..spec.out_channels {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut sum = 0.0f32;
                    for ic in 0..spec.in_channels {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * spec.stride.0 + ky) as isize - spec.padding.0 as isize;
                                let ix = (ox * spec.stride.1 + kx) as isize - spec.padding.1 as isize;
                                let v = if iy < 0 || ix < 0 || iy as usize >= s.h || ix as usize >= s.w {
                                    0.0
                                } else {
                                    input.get(n, ic, iy as usize, ix as usize)
                                };
                                let wgt = spec.weights[((oc * spec.in_channels + ic) * kh + ky) * kw + kx];
                                sum += v * wgt;
                            }
                        }
                    }
                    out.push(sum + spec.bias[oc]);
                }
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_kernel_picks_channel_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, Shape::new(1, 3, 5, 5));
        let (w, b) = ([1.0, 0.0, 0.0], [0.0]);
        let spec = ConvSpec::square(3, 1, 1, 1, 0, &w, &b).unwrap();
        let y = conv2d(&x, &spec).unwrap();
        assert!(y.bit_eq(&x.slice_channels(0, 1).unwrap()));
    }

    #[test]
    fn zero_input_yields_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::zeros(Shape::new(1, 4, 8, 8)).unwrap();
        let w = random_vec(&mut rng, 3 * 4 * 9);
        let b = [0.5, -1.25, 3.0];
        let spec = ConvSpec::square(4, 3, 3, 1, 1, &w, &b).unwrap();
        let y = conv2d(&x, &spec).unwrap();
        for c in 0..3 {
            for yy in 0..8 {
                for xx in 0..8 {
                    assert_eq!(y.get(0, c, yy, xx), b[c]);
                }
            }
        }
    }

    #[test]
    fn naive_scalar_and_counting_cases() {
        let x = Tensor::new(Shape::new(1, 1, 1, 1), vec![3.0]).unwrap();
        let spec = ConvSpec::square(1, 1, 1, 1, 0, &[2.0], &[0.5]).unwrap();
        assert_eq!(conv2d_naive(&x, &spec).unwrap().data(), &[6.5]);

        let ones = Tensor::full(Shape::new(1, 1, 3, 3), 1.0).unwrap();
        let w = [1.0; 9];
        let spec = ConvSpec::square(1, 1, 3, 1, 0, &w, &[0.0]).unwrap();
        let y = conv2d_naive(&ones, &spec).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn seeded_3x3_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, Shape::new(1, 4, 16, 16));
        let w = random_vec(&mut rng, 8 * 4 * 9);
        let b = random_vec(&mut rng, 8);
        let spec = ConvSpec::square(4, 8, 3, 1, 1, &w, &b).unwrap();
        let fast = conv2d(&x, &spec).unwrap();
        let slow = conv2d_naive(&x, &spec).unwrap();
        assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_in_input_when_bias_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = Shape::new(1, 3, 9, 9);
        let u = random_tensor(&mut rng, shape);
        let v = random_tensor(&mut rng, shape);
        let w = random_vec(&mut rng, 5 * 3 * 9);
        let b = [0.0; 5];
        let spec = ConvSpec::square(3, 5, 3, 2, 1, &w, &b).unwrap();
        let (alpha, beta) = (0.7f32, -1.3f32);
        let mix = Tensor::new(
            shape,
            u.data().iter().zip(v.data()).map(|(a, b)| alpha * a + beta * b).collect(),
        )
        .unwrap();
        let lhs = conv2d(&mix, &spec).unwrap();
        let cu = conv2d(&u, &spec).unwrap();
        let cv = conv2d(&v, &spec).unwrap();
        for ((l, a), b) in lhs.data().iter().zip(cu.data()).zip(cv.data()) {
            let rhs = alpha * a + beta * b;
            assert!((l - rhs).abs() <= 1e-5 * (1.0 + rhs.abs()), "{l} vs {rhs}");
        }
    }

    #[test]
    fn errors_on_channel_mismatch_and_ragged_stride() {
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4)).unwrap();
        let w = [0.0; 9];
        let spec = ConvSpec::square(1, 1, 3, 1, 1, &w, &[0.0]).unwrap();
        assert!(matches!(conv2d(&x, &spec), Err(Error::Shape(_))));

        let x = Tensor::zeros(Shape::new(1, 1, 4, 4)).unwrap();
        let spec = ConvSpec::square(1, 1, 3, 2, 1, &w, &[0.0]).unwrap();
        assert!(matches!(conv2d(&x, &spec), Err(Error::Shape(_))));
        assert!(matches!(conv2d_naive(&x, &spec), Err(Error::Shape(_))));
        assert!(ConvSpec::square(1, 1, 3, 1, 1, &w[..8], &[0.0]).is_err());
        assert!(ConvSpec::square(1, 1, 3, 0, 1, &w, &[0.0]).is_err());
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, Shape::new(2, 6, 12, 10));
        let w = random_vec(&mut rng, 7 * 6 * 9);
        let b = random_vec(&mut rng, 7);
        let spec = ConvSpec::square(6, 7, 3, 1, 1, &w, &b).unwrap();
        assert!(conv2d(&x, &spec).unwrap().bit_eq(&conv2d(&x, &spec).unwrap()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn output_dims_follow_formula(
            kh in 1usize..4, kw in 1usize..4,
            sh in 1usize..3, sw in 1usize..3,
            ph in 0usize..2, pw in 0usize..2,
            oh in 1usize..6, ow in 1usize..6,
            cin in 1usize..4, cout in 1usize..4,
            seed in any::<u64>(),
        ) {
            // Choose the input so the spec is legal by construction.
            let h = (oh - 1) * sh + kh;
            let w = (ow - 1) * sw + kw;
            prop_assume!(h > 2 * ph && w > 2 * pw);
            let (h, w) = (h - 2 * ph, w - 2 * pw);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_tensor(&mut rng, Shape::new(1, cin, h, w));
            let wt = random_vec(&mut rng, cout * cin * kh * kw);
            let b = random_vec(&mut rng, cout);
            let spec = ConvSpec::new(cin, cout, (kh, kw), (sh, sw), (ph, pw), &wt, &b).unwrap();
            let y = conv2d(&x, &spec).unwrap();
            prop_assert_eq!(y.shape(), Shape::new(1, cout, oh, ow));
            prop_assert!(y.bit_eq(&conv2d_naive(&x, &spec).unwrap()));
        }
    }
}
