use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Nearest-neighbour 2x upsampling: `out[n,c,y,x] = in[n,c,y/2,x/2]`.
pub fn upsample_nearest2x(input: &Tensor) -> Tensor {
    let s = input.shape();
    let out_shape = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
    let mut data = Vec::with_capacity(out_shape.numel());
    for plane in input.data().chunks_exact(s.plane()) {
        for row in plane.chunks_exact(s.w) {
            let start = data.len();
            for &v in row {
                data.push(v);
                data.push(v);
            }
            data.extend_from_within(start..start + 2 * s.w);
        }
    }
    Tensor::from_parts(out_shape, data)
}

/// 2x2 average pooling with stride 2. Height and width must be even.
pub fn downsample_avg2x(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::shape(format!("downsample_avg2x needs even spatial dims, got {}x{}", s.h, s.w)));
    }
    let (ho, wo) = (s.h / 2, s.w / 2);
    let out_shape = Shape::new(s.n, s.c, ho, wo);
    let mut data = Vec::with_capacity(out_shape.numel());
    for plane in input.data().chunks_exact(s.plane()) {
        for y in 0..ho {
            let r0 = &plane[2 * y * s.w..(2 * y + 1) * s.w];
            let r1 = &plane[(2 * y + 1) * s.w..(2 * y + 2) * s.w];
            for x in 0..wo {
                let sum = (r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]);
                data.push(sum * 0.25);
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

/// Concatenates along the channel axis, blocks in list order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::arg("concat_channels needs at least one input"))?
        .shape();
    for t in &inputs[1..] {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape(format!("cannot concatenate {s} with {first}: batch/spatial mismatch")));
        }
    }
    let channels = inputs.iter().map(|t| t.channels()).sum();
    let out_shape = Shape::new(first.n, channels, first.h, first.w);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for t in inputs {
            let block = t.channels() * first.plane();
            data.extend_from_slice(&t.data()[n * block..(n + 1) * block]);
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

/// Leaky rectifier: `x` for `x >= 0`, `slope * x` otherwise.
pub fn leaky_relu(input: &Tensor, slope: f32) -> Tensor {
    let data = input
        .data()
        .iter()
        .map(|&v| if v >= 0.0 { v } else { slope * v })
        .collect();
    Tensor::from_parts(input.shape(), data)
}

/// Per-channel `scale[c] * x + shift[c]` (a batch norm folded for inference).
pub fn affine_channel(input: &Tensor, scale: &[f32], shift: &[f32]) -> Result<Tensor> {
    let s = input.shape();
    if scale.len() != s.c || shift.len() != s.c {
        return Err(Error::shape(format!(
            "affine_channel: {} channels but scale/shift lengths {}/{}",
            s.c,
            scale.len(),
            shift.len()
        )));
    }
    let mut data = Vec::with_capacity(s.numel());
    for (i, plane) in input.data().chunks_exact(s.plane()).enumerate() {
        let c = i % s.c;
        data.extend(plane.iter().map(|&v| scale[c] * v + shift[c]));
    }
    Ok(Tensor::from_parts(s, data))
}

/// Element-wise sum of two equally shaped tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("cannot add {} and {}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_parts(a.shape(), data))
}
