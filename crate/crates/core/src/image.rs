//! Binary PPM (`P6`, maxval 255) reading and writing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Side lengths the detector accepts must be multiples of this.
pub const SIZE_MULTIPLE: usize = 32;

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::input("truncated PPM header"));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Decodes a P6 image into a `1 x 3 x H x W` tensor scaled to `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    if magic != "P6" {
        return Err(Error::input(format!("bad PPM magic `{magic}`, expected P6")));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = header_token(bytes, &mut pos)?;
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::input(format!("bad PPM {what} `{t}`")))
    };
    let w = num("width")?;
    let h = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(Error::input(format!("unsupported PPM maxval {maxval}, expected 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = w * h * 3;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < need {
        return Err(Error::input(format!(
            "truncated PPM pixel data: {} of {need} bytes",
            raster.len()
        )));
    }
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in raster[..need].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = f32::from(px[c]) / 255.0;
        }
    }
    Tensor::new(Shape::new(1, 3, h, w), data)
}

/// Encodes a `1 x 3 x H x W` tensor, rounding `255 * v` after clamping to `[0, 1]`.
pub fn encode_ppm(t: &Tensor) -> Result<Vec<u8>> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape(format!("PPM needs a 1x3xHxW tensor, got {s}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    let plane = s.plane();
    for i in 0..plane {
        for c in 0..3 {
            out.push((t.data()[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Zero-pads the bottom and right edges up to multiples of `multiple`.
pub fn pad_to_multiple(t: &Tensor, multiple: usize) -> Tensor {
    let s = t.shape();
    let up = |v: usize| v.div_ceil(multiple) * multiple;
    let (h, w) = (up(s.h), up(s.w));
    if (h, w) == (s.h, s.w) {
        return t.clone();
    }
    Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| {
        if y < s.h && x < s.w {
            t.get(n, c, y, x)
        } else {
            0.0
        }
    })
    .expect("padded shape is valid")
}

/// Reads a PPM for the detector. Without `pad`, sides that are not multiples
/// of 32 are rejected.
pub fn load_image_ppm(path: &Path, pad: bool) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let t = decode_ppm(&bytes).map_err(|e| match e {
        Error::Input(m) => Error::input(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if pad {
        return Ok(pad_to_multiple(&t, SIZE_MULTIPLE));
    }
    let s = t.shape();
    if s.h % SIZE_MULTIPLE != 0 || s.w % SIZE_MULTIPLE != 0 {
        return Err(Error::input(format!(
            "{}: image is {}x{}, sides must be multiples of {SIZE_MULTIPLE} (use --pad)",
            path.display(),
            s.w,
            s.h
        )));
    }
    Ok(t)
}

pub fn save_image_ppm(path: &Path, t: &Tensor) -> Result<()> {
    crate::write_atomic(path, &encode_ppm(t)?)
}
