//! Flow and image file formats.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use image::{ImageBuffer, Luma, Rgb};
use xcaflow_core::color::RgbImage;
use xcaflow_core::{FlowField, ImageTensor, Tensor};

use crate::error::{DataError, UsageError};

pub const FLO_MAGIC: f32 = 202021.25;
const KITTI_OFFSET: f64 = 32768.0;
const KITTI_SCALE: f64 = 64.0;

/// Serializes `[2, H, W]` flow as a Middlebury `.flo` byte stream.
pub fn encode_flo(flow: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = flow.dims3();
    ensure!(c == 2, "flow must have 2 channels, got {c}");
    let n = h * w;
    let mut out = Vec::with_capacity(12 + 8 * n);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&i32::try_from(w)?.to_le_bytes());
    out.extend_from_slice(&i32::try_from(h)?.to_le_bytes());
    let d = flow.data();
    for p in 0..n {
        out.extend_from_slice(&(d[p] as f32).to_le_bytes());
        out.extend_from_slice(&(d[n + p] as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<Tensor> {
    let word = |i: usize| -> Result<[u8; 4]> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|s| s.try_into().unwrap())
            .ok_or_else(|| DataError::new("truncated .flo header").into())
    };
    let magic = f32::from_le_bytes(word(0)?);
    if magic != FLO_MAGIC {
        return Err(DataError::new(format!("bad .flo magic {magic}")).into());
    }
    let (w, h) = (i32::from_le_bytes(word(1)?), i32::from_le_bytes(word(2)?));
    if w <= 0 || h <= 0 {
        return Err(DataError::new(format!("bad .flo size {w}x{h}")).into());
    }
    let (w, h) = (w as usize, h as usize);
    let n = h * w;
    if bytes.len() != 12 + 8 * n {
        return Err(DataError::new(format!("expected {} bytes for {w}x{h} .flo, got {}", 12 + 8 * n, bytes.len())).into());
    }
    let mut data = vec![0.0; 2 * n];
    for (i, chunk) in bytes[12..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        let (p, c) = (i / 2, i % 2);
        data[c * n + p] = v;
    }
    Ok(Tensor::from_vec(&[2, h, w], data))
}

pub fn write_flo(path: &Path, flow: &Tensor) -> Result<()> {
    fs::write(path, encode_flo(flow)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_flo(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| DataError::new(format!("reading {}: {e}", path.display())))?;
    decode_flo(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// KITTI 16-bit PNG: `u = (R - 2^15) / 64`, `v = (G - 2^15) / 64`, valid iff `B > 0`.
pub fn write_kitti_png(path: &Path, flow: &Tensor, valid: &[bool]) -> Result<()> {
    let (c, h, w) = flow.dims3();
    ensure!(c == 2 && valid.len() == h * w, "flow/validity shape mismatch");
    let n = h * w;
    let d = flow.data();
    let q = |v: f64| (v * KITTI_SCALE + KITTI_OFFSET).round().clamp(0.0, 65535.0) as u16;
    let mut buf = Vec::with_capacity(3 * n);
    for p in 0..n {
        buf.extend_from_slice(&[q(d[p]), q(d[n + p]), u16::from(valid[p])]);
    }
    let img: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, buf).context("building KITTI image buffer")?;
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

pub fn read_kitti_png(path: &Path) -> Result<(Tensor, Vec<bool>)> {
    let img = image::open(path).map_err(|e| DataError::new(format!("reading {}: {e}", path.display())))?;
    let img = match img {
        image::DynamicImage::ImageRgb16(i) => i,
        other => bail!(DataError::new(format!(
            "{} is {:?}, expected 16-bit RGB",
            path.display(),
            other.color()
        ))),
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = h * w;
    let mut data = vec![0.0; 2 * n];
    let mut valid = vec![false; n];
    for (p, px) in img.pixels().enumerate() {
        data[p] = (px[0] as f64 - KITTI_OFFSET) / KITTI_SCALE;
        data[n + p] = (px[1] as f64 - KITTI_OFFSET) / KITTI_SCALE;
        valid[p] = px[2] > 0;
    }
    Ok((Tensor::from_vec(&[2, h, w], data), valid))
}

/// Ground-truth or predicted flow with an optional validity mask, chosen by extension.
pub fn read_flow_any(path: &Path) -> Result<(Tensor, Option<Vec<bool>>)> {
    match extension(path).as_str() {
        "flo" => Ok((read_flo(path)?, None)),
        "png" => read_kitti_png(path).map(|(f, v)| (f, Some(v))),
        ext => Err(DataError::new(format!("unsupported flow file extension '{ext}'")).into()),
    }
}

pub fn write_flow_any(path: &Path, flow: &FlowField) -> Result<()> {
    match extension(path).as_str() {
        "flo" => write_flo(path, flow.tensor()),
        "png" => write_kitti_png(path, flow.tensor(), &vec![true; flow.height() * flow.width()]),
        ext => Err(UsageError::new(format!("unsupported flow output extension '{ext}'")).into()),
    }
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Loads an 8-bit image as `[3, H, W]` with values mapped to `[-1, 1]`.
pub fn read_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|e| DataError::new(format!("reading {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = h * w;
    let raw = img.as_raw();
    let t = Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / n, i % n);
        raw[3 * p + c] as f64 / 127.5 - 1.0
    });
    Ok(ImageTensor::new(t)?)
}

/// Inverse of [`read_image`], rounding to 8 bits.
pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    let (c, h, w) = image.dims3();
    ensure!(c == 3, "image must have 3 channels");
    let n = h * w;
    let mut rgb = RgbImage {
        width: w,
        height: h,
        data: vec![0; 3 * n],
    };
    for p in 0..n {
        for ch in 0..3 {
            rgb.data[3 * p + ch] = ((image.data()[ch * n + p] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
        }
    }
    write_rgb(path, &rgb)
}

/// Writes PNG, or binary PPM when the extension is `.ppm`.
pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    if extension(path) == "ppm" {
        let mut f = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
        write!(f, "P6\n{} {}\n255\n", img.width, img.height)?;
        f.write_all(&img.data)?;
        return Ok(f.flush()?);
    }
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, img.data.clone()).context("building RGB buffer")?;
    buf.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Reads a single-channel mask; nonzero pixels are `true`.
pub fn read_mask(path: &Path) -> Result<Vec<bool>> {
    let img = image::open(path)
        .map_err(|e| DataError::new(format!("reading {}: {e}", path.display())))?
        .to_luma8();
    Ok(img.pixels().map(|p| p[0] > 0).collect())
}

pub fn write_mask(path: &Path, mask: &[bool], width: usize, height: usize) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        width as u32,
        height as u32,
        mask.iter().map(|&m| if m { 255 } else { 0 }).collect(),
    )
    .context("mask size mismatch")?;
    buf.save(path).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pixel_flo_is_twenty_bytes() {
        let t = Tensor::from_vec(&[2, 1, 1], vec![1.5, -2.0]);
        let b = encode_flo(&t).unwrap();
        assert_eq!(b.len(), 20);
        assert_eq!(&b[0..4], b"PIEH");
        assert_eq!(decode_flo(&b).unwrap(), t);
    }

    #[test]
    fn bad_magic_is_a_data_error() {
        let mut b = encode_flo(&Tensor::zeros(&[2, 2, 2])).unwrap();
        b[0] = 0;
        let e = decode_flo(&b).unwrap_err();
        assert!(e.downcast_ref::<DataError>().is_some());
        assert!(decode_flo(&b[..10]).is_err());
    }
}
