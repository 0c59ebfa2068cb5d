//! 8-bit PNG storage for renders, dataset frames and masks.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

#[inline]
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn from_u8(v: u8) -> f64 {
    v as f64 / 255.0
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::format(path, e))?;
    w.write_image_data(data).map_err(|e| Error::format(path, e))?;
    w.finish().map_err(|e| Error::format(path, e))
}

/// Decoded 8-bit image: width, height, channels, samples.
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn read_png(path: &Path) -> Result<RawImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e))?;
    let channels = info.color_type.samples();
    buf.truncate(info.buffer_size());
    Ok(RawImage {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        data: buf,
    })
}

/// Premultiplied RGB plus coverage as RGBA.
pub fn write_rgba(path: &Path, width: usize, height: usize, rgb: &[f64], alpha: &[f64]) -> Result<()> {
    let mut data = Vec::with_capacity(4 * width * height);
    for (p, a) in rgb.chunks_exact(3).zip(alpha) {
        data.extend(p.iter().map(|v| to_u8(*v)));
        data.push(to_u8(*a));
    }
    write_png(path, width, height, png::ColorType::Rgba, &data)
}

pub fn write_rgb(path: &Path, width: usize, height: usize, rgb: &[f64]) -> Result<()> {
    let data: Vec<u8> = rgb.iter().map(|v| to_u8(*v)).collect();
    write_png(path, width, height, png::ColorType::Rgb, &data)
}

/// Image as `[0, 1]` RGB and alpha; images without alpha are opaque.
pub struct Rgba {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
    pub alpha: Vec<f64>,
}

pub fn read_rgba(path: &Path) -> Result<Rgba> {
    let img = read_png(path)?;
    let n = img.width * img.height;
    let mut rgb = Vec::with_capacity(3 * n);
    let mut alpha = Vec::with_capacity(n);
    for px in img.data.chunks_exact(img.channels) {
        match img.channels {
            1 | 2 => rgb.extend([from_u8(px[0]); 3]),
            _ => rgb.extend(px[..3].iter().map(|v| from_u8(*v))),
        }
        alpha.push(match img.channels {
            2 => from_u8(px[1]),
            4 => from_u8(px[3]),
            _ => 1.0,
        });
    }
    Ok(Rgba {
        width: img.width,
        height: img.height,
        rgb,
        alpha,
    })
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let data: Vec<u8> = mask.iter().map(|m| if *m { 255 } else { 0 }).collect();
    write_png(path, width, height, png::ColorType::Grayscale, &data)
}

/// Nonzero first channel means set.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = read_png(path)?;
    let mask = img.data.chunks_exact(img.channels).map(|p| p[0] > 0).collect();
    Ok((img.width, img.height, mask))
}
