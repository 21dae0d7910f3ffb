//! Minimal PNG reading/writing on top of the `png` crate.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder};

use super::DatasetError;

/// Decoded raster with one `u16` per sample (unpacked, not rescaled).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub bit_depth: u8,
    pub indexed: bool,
    pub samples: Vec<u16>,
}

impl RawImage {
    pub fn max_value(&self) -> u16 {
        ((1u32 << self.bit_depth) - 1) as u16
    }
}

fn png_err(path: &Path, err: impl std::fmt::Display) -> DatasetError {
    DatasetError::Png { path: path.to_path_buf(), message: err.to_string() }
}

pub fn read_png(path: &Path) -> Result<RawImage, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let mut reader = Decoder::new(BufReader::new(file)).read_info().map_err(|e| png_err(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let channels = frame.color_type.samples();
    let bits = frame.bit_depth as u8;
    let line = frame.line_size;
    let mut samples = Vec::with_capacity(width * height * channels);
    for row in buf[..line * height].chunks_exact(line) {
        match bits {
            16 => samples.extend(row.chunks_exact(2).take(width * channels).map(|b| u16::from_be_bytes([b[0], b[1]]))),
            8 => samples.extend(row[..width * channels].iter().map(|&b| u16::from(b))),
            b => {
                let per_byte = 8 / b as usize;
                let mask = (1u8 << b) - 1;
                for i in 0..width * channels {
                    let byte = row[i / per_byte];
                    let shift = 8 - b as usize * (i % per_byte + 1);
                    samples.push(u16::from((byte >> shift) & mask));
                }
            }
        }
    }
    Ok(RawImage { height, width, channels, bit_depth: bits, indexed: frame.color_type == ColorType::Indexed, samples })
}

fn encoder<'a>(path: &Path, width: usize, height: usize) -> Result<Encoder<'a, BufWriter<File>>, DatasetError> {
    let file = File::create(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    Ok(Encoder::new(BufWriter::new(file), width as u32, height as u32))
}

fn finish(path: &Path, enc: Encoder<'_, BufWriter<File>>, data: &[u8]) -> Result<(), DatasetError> {
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(data).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

/// 8-bit RGB, interleaved row-major.
pub fn write_rgb8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<(), DatasetError> {
    let mut enc = encoder(path, width, height)?;
    enc.set_color(ColorType::Rgb);
    enc.set_depth(BitDepth::Eight);
    finish(path, enc, data)
}

/// 16-bit single channel.
pub fn write_gray16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<(), DatasetError> {
    let mut enc = encoder(path, width, height)?;
    enc.set_color(ColorType::Grayscale);
    enc.set_depth(BitDepth::Sixteen);
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_be_bytes()).collect();
    finish(path, enc, &bytes)
}

/// Label map: indexed 8-bit when every label fits a palette, 16-bit
/// grayscale otherwise.
pub fn write_labels(path: &Path, width: usize, height: usize, labels: &[u16]) -> Result<(), DatasetError> {
    let max = labels.iter().copied().max().unwrap_or(0);
    if max > 255 {
        return write_gray16(path, width, height, labels);
    }
    let mut enc = encoder(path, width, height)?;
    enc.set_color(ColorType::Indexed);
    enc.set_depth(BitDepth::Eight);
    enc.set_palette(label_palette(max as usize + 1));
    let bytes: Vec<u8> = labels.iter().map(|&v| v as u8).collect();
    finish(path, enc, &bytes)
}

/// Distinct, reproducible display colours; entry 0 is black.
fn label_palette(entries: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(entries * 3);
    for i in 0..entries {
        if i == 0 {
            out.extend([0, 0, 0]);
            continue;
        }
        let hue = (i as f64 * 0.618_033_988_75).fract() * 6.0;
        let x = 1.0 - (hue % 2.0 - 1.0).abs();
        let (r, g, b) = match hue as u32 {
            0 => (1.0, x, 0.0),
            1 => (x, 1.0, 0.0),
            2 => (0.0, 1.0, x),
            3 => (0.0, x, 1.0),
            4 => (x, 0.0, 1.0),
            _ => (1.0, 0.0, x),
        };
        out.extend([r, g, b].map(|v: f64| (55.0 + 200.0 * v).round() as u8));
    }
    out
}
