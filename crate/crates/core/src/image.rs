//! Float RGB images and the PFM / PNG file formats.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use glam::DVec3;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("i/o error on {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed PFM: {0}")]
    Pfm(String),
    #[error("PNG encoding failed: {0}")]
    Png(String),
    #[error("image size mismatch: expected {expected} values, got {actual}")]
    Size { expected: usize, actual: usize },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ImageError + '_ {
    move |source| ImageError::Io { path: path.to_path_buf(), source }
}

/// Row-major RGB image, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<DVec3>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![DVec3::ZERO; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: DVec3) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<DVec3>) -> Result<Self, ImageError> {
        if pixels.len() != width * height {
            return Err(ImageError::Size { expected: width * height, actual: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> DVec3 {
        self.pixels[y * self.width + x]
    }

    pub fn same_shape(&self, other: &RgbImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|p| p.is_finite())
    }

    pub fn mean(&self) -> DVec3 {
        if self.pixels.is_empty() {
            return DVec3::ZERO;
        }
        self.pixels.iter().copied().sum::<DVec3>() / self.pixels.len() as f64
    }

    /// Mean absolute difference over all channels.
    pub fn mean_abs_diff(&self, other: &RgbImage) -> f64 {
        assert!(self.same_shape(other));
        let sum: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (*a - *b).abs().element_sum())
            .sum();
        sum / (3 * self.pixels.len()).max(1) as f64
    }

    /// Interleaved f32 samples, row 0 first.
    pub fn to_f32(&self) -> Vec<f32> {
        self.pixels.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect()
    }

    pub fn from_f32(width: usize, height: usize, data: &[f32]) -> Result<Self, ImageError> {
        if data.len() != width * height * 3 {
            return Err(ImageError::Size { expected: width * height * 3, actual: data.len() });
        }
        let pixels = data
            .chunks_exact(3)
            .map(|c| DVec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
            .collect();
        Ok(Self { width, height, pixels })
    }

    pub fn write_pfm(&self, path: &Path) -> Result<(), ImageError> {
        Pfm { width: self.width, height: self.height, channels: 3, data: self.to_f32() }.write(path)
    }

    pub fn read_pfm(path: &Path) -> Result<Self, ImageError> {
        let pfm = Pfm::read(path)?;
        if pfm.channels != 3 {
            return Err(ImageError::Pfm(format!("{}: expected a color (PF) map", path.display())));
        }
        Self::from_f32(pfm.width, pfm.height, &pfm.data)
    }

    /// Writes values already in display encoding as 8-bit RGB.
    pub fn write_png(&self, path: &Path) -> Result<(), ImageError> {
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .flat_map(|p| [quantize_u8(p.x), quantize_u8(p.y), quantize_u8(p.z)])
            .collect();
        write_png(path, self.width, self.height, png::ColorType::Rgb, &bytes)
    }
}

/// Linear radiance image plus the primary-ray hit mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    pub rgb: RgbImage,
    pub mask: Vec<bool>,
}

impl LinearImage {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }

    pub fn hit_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Maps [0,1] to 0..=255 with round-to-nearest.
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    bytes: &[u8],
) -> Result<(), ImageError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| ImageError::Png(e.to_string()))?;
    writer.write_image_data(bytes).map_err(|e| ImageError::Png(e.to_string()))?;
    writer.finish().map_err(|e| ImageError::Png(e.to_string()))
}

/// Decodes an 8-bit PNG into raw interleaved bytes; returns (width, height, channels, bytes).
pub fn read_png(path: &Path) -> Result<(usize, usize, usize, Vec<u8>), ImageError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let decoder = png::Decoder::new(io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| ImageError::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| ImageError::Png(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    Ok((info.width as usize, info.height as usize, channels, buf))
}

/// A Portable Float Map: `PF` (RGB) or `Pf` (grayscale).
///
/// `data` is interleaved and stored top row first; the file itself is
/// written bottom row first as the format requires.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "PF" } else { "Pf" };
        let mut out = format!("{magic}\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        let row = self.width * self.channels;
        out.reserve(self.data.len() * 4);
        for y in (0..self.height).rev() {
            for v in &self.data[y * row..(y + 1) * row] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ImageError> {
        // Header: three whitespace-separated tokens groups, each terminated by a newline.
        let mut pos = 0;
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::Pfm("truncated header".into()));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the scale from the raster
        pos += 1;
        let channels = match tokens[0].as_str() {
            "PF" => 3,
            "Pf" => 1,
            other => return Err(ImageError::Pfm(format!("bad magic {other:?}"))),
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|_| ImageError::Pfm(format!("bad dimension {s:?}")));
        let width = parse(&tokens[1])?;
        let height = parse(&tokens[2])?;
        let scale: f32 = tokens[3].parse().map_err(|_| ImageError::Pfm(format!("bad scale {:?}", tokens[3])))?;
        if scale == 0.0 || !scale.is_finite() {
            return Err(ImageError::Pfm("scale must be non-zero".into()));
        }
        let little = scale < 0.0;
        let count = width * height * channels;
        let raster = bytes.get(pos..).unwrap_or(&[]);
        if raster.len() < count * 4 {
            return Err(ImageError::Pfm(format!("expected {} raster bytes, found {}", count * 4, raster.len())));
        }
        let mut data = vec![0f32; count];
        let row = width * channels;
        for (i, chunk) in raster[..count * 4].chunks_exact(4).enumerate() {
            let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            let file_row = i / row;
            let y = height - 1 - file_row;
            data[y * row + i % row] = v;
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn write(&self, path: &Path) -> Result<(), ImageError> {
        let mut file = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
        file.write_all(&self.encode()).map_err(io_err(path))?;
        file.flush().map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, ImageError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_rows_are_stored_bottom_first() {
        let pfm = Pfm { width: 1, height: 2, channels: 1, data: vec![1.0, 2.0] };
        let bytes = pfm.encode();
        let header = b"Pf\n1 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..header.len() + 4], &2.0f32.to_le_bytes());
        assert_eq!(Pfm::decode(&bytes).unwrap(), pfm);
    }

    #[test]
    fn pfm_reads_big_endian() {
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [0.5f32, 1.5, 2.5] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let pfm = Pfm::decode(&bytes).unwrap();
        assert_eq!(pfm.data, vec![0.5, 1.5, 2.5]);
    }

    #[test]
    fn pfm_rejects_garbage() {
        assert!(Pfm::decode(b"P6\n1 1\n255\n").is_err());
        assert!(Pfm::decode(b"PF\n2 2\n-1.0\n\0\0").is_err());
    }

    #[test]
    fn quantize_rounds() {
        assert_eq!(quantize_u8(0.0), 0);
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(2.0), 255);
        assert_eq!(quantize_u8(0.5), 128);
    }
}
