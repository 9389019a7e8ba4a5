//! 8-bit RGB images with binary PPM and PNG I/O. Row-major, top-left origin.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::shading::Rgb;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: malformed PPM: {reason}")]
    BadPpm { path: String, reason: String },
    #[error("{path}: PNG: {reason}")]
    Png { path: String, reason: String },
    #[error("pixel buffer has {got} entries, expected {expected}")]
    BadSize { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<[u8; 3]>,
}

/// Rounds a color channel in `[0, 1]` to 8 bits.
pub fn quantize(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Image {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        Image { width, height, data: vec![fill; width as usize * height as usize] }
    }

    pub fn from_pixels(width: u32, height: u32, data: Vec<[u8; 3]>) -> Result<Self, ImageError> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(ImageError::BadSize { got: data.len(), expected });
        }
        Ok(Image { width, height, data })
    }

    /// Quantizes a row-major buffer of colors in `[0, 1]`.
    pub fn from_rgb(width: u32, height: u32, colors: &[Rgb]) -> Result<Self, ImageError> {
        let data = colors.iter().map(|c| [quantize(c[0]), quantize(c[1]), quantize(c[2])]).collect();
        Image::from_pixels(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let w = self.width;
        self.data[(y * w + x) as usize] = c;
    }

    /// Channel value divided by 255.
    pub fn get_rgb(&self, x: u32, y: u32) -> Rgb {
        let c = self.get(x, y);
        [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0]
    }

    /// FNV-1a over dimensions and pixel bytes.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut feed = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        };
        for b in self.width.to_le_bytes().into_iter().chain(self.height.to_le_bytes()) {
            feed(b);
        }
        for px in &self.data {
            px.iter().for_each(|&b| feed(b));
        }
        h
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.data.len() * 3);
        for px in &self.data {
            out.extend_from_slice(px);
        }
        out
    }

    pub fn decode_ppm(bytes: &[u8], path: &str) -> Result<Self, ImageError> {
        let bad = |reason: &str| ImageError::BadPpm { path: path.to_string(), reason: reason.to_string() };
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
        }
        if fields[0] != "P6" {
            return Err(bad("expected magic P6"));
        }
        let num = |s: &str| s.parse::<u32>().map_err(|_| bad("bad header number"));
        let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(bad("only 8-bit images (maxval 255) are supported"));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let n = w as usize * h as usize;
        let raster = bytes.get(pos..pos + 3 * n).ok_or_else(|| bad("raster shorter than header size"))?;
        let data = raster.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(Image { width: w, height: h, data })
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), ImageError> {
        fs::write(path, self.encode_ppm()).map_err(|source| io_err(path, source))
    }

    pub fn read_ppm(path: &Path) -> Result<Self, ImageError> {
        let bytes = fs::read(path).map_err(|source| io_err(path, source))?;
        Image::decode_ppm(&bytes, &path.display().to_string())
    }

    pub fn write_png(&self, path: &Path) -> Result<(), ImageError> {
        let file = fs::File::create(path).map_err(|source| io_err(path, source))?;
        let png_err = |e: png::EncodingError| ImageError::Png { path: path.display().to_string(), reason: e.to_string() };
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width, self.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_err)?;
        let flat: Vec<u8> = self.data.iter().flatten().copied().collect();
        writer.write_image_data(&flat).map_err(png_err)?;
        writer.finish().map_err(png_err)
    }

    pub fn read_png(path: &Path) -> Result<Self, ImageError> {
        let file = fs::File::open(path).map_err(|source| io_err(path, source))?;
        let png_err = |reason: String| ImageError::Png { path: path.display().to_string(), reason };
        let mut dec = png::Decoder::new(io::BufReader::new(file));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info().map_err(|e| png_err(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| png_err("image too large".into()))?];
        let info = reader.next_frame(&mut buf).map_err(|e| png_err(e.to_string()))?;
        let bytes = &buf[..info.buffer_size()];
        let data: Vec<[u8; 3]> = match info.color_type {
            png::ColorType::Rgb => bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            png::ColorType::Rgba => bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2]]).collect(),
            png::ColorType::Grayscale => bytes.iter().map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => bytes.chunks_exact(2).map(|c| [c[0], c[0], c[0]]).collect(),
            png::ColorType::Indexed => return Err(png_err("unexpanded palette".into())),
        };
        Image::from_pixels(info.width, info.height, data)
    }

    /// Writes PNG for a `.png` extension and binary PPM otherwise.
    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        if is_png(path) {
            self.write_png(path)
        } else {
            self.write_ppm(path)
        }
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        if is_png(path) {
            Image::read_png(path)
        } else {
            Image::read_ppm(path)
        }
    }
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn io_err(path: &Path, source: io::Error) -> ImageError {
    ImageError::Io { path: path.display().to_string(), source }
}

/// Writes `image` as PPM to any writer.
pub fn write_ppm_to<W: Write>(image: &Image, mut w: W) -> io::Result<()> {
    w.write_all(&image.encode_ppm())
}
