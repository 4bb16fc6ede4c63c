//! RGB float images plus 8-bit PNG and PFM (raw float) file I/O.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved RGB, row-major from the top-left pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self { width, height, data }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Swaps rows and columns.
    pub fn transposed(&self) -> Image {
        let mut out = Image::filled(self.height, self.width, [0.0; 3]);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(y, x, self.pixel(x, y));
            }
        }
        out
    }
}

pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(w, img.width, img.height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let bytes: Vec<u8> =
        img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    writer.write_image_data(&bytes).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}

pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| Error::Corrupt(format!("png: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Corrupt("png: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Corrupt(format!("png: {e}")))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Corrupt("png: only 8-bit images are supported".into()));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        other => return Err(Error::Corrupt(format!("png: unsupported color type {other:?}"))),
    };
    let mut data = Vec::with_capacity(info.width as usize * info.height as usize * 3);
    for px in buf[..info.buffer_size()].chunks_exact(channels) {
        for c in 0..3 {
            data.push(px[c.min(channels - 1)] as f32 / 255.0);
        }
    }
    Ok(Image { width: info.width, height: info.height, data })
}

/// Portable float map, little-endian (negative scale), bottom-to-top rows.
pub fn save_pfm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "PF\n{} {}\n-1.0\n", img.width, img.height)?;
    let row = img.width as usize * 3;
    for y in (0..img.height as usize).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_pfm(path: impl AsRef<Path>) -> Result<Image> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    for _ in 0..3 {
        let mut line = String::new();
        r.read_line(&mut line)?;
        header.push(line.trim().to_string());
    }
    if header[0] != "PF" {
        return Err(Error::Corrupt("pfm: only 3-channel `PF` maps are supported".into()));
    }
    let dims: Vec<u32> = header[1].split_whitespace().filter_map(|t| t.parse().ok()).collect();
    let scale: f32 = header[2].parse().map_err(|_| Error::Corrupt("pfm: bad scale".into()))?;
    let [width, height] = dims[..] else {
        return Err(Error::Corrupt("pfm: bad dimensions".into()));
    };
    let row = width as usize * 3;
    let mut raw = vec![0u8; row * height as usize * 4];
    r.read_exact(&mut raw)?;
    let mut data = vec![0f32; row * height as usize];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().unwrap();
        let v = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (y, x) = (i / row, i % row);
        data[(height as usize - 1 - y) * row + x] = v;
    }
    Ok(Image { width, height, data })
}

/// Loads `.pfm` as raw floats, anything else as PNG.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => load_pfm(path),
        _ => load_png(path),
    }
}
