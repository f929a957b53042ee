use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mathkit::{dir_to_equirect, equirect_to_dir, Direction, Rgb};

/// Row-major 2D grid; row 0 is the top of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

/// Linear-radiance RGB image.
pub type Image = Grid<Rgb>;

/// Latitude–longitude HDR map; see [`crate::mathkit`] for the convention.
pub type EquirectImage = Grid<Rgb>;

/// Single-channel grid, used for silhouettes and masks.
pub type Mask = Grid<f64>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid { width, height, data: vec![value; width * height] }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::ShapeMismatch(format!("grid {width}x{height} cannot hold {} values", data.len())));
        }
        Ok(Grid { width, height, data })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }
}

/// Four texels and their weights for a bilinear lookup.
pub type BilinearTaps = [(usize, f64); 4];

impl Grid<Rgb> {
    /// Texel indices and weights of a bilinear lookup at `(u, v)`.
    ///
    /// Texel centers sit at half-integer positions. `u` wraps around;
    /// `v` is clamped at the top and bottom rows.
    pub fn bilinear_taps(&self, u: f64, v: f64) -> BilinearTaps {
        let x = u * self.width as f64 - 0.5;
        let y = v * self.height as f64 - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let w = self.width as i64;
        let h = self.height as i64;
        let xi = |i: i64| i.rem_euclid(w) as usize;
        let yi = |j: i64| j.clamp(0, h - 1) as usize;
        let (x0, y0) = (x0 as i64, y0 as i64);
        [
            (self.index(xi(x0), yi(y0)), (1.0 - fx) * (1.0 - fy)),
            (self.index(xi(x0 + 1), yi(y0)), fx * (1.0 - fy)),
            (self.index(xi(x0), yi(y0 + 1)), (1.0 - fx) * fy),
            (self.index(xi(x0 + 1), yi(y0 + 1)), fx * fy),
        ]
    }

    /// Derivatives of the bilinear weights with respect to `u` and `v`.
    pub fn bilinear_weight_grads(&self, u: f64, v: f64) -> [(f64, f64); 4] {
        let x = u * self.width as f64 - 0.5;
        let y = v * self.height as f64 - 0.5;
        let fx = x - x.floor();
        let fy = y - y.floor();
        let w = self.width as f64;
        let mut h = self.height as f64;
        // v clamps at the edge rows, where the lookup is constant in v.
        if y < 0.0 || y > self.height as f64 - 1.0 {
            h = 0.0;
        }
        [(-(1.0 - fy) * w, -(1.0 - fx) * h), ((1.0 - fy) * w, -fx * h), (-fy * w, (1.0 - fx) * h), (fy * w, fx * h)]
    }

    pub fn sample_bilinear(&self, u: f64, v: f64) -> Rgb {
        self.bilinear_taps(u, v).iter().map(|&(i, w)| self.data[i] * w).sum()
    }

    /// Radiance arriving from direction `w` (bilinear in latitude–longitude).
    pub fn lookup_dir(&self, w: Direction) -> Rgb {
        let (u, v) = dir_to_equirect(w);
        self.sample_bilinear(u, v)
    }

    /// Direction through the center of texel `(x, y)`.
    pub fn texel_dir(&self, x: usize, y: usize) -> Direction {
        equirect_to_dir((x as f64 + 0.5) / self.width as f64, (y as f64 + 0.5) / self.height as f64)
    }

    /// Solid angle covered by texel row `y`, per texel.
    pub fn texel_solid_angle(&self, y: usize) -> f64 {
        let t0 = std::f64::consts::PI * y as f64 / self.height as f64;
        let t1 = std::f64::consts::PI * (y + 1) as f64 / self.height as f64;
        (t0.cos() - t1.cos()) * 2.0 * std::f64::consts::PI / self.width as f64
    }

    pub fn mean(&self) -> Rgb {
        self.data.iter().copied().sum::<Rgb>() / self.data.len() as f64
    }

    /// Box-filters down by an integer factor in each axis.
    pub fn downsample(&self, factor: usize) -> Image {
        let factor = factor.max(1);
        let w = (self.width / factor).max(1);
        let h = (self.height / factor).max(1);
        let mut out = Image::filled(w, h, Rgb::BLACK);
        for y in 0..h {
            for x in 0..w {
                let mut acc = Rgb::BLACK;
                let mut n = 0.0;
                for sy in y * factor..((y + 1) * factor).min(self.height) {
                    for sx in x * factor..((x + 1) * factor).min(self.width) {
                        acc += *self.at(sx, sy);
                        n += 1.0;
                    }
                }
                *out.at_mut(x, y) = acc / n;
            }
        }
        out
    }

    pub fn luminance(&self) -> Mask {
        self.map(|c| c.luminance())
    }
}

/// On-disk encodings accepted by [`write_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// 8-bit sRGB-ish PNG: clamp to [0, 1], then gamma 2.2.
    Png,
    /// Little-endian 32-bit float PFM, linear.
    Pfm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "png" => Some(ImageFormat::Png),
            "pfm" => Some(ImageFormat::Pfm),
            _ => None,
        }
    }
}

/// Display encoding used for PNG output.
pub fn encode_gamma_byte(linear: f64) -> u8 {
    let c = if linear.is_nan() { 0.0 } else { linear.clamp(0.0, 1.0) };
    (255.0 * c.powf(1.0 / 2.2)).round() as u8
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), cause: source }
}

pub fn write_image(image: &Image, path: &Path, format: ImageFormat) -> Result<()> {
    let bytes = match format {
        ImageFormat::Pfm => encode_pfm(image, 3),
        ImageFormat::Png => {
            let mut raw = Vec::with_capacity(image.len() * 3);
            for c in &image.data {
                raw.extend_from_slice(&[encode_gamma_byte(c.r), encode_gamma_byte(c.g), encode_gamma_byte(c.b)]);
            }
            let mut out = Vec::new();
            let encoder = image::codecs::png::PngEncoder::new(&mut out);
            image::ImageEncoder::write_image(
                encoder,
                &raw,
                image.width as u32,
                image.height as u32,
                image::ExtendedColorType::Rgb8,
            )
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            out
        }
    };
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Writes a single-channel grid as a greyscale (`Pf`) PFM.
pub fn write_mask_pfm(mask: &Mask, path: &Path) -> Result<()> {
    let img = mask.map(|&v| Rgb::gray(v));
    fs::write(path, encode_pfm(&img, 1)).map_err(|e| io_err(path, e))
}

fn encode_pfm(image: &Image, channels: usize) -> Vec<u8> {
    let tag = if channels == 1 { "Pf" } else { "PF" };
    let mut out = Vec::with_capacity(32 + image.len() * channels * 4);
    write!(out, "{tag}\n{} {}\n-1.0\n", image.width, image.height).unwrap();
    // PFM scanlines run bottom to top.
    for y in (0..image.height).rev() {
        for x in 0..image.width {
            let c = image.at(x, y);
            let vals = [c.r, c.g, c.b];
            for v in &vals[..channels] {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    out
}

/// Loads a linear HDR image from a PFM or Radiance RGBE file.
pub fn load_hdr(path: &Path) -> Result<EquirectImage> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_hdr_bytes(&bytes, path)
}

pub(crate) fn decode_hdr_bytes(bytes: &[u8], path: &Path) -> Result<EquirectImage> {
    if bytes.starts_with(b"PF") || bytes.starts_with(b"Pf") {
        decode_pfm(bytes, path)
    } else if bytes.starts_with(b"#?") {
        decode_rgbe(bytes, path)
    } else {
        Err(Error::Format(format!("{}: not a PFM or Radiance HDR file", path.display())))
    }
}

fn malformed(path: &Path, detail: impl Into<String>) -> Error {
    Error::MalformedHeader { path: path.to_path_buf(), detail: detail.into() }
}

fn decode_pfm(bytes: &[u8], path: &Path) -> Result<EquirectImage> {
    // Header: three whitespace-separated tokens after the tag, then one
    // whitespace byte before the raster.
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
            return Err(malformed(path, "truncated PFM header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| malformed(path, "non-ASCII header"))?);
    }
    pos += 1;
    let channels = match tokens[0] {
        "PF" => 3,
        "Pf" => 1,
        t => return Err(malformed(path, format!("unknown PFM tag {t:?}"))),
    };
    let width: usize = tokens[1].parse().map_err(|_| malformed(path, "bad PFM width"))?;
    let height: usize = tokens[2].parse().map_err(|_| malformed(path, "bad PFM height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| malformed(path, "bad PFM scale"))?;
    if width == 0 || height == 0 || scale == 0.0 {
        return Err(malformed(path, "zero PFM dimension or scale"));
    }
    let little = scale < 0.0;
    let need = width * height * channels * 4;
    if bytes.len() < pos + need {
        return Err(malformed(path, format!("PFM raster truncated: need {need} bytes")));
    }
    let raster = &bytes[pos..pos + need];
    let read = |i: usize| {
        let b = [raster[4 * i], raster[4 * i + 1], raster[4 * i + 2], raster[4 * i + 3]];
        if little {
            f32::from_le_bytes(b) as f64
        } else {
            f32::from_be_bytes(b) as f64
        }
    };
    let mut img = Image::filled(width, height, Rgb::BLACK);
    for row in 0..height {
        let y = height - 1 - row;
        for x in 0..width {
            let base = (row * width + x) * channels;
            *img.at_mut(x, y) = if channels == 3 {
                Rgb::new(read(base), read(base + 1), read(base + 2))
            } else {
                Rgb::gray(read(base))
            };
        }
    }
    Ok(img)
}

fn decode_rgbe(bytes: &[u8], path: &Path) -> Result<EquirectImage> {
    let decoder =
        image::codecs::hdr::HdrDecoder::new(std::io::Cursor::new(bytes)).map_err(|e| malformed(path, e.to_string()))?;
    let dynimg = image::DynamicImage::from_decoder(decoder).map_err(|e| malformed(path, e.to_string()))?;
    let rgb = dynimg.to_rgb32f();
    let (w, h) = rgb.dimensions();
    let data = rgb.pixels().map(|p| Rgb::new(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64)).collect();
    Image::from_vec(w as usize, h as usize, data)
}

/// Loads a texture from PNG (display-encoded, converted to linear) or PFM.
pub fn load_texture(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| malformed(path, e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img
            .pixels()
            .map(|p| Rgb::new(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64).map(|c| (c / 255.0).powf(2.2)))
            .collect();
        Image::from_vec(w as usize, h as usize, data)
    } else {
        decode_hdr_bytes(&bytes, path)
    }
}

/// Loads a single-channel mask (luminance of the decoded image).
pub fn load_mask(path: &Path) -> Result<Mask> {
    Ok(load_texture(path)?.map(|c| (c.r + c.g + c.b) / 3.0))
}
