//! Raster images with unit-interval `f32` intensities, binary PNM I/O and a
//! few geometry/fidelity helpers shared by every other module.
//!
//! Pixels are stored row-major with channels interleaved, so the sample at
//! `(y, x, c)` lives at `(y * width + x) * channels + c`.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

/// Errors raised by image construction, PNM parsing and metrics.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {height}x{width}")]
    EmptyDimensions { height: usize, width: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),
    #[error("data length {actual} does not match {height}x{width}x{channels}")]
    DataLength {
        height: usize,
        width: usize,
        channels: usize,
        actual: usize,
    },
    #[error("unsupported PNM magic number {0:?} (expected P5 or P6)")]
    UnsupportedMagic(String),
    #[error("malformed PNM header: {0}")]
    MalformedHeader(&'static str),
    #[error("unsupported PNM maxval {0} (expected 255)")]
    UnsupportedMaxval(u32),
    #[error("truncated PNM payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = ImageError> = std::result::Result<T, E>;

/// An `height x width x channels` raster with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image from interleaved samples. Values are clamped to `[0, 1]`
    /// (NaN becomes 0).
    pub fn new(height: usize, width: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(ImageError::EmptyDimensions { height, width });
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::UnsupportedChannels(channels));
        }
        if data.len() != height * width * channels {
            return Err(ImageError::DataLength {
                height,
                width,
                channels,
                actual: data.len(),
            });
        }
        data.iter_mut().for_each(|v| *v = clamp01(*v));
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Image with every sample equal to `value`.
    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image by evaluating `f(y, x, c)` for every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Splits planar channel buffers back into an interleaved image.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f32>]) -> Result<Self> {
        let channels = planes.len();
        let n = height * width;
        let mut data = vec![0.0; n * channels];
        for (c, plane) in planes.iter().enumerate() {
            if plane.len() != n {
                return Err(ImageError::DataLength {
                    height,
                    width,
                    channels: 1,
                    actual: plane.len(),
                });
            }
            for (i, v) in plane.iter().enumerate() {
                data[i * channels + c] = *v;
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Sample lookup with clamp-to-edge addressing.
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize, c: usize) -> f32 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x, c)
    }

    /// Copies channel `c` into its own row-major plane.
    pub fn plane(&self, c: usize) -> Vec<f32> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn planes(&self) -> Vec<Vec<f32>> {
        (0..self.channels).map(|c| self.plane(c)).collect()
    }

    /// Applies `f` to every sample, clamping the results.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| clamp01(f(v))).collect(),
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Luma conversion with Rec. 601 weights. Grayscale input is returned as is.
    pub fn to_grayscale(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| clamp01(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]))
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Replicates a grayscale image into three identical channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    /// Bilinear resampling with the align-corners convention: output corner
    /// samples coincide with input corner samples, and source coordinates are
    /// `i * (in - 1) / (out - 1)`. Reads outside the image clamp to the edge.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Image {
        assert!(out_h >= 1 && out_w >= 1, "output size must be at least 1x1");
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        let scale = |inp: usize, out: usize| {
            if out > 1 {
                (inp as f64 - 1.0) / (out as f64 - 1.0)
            } else {
                0.0
            }
        };
        let sy = scale(self.height, out_h);
        let sx = scale(self.width, out_w);
        let mut data = Vec::with_capacity(out_h * out_w * self.channels);
        for oy in 0..out_h {
            let fy = oy as f64 * sy;
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for ox in 0..out_w {
                let fx = ox as f64 * sx;
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                for c in 0..self.channels {
                    let top = self.get(y0, x0, c) as f64 * (1.0 - wx) + self.get(y0, x1, c) as f64 * wx;
                    let bot = self.get(y1, x0, c) as f64 * (1.0 - wx) + self.get(y1, x1, c) as f64 * wx;
                    data.push(clamp01((top * (1.0 - wy) + bot * wy) as f32));
                }
            }
        }
        Image {
            height: out_h,
            width: out_w,
            channels: self.channels,
            data,
        }
    }

    /// Encodes as binary PGM (1 channel) or PPM (3 channels), maxval 255.
    pub fn to_pnm_bytes(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| quantize_u8(v)));
        out
    }

    /// Decodes a binary PGM (P5) or PPM (P6) with maxval 255.
    pub fn from_pnm_bytes(bytes: &[u8]) -> Result<Image> {
        let mut header = HeaderReader { bytes, pos: 0 };
        let magic = header.token()?;
        let channels = match magic {
            b"P5" => 1,
            b"P6" => 3,
            other => {
                return Err(ImageError::UnsupportedMagic(
                    String::from_utf8_lossy(other).into_owned(),
                ))
            }
        };
        let width = header.number()?;
        let height = header.number()?;
        let maxval = header.number()?;
        if maxval != 255 {
            return Err(ImageError::UnsupportedMaxval(maxval as u32));
        }
        // Exactly one whitespace byte separates maxval from the raster.
        match bytes.get(header.pos) {
            Some(b) if b.is_ascii_whitespace() => header.pos += 1,
            _ => return Err(ImageError::MalformedHeader("missing whitespace after maxval")),
        }
        if width == 0 || height == 0 {
            return Err(ImageError::MalformedHeader("zero image dimension"));
        }
        let expected = width * height * channels;
        let payload = &bytes[header.pos..];
        if payload.len() < expected {
            return Err(ImageError::Truncated {
                expected,
                found: payload.len(),
            });
        }
        let data = payload[..expected].iter().map(|&b| b as f32 / 255.0).collect();
        Image::new(height, width, channels, data)
    }

    pub fn load_pnm(path: impl AsRef<Path>) -> Result<Image> {
        Image::from_pnm_bytes(&fs::read(path)?)
    }

    pub fn save_pnm(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_pnm_bytes())?;
        Ok(())
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace())
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::MalformedHeader("unexpected end of header"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        if !tok.iter().all(u8::is_ascii_digit) || tok.len() > 9 {
            return Err(ImageError::MalformedHeader("expected a decimal number"));
        }
        Ok(std::str::from_utf8(tok)
            .expect("ascii digits")
            .parse()
            .expect("bounded digit string"))
    }
}

#[inline]
pub fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// `round(v * 255)` as a byte.
#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    (clamp01(v) * 255.0).round() as u8
}

fn check_same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(ImageError::ShapeMismatch(a.shape(), b.shape()));
    }
    Ok(())
}

/// Mean squared difference over all samples.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same_shape(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// Peak signal-to-noise ratio in dB for unit peak; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / m).log10()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pnm(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut v = header.as_bytes().to_vec();
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn p5_decodes_bytes_over_255() {
        let img = Image::from_pnm_bytes(&pnm("P5\n2 2\n255\n", &[0, 255, 128, 64])).unwrap();
        assert_eq!(img.shape(), (2, 2, 1));
        let expected = [0.0, 1.0, 0.50196, 0.25098];
        for (v, e) in img.data().iter().zip(expected) {
            assert!((v - e).abs() < 1e-5, "{v} vs {e}");
        }
    }

    #[test]
    fn p6_single_red_pixel() {
        let img = Image::from_pnm_bytes(&pnm("P6 1 1 255\n", &[255, 0, 0])).unwrap();
        assert_eq!(img.shape(), (1, 1, 3));
        assert_eq!(img.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = Image::from_pnm_bytes(&pnm("P5\n# made by hand\n1 1\n255\n", &[51])).unwrap();
        assert!((img.get(0, 0, 0) - 0.2).abs() < 1e-6);
    }

    #[test]
    fn distinct_errors_for_bad_files() {
        assert!(matches!(
            Image::from_pnm_bytes(&pnm("P4\n1 1\n", &[0])),
            Err(ImageError::UnsupportedMagic(m)) if m == "P4"
        ));
        assert!(matches!(
            Image::from_pnm_bytes(&pnm("P5\n1 1\n65535\n", &[0, 0])),
            Err(ImageError::UnsupportedMaxval(65535))
        ));
        assert!(matches!(
            Image::from_pnm_bytes(&pnm("P5\n2 2\n255\n", &[0, 1, 2])),
            Err(ImageError::Truncated { expected: 4, found: 3 })
        ));
        assert!(matches!(
            Image::from_pnm_bytes(b"P5\nx 2\n255\n"),
            Err(ImageError::MalformedHeader(_))
        ));
        assert!(matches!(
            Image::from_pnm_bytes(b"P5\n2"),
            Err(ImageError::MalformedHeader(_))
        ));
    }

    #[test]
    fn quantization_rounds_to_nearest() {
        assert_eq!(quantize_u8(0.5), 128);
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(0.0), 0);
    }

    #[test]
    fn save_load_roundtrip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        let bytes = pnm("P6\n3 2\n255\n", &[0, 1, 2, 3, 4, 5, 250, 251, 252, 253, 254, 255, 9, 8, 7, 6, 5, 4]);
        let img = Image::from_pnm_bytes(&bytes).unwrap();
        img.save_pnm(&path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
        assert_eq!(Image::load_pnm(&path).unwrap(), img);
    }

    #[test]
    fn grayscale_uses_rec601() {
        let white = Image::filled(1, 1, 3, 1.0).unwrap();
        assert!((white.to_grayscale().get(0, 0, 0) - 1.0).abs() < 1e-6);
        let red = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((red.to_grayscale().get(0, 0, 0) - 0.299).abs() < 1e-6);
        let gray = Image::new(1, 2, 1, vec![0.3, 0.7]).unwrap();
        assert_eq!(gray.to_grayscale(), gray);
    }

    #[test]
    fn resize_align_corners() {
        let img = Image::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let out = img.resize_bilinear(4, 1);
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (v, e) in out.data().iter().zip(expected) {
            assert!((v - e).abs() < 1e-6);
        }
        assert_eq!(img.resize_bilinear(2, 1), img);
        let flat = Image::filled(5, 7, 3, 0.25).unwrap().resize_bilinear(3, 11);
        assert_eq!(flat.shape(), (3, 11, 3));
        assert!(flat.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn mse_and_psnr() {
        let a = Image::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let b = Image::new(1, 2, 1, vec![0.0, 0.5]).unwrap();
        assert!((mse(&a, &b).unwrap() - 0.125).abs() < 1e-12);
        assert!((psnr(&a, &b).unwrap() - 9.0309).abs() < 1e-4);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let c = Image::filled(2, 1, 1, 0.0).unwrap();
        assert!(matches!(mse(&a, &c), Err(ImageError::ShapeMismatch(..))));
    }

    #[test]
    fn constructor_validates_and_clamps() {
        assert!(Image::new(0, 1, 1, vec![]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(Image::new(1, 2, 1, vec![0.0]).is_err());
        let img = Image::new(1, 3, 1, vec![-1.0, 2.0, f32::NAN]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 0.0]);
    }
}
