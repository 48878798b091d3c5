//! Planar RGB images with values in `[0, 1]`, plus binary PPM I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Channel-major (`C × H × W`) RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = vec![0.0; 3 * height * width];
        for c in 0..3 {
            data[c * height * width..(c + 1) * height * width].fill(rgb[c].clamp(0.0, 1.0));
        }
        Self { height, width, data }
    }

    /// Build from planar data, clamping into `[0, 1]`.
    pub fn from_planar(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "planar buffer of {} values does not fit 3x{height}x{width}",
                data.len()
            )));
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Callers must keep values in `[0, 1]`.
    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let (h, w) = (self.height, self.width);
        self.data[(c * h + y) * w + x] = v.clamp(0.0, 1.0);
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.set(c, y, x, v);
        }
    }

    /// Quantize to 8 bits per channel, as stored on disk.
    pub fn quantized(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|v| (v * 255.0).round() / 255.0)
            .collect();
        Self { data, ..*self }
    }

    pub fn mean_abs_diff(&self, other: &ImageTensor) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / self.data.len() as f64
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(3 * self.height * self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    out.push((self.get(c, y, x) * 255.0).round() as u8);
                }
            }
        }
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Parse {
            line: 1,
            message: format!("PPM: {m}"),
        };
        let mut pos = 0;
        let mut next_token = || -> Option<&[u8]> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            (pos > start).then(|| &bytes[start..pos])
        };
        if next_token() != Some(b"P6") {
            return Err(bad("missing P6 magic"));
        }
        let mut num = || -> Result<usize> {
            let t = next_token().ok_or_else(|| bad("truncated header"))?;
            std::str::from_utf8(t)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("invalid header number"))
        };
        let (width, height, maxval) = (num()?, num()?, num()?);
        if maxval != 255 || width == 0 || height == 0 {
            return Err(bad("only 8-bit non-empty images are supported"));
        }
        let body = bytes.get(pos + 1..).unwrap_or(&[]);
        let need = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| bad("image too large"))?;
        if body.len() < need {
            return Err(bad("truncated pixel data"));
        }
        let mut img = Self::filled(height, width, [0.0; 3]);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    img.set(c, y, x, body[(y * width + x) * 3 + c] as f32 / 255.0);
                }
            }
        }
        Ok(img)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_ppm(&bytes)
    }

    /// Copy of the `h × w` window starting at `(top, left)`.
    pub fn window(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.height || left + w > self.width || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "window {h}x{w}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for y in top..top + h {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + w]);
            }
        }
        Ok(Self {
            height: h,
            width: w,
            data,
        })
    }
}
