//! Dense height x width x channels arrays.
//!
//! The same container holds canvases (three channels in `[0, 1]`), diffusion
//! latents (any finite values) and normalized model inputs.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImageError {
    #[error("buffer of {len} values does not match {height}x{width}x{channels}")]
    BufferSize {
        height: usize,
        width: usize,
        channels: usize,
        len: usize,
    },
    #[error("expected a 3-channel canvas, got {0} channels")]
    NotRgb(usize),
    #[error("intensity {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
}

/// Row-major `H x W x C` buffer of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if data.len() != height * width * channels {
            return Err(ImageError::BufferSize {
                height,
                width,
                channels,
                len: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from 8-bit samples, mapping `v` to `v / 255`.
    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self, ImageError> {
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::from_vec(height, width, channels, data)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
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

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    pub fn same_shape(&self, other: &Image) -> Result<(), ImageError> {
        if self.shape() != other.shape() {
            return Err(ImageError::ShapeMismatch(self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Checks the canvas contract: three channels, every value finite and in `[0, 1]`.
    pub fn check_canvas(&self) -> Result<(), ImageError> {
        if self.channels != 3 {
            return Err(ImageError::NotRgb(self.channels));
        }
        match self
            .data
            .iter()
            .position(|v| !(v.is_finite() && (0.0..=1.0).contains(v)))
        {
            Some(index) => Err(ImageError::OutOfRange {
                index,
                value: self.data[index],
            }),
            None => Ok(()),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image, ImageError> {
        self.same_shape(other)?;
        Ok(Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64, ImageError> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, libm::fabs(a - b))))
    }

    /// Copies the `h x w` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Image {
        Image::from_fn(h, w, self.channels, |y, x, c| self.get(top + y, left + x, c))
    }

    /// Writes `src` into this image with its top-left corner at `(top, left)`.
    pub fn paste(&mut self, src: &Image, top: usize, left: usize) {
        for y in 0..src.height {
            for x in 0..src.width {
                for c in 0..src.channels {
                    self.set(top + y, left + x, c, src.get(y, x, c));
                }
            }
        }
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Image {
        Image::from_fn(self.height * factor, self.width * factor, self.channels, |y, x, c| {
            self.get(y / factor, x / factor, c)
        })
    }

    /// Bilinear resampling with half-pixel centres (`align_corners = false`).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Image {
        let sy = self.height as f64 / out_h as f64;
        let sx = self.width as f64 / out_w as f64;
        let coord = |o: usize, scale: f64, len: usize| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (libm::floor(src) as usize).min(len - 1);
            let hi = (lo + 1).min(len - 1);
            (lo, hi, src - lo as f64)
        };
        Image::from_fn(out_h, out_w, self.channels, |y, x, c| {
            let (y0, y1, fy) = coord(y, sy, self.height);
            let (x0, x1, fx) = coord(x, sx, self.width);
            let top = self.get(y0, x0, c) * (1.0 - fx) + self.get(y0, x1, c) * fx;
            let bottom = self.get(y1, x0, c) * (1.0 - fx) + self.get(y1, x1, c) * fx;
            top * (1.0 - fy) + bottom * fy
        })
    }

    /// Round-half-away-from-zero quantization of `[0, 1]` values to 8 bits.
    pub fn quantize(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_unit(v)).collect()
    }
}

/// Maps `v` in `[0, 1]` to `round(v * 255)`, clamped to `0..=255`.
#[inline]
pub fn quantize_unit(v: f64) -> u8 {
    let scaled = libm::round(v * 255.0);
    if scaled.is_nan() || scaled <= 0.0 {
        0
    } else if scaled >= 255.0 {
        255
    } else {
        scaled as u8
    }
}
