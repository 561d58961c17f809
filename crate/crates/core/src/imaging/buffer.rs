use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::ImagingError;

/// Image with `[0, 1]` samples stored row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageBuffer {
    /// Builds an image from interleaved samples, clamping them into `[0, 1]`.
    /// NaN samples become 0.
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        mut pixels: Vec<f64>,
    ) -> Result<Self, ImagingError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(ImagingError::InvalidDimensions {
                height,
                width,
                channels,
            });
        }
        if pixels.len() != height * width * channels {
            return Err(ImagingError::PixelCount {
                expected: height * width * channels,
                actual: pixels.len(),
            });
        }
        for p in &mut pixels {
            *p = clamp01(*p);
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
        .expect("positive dimensions")
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

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let idx = (y * self.width + x) * self.channels + c;
        self.pixels[idx] = clamp01(value);
    }

    /// One channel as a contiguous `height * width` plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.pixels
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Channel-major copy (`C x H x W`), the layout used by the network.
    pub fn to_chw(&self) -> Vec<f64> {
        (0..self.channels).flat_map(|c| self.plane(c)).collect()
    }

    pub fn from_chw(
        height: usize,
        width: usize,
        channels: usize,
        data: &[f64],
    ) -> Result<Self, ImagingError> {
        if data.len() != height * width * channels {
            return Err(ImagingError::PixelCount {
                expected: height * width * channels,
                actual: data.len(),
            });
        }
        let plane = height * width;
        let mut pixels = vec![0.0; data.len()];
        for c in 0..channels {
            for i in 0..plane {
                pixels[i * channels + c] = data[c * plane + i];
            }
        }
        Self::new(height, width, channels, pixels)
    }

    /// Applies `f` to every sample, clamping the result.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            pixels: self.pixels.iter().map(|&p| clamp01(f(p))).collect(),
            ..*self
        }
    }

    pub(crate) fn clamp_in_place(&mut self) {
        for p in &mut self.pixels {
            *p = clamp01(*p);
        }
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<(), ImagingError> {
        if self.shape() != other.shape() {
            return Err(ImagingError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut pixels = Vec::with_capacity(height * width * self.channels);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                for c in 0..self.channels {
                    let top = self.get(y0, x0, c) * (1.0 - wx) + self.get(y0, x1, c) * wx;
                    let bottom = self.get(y1, x0, c) * (1.0 - wx) + self.get(y1, x1, c) * wx;
                    pixels.push(top * (1.0 - wy) + bottom * wy);
                }
            }
        }
        Self::new(height, width, self.channels, pixels).expect("consistent shape")
    }

    /// 8-bit quantization, `round(p * 255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(
        height: usize,
        width: usize,
        channels: usize,
        bytes: &[u8],
    ) -> Result<Self, ImagingError> {
        Self::new(
            height,
            width,
            channels,
            bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        )
    }

    /// PNG bytes. Single-channel images become 8-bit gray, three-channel RGB.
    pub fn encode_png(&self) -> Result<Vec<u8>, ImagingError> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(ImagingError::UnsupportedChannels(c)),
        };
        let mut out = Vec::new();
        image::write_buffer_with_format(
            &mut std::io::Cursor::new(&mut out),
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            color,
            ImageFormat::Png,
        )
        .map_err(|e| ImagingError::Codec(e.to_string()))?;
        Ok(out)
    }

    /// Decodes any PNG into an RGB buffer.
    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImagingError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| ImagingError::Codec(e.to_string()))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    fn from_rgb8(img: &RgbImage) -> Self {
        Self::from_u8(img.height() as usize, img.width() as usize, 3, img.as_raw())
            .expect("decoded image has positive size")
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImagingError> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|source| ImagingError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self, ImagingError> {
        let bytes = std::fs::read(path).map_err(|source| ImagingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode_png(&bytes).map_err(|e| match e {
            ImagingError::Codec(msg) => ImagingError::Codec(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[inline]
fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}
