//! Raster image type and 8-bit PNG I/O.
//!
//! Samples are `f64` in `[0,1]`, stored row-major and channel-interleaved.
//! Throughout the crate `i` indexes columns (horizontal, growing rightward)
//! and `j` indexes rows (vertical, growing downward).

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from raw samples, validating dimensions and range.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "sample buffer holds {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        let img = Image {
            height,
            width,
            channels,
            data,
        };
        img.check_range()?;
        Ok(img)
    }

    /// Constant-valued image.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Image::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image by evaluating `f(i, j, c)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for j in 0..height {
            for i in 0..width {
                for c in 0..channels {
                    data.push(f(i, j, c));
                }
            }
        }
        Image::new(height, width, channels, data)
    }

    // Internal constructor for values produced by arithmetic that preserves
    // the range invariant; skips the O(n) scan.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    fn check_range(&self) -> Result<()> {
        for (k, &s) in self.data.iter().enumerate() {
            if !s.is_finite() || !(0.0..=1.0).contains(&s) {
                return Err(Error::Domain(format!(
                    "sample {k} is {s}, outside [0,1]"
                )));
            }
        }
        Ok(())
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, c: usize) -> usize {
        (j * self.width + i) * self.channels + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.idx(i, j, c)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        let k = self.idx(i, j, c);
        self.data[k] = v;
    }

    /// Sample with replicate-edge semantics: out-of-bounds coordinates clamp
    /// to the nearest valid pixel.
    #[inline]
    pub fn get_clamped(&self, i: isize, j: isize, c: usize) -> f64 {
        let ci = i.clamp(0, self.width as isize - 1) as usize;
        let cj = j.clamp(0, self.height as isize - 1) as usize;
        self.get(ci, cj, c)
    }

    /// Center crop to exactly `new_h` x `new_w`.
    pub fn center_crop(&self, new_h: usize, new_w: usize) -> Result<Image> {
        if new_h == 0 || new_w == 0 || new_h > self.height || new_w > self.width {
            return Err(Error::Shape(format!(
                "cannot crop {}x{} to {new_h}x{new_w}",
                self.height, self.width
            )));
        }
        let j0 = (self.height - new_h) / 2;
        let i0 = (self.width - new_w) / 2;
        let mut data = Vec::with_capacity(new_h * new_w * self.channels);
        for j in 0..new_h {
            let row = (j0 + j) * self.width;
            let start = (row + i0) * self.channels;
            data.extend_from_slice(&self.data[start..start + new_w * self.channels]);
        }
        Ok(Image::from_raw(new_h, new_w, self.channels, data))
    }

    /// Rec. 601 luma; identity on single-channel images.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.height * self.width);
        for px in self.data.chunks_exact(3) {
            data.push(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
        }
        Image::from_raw(self.height, self.width, 1, data)
    }

    /// Replicates a gray image to three channels; identity on RGB.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.height * self.width * 3);
        for &s in &self.data {
            data.extend_from_slice(&[s, s, s]);
        }
        Image::from_raw(self.height, self.width, 3, data)
    }

    /// Quantizes every sample to the 8-bit grid, i.e. what a PNG round trip
    /// would produce.
    pub fn quantized(&self) -> Image {
        let data = self
            .data
            .iter()
            .map(|&s| quantize_byte(s) as f64 / 255.0)
            .collect();
        Image::from_raw(self.height, self.width, self.channels, data)
    }
}

#[inline]
fn quantize_byte(sample: f64) -> u8 {
    (sample * 255.0).round().clamp(0.0, 255.0) as u8
}

// ---------------------------------------------------------------------------
// Unconstrained rasters
// ---------------------------------------------------------------------------

/// Scratch raster sharing [`Image`]'s layout but without the `[0,1]` range
/// invariant.
///
/// Linear-operator work — blur adjoints, gradients, solver iterates — moves
/// through values that legitimately leave `[0,1]`; it runs on `Raster` and
/// converts back to `Image` only at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Raster {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_image(img: &Image) -> Self {
        Raster {
            height: img.height,
            width: img.width,
            channels: img.channels,
            data: img.data.clone(),
        }
    }

    /// Clamps into `[0,1]` and converts to a range-checked image.
    pub fn to_image_clamped(&self) -> Image {
        let data = self.data.iter().map(|&s| s.clamp(0.0, 1.0)).collect();
        Image::from_raw(self.height, self.width, self.channels, data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, c: usize) -> usize {
        (j * self.width + i) * self.channels + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.idx(i, j, c)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        let k = self.idx(i, j, c);
        self.data[k] = v;
    }

    /// Sample with replicate-edge semantics.
    #[inline]
    pub fn get_clamped(&self, i: isize, j: isize, c: usize) -> f64 {
        let ci = i.clamp(0, self.width as isize - 1) as usize;
        let cj = j.clamp(0, self.height as isize - 1) as usize;
        self.get(ci, cj, c)
    }
}

/// Loads an 8-bit grayscale or RGB PNG; samples become `raw / 255`.
pub fn load_image(path: &Path) -> Result<Image> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let dynimg = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (channels, raw, w, h) = match dynimg {
        image::DynamicImage::ImageLuma8(img) => {
            let (w, h) = (img.width(), img.height());
            (1, img.into_raw(), w, h)
        }
        image::DynamicImage::ImageRgb8(img) => {
            let (w, h) = (img.width(), img.height());
            (3, img.into_raw(), w, h)
        }
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!(
                    "unsupported pixel layout {:?}; only 8-bit gray and RGB are accepted",
                    other.color()
                ),
            })
        }
    };
    let data = raw.iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(h as usize, w as usize, channels, data)
}

/// Saves as 8-bit PNG with `round(sample * 255)` quantization.
///
/// Rejects images violating the `[0,1]` range invariant before writing.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    img.check_range()?;
    let w = img.width as u32;
    let h = img.height as u32;
    let bytes: Vec<u8> = img.data.iter().map(|&s| quantize_byte(s)).collect();
    let result = match img.channels {
        1 => image::GrayImage::from_raw(w, h, bytes)
            .expect("buffer length checked by constructor")
            .save_with_format(path, image::ImageFormat::Png),
        _ => image::RgbImage::from_raw(w, h, bytes)
            .expect("buffer length checked by constructor")
            .save_with_format(path, image::ImageFormat::Png),
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}
