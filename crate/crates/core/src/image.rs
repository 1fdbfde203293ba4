//! Planar image containers and raster I/O.
//!
//! Every container stores its samples channel-major ("planar"): the value of
//! channel `k` at pixel `i` lives at `data[k * pixels + i]`, and the pixel
//! index is row-major, `i = y * width + x`.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A `C x M` image with real-valued samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> ColorImage<T> {
    /// Wraps planar data. Fails if the length does not match the dimensions
    /// or a sample is not finite.
    pub fn from_planar(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidParameter(format!(
                "empty image {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite sample".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "empty image");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::zero())
    }

    /// Builds an image from `f(channel, x, y)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut img = Self::zeros(width, height, channels);
        for k in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.data[k * width * height + y * width + x] = f(k, x, y);
                }
            }
        }
        img
    }

    /// Stacks single-channel fields into one image.
    pub fn from_channels(channels: &[ScalarField<T>]) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::InvalidParameter("no channels".into()))?;
        let mut data = Vec::with_capacity(first.len() * channels.len());
        for c in channels {
            crate::error::ensure_same_grid("channel stack", first.dims(), c.dims())?;
            data.extend_from_slice(c.as_slice());
        }
        Self::from_planar(first.width(), first.height(), channels.len(), data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of pixels `M`.
    #[inline]
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> T {
        self.data[k * self.pixels() + i]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, v: T) {
        let m = self.pixels();
        self.data[k * m + i] = v;
    }

    #[inline]
    pub fn at(&self, k: usize, x: usize, y: usize) -> T {
        self.get(k, y * self.width + x)
    }

    pub fn channel(&self, k: usize) -> &[T] {
        let m = self.pixels();
        &self.data[k * m..(k + 1) * m]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [T] {
        let m = self.pixels();
        &mut self.data[k * m..(k + 1) * m]
    }

    /// Copies channel `k` out as a scalar field.
    pub fn channel_field(&self, k: usize) -> ScalarField<T> {
        ScalarField {
            width: self.width,
            height: self.height,
            data: self.channel(k).to_vec(),
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Clamps every sample into `[0, 1]`.
    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Per-pixel maximum over channels.
    pub fn channel_max(&self) -> ScalarField<T> {
        let m = self.pixels();
        let mut out = self.channel(0).to_vec();
        for k in 1..self.channels {
            for (o, &v) in out.iter_mut().zip(&self.data[k * m..(k + 1) * m]) {
                *o = o.max(v);
            }
        }
        ScalarField {
            width: self.width,
            height: self.height,
            data: out,
        }
    }

    /// Horizontal mirror image.
    pub fn flip_horizontal(&self) -> Self {
        let (w, _) = self.dims();
        Self::from_fn(self.width, self.height, self.channels, |k, x, y| {
            self.at(k, w - 1 - x, y)
        })
    }

    /// Converts to another scalar type.
    pub fn cast<U: Real>(&self) -> ColorImage<U> {
        ColorImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|v| U::lit(v.to_f64_lossy()))
                .collect(),
        }
    }
}

/// `M` real values on the pixel grid, e.g. an illumination map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!("empty field {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} field",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(width > 0 && height > 0, "empty field");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, i: usize) -> T {
        self.data[i]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::from_count(self.data.len())
    }

    /// Views the field as a one-channel image.
    pub fn to_image(&self) -> ColorImage<T> {
        ColorImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.clone(),
        }
    }
}

/// Forward-difference gradients: two directional components per channel.
///
/// Layout is `[channel][direction][pixel]`; direction 0 is horizontal (`+x`),
/// direction 1 vertical (`+y`).
#[derive(Debug, Clone, PartialEq)]
pub struct GradField<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> GradField<T> {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![T::zero(); width * height * channels * 2],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels * 2 {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height}x{channels}x2 gradient field",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Component `t` of channel `k`, one value per pixel.
    pub fn component(&self, k: usize, t: usize) -> &[T] {
        let m = self.pixels();
        let start = (k * 2 + t) * m;
        &self.data[start..start + m]
    }

    pub fn component_mut(&mut self, k: usize, t: usize) -> &mut [T] {
        let m = self.pixels();
        let start = (k * 2 + t) * m;
        &mut self.data[start..start + m]
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, t: usize) -> T {
        self.data[(k * 2 + t) * self.pixels() + i]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Direction `t` of every channel as a `C x M` image.
    pub fn direction_image(&self, t: usize) -> ColorImage<T> {
        let mut data = Vec::with_capacity(self.pixels() * self.channels);
        for k in 0..self.channels {
            data.extend_from_slice(self.component(k, t));
        }
        ColorImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }
}

/// Output sample depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Loads an 8/16-bit gray or RGB raster, scaling samples into `[0, 1]`.
///
/// Alpha channels are dropped. Gray inputs give a one-channel image.
pub fn load_image<T: Real>(path: impl AsRef<Path>) -> Result<ColorImage<T>> {
    let path = path.as_ref();
    let load_err = |reason: String| Error::Load {
        path: path.to_path_buf(),
        reason,
    };
    let dynamic = image::ImageReader::open(path)
        .map_err(|e| load_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| load_err(e.to_string()))?
        .decode()
        .map_err(|e| load_err(e.to_string()))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);

    use DynamicImage as D;
    let (channels, samples, max): (usize, Vec<f64>, f64) = match &dynamic {
        D::ImageLuma8(_) | D::ImageLumaA8(_) => {
            let buf = dynamic.to_luma8();
            (1, buf.into_raw().into_iter().map(f64::from).collect(), 255.0)
        }
        D::ImageLuma16(_) | D::ImageLumaA16(_) => {
            let buf = dynamic.to_luma16();
            (1, buf.into_raw().into_iter().map(f64::from).collect(), 65535.0)
        }
        D::ImageRgb8(_) | D::ImageRgba8(_) => {
            let buf = dynamic.to_rgb8();
            (3, buf.into_raw().into_iter().map(f64::from).collect(), 255.0)
        }
        D::ImageRgb16(_) | D::ImageRgba16(_) => {
            let buf = dynamic.to_rgb16();
            (3, buf.into_raw().into_iter().map(f64::from).collect(), 65535.0)
        }
        other => {
            return Err(load_err(format!(
                "unsupported sample format {:?}",
                other.color()
            )))
        }
    };

    // interleaved -> planar
    let m = w * h;
    let mut data = vec![T::zero(); m * channels];
    for i in 0..m {
        for k in 0..channels {
            data[k * m + i] = T::lit(samples[i * channels + k] / max);
        }
    }
    ColorImage::from_planar(w, h, channels, data).map_err(|e| load_err(e.to_string()))
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Writes a one- or three-channel image as PNG, PGM or PPM (chosen by the
/// file extension). Samples are clamped to `[0, 1]` and rounded.
pub fn save_image<T: Real>(img: &ColorImage<T>, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let save_err = |reason: String| Error::Save {
        path: path.to_path_buf(),
        reason,
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match (ext.as_str(), img.channels()) {
        ("png", 1 | 3) | ("pgm", 1) | ("ppm", 3) => {}
        ("pgm" | "ppm" | "png", c) => {
            return Err(save_err(format!("cannot write {c} channels as .{ext}")))
        }
        _ => return Err(save_err(format!("unsupported extension {ext:?}"))),
    }

    let (w, h, c, m) = (img.width(), img.height(), img.channels(), img.pixels());
    let max = depth.max_value();
    let mut interleaved = Vec::with_capacity(m * c);
    for i in 0..m {
        for k in 0..c {
            interleaved.push(quantize(img.get(k, i).to_f64_lossy(), max));
        }
    }
    let (wu, hu) = (w as u32, h as u32);
    let dynamic = match (depth, c) {
        (BitDepth::Eight, 1) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(wu, hu, interleaved.iter().map(|&v| v as u8).collect())
                .expect("buffer sized"),
        ),
        (BitDepth::Eight, _) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(wu, hu, interleaved.iter().map(|&v| v as u8).collect())
                .expect("buffer sized"),
        ),
        (BitDepth::Sixteen, 1) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(wu, hu, interleaved.iter().map(|&v| v as u16).collect())
                .expect("buffer sized"),
        ),
        (BitDepth::Sixteen, _) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(wu, hu, interleaved.iter().map(|&v| v as u16).collect())
                .expect("buffer sized"),
        ),
    };
    dynamic.save(path).map_err(|e| save_err(e.to_string()))
}
