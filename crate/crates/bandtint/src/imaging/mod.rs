//! Channel-planar floating-point images and PNG I/O.
//!
//! Natural images hold samples in [0, 1]. Spatial-domain frequency bands may
//! leave that range; such images carry the `band_domain` flag and are mapped
//! through `v -> v * 0.5 + 0.5` for display.

mod corpus;

pub use corpus::{cast_offsets, gen_corpus, read_corpus_dir, write_corpus_dir, CorpusSpec};

use std::path::Path;

use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub const GRAY_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarImage {
    channels: usize,
    height: usize,
    width: usize,
    planes: Vec<f32>,
    band_domain: bool,
}

impl PlanarImage {
    pub fn new(channels: usize, height: usize, width: usize, planes: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Imaging(format!("channels must be 1 or 3, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::Imaging("extents must be positive".into()));
        }
        if planes.len() != channels * height * width {
            return Err(Error::Imaging(format!(
                "plane buffer holds {} samples, expected {}",
                planes.len(),
                channels * height * width
            )));
        }
        if planes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Imaging("non-finite sample".into()));
        }
        Ok(Self { channels, height, width, planes, band_domain: false })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, planes: vec![0.0; channels * height * width], band_domain: false }
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            planes: vec![value; channels * height * width],
            band_domain: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn band_domain(&self) -> bool {
        self.band_domain
    }

    pub fn with_band_domain(mut self, flag: bool) -> Self {
        self.band_domain = flag;
        self
    }

    pub fn samples(&self) -> &[f32] {
        &self.planes
    }

    pub fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.planes
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.planes[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    pub fn sample(&self, c: usize, y: usize, x: usize) -> f32 {
        self.planes[(c * self.height + y) * self.width + x]
    }

    pub fn set_sample(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.planes[(c * self.height + y) * self.width + x] = v;
    }

    /// Extract one channel as a single-plane image, keeping the domain flag.
    pub fn channel(&self, c: usize) -> PlanarImage {
        PlanarImage {
            channels: 1,
            height: self.height,
            width: self.width,
            planes: self.plane(c).to_vec(),
            band_domain: self.band_domain,
        }
    }

    pub fn clamp01(&self) -> PlanarImage {
        PlanarImage {
            channels: self.channels,
            height: self.height,
            width: self.width,
            planes: self.planes.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            band_domain: false,
        }
    }

    /// Affine display mapping `v -> v * 0.5 + 0.5` for band-domain images.
    pub fn display_map(&self) -> PlanarImage {
        PlanarImage {
            channels: self.channels,
            height: self.height,
            width: self.width,
            planes: self.planes.iter().map(|v| v * 0.5 + 0.5).collect(),
            band_domain: false,
        }
    }

    /// Inverse of [`PlanarImage::display_map`].
    pub fn display_unmap(&self) -> PlanarImage {
        PlanarImage {
            channels: self.channels,
            height: self.height,
            width: self.width,
            planes: self.planes.iter().map(|v| (v - 0.5) * 2.0).collect(),
            band_domain: true,
        }
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let data = self.planes.iter().map(|&v| S::from_f64(v as f64)).collect();
        Tensor::new(vec![self.channels, self.height, self.width], data)
            .expect("image invariants imply a valid tensor")
    }

    pub fn from_tensor<S: Scalar>(t: &Tensor<S>, band_domain: bool) -> Result<Self> {
        let shape = t.shape();
        if shape.len() != 3 {
            return Err(Error::Imaging(format!("tensor of rank {} is not an image", shape.len())));
        }
        let img = Self::new(
            shape[0],
            shape[1],
            shape[2],
            t.data().iter().map(|v| v.to_f64() as f32).collect(),
        )?;
        Ok(img.with_band_domain(band_domain))
    }

    /// Per-sample maximum absolute difference.
    pub fn max_abs_diff(&self, other: &PlanarImage) -> f32 {
        debug_assert_eq!(self.planes.len(), other.planes.len());
        self.planes
            .iter()
            .zip(&other.planes)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Rec. 601 luminance of an RGB image.
pub fn to_gray(img: &PlanarImage) -> Result<PlanarImage> {
    if img.channels != 3 {
        return Err(Error::Imaging("to_gray expects a 3-channel image".into()));
    }
    if img.band_domain {
        return Err(Error::Imaging("to_gray expects a natural-domain image".into()));
    }
    let n = img.height * img.width;
    let (r, g, b) = (&img.planes[..n], &img.planes[n..2 * n], &img.planes[2 * n..]);
    let planes = (0..n)
        .map(|i| {
            let y = GRAY_WEIGHTS[0] * r[i] as f64
                + GRAY_WEIGHTS[1] * g[i] as f64
                + GRAY_WEIGHTS[2] * b[i] as f64;
            y.clamp(0.0, 1.0) as f32
        })
        .collect();
    PlanarImage::new(1, img.height, img.width, planes)
}

/// Load an 8-bit RGB or grayscale image, mapping samples to [0, 1] via v/255.
pub fn load_image(path: &Path) -> Result<PlanarImage> {
    let err = |msg: String| Error::ImageFile { path: path.display().to_string(), msg };
    let decoded = image::ImageReader::open(path)
        .map_err(|e| err(e.to_string()))?
        .decode()
        .map_err(|e| err(e.to_string()))?;
    match decoded {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let planes = g.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
            PlanarImage::new(1, h, w, planes)
        }
        image::DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let raw = rgb.as_raw();
            let mut planes = vec![0.0f32; 3 * h * w];
            for i in 0..h * w {
                for c in 0..3 {
                    planes[c * h * w + i] = raw[3 * i + c] as f32 / 255.0;
                }
            }
            PlanarImage::new(3, h, w, planes)
        }
        other => Err(err(format!(
            "unsupported pixel layout {:?}; only 8-bit RGB and grayscale are readable",
            other.color()
        ))),
    }
}

/// Save as 8-bit PNG; samples are clamped to [0, 1] and quantized to v*255.
pub fn save_image(img: &PlanarImage, path: &Path) -> Result<()> {
    let err = |msg: String| Error::ImageFile { path: path.display().to_string(), msg };
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (h, w) = (img.height, img.width);
    match img.channels {
        1 => {
            let buf: Vec<u8> = img.planes.iter().map(|&v| q(v)).collect();
            let gray = image::GrayImage::from_raw(w as u32, h as u32, buf)
                .expect("buffer sized from image extents");
            gray.save_with_format(path, image::ImageFormat::Png)
                .map_err(|e| err(e.to_string()))
        }
        3 => {
            let n = h * w;
            let mut buf = vec![0u8; 3 * n];
            for i in 0..n {
                for c in 0..3 {
                    buf[3 * i + c] = q(img.planes[c * n + i]);
                }
            }
            let rgb = image::RgbImage::from_raw(w as u32, h as u32, buf)
                .expect("buffer sized from image extents");
            rgb.save_with_format(path, image::ImageFormat::Png)
                .map_err(|e| err(e.to_string()))
        }
        _ => unreachable!("constructor admits only 1 or 3 channels"),
    }
}
