//! Grayscale images, validity masks, bilinear sampling and image file IO.

use std::path::Path;

use image::{DynamicImage, GrayImage, Luma};

use crate::error::{Error, Result};

/// Fractional tap offsets closer than this to an integer are snapped, so that
/// exact and nearly exact pixel-center lookups use a single tap.
const TAP_SNAP: f64 = 1e-9;

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl ImageGray {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        ImageGray {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::ShapeMismatch(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(ImageGray {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        ImageGray {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: f64) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = value.clamp(0.0, 1.0);
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Bilinear sample at a continuous coordinate; `None` if a tap with non-zero
    /// weight falls outside the image.
    #[inline]
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        let (x0, fx) = split_tap(u - 0.5)?;
        let (y0, fy) = split_tap(v - 0.5)?;
        let (w, h) = (self.width as i64, self.height as i64);
        let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
        let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
        if x0 < 0 || y0 < 0 || x1 >= w || y1 >= h {
            return None;
        }
        Some(self.blend(x0 as usize, y0 as usize, fx, fy))
    }

    /// Bilinear sample with taps clamped to the image border.
    #[inline]
    pub fn sample_clamped(&self, u: f64, v: f64) -> f64 {
        let x = (u - 0.5).clamp(0.0, self.width as f64 - 1.0);
        let y = (v - 0.5).clamp(0.0, self.height as f64 - 1.0);
        let (x0, fx) = split_tap(x).unwrap_or((0, 0.0));
        let (y0, fy) = split_tap(y).unwrap_or((0, 0.0));
        let x0 = (x0 as usize).min(self.width as usize - 1);
        let y0 = (y0 as usize).min(self.height as usize - 1);
        let fx = if x0 + 1 < self.width as usize { fx } else { 0.0 };
        let fy = if y0 + 1 < self.height as usize { fy } else { 0.0 };
        self.blend(x0, y0, fx, fy)
    }

    #[inline]
    fn blend(&self, x0: usize, y0: usize, fx: f64, fy: f64) -> f64 {
        let w = self.width as usize;
        let row0 = y0 * w;
        let mut value = self.data[row0 + x0] * (1.0 - fx) * (1.0 - fy);
        if fx > 0.0 {
            value += self.data[row0 + x0 + 1] * fx * (1.0 - fy);
        }
        if fy > 0.0 {
            let row1 = row0 + w;
            value += self.data[row1 + x0] * (1.0 - fx) * fy;
            if fx > 0.0 {
                value += self.data[row1 + x0 + 1] * fx * fy;
            }
        }
        value.clamp(0.0, 1.0)
    }

    /// Bilinear resize; output pixel centers map proportionally onto the input.
    pub fn resized(&self, width: u32, height: u32) -> ImageGray {
        if (width, height) == self.size() {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        ImageGray::from_fn(width, height, |x, y| {
            self.sample_clamped((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(&img))
    }

    /// Converts any decoded image to gray, using BT.601 luma weights for color.
    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let (width, height) = (img.width(), img.height());
        let data: Vec<f64> = match img {
            DynamicImage::ImageLuma8(g) => g.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
            DynamicImage::ImageLuma16(g) => g.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
            other => other
                .to_rgb32f()
                .pixels()
                .map(|p| {
                    let [r, g, b] = p.0;
                    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).clamp(0.0, 1.0)
                })
                .collect(),
        };
        ImageGray {
            width,
            height,
            data,
        }
    }

    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([(self.get(x, y) * 255.0).round().clamp(0.0, 255.0) as u8])
        })
    }

    /// Writes an 8-bit PNG or PGM, chosen by the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_gray8(&self.to_gray8(), path.as_ref())
    }
}

fn save_gray8(img: &GrayImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Whether a bilinear lookup at `(u, v)` has all its weighted taps inside a
/// `width x height` image; mirrors the validity rule of [`ImageGray::sample`].
#[inline]
pub fn bilinear_support_in(u: f64, v: f64, width: u32, height: u32) -> bool {
    let (Some((x0, fx)), Some((y0, fy))) = (split_tap(u - 0.5), split_tap(v - 0.5)) else {
        return false;
    };
    let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
    let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
    x0 >= 0 && y0 >= 0 && x1 < width as i64 && y1 < height as i64
}

#[inline]
fn split_tap(x: f64) -> Option<(i64, f64)> {
    if !x.is_finite() {
        return None;
    }
    let mut x0 = x.floor();
    let mut frac = x - x0;
    if frac < TAP_SNAP {
        frac = 0.0;
    } else if frac > 1.0 - TAP_SNAP {
        x0 += 1.0;
        frac = 0.0;
    }
    Some((x0 as i64, frac))
}

/// Per-pixel validity flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl ValidMask {
    pub fn new(width: u32, height: u32, value: bool) -> Self {
        ValidMask {
            width,
            height,
            bits: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn all(&self) -> bool {
        self.bits.iter().all(|b| *b)
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.bits.len().max(1) as f64
    }

    /// Clears every pixel within `radius` (Chebyshev) of an invalid pixel.
    /// Pixels outside the image do not erode.
    pub fn eroded(&self, radius: u32) -> ValidMask {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width as i64, self.height as i64);
        let r = radius as i64;
        let mut out = self.clone();
        for y in 0..h {
            for x in 0..w {
                if self.bits[(y * w + x) as usize] {
                    continue;
                }
                for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                    for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                        out.bits[(yy * w + xx) as usize] = false;
                    }
                }
            }
        }
        out
    }

    /// Writes the mask as an 8-bit image with values 0/255.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        });
        save_gray8(&img, path.as_ref())
    }
}
