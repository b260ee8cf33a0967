//! Dense images with values in [0, 1], stored row-major HWC.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Argument("image dimensions must be >= 1".into()));
        }
        if data.len() != h * w * c {
            return Err(Error::Argument(format!(
                "image data length {} does not match {}x{}x{}",
                data.len(),
                h,
                w,
                c
            )));
        }
        Ok(Self { h, w, c, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c, data: vec![0.0; h * w * c] }
    }

    /// Build from a pixel function of (y, x, channel).
    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push(f(y, x, ch));
                }
            }
        }
        Self { h, w, c, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f64) {
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.data
    }

    pub fn in_range(&self) -> bool {
        self.data.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Exact horizontal mirror (an involution on the pixel array).
    pub fn hflip(&self) -> Image {
        Image::from_fn(self.h, self.w, self.c, |y, x, ch| self.get(y, self.w - 1 - x, ch))
    }

    /// Bilinear resize with half-pixel centers. Identity when the size already matches.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Image {
        if out_h == self.h && out_w == self.w {
            return self.clone();
        }
        let sy = self.h as f64 / out_h as f64;
        let sx = self.w as f64 / out_w as f64;
        Image::from_fn(out_h, out_w, self.c, |oy, ox, ch| {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.h - 1) as f64);
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.w - 1) as f64);
            let y0 = fy.floor() as usize;
            let x0 = fx.floor() as usize;
            let y1 = (y0 + 1).min(self.h - 1);
            let x1 = (x0 + 1).min(self.w - 1);
            let dy = fy - y0 as f64;
            let dx = fx - x0 as f64;
            let top = self.get(y0, x0, ch) * (1.0 - dx) + self.get(y0, x1, ch) * dx;
            let bot = self.get(y1, x0, ch) * (1.0 - dx) + self.get(y1, x1, ch) * dx;
            top * (1.0 - dy) + bot * dy
        })
    }

    /// Crop a rectangle and resize it to (out_h, out_w).
    pub fn crop_resize(&self, top: usize, left: usize, ch_h: usize, cw: usize, out_h: usize, out_w: usize) -> Image {
        let mut crop = Image::zeros(ch_h, cw, self.c);
        for y in 0..ch_h {
            for x in 0..cw {
                for k in 0..self.c {
                    crop.set(y, x, k, self.get(top + y, left + x, k));
                }
            }
        }
        crop.resize_bilinear(out_h, out_w)
    }

    /// Per-pixel luma; uses Rec. 601 weights for 3-channel images, channel mean otherwise.
    pub fn luma(&self, y: usize, x: usize) -> f64 {
        if self.c == 3 {
            0.299 * self.get(y, x, 0) + 0.587 * self.get(y, x, 1) + 0.114 * self.get(y, x, 2)
        } else {
            (0..self.c).map(|k| self.get(y, x, k)).sum::<f64>() / self.c as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hflip_is_involution() {
        let img = Image::from_fn(3, 5, 2, |y, x, c| (y * 31 + x * 7 + c) as f64 / 50.0);
        assert_eq!(img.hflip().hflip(), img);
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = Image::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f64 / 16.0);
        assert_eq!(img.resize_bilinear(4, 4), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::from_fn(8, 8, 3, |_, _, _| 0.37);
        let out = img.resize_bilinear(5, 11);
        assert!(out.pixels().iter().all(|&v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn bad_dims_rejected() {
        assert!(Image::new(0, 4, 1, vec![]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
    }
}
