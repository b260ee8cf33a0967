//! Seedable augmentation pipelines. A pipeline applied with an explicit seed
//! is a pure function of (image, seed): every random draw comes from a ChaCha
//! stream constructed from that seed.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// One augmentation op: a transform kind plus its application probability.
#[derive(Debug, Clone, PartialEq)]
pub struct AugOp {
    pub kind: AugKind,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AugKind {
    /// Crop a random area fraction in `[scale_min, scale_max]` with log-uniform
    /// aspect ratio in `[ratio_min, ratio_max]`, then resize to the output size.
    RandomResizedCrop { scale_min: f64, scale_max: f64, ratio_min: f64, ratio_max: f64 },
    HorizontalFlip,
    ColorJitter { brightness: f64, contrast: f64, saturation: f64, hue: f64 },
    Grayscale,
    GaussianBlur { sigma_min: f64, sigma_max: f64 },
    /// v -> 1 - v for v >= threshold.
    Solarize { threshold: f64 },
    /// Plain resize to the output size; identity when the size already matches.
    Resize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPipeline {
    pub ops: Vec<AugOp>,
    pub out_hw: usize,
    pub setting_name: String,
}

/// Build one of the named settings: "strong", "rhflip", or "none".
pub fn make_pipeline(setting_name: &str, out_hw: usize) -> Result<AugmentationPipeline> {
    if out_hw == 0 {
        return Err(Error::Argument("out_hw must be >= 1".into()));
    }
    let ops = match setting_name {
        "strong" => vec![
            AugOp {
                kind: AugKind::RandomResizedCrop {
                    scale_min: 0.2,
                    scale_max: 1.0,
                    ratio_min: 0.75,
                    ratio_max: 4.0 / 3.0,
                },
                prob: 1.0,
            },
            AugOp { kind: AugKind::HorizontalFlip, prob: 0.5 },
            AugOp {
                kind: AugKind::ColorJitter { brightness: 0.4, contrast: 0.4, saturation: 0.4, hue: 0.1 },
                prob: 0.8,
            },
            AugOp { kind: AugKind::Grayscale, prob: 0.2 },
            AugOp { kind: AugKind::GaussianBlur { sigma_min: 0.1, sigma_max: 2.0 }, prob: 0.5 },
            AugOp { kind: AugKind::Solarize { threshold: 0.5 }, prob: 0.2 },
        ],
        "rhflip" => vec![AugOp { kind: AugKind::HorizontalFlip, prob: 0.5 }],
        "none" => vec![AugOp { kind: AugKind::Resize, prob: 1.0 }],
        other => return Err(Error::Argument(format!("unknown augmentation setting {other:?}"))),
    };
    Ok(AugmentationPipeline { ops, out_hw, setting_name: setting_name.to_string() })
}

impl AugmentationPipeline {
    /// Apply every op in order, then guarantee the configured output size.
    /// Deterministic: the same (image, seed) always yields the same pixels.
    pub fn apply(&self, image: &Image, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = image.clone();
        for op in &self.ops {
            let roll: f64 = rng.random();
            if roll < op.prob {
                img = apply_op(&op.kind, &img, self.out_hw, &mut rng);
            }
        }
        if img.height() != self.out_hw || img.width() != self.out_hw {
            img = img.resize_bilinear(self.out_hw, self.out_hw);
        }
        img.clamp_unit();
        img
    }
}

fn apply_op(kind: &AugKind, img: &Image, out_hw: usize, rng: &mut ChaCha8Rng) -> Image {
    match kind {
        AugKind::RandomResizedCrop { scale_min, scale_max, ratio_min, ratio_max } => {
            random_resized_crop(img, out_hw, *scale_min, *scale_max, *ratio_min, *ratio_max, rng)
        }
        AugKind::HorizontalFlip => img.hflip(),
        AugKind::ColorJitter { brightness, contrast, saturation, hue } => {
            color_jitter(img, *brightness, *contrast, *saturation, *hue, rng)
        }
        AugKind::Grayscale => grayscale(img),
        AugKind::GaussianBlur { sigma_min, sigma_max } => {
            let sigma = rng.random_range(*sigma_min..=*sigma_max);
            gaussian_blur(img, sigma)
        }
        AugKind::Solarize { threshold } => solarize(img, *threshold),
        AugKind::Resize => img.resize_bilinear(out_hw, out_hw),
    }
}

fn random_resized_crop(
    img: &Image,
    out_hw: usize,
    scale_min: f64,
    scale_max: f64,
    ratio_min: f64,
    ratio_max: f64,
    rng: &mut ChaCha8Rng,
) -> Image {
    let (h, w) = (img.height(), img.width());
    let area = (h * w) as f64;
    for _ in 0..10 {
        let target = area * rng.random_range(scale_min..=scale_max);
        let ratio = (rng.random_range(ratio_min.ln()..=ratio_max.ln())).exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return img.crop_resize(top, left, ch, cw, out_hw, out_hw);
        }
    }
    // fallback: centered square of the short side
    let side = h.min(w);
    let top = (h - side) / 2;
    let left = (w - side) / 2;
    img.crop_resize(top, left, side, side, out_hw, out_hw)
}

fn grayscale(img: &Image) -> Image {
    Image::from_fn(img.height(), img.width(), img.channels(), |y, x, _| img.luma(y, x))
}

fn solarize(img: &Image, threshold: f64) -> Image {
    Image::from_fn(img.height(), img.width(), img.channels(), |y, x, c| {
        let v = img.get(y, x, c);
        if v >= threshold {
            1.0 - v
        } else {
            v
        }
    })
}

fn color_jitter(
    img: &Image,
    brightness: f64,
    contrast: f64,
    saturation: f64,
    hue: f64,
    rng: &mut ChaCha8Rng,
) -> Image {
    let mut out = img.clone();
    let b = rng.random_range(1.0 - brightness..=1.0 + brightness);
    for v in out.pixels_mut() {
        *v = (*v * b).clamp(0.0, 1.0);
    }
    let c = rng.random_range(1.0 - contrast..=1.0 + contrast);
    let mean_luma = {
        let mut acc = 0.0;
        for y in 0..out.height() {
            for x in 0..out.width() {
                acc += out.luma(y, x);
            }
        }
        acc / (out.height() * out.width()) as f64
    };
    for v in out.pixels_mut() {
        *v = ((*v - mean_luma) * c + mean_luma).clamp(0.0, 1.0);
    }
    if out.channels() == 3 {
        let s = rng.random_range(1.0 - saturation..=1.0 + saturation);
        let mut sat = out.clone();
        for y in 0..out.height() {
            for x in 0..out.width() {
                let g = out.luma(y, x);
                for k in 0..3 {
                    sat.set(y, x, k, ((out.get(y, x, k) - g) * s + g).clamp(0.0, 1.0));
                }
            }
        }
        out = sat;
        let dh = rng.random_range(-hue..=hue);
        out = hue_shift(&out, dh);
    }
    out
}

fn hue_shift(img: &Image, dh: f64) -> Image {
    Image::from_fn(img.height(), img.width(), 3, |y, x, k| {
        let (r, g, b) = (img.get(y, x, 0), img.get(y, x, 1), img.get(y, x, 2));
        let (h, s, v) = rgb_to_hsv(r, g, b);
        let rgb = hsv_to_rgb((h + dh).rem_euclid(1.0), s, v);
        [rgb.0, rgb.1, rgb.2][k].clamp(0.0, 1.0)
    })
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h * 6.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Separable Gaussian convolution with reflected borders; kernel radius 3*sigma.
fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let radius = (3.0 * sigma).ceil() as isize;
    if radius == 0 {
        return img.clone();
    }
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let reflect = |idx: isize, n: usize| -> usize {
        let n = n as isize;
        let mut t = idx;
        while t < 0 || t >= n {
            if t < 0 {
                t = -t - 1;
            }
            if t >= n {
                t = 2 * n - 1 - t;
            }
        }
        t as usize
    };
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut horiz = Image::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sx = reflect(x as isize + ki as isize - radius, w);
                    acc += kv * img.get(y, sx, k);
                }
                horiz.set(y, x, k, acc);
            }
        }
    }
    let mut out = Image::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sy = reflect(y as isize + ki as isize - radius, h);
                    acc += kv * horiz.get(sy, x, k);
                }
                out.set(y, x, k, acc);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(hw: usize) -> Image {
        Image::from_fn(hw, hw, 3, |y, x, c| ((y * 17 + x * 5 + c * 3) % 11) as f64 / 10.0)
    }

    #[test]
    fn rhflip_has_exactly_one_op() {
        let p = make_pipeline("rhflip", 16).unwrap();
        assert_eq!(p.ops.len(), 1);
        assert_eq!(p.ops[0].kind, AugKind::HorizontalFlip);
    }

    #[test]
    fn none_is_identity_on_matching_size() {
        let p = make_pipeline("none", 16).unwrap();
        let img = test_image(16);
        for seed in 0..20 {
            assert_eq!(p.apply(&img, seed), img);
        }
    }

    #[test]
    fn unknown_setting_rejected() {
        assert!(matches!(make_pipeline("mild", 16), Err(Error::Argument(_))));
    }

    #[test]
    fn strong_output_shape_fixed_over_many_draws() {
        let p = make_pipeline("strong", 16).unwrap();
        let img = test_image(24);
        for seed in 0..1000 {
            let out = p.apply(&img, seed);
            assert_eq!((out.height(), out.width(), out.channels()), (16, 16, 3));
        }
    }

    #[test]
    fn forced_hflip_twice_restores_image() {
        let p = AugmentationPipeline {
            ops: vec![AugOp { kind: AugKind::HorizontalFlip, prob: 1.0 }],
            out_hw: 8,
            setting_name: "test".into(),
        };
        let img = test_image(8);
        let once = p.apply(&img, 0);
        let twice = p.apply(&once, 1);
        assert_eq!(twice, img);
        assert_ne!(once, img);
    }

    #[test]
    fn forced_grayscale_equalizes_channels() {
        let p = AugmentationPipeline {
            ops: vec![AugOp { kind: AugKind::Grayscale, prob: 1.0 }],
            out_hw: 8,
            setting_name: "test".into(),
        };
        let out = p.apply(&test_image(8), 3);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(out.get(y, x, 0), out.get(y, x, 1));
                assert_eq!(out.get(y, x, 1), out.get(y, x, 2));
            }
        }
    }

    #[test]
    fn solarize_reflects_values_at_threshold() {
        let p = AugmentationPipeline {
            ops: vec![AugOp { kind: AugKind::Solarize { threshold: 0.5 }, prob: 1.0 }],
            out_hw: 8,
            setting_name: "test".into(),
        };
        let img = Image::from_fn(8, 8, 3, |_, _, _| 0.75);
        let out = p.apply(&img, 0);
        // 1 - v for every pixel, checked pixelwise
        for v in out.pixels() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let low = Image::from_fn(8, 8, 3, |_, _, _| 0.25);
        assert_eq!(p.apply(&low, 0), low);
    }

    #[test]
    fn apply_is_bit_deterministic() {
        let p = make_pipeline("strong", 12).unwrap();
        let img = test_image(20);
        for seed in [0u64, 1, 99, u64::MAX] {
            assert_eq!(p.apply(&img, seed), p.apply(&img, seed));
        }
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        for setting in ["strong", "rhflip", "none"] {
            let p = make_pipeline(setting, 10).unwrap();
            let mut rng = crate::rng::stream(5, 0, 0, 0);
            for seed in 0..500u64 {
                let img = Image::from_fn(13, 13, 3, |_, _, _| rand::Rng::random::<f64>(&mut rng));
                let out = p.apply(&img, seed);
                assert!(out.in_range(), "{setting} escaped [0,1] at seed {seed}");
            }
        }
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = Image::from_fn(9, 9, 1, |_, _, _| 0.6);
        let out = gaussian_blur(&img, 1.3);
        for v in out.pixels() {
            assert!((v - 0.6).abs() < 1e-12);
        }
    }
}
