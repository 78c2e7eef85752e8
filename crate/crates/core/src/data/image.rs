//! Grayscale images, bilinear resize, rotation/flip augmentation and PGM I/O.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// A single-channel image with intensities in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Input(format!(
                "image {width}x{height} with {} pixels",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Input(format!("pixel {i} = {} outside [0, 1]", pixels[i])));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Image {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear sample at fractional pixel-index coordinates, clamped to the border.
    fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let p = |xx, yy| f64::from(self.get(xx, yy));
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width) {
            pixels.extend(row.iter().rev());
        }
        Image { pixels, ..*self }
    }

    /// Rotates by `degrees` about the image centre; samples falling outside the
    /// source grid are zero.
    pub fn rotate(&self, degrees: f64) -> Image {
        if degrees == 0.0 {
            return self.clone();
        }
        let (s, c) = degrees.to_radians().sin_cos();
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        let (wmax, hmax) = ((self.width - 1) as f64, (self.height - 1) as f64);
        let tol = 1e-9;
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let sx = cx + c * dx + s * dy;
                let sy = cy - s * dx + c * dy;
                let inside = sx >= -tol && sx <= wmax + tol && sy >= -tol && sy <= hmax + tol;
                let v = if inside { self.sample_clamped(sx, sy) } else { 0.0 };
                pixels.push(v.clamp(0.0, 1.0) as f32);
            }
        }
        Image { pixels, ..*self }
    }

    /// Bilinear resize with half-pixel-centre alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        assert!(width >= 1 && height >= 1, "resize target must be positive");
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            let fy = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..width {
                let fx = (x as f64 + 0.5) * sx - 0.5;
                pixels.push(self.sample_clamped(fx, fy).clamp(0.0, 1.0) as f32);
            }
        }
        Image { width, height, pixels }
    }

    pub fn load_pgm(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|e| Error::format(path, format!("unreadable image: {e}")))?
            .into_luma8();
        let (w, h) = img.dimensions();
        let pixels = img.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
        Image::new(w as usize, h as usize, pixels)
    }

    /// Writes a binary (P5) PGM, clamping to `[0, 1]` before 8-bit quantization.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
        use image::{ExtendedColorType, ImageEncoder};
        let bytes: Vec<u8> = self.pixels.iter().map(|&p| quantize(p)).collect();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let encoder = PnmEncoder::new(std::io::BufWriter::new(file))
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
        encoder
            .write_image(&bytes, self.width as u32, self.height as u32, ExtendedColorType::L8)
            .map_err(|e| Error::format(path, e.to_string()))
    }

    /// Places images next to each other at a common height.
    pub fn side_by_side(images: &[&Image]) -> Image {
        let height = images.iter().map(|i| i.height).max().unwrap_or(1);
        let width: usize = images.iter().map(|i| i.width).sum();
        let mut pixels = vec![0.0; width * height];
        let mut offset = 0;
        for img in images {
            for y in 0..img.height {
                let row = &img.pixels[y * img.width..(y + 1) * img.width];
                pixels[y * width + offset..y * width + offset + img.width].copy_from_slice(row);
            }
            offset += img.width;
        }
        Image { width, height, pixels }
    }
}

pub fn quantize(p: f32) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Rotation angles are drawn uniformly from `[-r, r]` degrees.
    pub rotation_range_degrees: f64,
    pub horizontal_flip_probability: f64,
    pub target_size: usize,
    pub rotation_enabled: bool,
}

impl AugmentConfig {
    pub fn new(target_size: usize) -> Self {
        AugmentConfig {
            rotation_range_degrees: 10.0,
            horizontal_flip_probability: 0.5,
            target_size,
            rotation_enabled: true,
        }
    }

    /// No rotation and no flip; only resizing remains.
    pub fn identity(target_size: usize) -> Self {
        AugmentConfig {
            rotation_range_degrees: 0.0,
            horizontal_flip_probability: 0.0,
            target_size,
            rotation_enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rotation_range_degrees >= 0.0 && self.rotation_range_degrees <= 180.0) {
            return Err(Error::Config(format!(
                "rotation range {} must be in [0, 180] degrees",
                self.rotation_range_degrees
            )));
        }
        if !(0.0..=1.0).contains(&self.horizontal_flip_probability) {
            return Err(Error::Config("flip probability must be in [0, 1]".into()));
        }
        if self.target_size == 0 {
            return Err(Error::Config("target size must be positive".into()));
        }
        Ok(())
    }
}

/// Random rotation then random horizontal flip; the generator is consumed the
/// same way whatever the configuration, so toggling one option leaves the
/// other's draws unchanged.
pub fn augment_image<R: Rng>(img: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    let u_rot: f64 = rng.gen();
    let u_flip: f64 = rng.gen();
    let mut out = if cfg.rotation_enabled && cfg.rotation_range_degrees > 0.0 {
        img.rotate((2.0 * u_rot - 1.0) * cfg.rotation_range_degrees)
    } else {
        img.clone()
    };
    if u_flip < cfg.horizontal_flip_probability {
        out = out.flip_horizontal();
    }
    out
}

/// Normalized image → augmentation (when `augment`) → resize to the target size.
pub fn preprocess<R: Rng>(img: &Image, cfg: &AugmentConfig, augment: bool, rng: &mut R) -> Image {
    let img = if augment {
        augment_image(img, cfg, rng)
    } else {
        img.clone()
    };
    img.resize_bilinear(cfg.target_size, cfg.target_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(w: usize, h: usize) -> Image {
        let px = (0..w * h).map(|i| i as f32 / (w * h) as f32).collect();
        Image::new(w, h, px).unwrap()
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ramp(5, 4);
        assert_eq!(img.resize_bilinear(5, 4), img);
        let c = Image::filled(3, 3, 0.4);
        let r = c.resize_bilinear(7, 5);
        assert!(r.pixels().iter().all(|&p| (p - 0.4).abs() < 1e-6));
    }

    #[test]
    fn resize_two_by_two_ramp() {
        let img = Image::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = img.resize_bilinear(4, 4);
        // Output centres map to source x = (j + 0.5) / 2 - 0.5, clamped to [0, 1].
        let expected: Vec<f32> = (0..4)
            .map(|j| ((j as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0) as f32)
            .collect();
        for y in 0..4 {
            for x in 0..4 {
                assert!((r.get(x, y) - expected[x]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn rotation_zero_fills_corners() {
        let img = Image::filled(16, 16, 1.0);
        let r = img.rotate(10.0);
        assert_eq!(r.get(0, 0), 0.0);
        assert_eq!(r.get(8, 8), 1.0);
        assert_eq!(img.rotate(0.0), img);
        let z = Image::filled(9, 9, 0.0);
        assert!(z.rotate(-7.5).pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn rotation_disabled_never_fills_corners() {
        let img = Image::filled(16, 16, 1.0);
        let mut cfg = AugmentConfig::new(16);
        cfg.rotation_enabled = false;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let out = augment_image(&img, &cfg, &mut rng);
            assert!(out.pixels().iter().all(|&p| p == 1.0));
        }
    }

    #[test]
    fn identity_augmentation() {
        let img = ramp(6, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment_image(&img, &AugmentConfig::identity(6), &mut rng), img);
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = ramp(5, 3);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_horizontal().get(0, 0), img.get(4, 0));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let px: Vec<f32> = (0..12).map(|i| (i * 20) as f32 / 255.0).collect();
        let img = Image::new(4, 3, px).unwrap();
        img.save_pgm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..2], b"P5");
        let back = Image::load_pgm(&path).unwrap();
        assert_eq!(back, img);
        let full = Image::filled(1, 1, 1.0);
        full.save_pgm(&path).unwrap();
        assert_eq!(Image::load_pgm(&path).unwrap().get(0, 0), 1.0);
    }
}
