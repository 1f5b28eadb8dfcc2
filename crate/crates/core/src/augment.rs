//! Pixel-level training augmentations on RGB buffers and binary PPM I/O.
//!
//! The training pipeline is resize → grayscale (visible only) → horizontal
//! flip → random erasing. Inference uses [`resize_bilinear`] alone.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::Modality;
use crate::error::{Error, Result};

/// Largest accepted target dimension.
pub const MAX_TARGET_DIM: usize = 8192;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    /// Row-major, three bytes per pixel.
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("dimensions {width}x{height}")));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "{} bytes for a {width}x{height} RGB image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Axis-aligned pixel rectangle, `x`/`y` being the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub grayscale_probability: f64,
    pub flip_probability: f64,
    pub erasing_probability: f64,
    pub erasing_area_range: (f64, f64),
    pub erasing_aspect_range: (f64, f64),
    /// `(height, width)`.
    pub target_size: (usize, usize),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            grayscale_probability: 0.5,
            flip_probability: 0.5,
            erasing_probability: 0.5,
            erasing_area_range: (0.02, 0.4),
            erasing_aspect_range: (0.3, 3.33),
            target_size: (320, 128),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("grayscale_probability", self.grayscale_probability),
            ("flip_probability", self.flip_probability),
            ("erasing_probability", self.erasing_probability),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        let (lo, hi) = self.erasing_area_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidConfig(format!("erasing_area_range ({lo}, {hi})")));
        }
        let (lo, hi) = self.erasing_aspect_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("erasing_aspect_range ({lo}, {hi})")));
        }
        let (h, w) = self.target_size;
        if h == 0 || w == 0 || h > MAX_TARGET_DIM || w > MAX_TARGET_DIM {
            return Err(Error::InvalidConfig(format!(
                "target_size ({h}, {w}) must lie in 1..={MAX_TARGET_DIM}"
            )));
        }
        Ok(())
    }
}

/// Which random branches fired in one pipeline run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AugmentTrace {
    pub grayscale: bool,
    pub flipped: bool,
    pub erased: Option<Rect>,
}

fn luma(rgb: [u8; 3]) -> u8 {
    // BT.601 weights, rounded half up in exact integer arithmetic.
    let y = (299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32 + 500) / 1000;
    y.min(255) as u8
}

pub fn to_grayscale(img: &ImageBuffer) -> ImageBuffer {
    let pixels = img
        .pixels
        .chunks_exact(3)
        .flat_map(|c| [luma([c[0], c[1], c[2]]); 3])
        .collect();
    ImageBuffer {
        pixels,
        ..*img
    }
}

pub fn flip_horizontal(img: &ImageBuffer) -> ImageBuffer {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            out.set_pixel(img.width - 1 - x, y, img.pixel(x, y));
        }
    }
    out
}

/// Source coordinate and interpolation weight for output index `i` under
/// half-pixel-centered sampling.
fn sample_axis(i: usize, input: usize, output: usize) -> (usize, usize, f64) {
    let src = ((i as f64 + 0.5) * input as f64 / output as f64 - 0.5).clamp(0.0, (input - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(input - 1);
    (lo, hi, src - lo as f64)
}

pub fn resize_bilinear(img: &ImageBuffer, out_h: usize, out_w: usize) -> Result<ImageBuffer> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidImage(format!("target size {out_h}x{out_w}")));
    }
    let cols: Vec<_> = (0..out_w).map(|x| sample_axis(x, img.width, out_w)).collect();
    let mut pixels = Vec::with_capacity(out_h * out_w * 3);
    for y in 0..out_h {
        let (y0, y1, fy) = sample_axis(y, img.height, out_h);
        for &(x0, x1, fx) in &cols {
            let (a, b) = (img.pixel(x0, y0), img.pixel(x1, y0));
            let (c, d) = (img.pixel(x0, y1), img.pixel(x1, y1));
            for ch in 0..3 {
                let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageBuffer::new(out_w, out_h, pixels)
}

const ERASE_ATTEMPTS: usize = 100;

/// Draws an erasing rectangle whose realized area fraction lies inside
/// `cfg.erasing_area_range`; `None` if no attempt fits.
fn draw_erase_rect<R: Rng + ?Sized>(img: &ImageBuffer, cfg: &AugmentConfig, rng: &mut R) -> Option<Rect> {
    let area = (img.width * img.height) as f64;
    let (area_lo, area_hi) = cfg.erasing_area_range;
    let (aspect_lo, aspect_hi) = cfg.erasing_aspect_range;
    for _ in 0..ERASE_ATTEMPTS {
        let target = rng.random_range(area_lo..=area_hi) * area;
        let aspect = rng.random_range(aspect_lo..=aspect_hi);
        let h = (target * aspect).sqrt().round() as usize;
        let w = (target / aspect).sqrt().round() as usize;
        if h == 0 || w == 0 || h > img.height || w > img.width {
            continue;
        }
        let fraction = (h * w) as f64 / area;
        if fraction < area_lo || fraction > area_hi {
            continue;
        }
        let x = rng.random_range(0..=img.width - w);
        let y = rng.random_range(0..=img.height - h);
        return Some(Rect {
            x,
            y,
            width: w,
            height: h,
        });
    }
    None
}

pub fn apply_train_augmentations<R: Rng + ?Sized>(
    img: &ImageBuffer,
    modality: Modality,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<ImageBuffer> {
    apply_train_augmentations_traced(img, modality, cfg, rng).map(|(out, _)| out)
}

/// Same as [`apply_train_augmentations`], also reporting which branches fired.
pub fn apply_train_augmentations_traced<R: Rng + ?Sized>(
    img: &ImageBuffer,
    modality: Modality,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(ImageBuffer, AugmentTrace)> {
    cfg.validate()?;
    let (h, w) = cfg.target_size;
    let mut out = resize_bilinear(img, h, w)?;
    let mut trace = AugmentTrace::default();

    if modality == Modality::Visible && rng.random_bool(cfg.grayscale_probability) {
        out = to_grayscale(&out);
        trace.grayscale = true;
    }
    if rng.random_bool(cfg.flip_probability) {
        out = flip_horizontal(&out);
        trace.flipped = true;
    }
    if rng.random_bool(cfg.erasing_probability) {
        if let Some(rect) = draw_erase_rect(&out, cfg, rng) {
            for y in rect.y..rect.y + rect.height {
                for x in rect.x..rect.x + rect.width {
                    out.set_pixel(x, y, [rng.random(), rng.random(), rng.random()]);
                }
            }
            trace.erased = Some(rect);
        }
    }
    Ok((out, trace))
}

pub fn ppm_encode(img: &ImageBuffer) -> Vec<u8> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend_from_slice(&img.pixels);
    bytes
}

pub fn ppm_write(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ppm_encode(img))?;
    Ok(())
}

pub fn ppm_read(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    ppm_decode(&fs::read(path)?)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::Ppm {
            offset: self.pos,
            reason: reason.into(),
        })
    }

    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return self.fail(format!("expected {field}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ASCII digits");
        match text.parse() {
            Ok(v) => Ok(v),
            Err(_) => Err(Error::Ppm {
                offset: start,
                reason: format!("{field} out of range"),
            }),
        }
    }
}

pub fn ppm_decode(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    if !bytes.starts_with(b"P6") {
        return cur.fail("expected magic \"P6\"");
    }
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Ppm {
            offset: maxval_at,
            reason: format!("maxval {maxval}, only 255 is supported"),
        });
    }
    if width == 0 || height == 0 {
        return cur.fail(format!("dimensions {width}x{height}"));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return cur.fail("expected whitespace after maxval");
    }
    cur.pos += 1;
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .map_or_else(|| cur.fail("image too large"), Ok)?;
    let payload = &bytes[cur.pos..];
    if payload.len() < len {
        return Err(Error::Ppm {
            offset: bytes.len(),
            reason: format!("payload truncated: {} of {len} bytes", payload.len()),
        });
    }
    ImageBuffer::new(width, height, payload[..len].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageBuffer {
        let pixels = (0..w * h * 3).map(|_| rng.random()).collect();
        ImageBuffer::new(w, h, pixels).unwrap()
    }

    fn identity_cfg(h: usize, w: usize) -> AugmentConfig {
        AugmentConfig {
            grayscale_probability: 0.0,
            flip_probability: 0.0,
            erasing_probability: 0.0,
            target_size: (h, w),
            ..AugmentConfig::default()
        }
    }

    #[test]
    fn grayscale_examples() {
        let red = ImageBuffer::filled(3, 2, [255, 0, 0]).unwrap();
        assert_eq!(to_grayscale(&red), ImageBuffer::filled(3, 2, [76, 76, 76]).unwrap());
        let white = ImageBuffer::filled(1, 1, [255; 3]).unwrap();
        assert_eq!(to_grayscale(&white), white);
        let gray = ImageBuffer::filled(2, 2, [17; 3]).unwrap();
        assert_eq!(to_grayscale(&gray), gray);
    }

    #[test]
    fn luma_matches_float_rounding() {
        for rgb in [[10, 200, 33], [1, 2, 3], [128, 128, 127], [255, 254, 0]] {
            let exact = 0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64;
            assert_eq!(luma(rgb) as f64, (exact + 0.5).floor());
        }
    }

    #[test]
    fn resize_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 5, 4);
        assert_eq!(resize_bilinear(&img, 4, 5).unwrap(), img);

        let mut px = vec![0; 6];
        px.extend([255; 6]);
        let corners = ImageBuffer::new(2, 2, px).unwrap();
        assert_eq!(resize_bilinear(&corners, 1, 1).unwrap().pixels(), &[128, 128, 128]);

        let dot = ImageBuffer::filled(1, 1, [9, 99, 199]).unwrap();
        assert_eq!(
            resize_bilinear(&dot, 4, 4).unwrap(),
            ImageBuffer::filled(4, 4, [9, 99, 199]).unwrap()
        );
        assert!(resize_bilinear(&dot, 0, 4).is_err());
    }

    #[test]
    fn flip_is_an_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_image(&mut rng, 7, 3);
        let f = flip_horizontal(&img);
        assert_eq!(f.pixel(0, 1), img.pixel(6, 1));
        assert_eq!(flip_horizontal(&f), img);
    }

    #[test]
    fn identity_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_image(&mut rng, 6, 9);
        let out = apply_train_augmentations(&img, Modality::Visible, &identity_cfg(9, 6), &mut rng).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn grayscale_gate_respects_modality() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = random_image(&mut rng, 8, 8);
        let cfg = AugmentConfig {
            grayscale_probability: 1.0,
            ..identity_cfg(8, 8)
        };
        let (vis, t) = apply_train_augmentations_traced(&img, Modality::Visible, &cfg, &mut rng).unwrap();
        assert!(t.grayscale);
        assert!(vis.pixels().chunks(3).all(|c| c[0] == c[1] && c[1] == c[2]));
        let (ir, t) = apply_train_augmentations_traced(&img, Modality::Infrared, &cfg, &mut rng).unwrap();
        assert!(!t.grayscale);
        assert_eq!(ir, img);
    }

    #[test]
    fn erased_area_within_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = ImageBuffer::filled(16, 40, [0; 3]).unwrap();
        let cfg = AugmentConfig {
            erasing_probability: 1.0,
            ..identity_cfg(40, 16)
        };
        let mut erased = 0;
        for _ in 0..200 {
            let (out, t) = apply_train_augmentations_traced(&img, Modality::Infrared, &cfg, &mut rng).unwrap();
            if let Some(r) = t.erased {
                erased += 1;
                let frac = r.area() as f64 / 640.0;
                assert!((0.02..=0.4).contains(&frac), "fraction {frac}");
                assert!(r.x + r.width <= 16 && r.y + r.height <= 40);
                for y in 0..40 {
                    for x in 0..16 {
                        if !r.contains(x, y) {
                            assert_eq!(out.pixel(x, y), [0; 3]);
                        }
                    }
                }
            }
        }
        assert!(erased > 190);
    }

    #[test]
    fn pipeline_is_seed_determined() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = random_image(&mut rng, 12, 20);
        let cfg = AugmentConfig {
            target_size: (30, 10),
            ..AugmentConfig::default()
        };
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            apply_train_augmentations(&img, Modality::Visible, &cfg, &mut r).unwrap()
        };
        assert_eq!(run(11), run(11));
        assert_eq!(run(11).width(), 10);
        assert_eq!(run(11).height(), 30);
    }

    #[test]
    fn oversized_target_rejected() {
        let img = ImageBuffer::filled(2, 2, [1; 3]).unwrap();
        let cfg = identity_cfg(8193, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            apply_train_augmentations(&img, Modality::Visible, &cfg, &mut rng),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn ppm_minimal_and_malformed() {
        let mut bytes = b"P6 2 2 255\n".to_vec();
        bytes.extend(0..12u8);
        let img = ppm_decode(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.pixel(1, 1), [9, 10, 11]);
        assert_eq!(ppm_decode(&ppm_encode(&img)).unwrap(), img);

        assert!(matches!(ppm_decode(b"P5 2 2 255\n"), Err(Error::Ppm { offset: 0, .. })));
        assert!(matches!(ppm_decode(b"P6 2 2 65535\n"), Err(Error::Ppm { offset: 6, .. })));
        assert!(matches!(ppm_decode(b"P6 2 x"), Err(Error::Ppm { offset: 5, .. })));
        let short = ppm_decode(&bytes[..bytes.len() - 1]);
        assert!(matches!(short, Err(Error::Ppm { offset: 22, .. })), "{short:?}");
    }
}
