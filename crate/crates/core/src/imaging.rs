//! Grayscale image loading plus the augmentation and contrast operations
//! used to grow a small X-ray collection.

use std::path::Path;

use image::{DynamicImage, ImageFormat};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Single channel 8-bit image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be at least 1x1"));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                found: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
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

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    fn blank_like(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: vec![0; self.pixels.len()],
        }
    }

    /// Pixel counts per intensity.
    pub fn histogram(&self) -> [usize; 256] {
        let mut bins = [0usize; 256];
        for &p in &self.pixels {
            bins[p as usize] += 1;
        }
        bins
    }

    /// Bilinear resample to `width` x `height`.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("resize target must be at least 1x1"));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let buf = image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.clone(),
        )
        .expect("buffer length matches dimensions");
        let out = image::imageops::resize(
            &buf,
            width as u32,
            height as u32,
            image::imageops::FilterType::Triangle,
        );
        Self::new(width, height, out.into_raw())
    }
}

/// Mirror axis. `Horizontal` reverses each row (left/right), `Vertical`
/// reverses each column (up/down).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// Reads a PGM (P2/P5) or PNG file. Colour inputs are reduced to one channel
/// by averaging the colour channels; alpha is ignored.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(to_gray(decoded))
}

fn to_gray(img: DynamicImage) -> GrayImage {
    let (width, height) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0]).collect(),
        other if other.color().has_color() => other
            .to_rgb8()
            .pixels()
            .map(|p| channel_mean(p.0[0], p.0[1], p.0[2]))
            .collect(),
        other => other.to_luma8().into_raw(),
    };
    GrayImage {
        width,
        height,
        pixels,
    }
}

fn channel_mean(r: u8, g: u8, b: u8) -> u8 {
    let sum = r as u32 + g as u32 + b as u32;
    ((sum + 1) / 3) as u8
}

/// On-disk encodings used when writing augmented images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageEncoding {
    Pgm,
    Png,
}

impl ImageEncoding {
    pub fn for_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
        {
            Some(ext) if ext == "png" => ImageEncoding::Png,
            _ => ImageEncoding::Pgm,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageEncoding::Pgm => "pgm",
            ImageEncoding::Png => "png",
        }
    }
}

pub fn save_image(img: &GrayImage, path: impl AsRef<Path>, encoding: ImageEncoding) -> Result<()> {
    let path = path.as_ref();
    match encoding {
        ImageEncoding::Pgm => {
            let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
            bytes.extend_from_slice(&img.pixels);
            std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        ImageEncoding::Png => {
            let buf =
                image::GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
                    .expect("buffer length matches dimensions");
            buf.save_with_format(path, ImageFormat::Png)
                .map_err(|e| Error::Image {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })
        }
    }
}

pub fn flip(img: &GrayImage, axis: Axis) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let mut out = img.blank_like();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = match axis {
                Axis::Horizontal => (w - 1 - x, y),
                Axis::Vertical => (x, h - 1 - y),
            };
            out.pixels[y * w + x] = img.pixels[sy * w + sx];
        }
    }
    out
}

/// Cosine and sine of `degrees`, exact at multiples of 90.
fn unit_rotation(degrees: f64) -> (f64, f64) {
    let a = degrees.rem_euclid(360.0);
    match a {
        a if a == 0.0 => (1.0, 0.0),
        a if a == 90.0 => (0.0, 1.0),
        a if a == 180.0 => (-1.0, 0.0),
        a if a == 270.0 => (0.0, -1.0),
        a => {
            let r = a.to_radians();
            (r.cos(), r.sin())
        }
    }
}

/// Rotates counter-clockwise about the image centre with nearest-neighbour
/// sampling. The canvas keeps its size; pixels with no source are 0.
pub fn rotate(img: &GrayImage, degrees: f64) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let (cos, sin) = unit_rotation(degrees);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = img.blank_like();
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // inverse map; with y pointing down this turns content counter-clockwise
            let sx = (cos * dx - sin * dy + cx).round();
            let sy = (sin * dx + cos * dy + cy).round();
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                out.pixels[y * w + x] = img.pixels[sy as usize * w + sx as usize];
            }
        }
    }
    out
}

/// Shifts content right by `dx` and down by `dy`, zero-filling the gap.
pub fn translate(img: &GrayImage, dx: i64, dy: i64) -> Result<GrayImage> {
    let (w, h) = (img.width as i64, img.height as i64);
    if dx.abs() >= w || dy.abs() >= h {
        return Err(Error::invalid(format!(
            "translation ({dx}, {dy}) must be smaller than the {w}x{h} image"
        )));
    }
    let mut out = img.blank_like();
    for y in 0..h {
        let sy = y - dy;
        if !(0..h).contains(&sy) {
            continue;
        }
        for x in 0..w {
            let sx = x - dx;
            if (0..w).contains(&sx) {
                out.pixels[(y * w + x) as usize] = img.pixels[(sy * w + sx) as usize];
            }
        }
    }
    Ok(out)
}

/// Global histogram equalisation over 256 bins. Each intensity `v` maps to
/// `floor(255 * cdf(v))` where `cdf(v)` is the fraction of pixels `<= v`.
/// The mapping is monotone, sends the brightest level to 255, and is a
/// fixed point on its own output.
pub fn histogram_modify(img: &GrayImage) -> GrayImage {
    let bins = img.histogram();
    let total = img.pixels.len() as u64;
    let mut lut = [0u8; 256];
    let mut cumulative = 0u64;
    for (v, &count) in bins.iter().enumerate() {
        cumulative += count as u64;
        lut[v] = ((255 * cumulative) / total) as u8;
    }
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&p| lut[p as usize]).collect(),
    }
}

/// Rotation magnitudes the default sampler draws from, in degrees.
pub const DEFAULT_ANGLE_POOL: [f64; 12] = [
    -30.0, -25.0, -20.0, -15.0, -10.0, -5.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0,
];

/// Translation offset policy.
#[derive(Debug, Clone, PartialEq)]
pub enum Shift {
    /// `(width / 10, height / 10)` of the image being augmented.
    Tenth,
    Pixels(i64, i64),
}

impl Shift {
    pub fn resolve(&self, img: &GrayImage) -> (i64, i64) {
        match *self {
            Shift::Tenth => ((img.width / 10) as i64, (img.height / 10) as i64),
            Shift::Pixels(dx, dy) => (dx, dy),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSpec {
    pub flips: Vec<Axis>,
    pub rotation_angles: Vec<f64>,
    pub translations: Vec<Shift>,
    pub seed: u64,
}

impl AugmentationSpec {
    /// Both flips, five distinct angles drawn from [`DEFAULT_ANGLE_POOL`]
    /// with `seed`, one translation by a tenth of the image size.
    pub fn sampled(seed: u64) -> Self {
        Self::sampled_from(seed, &DEFAULT_ANGLE_POOL, 5)
    }

    pub fn sampled_from(seed: u64, pool: &[f64], count: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut angles: Vec<f64> = pool.to_vec();
        angles.shuffle(&mut rng);
        angles.truncate(count);
        Self {
            flips: vec![Axis::Horizontal, Axis::Vertical],
            rotation_angles: angles,
            translations: vec![Shift::Tenth],
            seed,
        }
    }

    pub fn derived_count(&self) -> usize {
        self.flips.len() + self.rotation_angles.len() + self.translations.len()
    }
}

/// One augmented view with the file-stem suffix that names it.
#[derive(Debug, Clone, PartialEq)]
pub struct Derived {
    pub suffix: String,
    pub image: GrayImage,
}

/// Derived views only; the original is not part of the output.
pub fn augment(img: &GrayImage, spec: &AugmentationSpec) -> Result<Vec<Derived>> {
    let mut out = Vec::with_capacity(spec.derived_count());
    for &axis in &spec.flips {
        let suffix = match axis {
            Axis::Horizontal => "_fh",
            Axis::Vertical => "_fv",
        };
        out.push(Derived {
            suffix: suffix.to_owned(),
            image: flip(img, axis),
        });
    }
    for &angle in &spec.rotation_angles {
        out.push(Derived {
            suffix: format!("_r{angle}"),
            image: rotate(img, angle),
        });
    }
    for shift in &spec.translations {
        let (dx, dy) = shift.resolve(img);
        out.push(Derived {
            suffix: format!("_t{dx}x{dy}"),
            image: translate(img, dx, dy)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, px: &[u8]) -> GrayImage {
        GrayImage::new(w, h, px.to_vec()).unwrap()
    }

    fn ramp(w: usize, h: usize) -> GrayImage {
        let px = (0..w * h).map(|i| (i * 37 % 251) as u8).collect();
        GrayImage::new(w, h, px).unwrap()
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![1, 2, 3]).is_err());
    }

    #[test]
    fn loads_binary_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        std::fs::write(&path, bytes).unwrap();
        assert_eq!(load_image(&path).unwrap(), img(2, 2, &[0, 255, 128, 64]));
    }

    #[test]
    fn loads_ascii_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        std::fs::write(&path, "P2\n2 2\n255\n0 255\n128 64\n").unwrap();
        assert_eq!(load_image(&path).unwrap(), img(2, 2, &[0, 255, 128, 64]));
    }

    #[test]
    fn rgb_png_is_channel_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        image::RgbImage::from_raw(1, 1, vec![30, 60, 90])
            .unwrap()
            .save(&path)
            .unwrap();
        assert_eq!(load_image(&path).unwrap().pixels(), &[60]);
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_image("/definitely/not/here.pgm").unwrap_err();
        assert!(matches!(err, Error::FileNotFound(_)));
        assert!(err.to_string().contains("file not found"));
    }

    #[test]
    fn corrupt_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.png");
        std::fs::write(&path, b"not an image").unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(err.to_string().contains("junk.png"));
    }

    #[test]
    fn save_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let im = ramp(5, 3);
        for enc in [ImageEncoding::Pgm, ImageEncoding::Png] {
            let path = dir.path().join(format!("x.{}", enc.extension()));
            save_image(&im, &path, enc).unwrap();
            assert_eq!(load_image(&path).unwrap(), im);
        }
    }

    #[test]
    fn flips_reverse() {
        assert_eq!(flip(&img(3, 1, &[1, 2, 3]), Axis::Horizontal).pixels(), &[3, 2, 1]);
        assert_eq!(flip(&img(1, 3, &[1, 2, 3]), Axis::Vertical).pixels(), &[3, 2, 1]);
        let r = ramp(4, 3);
        for axis in [Axis::Horizontal, Axis::Vertical] {
            assert_eq!(flip(&flip(&r, axis), axis), r);
        }
    }

    #[test]
    fn rotation_identities() {
        let r = ramp(5, 4);
        assert_eq!(rotate(&r, 0.0), r);
        assert_eq!(rotate(&r, 360.0), r);
        assert_eq!(rotate(&r, -720.0), r);
        assert_eq!(rotate(&img(2, 2, &[1, 2, 3, 4]), 180.0).pixels(), &[4, 3, 2, 1]);
    }

    #[test]
    fn quarter_turn_of_square() {
        // counter-clockwise: the top-right corner moves to the top-left
        let r = rotate(&img(2, 2, &[1, 2, 3, 4]), 90.0);
        assert_eq!(r.pixels(), &[2, 4, 1, 3]);
    }

    #[test]
    fn small_rotation_zero_fills_corners() {
        let r = rotate(&GrayImage::filled(9, 9, 200).unwrap(), 30.0);
        assert_eq!(r.get(0, 0), 0);
        assert_eq!(r.get(4, 4), 200);
    }

    #[test]
    fn translation() {
        let r = ramp(4, 4);
        assert_eq!(translate(&r, 0, 0).unwrap(), r);
        assert_eq!(translate(&img(3, 1, &[5, 6, 7]), 1, 0).unwrap().pixels(), &[0, 5, 6]);
        assert_eq!(translate(&img(3, 1, &[5, 6, 7]), -2, 0).unwrap().pixels(), &[7, 0, 0]);
        assert_eq!(translate(&img(1, 3, &[5, 6, 7]), 0, 1).unwrap().pixels(), &[0, 5, 6]);
        assert!(translate(&img(3, 1, &[5, 6, 7]), 3, 0).is_err());
        assert!(translate(&img(3, 1, &[5, 6, 7]), 0, 1).is_err());
    }

    #[test]
    fn equalise_constant_image() {
        let e = histogram_modify(&GrayImage::filled(3, 3, 77).unwrap());
        let first = e.pixels()[0];
        assert!(e.pixels().iter().all(|&p| p == first));
    }

    #[test]
    fn equalise_four_levels() {
        let e = histogram_modify(&img(4, 1, &[0, 85, 170, 255]));
        // floor(255 * k / 4) for k = 1..4
        assert_eq!(e.pixels(), &[63, 127, 191, 255]);
    }

    #[test]
    fn equalise_uniform_histogram_is_identity() {
        let px: Vec<u8> = (0..=255).collect();
        let u = img(16, 16, &px);
        assert_eq!(histogram_modify(&u), u);
    }

    #[test]
    fn equalise_is_idempotent_and_monotone() {
        let r = ramp(7, 6);
        let once = histogram_modify(&r);
        assert_eq!(histogram_modify(&once), once);
        for (i, &a) in r.pixels().iter().enumerate() {
            for (j, &b) in r.pixels().iter().enumerate() {
                if a <= b {
                    assert!(once.pixels()[i] <= once.pixels()[j]);
                }
            }
        }
        assert_eq!(*once.pixels().iter().max().unwrap(), 255);
    }

    #[test]
    fn default_spec_shape() {
        let spec = AugmentationSpec::sampled(7);
        assert_eq!(spec.rotation_angles.len(), 5);
        let mut sorted = spec.rotation_angles.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        assert_eq!(sorted.len(), 5);
        assert!(spec
            .rotation_angles
            .iter()
            .all(|a| DEFAULT_ANGLE_POOL.contains(a)));
        assert_eq!(spec.derived_count(), 8);
    }

    #[test]
    fn augment_is_deterministic() {
        let r = ramp(20, 10);
        let a = augment(&r, &AugmentationSpec::sampled(3)).unwrap();
        let b = augment(&r, &AugmentationSpec::sampled(3)).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
        assert_eq!(a[0].suffix, "_fh");
        assert_eq!(a[1].suffix, "_fv");
        assert_eq!(a[7].suffix, "_t2x1");
        assert!(a.iter().all(|d| d.image.width() == 20 && d.image.height() == 10));
    }

    #[test]
    fn one_pixel_image_augments() {
        let a = augment(&img(1, 1, &[9]), &AugmentationSpec::sampled(0)).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a[7].suffix, "_t0x0");
    }
}
