//! Grayscale images, summed-area tables and constant-time rectangle sums.
//!
//! An [`IntegralImage`] uses the exclusive-prefix convention: the tables are
//! `(width + 1) x (height + 1)` with a zero first row and column, so that
//! `sums(x, y)` is the sum of all pixels strictly above and to the left of
//! `(x, y)`. Any rectangle sum is then four table reads and no edge branches.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("invalid image dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("pixel buffer holds {got} bytes, expected {expected}")]
    PixelCountMismatch { expected: usize, got: usize },
    #[error("rect {rect} exceeds image bounds {width}x{height}")]
    OutOfBounds { rect: Rect, width: u32, height: u32 },
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    /// True when the rect is non-empty and lies inside a `width x height` image.
    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.w >= 1 && self.h >= 1 && self.right() <= width as u64 && self.bottom() <= height as u64
    }

    /// Intersection over union of two rects; 0 for disjoint rects.
    pub fn iou(&self, other: &Rect) -> f64 {
        let x0 = self.x.max(other.x) as u64;
        let y0 = self.y.max(other.y) as u64;
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let inter = (x1 - x0) * (y1 - y0);
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}x{})", self.x, self.y, self.w, self.h)
    }
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidDimensions { width, height });
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(ImageError::PixelCountMismatch { expected, got: pixels.len() });
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Result<Self, ImageError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = v;
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }

    /// Copies out the pixels under `r`.
    pub fn crop(&self, r: Rect) -> Result<GrayImage, ImageError> {
        if !r.fits_in(self.width, self.height) {
            return Err(ImageError::OutOfBounds { rect: r, width: self.width, height: self.height });
        }
        GrayImage::from_fn(r.w, r.h, |x, y| self.get(r.x + x, r.y + y))
    }

    /// Resamples to `w x h`: area averaging along axes that shrink, nearest
    /// neighbour along axes that grow. Same-size resampling is the identity.
    pub fn resized(&self, w: u32, h: u32) -> GrayImage {
        assert!(w >= 1 && h >= 1, "target size must be non-empty");
        let xs = axis_taps(self.width, w);
        let ys = axis_taps(self.height, h);
        let mut pixels = Vec::with_capacity(w as usize * h as usize);
        for ytaps in &ys {
            for xtaps in &xs {
                let mut acc = 0.0;
                for &(sy, wy) in ytaps {
                    for &(sx, wx) in xtaps {
                        acc += wy * wx * self.get(sx, sy) as f64;
                    }
                }
                pixels.push(acc.round().clamp(0.0, 255.0) as u8);
            }
        }
        GrayImage { width: w, height: h, pixels }
    }

    /// Crops `r` and resamples it to `w x h`.
    pub fn crop_resized(&self, r: Rect, w: u32, h: u32) -> Result<GrayImage, ImageError> {
        let crop = self.crop(r)?;
        if crop.width == w && crop.height == h {
            return Ok(crop);
        }
        Ok(crop.resized(w, h))
    }

    /// Binary PGM (P5, maxval 255) encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// 8-bit single-channel PNG encoding.
    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().expect("in-memory png header");
            writer.write_image_data(&self.pixels).expect("in-memory png data");
        }
        out
    }
}

/// Source taps `(index, weight)` for each output position along one axis.
fn axis_taps(src: u32, dst: u32) -> Vec<Vec<(u32, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            if dst > src {
                let s = (((i as f64 + 0.5) * ratio) as u32).min(src - 1);
                return vec![(s, 1.0)];
            }
            let lo = i as f64 * ratio;
            let hi = (i + 1) as f64 * ratio;
            let mut taps = Vec::new();
            let mut s = lo.floor() as u32;
            while (s as f64) < hi && s < src {
                let cover = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if cover > 0.0 {
                    taps.push((s, cover / ratio));
                }
                s += 1;
            }
            taps
        })
        .collect()
}

/// Reads a binary PGM or 8-bit grayscale PNG from disk.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ImageError::FileNotFound(path.display().to_string())
        } else {
            ImageError::Io { path: path.display().to_string(), source: e }
        }
    })?;
    decode_image(&bytes)
}

/// Decodes PGM-P5 or grayscale PNG bytes. Color inputs are rejected.
pub fn decode_image(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && (b'1'..=b'7').contains(&bytes[1]) {
        Err(ImageError::UnsupportedFormat(format!(
            "netpbm P{} (only binary grayscale P5 is accepted)",
            bytes[1] as char
        )))
    } else {
        Err(ImageError::UnsupportedFormat("not a PGM-P5 or PNG file".into()))
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(ImageError::CorruptHeader("truncated PGM header".into())),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::CorruptHeader(format!("expected a number at byte {start}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| ImageError::CorruptHeader(format!("header number {text} out of range")))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(ImageError::CorruptHeader("missing whitespace after maxval".into())),
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(ImageError::UnsupportedFormat(format!("PGM maxval {maxval} (only 255 is accepted)")));
    }
    if w == 0 || h == 0 || w > u32::MAX as u64 || h > u32::MAX as u64 {
        return Err(ImageError::CorruptHeader(format!("invalid dimensions {w}x{h}")));
    }
    let payload = &bytes[pos..];
    let expected = w.checked_mul(h).filter(|&n| n <= usize::MAX as u64);
    if expected != Some(payload.len() as u64) {
        return Err(ImageError::CorruptHeader(format!(
            "header declares {w}x{h} but payload holds {} bytes",
            payload.len()
        )));
    }
    GrayImage::new(w as u32, h as u32, payload.to_vec())
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let limits = png::Limits { bytes: 256 << 20 };
    let mut decoder = png::Decoder::new_with_limits(Cursor::new(bytes), limits);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| ImageError::CorruptHeader(format!("png: {e}")))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::UnsupportedFormat(format!(
            "png {:?} {:?} (only 8-bit grayscale is accepted)",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width, info.height);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::CorruptHeader("png output size overflows".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| ImageError::CorruptHeader(format!("png: {e}")))?;
    buf.truncate(frame.buffer_size());
    GrayImage::new(w, h, buf)
}

/// Summed-area tables of pixel values and squared pixel values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralImage {
    /// Table columns, i.e. image width + 1.
    width: u32,
    /// Table rows, i.e. image height + 1.
    height: u32,
    sums: Vec<u64>,
    sq_sums: Vec<u64>,
}

/// Builds the plain and squared summed-area tables in one pass.
pub fn compute_integral(img: &GrayImage) -> IntegralImage {
    let pixel_count = img.width as u128 * img.height as u128;
    assert!(
        255u128 * 255 * pixel_count < (1u128 << 64),
        "image too large for 64-bit squared sums"
    );
    let tw = img.width as usize + 1;
    let th = img.height as usize + 1;
    let mut sums = vec![0u64; tw * th];
    let mut sq_sums = vec![0u64; tw * th];
    for y in 0..img.height as usize {
        let row = &img.pixels[y * img.width as usize..(y + 1) * img.width as usize];
        let mut run = 0u64;
        let mut run_sq = 0u64;
        let above = y * tw;
        let here = (y + 1) * tw;
        for (x, &p) in row.iter().enumerate() {
            let p = p as u64;
            run += p;
            run_sq += p * p;
            sums[here + x + 1] = sums[above + x + 1] + run;
            sq_sums[here + x + 1] = sq_sums[above + x + 1] + run_sq;
        }
    }
    IntegralImage { width: tw as u32, height: th as u32, sums, sq_sums }
}

impl IntegralImage {
    /// Width of the underlying image.
    pub fn image_width(&self) -> u32 {
        self.width - 1
    }

    /// Height of the underlying image.
    pub fn image_height(&self) -> u32 {
        self.height - 1
    }

    pub fn table_width(&self) -> u32 {
        self.width
    }

    pub fn table_height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn sum_at(&self, x: u32, y: u32) -> u64 {
        self.sums[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn sq_sum_at(&self, x: u32, y: u32) -> u64 {
        self.sq_sums[y as usize * self.width as usize + x as usize]
    }

    fn check(&self, r: Rect) -> Result<(), ImageError> {
        if r.fits_in(self.image_width(), self.image_height()) {
            Ok(())
        } else {
            Err(ImageError::OutOfBounds { rect: r, width: self.image_width(), height: self.image_height() })
        }
    }

    /// Sum of pixels under `r` from four table reads.
    pub fn rect_sum(&self, r: Rect) -> Result<u64, ImageError> {
        self.check(r)?;
        Ok(self.rect_sum_unchecked(r.x, r.y, r.w, r.h))
    }

    /// Sum of squared pixels under `r`.
    pub fn sq_rect_sum(&self, r: Rect) -> Result<u64, ImageError> {
        self.check(r)?;
        Ok(Self::corner_sum(&self.sq_sums, self.width as usize, r.x, r.y, r.w, r.h))
    }

    /// Rectangle sum without the bounds check. Callers guarantee the rect fits.
    #[inline]
    pub fn rect_sum_unchecked(&self, x: u32, y: u32, w: u32, h: u32) -> u64 {
        Self::corner_sum(&self.sums, self.width as usize, x, y, w, h)
    }

    #[inline]
    fn corner_sum(table: &[u64], stride: usize, x: u32, y: u32, w: u32, h: u32) -> u64 {
        let (x0, y0) = (x as usize, y as usize);
        let (x1, y1) = (x0 + w as usize, y0 + h as usize);
        let a = table[y0 * stride + x0];
        let b = table[y0 * stride + x1];
        let c = table[y1 * stride + x0];
        let d = table[y1 * stride + x1];
        // exact result always fits; wrapping keeps intermediates well-defined
        d.wrapping_add(a).wrapping_sub(b.wrapping_add(c))
    }

    /// Mean and standard deviation of the pixels under `window`.
    ///
    /// A constant window has zero variance; its stddev is reported as 1.0.
    pub fn window_mean_stddev(&self, window: Rect) -> Result<(f64, f64), ImageError> {
        self.check(window)?;
        Ok(self.window_mean_stddev_unchecked(window))
    }

    #[inline]
    pub fn window_mean_stddev_unchecked(&self, window: Rect) -> (f64, f64) {
        let area = window.area() as f64;
        let s = self.rect_sum_unchecked(window.x, window.y, window.w, window.h);
        let sq = Self::corner_sum(&self.sq_sums, self.width as usize, window.x, window.y, window.w, window.h);
        let mean = s as f64 / area;
        // area*sq - s^2 in exact integer arithmetic
        let n = window.area() as u128;
        let num = n * sq as u128 - (s as u128) * (s as u128);
        if num == 0 {
            return (mean, 1.0);
        }
        let var = num as f64 / (area * area);
        (mean, var.sqrt())
    }

    /// `1 / stddev` of the window, the feature normalization factor.
    #[inline]
    pub fn inv_stddev(&self, window: Rect) -> f64 {
        1.0 / self.window_mean_stddev_unchecked(window).1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> GrayImage {
        GrayImage::from_fn(w, h, |_, _| rng.gen()).unwrap()
    }

    fn naive_sum(img: &GrayImage, r: Rect) -> u64 {
        let mut s = 0;
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                s += img.get(x, y) as u64;
            }
        }
        s
    }

    #[test]
    fn decode_small_pgm() {
        let img = decode_image(b"P5\n2 2\n255\n\x0a\x14\x1e\x28").unwrap();
        assert_eq!(img, GrayImage::new(2, 2, vec![10, 20, 30, 40]).unwrap());
    }

    #[test]
    fn pgm_comments_tolerated() {
        let img = decode_image(b"P5\n# made by hand\n2 # width\n1\n255\n\x01\x02").unwrap();
        assert_eq!(img.pixels(), &[1, 2]);
    }

    #[test]
    fn short_payload_is_corrupt() {
        let err = decode_image(b"P5\n2 2\n255\n\x0a\x14\x1e").unwrap_err();
        assert!(matches!(err, ImageError::CorruptHeader(_)), "{err}");
    }

    #[test]
    fn color_pnm_is_unsupported() {
        let err = decode_image(b"P6\n1 1\n255\n\x00\x00\x00").unwrap_err();
        assert!(matches!(err, ImageError::UnsupportedFormat(_)), "{err}");
    }

    #[test]
    fn other_maxval_is_unsupported() {
        let err = decode_image(b"P5\n1 1\n65535\n\x00\x00").unwrap_err();
        assert!(matches!(err, ImageError::UnsupportedFormat(_)));
    }

    #[test]
    fn png_round_trip_and_color_rejection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 7, 5);
        assert_eq!(decode_image(&img.to_png()).unwrap(), img);

        let mut rgb = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut rgb, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[1, 2, 3]).unwrap();
        }
        assert!(matches!(decode_image(&rgb), Err(ImageError::UnsupportedFormat(_))));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(load_image("/nonexistent/x.pgm"), Err(ImageError::FileNotFound(_))));
    }

    #[test]
    fn all_ones_total() {
        let ii = compute_integral(&GrayImage::filled(3, 3, 1).unwrap());
        assert_eq!(ii.sum_at(3, 3), 9);
        assert_eq!(ii.rect_sum(Rect::new(0, 0, 3, 3)).unwrap(), 9);
    }

    #[test]
    fn zero_border() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ii = compute_integral(&random_image(&mut rng, 9, 6));
        for k in 0..ii.table_height() {
            assert_eq!(ii.sum_at(0, k), 0);
            assert_eq!(ii.sq_sum_at(0, k), 0);
        }
        for k in 0..ii.table_width() {
            assert_eq!(ii.sum_at(k, 0), 0);
            assert_eq!(ii.sq_sum_at(k, 0), 0);
        }
    }

    #[test]
    fn table_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 64, 64);
        let ii = compute_integral(&img);
        for _ in 0..100 {
            let x = rng.gen_range(0..=64);
            let y = rng.gen_range(0..=64);
            let mut expect = 0u64;
            for j in 0..y {
                for i in 0..x {
                    expect += img.get(i, j) as u64;
                }
            }
            assert_eq!(ii.sum_at(x, y), expect);
        }
    }

    #[test]
    fn unit_rects_read_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_image(&mut rng, 16, 16);
        let ii = compute_integral(&img);
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(ii.rect_sum(Rect::new(x, y, 1, 1)).unwrap(), img.get(x, y) as u64);
            }
        }
    }

    #[test]
    fn random_rects_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_image(&mut rng, 64, 64);
        let ii = compute_integral(&img);
        for _ in 0..500 {
            let w = rng.gen_range(1..=64);
            let h = rng.gen_range(1..=64);
            let r = Rect::new(rng.gen_range(0..=64 - w), rng.gen_range(0..=64 - h), w, h);
            assert_eq!(ii.rect_sum(r).unwrap(), naive_sum(&img, r));
        }
    }

    #[test]
    fn out_of_bounds_rect() {
        let ii = compute_integral(&GrayImage::filled(4, 4, 0).unwrap());
        assert!(matches!(ii.rect_sum(Rect::new(2, 2, 3, 1)), Err(ImageError::OutOfBounds { .. })));
        assert!(matches!(ii.rect_sum(Rect::new(0, 0, 0, 1)), Err(ImageError::OutOfBounds { .. })));
        assert!(ii.window_mean_stddev(Rect::new(0, 4, 1, 1)).is_err());
    }

    #[test]
    fn constant_window_stddev_clamps() {
        let ii = compute_integral(&GrayImage::filled(5, 5, 7).unwrap());
        assert_eq!(ii.window_mean_stddev(Rect::new(1, 1, 3, 3)).unwrap(), (7.0, 1.0));
    }

    #[test]
    fn two_level_window_stddev() {
        let ii = compute_integral(&GrayImage::new(2, 2, vec![0, 0, 255, 255]).unwrap());
        let (m, s) = ii.window_mean_stddev(Rect::new(0, 0, 2, 2)).unwrap();
        assert_eq!(m, 127.5);
        assert_eq!(s, 127.5);
    }

    #[test]
    fn window_stats_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let img = random_image(&mut rng, 40, 40);
            let ii = compute_integral(&img);
            let r = Rect::new(rng.gen_range(0..=16), rng.gen_range(0..=16), 24, 24);
            let vals: Vec<f64> = (r.y..r.y + 24)
                .flat_map(|y| (r.x..r.x + 24).map(move |x| (x, y)))
                .map(|(x, y)| img.get(x, y) as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            let (m, s) = ii.window_mean_stddev(r).unwrap();
            assert!((m - mean).abs() <= 1e-9 * mean.abs());
            assert!((s - var.sqrt()).abs() <= 1e-9 * var.sqrt());
        }
    }

    #[test]
    fn resize_identity_and_area_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = random_image(&mut rng, 9, 7);
        assert_eq!(img.resized(9, 7), img);
        let quad = GrayImage::new(2, 2, vec![0, 100, 200, 60]).unwrap();
        assert_eq!(quad.resized(1, 1).pixels(), &[90]);
        let up = GrayImage::new(2, 1, vec![10, 20]).unwrap().resized(4, 1);
        assert_eq!(up.pixels(), &[10, 10, 20, 20]);
        // 3 -> 2 averages with fractional coverage
        let row = GrayImage::new(3, 1, vec![0, 90, 180]).unwrap().resized(2, 1);
        assert_eq!(row.pixels(), &[30, 150]);
    }

    #[test]
    fn iou_basics() {
        let a = Rect::new(0, 0, 10, 10);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&Rect::new(10, 0, 10, 10)), 0.0);
        assert!((a.iou(&Rect::new(5, 0, 10, 10)) - 50.0 / 150.0).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn tiling_decomposes(seed in 0u64..1000, split_x in 1u32..15, split_y in 1u32..15) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ii = compute_integral(&random_image(&mut rng, 16, 16));
            let whole = ii.rect_sum(Rect::new(0, 0, 16, 16)).unwrap();
            let parts = [
                Rect::new(0, 0, split_x, split_y),
                Rect::new(split_x, 0, 16 - split_x, split_y),
                Rect::new(0, split_y, split_x, 16 - split_y),
                Rect::new(split_x, split_y, 16 - split_x, 16 - split_y),
            ];
            let total: u64 = parts.iter().map(|&r| ii.rect_sum(r).unwrap()).sum();
            proptest::prop_assert_eq!(whole, total);
        }

        #[test]
        fn tables_monotone(seed in 0u64..1000, w in 1u32..20, h in 1u32..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, w, h);
            let ii = compute_integral(&img);
            for y in 0..=h {
                for x in 0..=w {
                    if x > 0 { proptest::prop_assert!(ii.sum_at(x, y) >= ii.sum_at(x - 1, y)); }
                    if y > 0 { proptest::prop_assert!(ii.sum_at(x, y) >= ii.sum_at(x, y - 1)); }
                }
            }
            let total: u64 = img.pixels().iter().map(|&p| p as u64).sum();
            let total_sq: u64 = img.pixels().iter().map(|&p| (p as u64).pow(2)).sum();
            proptest::prop_assert_eq!(ii.sum_at(w, h), total);
            proptest::prop_assert_eq!(ii.sq_sum_at(w, h), total_sq);
        }

        #[test]
        fn pgm_round_trip(seed in 0u64..1000, w in 1u32..12, h in 1u32..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, w, h);
            proptest::prop_assert_eq!(decode_image(&img.to_pgm()).unwrap(), img);
        }
    }
}
