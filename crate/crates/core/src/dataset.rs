//! Sample manifests, ground truth, detection lists and the synthetic
//! dark-square task.
//!
//! Manifest and ground-truth files share one line format,
//! `<path> <count> [<x> <y> <w> <h>]*`, with paths relative to the file.
//! Ground-truth rects may be followed by the word `ignore`. Blank lines and
//! lines starting with `#` are skipped. Negative lists hold one path per line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::Detection;
use crate::imagecore::{load_image, GrayImage, ImageError, Rect};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}:{line}: {msg}")]
    MalformedManifest { path: PathBuf, line: usize, msg: String },
    #[error("{path}:{line}: missing file {file}")]
    MissingFile { path: PathBuf, line: usize, file: PathBuf },
    #[error("{path}:{line}: rect {rect} outside {file} ({width}x{height})")]
    RectOutOfImage { path: PathBuf, line: usize, file: PathBuf, rect: Rect, width: u32, height: u32 },
    #[error("{path}:{line}: {source}")]
    Image { path: PathBuf, line: usize, source: ImageError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// One manifest line after tokenizing.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestLine {
    pub line: usize,
    pub path: String,
    pub rects: Vec<Rect>,
    /// Per rect: whether it carried the `ignore` marker.
    pub ignore: Vec<bool>,
}

/// Tokenizes manifest text. `allow_ignore` admits the ground-truth marker.
/// `source` only labels errors.
pub fn parse_manifest_text(text: &str, source: &Path, allow_ignore: bool) -> Result<Vec<ManifestLine>, DatasetError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |msg: String| DatasetError::MalformedManifest { path: source.to_path_buf(), line, msg };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tok = trimmed.split_whitespace().peekable();
        let path = tok.next().expect("non-empty line").to_string();
        let count: usize = match tok.next() {
            Some(t) => t.parse().map_err(|_| err(format!("count {t:?} is not a non-negative integer")))?,
            None => return Err(err("missing count".into())),
        };
        let mut rects = Vec::new();
        let mut ignore = Vec::new();
        for k in 0..count {
            let mut v = [0u32; 4];
            for (j, slot) in v.iter_mut().enumerate() {
                let t = tok.next().ok_or_else(|| err(format!("count {count} but only {k} complete rects")))?;
                *slot = t.parse().map_err(|_| err(format!("rect {k} field {j}: {t:?} is not a non-negative integer")))?;
            }
            let r = Rect::new(v[0], v[1], v[2], v[3]);
            if r.w == 0 || r.h == 0 {
                return Err(err(format!("rect {k} is empty")));
            }
            let flagged = allow_ignore && tok.peek() == Some(&"ignore");
            if flagged {
                tok.next();
            }
            rects.push(r);
            ignore.push(flagged);
        }
        if let Some(extra) = tok.next() {
            return Err(err(format!("unexpected token {extra:?} after {count} rects")));
        }
        out.push(ManifestLine { line, path, rects, ignore });
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads every distinct image of `lines` and checks rect bounds.
fn load_checked(path: &Path, lines: &[ManifestLine]) -> Result<BTreeMap<String, GrayImage>, DatasetError> {
    let dir = base_dir(path);
    let mut first_line: BTreeMap<&str, usize> = BTreeMap::new();
    for l in lines {
        first_line.entry(l.path.as_str()).or_insert(l.line);
    }
    let loaded: Vec<(String, GrayImage)> = first_line
        .par_iter()
        .map(|(&p, &line)| {
            let file = dir.join(p);
            match load_image(&file) {
                Ok(img) => Ok((p.to_string(), img)),
                Err(ImageError::FileNotFound(_)) => Err(DatasetError::MissingFile { path: path.to_path_buf(), line, file }),
                Err(source) => Err(DatasetError::Image { path: path.to_path_buf(), line, source }),
            }
        })
        .collect::<Result<_, _>>()?;
    let images: BTreeMap<String, GrayImage> = loaded.into_iter().collect();
    for l in lines {
        let img = &images[&l.path];
        for r in &l.rects {
            if !r.fits_in(img.width(), img.height()) {
                return Err(DatasetError::RectOutOfImage {
                    path: path.to_path_buf(),
                    line: l.line,
                    file: dir.join(&l.path),
                    rect: *r,
                    width: img.width(),
                    height: img.height(),
                });
            }
        }
    }
    Ok(images)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositiveSample {
    pub image: PathBuf,
    pub rect: Rect,
}

#[derive(Debug, Clone, Default)]
pub struct SampleManifest {
    pub positives: Vec<PositiveSample>,
    pub negatives: Vec<PathBuf>,
    images: BTreeMap<PathBuf, GrayImage>,
}

impl SampleManifest {
    /// Positive windows cropped and resampled to `w x h`, in manifest order.
    pub fn positive_windows(&self, w: u32, h: u32) -> Vec<GrayImage> {
        self.positives
            .par_iter()
            .map(|p| self.images[&p.image].crop_resized(p.rect, w, h).expect("bounds checked at load"))
            .collect()
    }

    /// Loads the negative images.
    pub fn negative_images(&self) -> Result<Vec<GrayImage>, ImageError> {
        self.negatives.par_iter().map(load_image).collect()
    }
}

/// Loads a positive manifest, checking that every file exists and every rect
/// fits its image.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<SampleManifest, DatasetError> {
    let path = path.as_ref();
    let lines = parse_manifest_text(&read_text(path)?, path, false)?;
    let images = load_checked(path, &lines)?;
    let dir = base_dir(path);
    let positives = lines
        .iter()
        .flat_map(|l| l.rects.iter().map(|&rect| PositiveSample { image: dir.join(&l.path), rect }))
        .collect();
    let images = images.into_iter().map(|(k, v)| (dir.join(k), v)).collect();
    Ok(SampleManifest { positives, negatives: Vec::new(), images })
}

/// Reads a newline-separated negative image list; paths are relative to the list.
pub fn load_negative_list(path: impl AsRef<Path>) -> Result<Vec<PathBuf>, DatasetError> {
    let path = path.as_ref();
    let dir = base_dir(path);
    let mut out = Vec::new();
    for (i, l) in read_text(path)?.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let file = dir.join(l);
        if !file.is_file() {
            return Err(DatasetError::MissingFile { path: path.to_path_buf(), line: i + 1, file });
        }
        out.push(file);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthBox {
    pub rect: Rect,
    pub ignore: bool,
}

/// Annotated boxes per image, keyed by the path as written in the file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub images: BTreeMap<String, Vec<TruthBox>>,
}

impl GroundTruth {
    pub fn from_lines(lines: &[ManifestLine]) -> Self {
        let mut images: BTreeMap<String, Vec<TruthBox>> = BTreeMap::new();
        for l in lines {
            let boxes = images.entry(normalize_key(&l.path)).or_default();
            boxes.extend(l.rects.iter().zip(&l.ignore).map(|(&rect, &ignore)| TruthBox { rect, ignore }));
        }
        GroundTruth { images }
    }

    /// Key of the entry for `image`: exact key first, then a unique file-name match.
    pub fn resolve(&self, image: &str) -> Option<&str> {
        let key = normalize_key(image);
        if let Some((k, _)) = self.images.get_key_value(&key) {
            return Some(k);
        }
        let name = file_name(&key);
        let mut hits = self.images.keys().filter(|k| file_name(k) == name);
        match (hits.next(), hits.next()) {
            (Some(k), None) => Some(k),
            _ => None,
        }
    }

    /// Truth for `image`, matched as in [`GroundTruth::resolve`].
    pub fn lookup(&self, image: &str) -> Option<&[TruthBox]> {
        self.resolve(image).map(|k| self.images[k].as_slice())
    }

    /// Serializes in the manifest line format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (path, boxes) in &self.images {
            out.push_str(&format!("{path} {}", boxes.len()));
            for b in boxes {
                out.push_str(&format!(" {} {} {} {}", b.rect.x, b.rect.y, b.rect.w, b.rect.h));
                if b.ignore {
                    out.push_str(" ignore");
                }
            }
            out.push('\n');
        }
        out
    }
}

fn normalize_key(p: &str) -> String {
    p.trim_start_matches("./").to_string()
}

fn file_name(p: &str) -> &str {
    p.rsplit(['/', '\\']).next().unwrap_or(p)
}

/// Loads ground truth, checking that every image exists and every box fits.
pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth, DatasetError> {
    let path = path.as_ref();
    let lines = parse_manifest_text(&read_text(path)?, path, true)?;
    load_checked(path, &lines)?;
    Ok(GroundTruth::from_lines(&lines))
}

/// Parses ground truth without touching the referenced images.
pub fn parse_ground_truth(text: &str, source: &Path) -> Result<GroundTruth, DatasetError> {
    Ok(GroundTruth::from_lines(&parse_manifest_text(text, source, true)?))
}

/// One line of a detection list.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image: String,
    pub detection: Detection,
}

/// `<image> <x> <y> <w> <h> <score> <neighbors>`
pub fn format_detection(image: &str, d: &Detection) -> String {
    format!("{image} {} {} {} {} {} {}", d.rect.x, d.rect.y, d.rect.w, d.rect.h, d.score, d.neighbors)
}

pub fn parse_detections(text: &str, source: &Path) -> Result<Vec<DetectionRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |msg: String| DatasetError::MalformedManifest { path: source.to_path_buf(), line, msg };
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = t.split_whitespace().collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, got {}", f.len())));
        }
        let mut v = [0u32; 4];
        for (slot, s) in v.iter_mut().zip(&f[1..5]) {
            *slot = s.parse().map_err(|_| err(format!("{s:?} is not a non-negative integer")))?;
        }
        let score: f64 = f[5].parse().map_err(|_| err(format!("score {:?} is not a real", f[5])))?;
        if !score.is_finite() {
            return Err(err(format!("score {score} is not finite")));
        }
        let neighbors: usize = f[6].parse().map_err(|_| err(format!("neighbors {:?} is not a count", f[6])))?;
        out.push(DetectionRecord {
            image: normalize_key(f[0]),
            detection: Detection { rect: Rect::new(v[0], v[1], v[2], v[3]), score, neighbors },
        });
    }
    Ok(out)
}

/// Parameters of the synthetic dark-square task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub positives: usize,
    pub negatives: usize,
    pub heldout: usize,
    /// Positive window side.
    pub window: u32,
    /// Square side inside a positive window.
    pub square: u32,
    /// Per-positive random shift of the square (pixels, each axis) and of its side.
    pub jitter: u32,
    /// Amplitude of uniform pixel noise.
    pub noise: u8,
    pub negative_size: (u32, u32),
    pub frame_size: (u32, u32),
    /// Inclusive range of objects per held-out frame.
    pub objects_per_frame: (usize, usize),
    /// Inclusive range of square sides in held-out frames.
    pub object_square: (u32, u32),
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 42,
            positives: 500,
            negatives: 1000,
            heldout: 200,
            window: 24,
            square: 12,
            jitter: 1,
            noise: 12,
            negative_size: (96, 96),
            frame_size: (160, 120),
            objects_per_frame: (1, 3),
            object_square: (12, 22),
        }
    }
}

/// Generated task: base-size positives, object-free negatives and annotated
/// held-out frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub positives: Vec<GrayImage>,
    pub negatives: Vec<GrayImage>,
    pub frames: Vec<GrayImage>,
    /// Per frame: the object windows (square centred in a window twice its side).
    pub truth: Vec<Vec<Rect>>,
}

fn noisy(rng: &mut ChaCha8Rng, base: i32, amp: u8) -> u8 {
    let a = amp as i32;
    (base + rng.gen_range(-a..=a)).clamp(0, 255) as u8
}

fn light(rng: &mut ChaCha8Rng) -> i32 {
    rng.gen_range(150..=230)
}

fn dark(rng: &mut ChaCha8Rng) -> i32 {
    rng.gen_range(20..=90)
}

/// Smooth random texture: coarse random grid, bilinearly upsampled.
fn blotches(rng: &mut ChaCha8Rng, w: u32, h: u32, cell: u32, amp: u8) -> GrayImage {
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(0.0..255.0)).collect();
    GrayImage::from_fn(w, h, |x, y| {
        let fx = x as f64 / cell as f64;
        let fy = y as f64 / cell as f64;
        let (ix, iy) = (fx as u32, fy as u32);
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let g = |i: u32, j: u32| grid[(j * gw + i) as usize];
        let v = g(ix, iy) * (1.0 - tx) * (1.0 - ty) + g(ix + 1, iy) * tx * (1.0 - ty) + g(ix, iy + 1) * (1.0 - tx) * ty + g(ix + 1, iy + 1) * tx * ty;
        noisy(rng, v as i32, amp)
    })
    .expect("non-empty size")
}

/// Object-free frame: uniform noise, smooth blotches, a light background
/// with elongated dark bars, or one with dark squares too small to be objects
/// at the base window.
fn negative_frame(rng: &mut ChaCha8Rng, w: u32, h: u32, amp: u8, max_square: u32) -> GrayImage {
    match rng.gen_range(0..4) {
        0 => GrayImage::from_fn(w, h, |_, _| rng.gen()).expect("non-empty size"),
        1 => {
            let cell = rng.gen_range(4..=16);
            blotches(rng, w, h, cell, amp)
        }
        2 => {
            let bg = light(rng);
            let mut img = GrayImage::from_fn(w, h, |_, _| noisy(rng, bg, amp)).expect("non-empty size");
            for _ in 0..rng.gen_range(1..=4) {
                let fg = dark(rng);
                let long = rng.gen_range(w.min(h) / 3..=w.min(h));
                let thick = rng.gen_range(2..=(long / 4).max(3));
                let (bw, bh) = if rng.gen() { (long, thick) } else { (thick, long) };
                let x0 = rng.gen_range(0..=w - bw.min(w));
                let y0 = rng.gen_range(0..=h - bh.min(h));
                for y in y0..(y0 + bh).min(h) {
                    for x in x0..(x0 + bw).min(w) {
                        img.set(x, y, noisy(rng, fg, amp));
                    }
                }
            }
            img
        }
        _ => {
            let bg = light(rng);
            let mut img = GrayImage::from_fn(w, h, |_, _| noisy(rng, bg, amp)).expect("non-empty size");
            for _ in 0..rng.gen_range(2..=8) {
                let fg = dark(rng);
                let side = rng.gen_range(3..=max_square.max(3)).min(w.min(h));
                let x0 = rng.gen_range(0..=w - side);
                let y0 = rng.gen_range(0..=h - side);
                for y in y0..y0 + side {
                    for x in x0..x0 + side {
                        img.set(x, y, noisy(rng, fg, amp));
                    }
                }
            }
            img
        }
    }
}

/// Deterministic synthetic dataset for `spec`.
pub fn synth_dataset(spec: &SynthSpec) -> SynthDataset {
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
        r.set_stream(k);
        r
    };
    let win = spec.window;
    let mut rng = stream(1);
    let positives = (0..spec.positives)
        .map(|_| {
            let j = spec.jitter as i32;
            let side = (spec.square as i32 + rng.gen_range(-j..=j)).max(2) as u32;
            let off = (win as i32 - side as i32) / 2;
            let ox = (off + rng.gen_range(-j..=j)).clamp(0, (win - side) as i32) as u32;
            let oy = (off + rng.gen_range(-j..=j)).clamp(0, (win - side) as i32) as u32;
            let (bg, fg) = (light(&mut rng), dark(&mut rng));
            GrayImage::from_fn(win, win, |x, y| {
                let inside = x >= ox && x < ox + side && y >= oy && y < oy + side;
                noisy(&mut rng, if inside { fg } else { bg }, spec.noise)
            })
            .expect("non-empty window")
        })
        .collect();

    let mut rng = stream(2);
    let (nw, nh) = spec.negative_size;
    let negatives = (0..spec.negatives).map(|_| negative_frame(&mut rng, nw, nh, spec.noise, (win / 2).saturating_sub(3))).collect();

    let mut rng = stream(3);
    let (fw, fh) = spec.frame_size;
    let mut frames = Vec::with_capacity(spec.heldout);
    let mut truth = Vec::with_capacity(spec.heldout);
    for _ in 0..spec.heldout {
        let bg = light(&mut rng);
        let mut img = GrayImage::from_fn(fw, fh, |_, _| noisy(&mut rng, bg, spec.noise)).expect("non-empty frame");
        let wanted = rng.gen_range(spec.objects_per_frame.0..=spec.objects_per_frame.1);
        let mut boxes: Vec<Rect> = Vec::new();
        for _ in 0..wanted {
            // a few placement attempts; objects keep a gap of one square side
            for _ in 0..50 {
                let q = rng.gen_range(spec.object_square.0..=spec.object_square.1);
                let s = 2 * q;
                if s > fw || s > fh {
                    continue;
                }
                let r = Rect::new(rng.gen_range(0..=fw - s), rng.gen_range(0..=fh - s), s, s);
                let clear = boxes.iter().all(|b| {
                    let gap = b.w / 2;
                    r.right() + gap as u64 <= b.x as u64
                        || b.right() + gap as u64 <= r.x as u64
                        || r.bottom() + gap as u64 <= b.y as u64
                        || b.bottom() + gap as u64 <= r.y as u64
                });
                if clear {
                    boxes.push(r);
                    break;
                }
            }
        }
        for b in &boxes {
            let q = b.w / 2;
            let fg = dark(&mut rng);
            for y in b.y + q / 2..b.y + q / 2 + q {
                for x in b.x + q / 2..b.x + q / 2 + q {
                    img.set(x, y, noisy(&mut rng, fg, spec.noise));
                }
            }
        }
        boxes.sort_by_key(|r| (r.y, r.x));
        frames.push(img);
        truth.push(boxes);
    }
    SynthDataset { positives, negatives, frames, truth }
}

/// File layout written by [`SynthDataset::write`], relative to its directory.
pub const SYNTH_POSITIVES: &str = "positives.txt";
pub const SYNTH_NEGATIVES: &str = "negatives.txt";
pub const SYNTH_FRAMES: &str = "frames.txt";
pub const SYNTH_TRUTH: &str = "truth.txt";

impl SynthDataset {
    /// Ground truth keyed by the frame paths [`SynthDataset::write`] uses.
    pub fn ground_truth(&self) -> GroundTruth {
        let images = self
            .truth
            .iter()
            .enumerate()
            .map(|(i, boxes)| (frame_name(i), boxes.iter().map(|&rect| TruthBox { rect, ignore: false }).collect()))
            .collect();
        GroundTruth { images }
    }

    /// Writes PGM files plus a positive manifest, a negative list, a frame
    /// list and ground truth into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DatasetError::Io { path, source }
        };
        for sub in ["positives", "negatives", "frames"] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(io(&d))?;
        }
        let put = |name: &str, img: &GrayImage| {
            let p = dir.join(name);
            fs::write(&p, img.to_pgm()).map_err(io(&p))
        };
        let mut manifest = String::new();
        for (i, img) in self.positives.iter().enumerate() {
            let name = format!("positives/pos_{i:05}.pgm");
            put(&name, img)?;
            manifest.push_str(&format!("{name} 1 0 0 {} {}\n", img.width(), img.height()));
        }
        let mut negs = String::new();
        for (i, img) in self.negatives.iter().enumerate() {
            let name = format!("negatives/neg_{i:05}.pgm");
            put(&name, img)?;
            negs.push_str(&name);
            negs.push('\n');
        }
        let mut frames = String::new();
        for (i, img) in self.frames.iter().enumerate() {
            let name = frame_name(i);
            put(&name, img)?;
            frames.push_str(&name);
            frames.push('\n');
        }
        for (name, text) in [(SYNTH_POSITIVES, manifest), (SYNTH_NEGATIVES, negs), (SYNTH_FRAMES, frames), (SYNTH_TRUTH, self.ground_truth().to_text())] {
            let p = dir.join(name);
            fs::write(&p, text).map_err(io(&p))?;
        }
        Ok(())
    }
}

fn frame_name(i: usize) -> String {
    format!("frames/frame_{i:04}.pgm")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn src() -> &'static Path {
        Path::new("m.txt")
    }

    #[test]
    fn single_positive_line() {
        let l = parse_manifest_text("img1.pgm 1 10 10 24 24\n", src(), false).unwrap();
        assert_eq!(l[0].path, "img1.pgm");
        assert_eq!(l[0].rects, vec![Rect::new(10, 10, 24, 24)]);
    }

    #[test]
    fn arity_errors_carry_line() {
        let e = parse_manifest_text("# header\na.pgm 1 0 0 4 4\nb.pgm 2 0 0 4 4\n", src(), false).unwrap_err();
        match e {
            DatasetError::MalformedManifest { line, path, .. } => {
                assert_eq!(line, 3);
                assert_eq!(path, src());
            }
            e => panic!("{e}"),
        }
        assert!(parse_manifest_text("a.pgm 1 0 0 4 4 9\n", src(), false).is_err());
        assert!(parse_manifest_text("a.pgm\n", src(), false).is_err());
        assert!(parse_manifest_text("a.pgm -1\n", src(), false).is_err());
        assert!(parse_manifest_text("a.pgm 1 0 0 4 4 ignore\n", src(), false).is_err());
    }

    #[test]
    fn ignore_marker() {
        let gt = parse_ground_truth("./f.pgm 2 0 0 4 4 ignore 5 5 6 6\n", src()).unwrap();
        let b = gt.lookup("f.pgm").unwrap();
        assert_eq!(b[0], TruthBox { rect: Rect::new(0, 0, 4, 4), ignore: true });
        assert!(!b[1].ignore);
        assert_eq!(parse_ground_truth(&gt.to_text(), src()).unwrap(), gt);
        assert!(gt.lookup("other/f.pgm").is_some());
        assert!(gt.lookup("g.pgm").is_none());
    }

    #[test]
    fn loaded_count_matches_line_counts() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(40, 30, |x, y| (x * 3 + y) as u8).unwrap();
        fs::write(dir.path().join("a.pgm"), img.to_pgm()).unwrap();
        fs::write(dir.path().join("b.png"), img.to_png()).unwrap();
        let text = "a.pgm 2 0 0 24 24 10 5 20 20\nb.png 1 1 1 30 28\n\na.pgm 0\nb.png 3 0 0 8 8 1 1 8 8 2 2 8 8\n";
        let path = dir.path().join("pos.txt");
        fs::write(&path, text).unwrap();
        let m = load_manifest(&path).unwrap();
        let oracle: usize = text.lines().filter_map(|l| l.split_whitespace().nth(1)).map(|c| c.parse::<usize>().unwrap()).sum();
        assert_eq!(m.positives.len(), oracle);
        let windows = m.positive_windows(24, 24);
        assert!(windows.iter().all(|w| w.width() == 24 && w.height() == 24));
        assert_eq!(windows[0], img.crop(Rect::new(0, 0, 24, 24)).unwrap());
        // resampling at the target size is the identity
        assert_eq!(windows[1].resized(24, 24), windows[1]);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::filled(20, 20, 7).unwrap();
        fs::write(dir.path().join("a.pgm"), img.to_pgm()).unwrap();
        let path = dir.path().join("pos.txt");
        fs::write(&path, "a.pgm 1 0 0 10 10\nmissing.pgm 1 0 0 4 4\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(DatasetError::MissingFile { line: 2, .. })));
        fs::write(&path, "a.pgm 1 15 0 10 10\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(DatasetError::RectOutOfImage { line: 1, .. })));
        let negs = dir.path().join("neg.txt");
        fs::write(&negs, "a.pgm\n\nnope.pgm\n").unwrap();
        assert!(matches!(load_negative_list(&negs), Err(DatasetError::MissingFile { line: 3, .. })));
    }

    #[test]
    fn detection_lines_round_trip() {
        let d = Detection { rect: Rect::new(1, 2, 30, 31), score: 2.5, neighbors: 4 };
        let line = format_detection("frames/f.pgm", &d);
        let parsed = parse_detections(&line, src()).unwrap();
        assert_eq!(parsed, vec![DetectionRecord { image: "frames/f.pgm".into(), detection: d }]);
        assert!(parse_detections("f.pgm 1 2 3 4 x 1", src()).is_err());
        assert!(parse_detections("f.pgm 1 2 3 4 NaN 1", src()).is_err());
        assert!(parse_detections("f.pgm 1 2 3 4 1", src()).is_err());
    }

    fn small_spec() -> SynthSpec {
        SynthSpec { positives: 20, negatives: 6, heldout: 10, ..Default::default() }
    }

    #[test]
    fn synth_is_deterministic_and_in_bounds() {
        let spec = small_spec();
        let a = synth_dataset(&spec);
        assert_eq!(a, synth_dataset(&spec));
        assert_ne!(a, synth_dataset(&SynthSpec { seed: 43, ..spec.clone() }));
        assert_eq!((a.positives.len(), a.negatives.len(), a.frames.len()), (20, 6, 10));
        for (f, boxes) in a.frames.iter().zip(&a.truth) {
            assert!(!boxes.is_empty());
            assert!(boxes.iter().all(|b| b.fits_in(f.width(), f.height())));
        }
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path()).unwrap();
        let m = load_manifest(dir.path().join(SYNTH_POSITIVES)).unwrap();
        assert_eq!(m.positive_windows(24, 24), a.positives);
        assert_eq!(load_negative_list(dir.path().join(SYNTH_NEGATIVES)).unwrap().len(), 6);
        assert_eq!(load_ground_truth(dir.path().join(SYNTH_TRUTH)).unwrap(), a.ground_truth());
    }

    #[test]
    fn zero_objects_gives_empty_truth() {
        let spec = SynthSpec { objects_per_frame: (0, 0), ..small_spec() };
        assert!(synth_dataset(&spec).truth.iter().all(|t| t.is_empty()));
    }

    #[test]
    fn positive_square_is_dark_in_the_middle() {
        let d = synth_dataset(&small_spec());
        for p in &d.positives {
            let centre = p.get(12, 12) as i32;
            let corner = p.get(1, 1) as i32;
            assert!(corner - centre > 30);
        }
    }
}
