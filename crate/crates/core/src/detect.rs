//! Multi-scale sliding-window detection and grouping of raw hits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{Cascade, Decision};
use crate::imagecore::{compute_integral, GrayImage, IntegralImage, Rect};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("image {width}x{height} is smaller than the {base_w}x{base_h} detection window")]
    ImageSmallerThanWindow { width: u32, height: u32, base_w: u32, base_h: u32 },
    #[error("invalid detection parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    pub scale_step: f64,
    /// Grid step at base scale; grows with the window.
    pub window_stride: u32,
    /// Smallest window width scanned; `None` means the cascade's base width.
    pub min_size: Option<u32>,
    /// Largest window width scanned; `None` means no limit beyond the image.
    pub max_size: Option<u32>,
    pub min_neighbors: usize,
    /// Relative tolerance for two raw windows to fall in the same group.
    pub similarity: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams { scale_step: 1.1, window_stride: 2, min_size: None, max_size: None, min_neighbors: 3, similarity: 0.2 }
    }
}

impl DetectParams {
    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: String| Err(DetectError::InvalidParams(m));
        if !(self.scale_step > 1.0) || !self.scale_step.is_finite() {
            return bad(format!("scale_step {} must be > 1", self.scale_step));
        }
        if self.window_stride == 0 {
            return bad("window_stride must be >= 1".into());
        }
        if !(self.similarity >= 0.0) || !self.similarity.is_finite() {
            return bad(format!("similarity {} must be >= 0", self.similarity));
        }
        if let (Some(lo), Some(hi)) = (self.min_size, self.max_size) {
            if hi < lo {
                return bad(format!("max_size {hi} is below min_size {lo}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub rect: Rect,
    pub score: f64,
    pub neighbors: usize,
}

/// One scale of the scan grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanLevel {
    pub scale: f64,
    pub window_w: u32,
    pub window_h: u32,
    pub stride: u32,
    pub nx: u32,
    pub ny: u32,
}

impl ScanLevel {
    /// Window origins in row-major order.
    pub fn positions(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| (i * self.stride, j * self.stride)))
    }

    pub fn len(&self) -> usize {
        self.nx as usize * self.ny as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Scan grid for an image: scales `min/base · step^k` while the window fits.
pub fn scan_scales(width: u32, height: u32, base_w: u32, base_h: u32, p: &DetectParams) -> Vec<ScanLevel> {
    let min_w = p.min_size.unwrap_or(base_w).max(base_w);
    let max_w = p.max_size.unwrap_or(u32::MAX);
    let s0 = min_w as f64 / base_w as f64;
    let mut out = Vec::new();
    for k in 0.. {
        let scale = s0 * p.scale_step.powi(k);
        let window_w = (base_w as f64 * scale).round() as u32;
        let window_h = (base_h as f64 * scale).round() as u32;
        if window_w > width || window_h > height || window_w > max_w {
            break;
        }
        let stride = ((p.window_stride as f64 * scale).round() as u32).max(1);
        let nx = (width - window_w) / stride + 1;
        let ny = (height - window_h) / stride + 1;
        out.push(ScanLevel { scale, window_w, window_h, stride, nx, ny });
    }
    out
}

/// A raw accepted window with its final-stage margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawHit {
    pub rect: Rect,
    pub margin: f64,
}

/// Every window the cascade accepts, sorted by `(y, x, w, h)`.
pub fn raw_hits(c: &Cascade, ii: &IntegralImage, p: &DetectParams) -> Result<Vec<RawHit>, DetectError> {
    p.validate()?;
    let (width, height) = (ii.image_width(), ii.image_height());
    if width < c.base_w || height < c.base_h {
        return Err(DetectError::ImageSmallerThanWindow { width, height, base_w: c.base_w, base_h: c.base_h });
    }
    let mut hits: Vec<RawHit> = Vec::new();
    for level in scan_scales(width, height, c.base_w, c.base_h, p) {
        let sc = c.scaled(level.scale);
        let rows: Vec<Vec<RawHit>> = (0..level.ny)
            .into_par_iter()
            .map(|j| {
                let y = j * level.stride;
                let mut row = Vec::new();
                for i in 0..level.nx {
                    let x = i * level.stride;
                    if let Decision::Accepted { margin } = sc.classify(ii, x, y) {
                        row.push(RawHit { rect: Rect::new(x, y, level.window_w, level.window_h), margin });
                    }
                }
                row
            })
            .collect();
        hits.extend(rows.into_iter().flatten());
    }
    hits.sort_by(|a, b| sort_key(&a.rect).cmp(&sort_key(&b.rect)));
    Ok(hits)
}

/// Scans `img` at every scale and groups the accepted windows.
pub fn detect_multiscale(c: &Cascade, img: &GrayImage, p: &DetectParams) -> Result<Vec<Detection>, DetectError> {
    let ii = compute_integral(img);
    let hits = raw_hits(c, &ii, p)?;
    let rects: Vec<Rect> = hits.iter().map(|h| h.rect).collect();
    let margins: Vec<f64> = hits.iter().map(|h| h.margin).collect();
    Ok(group_scored(&rects, &margins, p.min_neighbors, p.similarity))
}

fn sort_key(r: &Rect) -> (u32, u32, u32, u32) {
    (r.y, r.x, r.w, r.h)
}

/// Whether two rects fall in the same group under relative tolerance `eps`.
pub fn similar(a: &Rect, b: &Rect, eps: f64) -> bool {
    let delta = eps * (a.w.min(b.w) as f64 + a.h.min(b.h) as f64) * 0.5;
    let d = |p: u64, q: u64| (p as f64 - q as f64).abs() <= delta;
    d(a.x as u64, b.x as u64) && d(a.y as u64, b.y as u64) && d(a.right(), b.right()) && d(a.bottom(), b.bottom())
}

/// Groups raw windows with the default similarity tolerance (0.2).
pub fn group_detections(raw: &[Rect], min_neighbors: usize) -> Vec<Detection> {
    group_scored(raw, &vec![0.0; raw.len()], min_neighbors, DetectParams::default().similarity)
}

/// Partitions `raw` into classes of the transitive closure of [`similar`].
/// Classes with at least `min_neighbors` members become one detection with
/// the member-wise mean box; `score` sums the members' margins.
/// `min_neighbors == 0` passes every rect through on its own.
pub fn group_scored(raw: &[Rect], margins: &[f64], min_neighbors: usize, eps: f64) -> Vec<Detection> {
    assert_eq!(raw.len(), margins.len());
    let mut out: Vec<Detection> = if min_neighbors == 0 {
        raw.iter().zip(margins).map(|(&rect, &score)| Detection { rect, score, neighbors: 1 }).collect()
    } else {
        let labels = partition(raw, eps);
        let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut sums = vec![[0u64; 4]; classes];
        let mut counts = vec![0usize; classes];
        let mut scores = vec![0.0f64; classes];
        // sum in canonical order so scores do not depend on input order
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| sort_key(&raw[a]).cmp(&sort_key(&raw[b])).then(margins[a].total_cmp(&margins[b])));
        for i in order {
            let (r, l) = (&raw[i], labels[i]);
            for (acc, v) in sums[l].iter_mut().zip([r.x, r.y, r.w, r.h]) {
                *acc += v as u64;
            }
            counts[l] += 1;
            scores[l] += margins[i];
        }
        (0..classes)
            .filter(|&l| counts[l] >= min_neighbors)
            .map(|l| {
                let n = counts[l] as f64;
                let mean = |k: usize| (sums[l][k] as f64 / n).round() as u32;
                Detection { rect: Rect::new(mean(0), mean(1), mean(2), mean(3)), score: scores[l], neighbors: counts[l] }
            })
            .collect()
    };
    out.sort_by(|a, b| sort_key(&a.rect).cmp(&sort_key(&b.rect)).then(b.neighbors.cmp(&a.neighbors)));
    out
}

/// Class label per rect; labels are numbered by first occurrence.
fn partition(raw: &[Rect], eps: f64) -> Vec<usize> {
    let n = raw.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if similar(&raw[i], &raw[j], eps) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let root = find(&mut parent, i);
        if label[root] == usize::MAX {
            label[root] = next;
            next += 1;
        }
        out.push(label[root]);
    }
    out
}

/// Copy of `img` with each detection's outline drawn in `value`.
pub fn annotate(img: &GrayImage, dets: &[Detection], value: u8) -> GrayImage {
    let mut out = img.clone();
    for d in dets {
        let r = d.rect;
        if r.w == 0 || r.h == 0 || !r.fits_in(img.width(), img.height()) {
            continue;
        }
        for x in r.x..r.x + r.w {
            out.set(x, r.y, value);
            out.set(x, r.y + r.h - 1, value);
        }
        for y in r.y..r.y + r.h {
            out.set(r.x, y, value);
            out.set(r.x + r.w - 1, y, value);
        }
    }
    out
}
