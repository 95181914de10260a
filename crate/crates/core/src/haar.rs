//! Haar-like rectangle-difference features.
//!
//! A feature is a set of weighted rectangles expressed in the coordinates of
//! a base (training) window. Every feature is zero-mean: the weighted area of
//! its positive rectangles equals that of its negative ones, so adding a
//! constant to every pixel leaves the feature value unchanged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::{IntegralImage, Rect};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HaarError {
    #[error("feature does not fit window {window} (base {base_w}x{base_h})")]
    FeatureOutOfWindow { window: Rect, base_w: u32, base_h: u32 },
    #[error("base window {0}x{1} is smaller than 4x4")]
    WindowTooSmall(u32, u32),
    #[error("invalid feature: {0}")]
    InvalidFeature(String),
}

/// Feature geometry family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Two rects side by side.
    EdgeH,
    /// Two rects stacked.
    EdgeV,
    /// Three rects in a row.
    LineH,
    /// Three rects in a column.
    LineV,
    /// 2x2 checkerboard.
    Quad,
    /// Any other zero-mean rect set, e.g. read from a third-party cascade file.
    Custom,
}

impl FeatureKind {
    pub const CANONICAL: [FeatureKind; 5] =
        [FeatureKind::EdgeH, FeatureKind::EdgeV, FeatureKind::LineH, FeatureKind::LineV, FeatureKind::Quad];

    /// Number of unit cells along x and y.
    fn cells(self) -> (u32, u32) {
        match self {
            FeatureKind::EdgeH => (2, 1),
            FeatureKind::EdgeV => (1, 2),
            FeatureKind::LineH => (3, 1),
            FeatureKind::LineV => (1, 3),
            FeatureKind::Quad => (2, 2),
            FeatureKind::Custom => (1, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedRect {
    pub rect: Rect,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaarFeature {
    pub kind: FeatureKind,
    pub rects: Vec<WeightedRect>,
    pub base_w: u32,
    pub base_h: u32,
}

impl HaarFeature {
    /// Validates geometry (every rect inside the base window) and the
    /// zero-mean weight balance.
    pub fn new(kind: FeatureKind, rects: Vec<WeightedRect>, base_w: u32, base_h: u32) -> Result<Self, HaarError> {
        let f = HaarFeature { kind, rects, base_w, base_h };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), HaarError> {
        if self.rects.is_empty() {
            return Err(HaarError::InvalidFeature("feature has no rects".into()));
        }
        for wr in &self.rects {
            if !wr.rect.fits_in(self.base_w, self.base_h) {
                return Err(HaarError::InvalidFeature(format!(
                    "rect {} outside base window {}x{}",
                    wr.rect, self.base_w, self.base_h
                )));
            }
            if !wr.weight.is_finite() || wr.weight == 0.0 {
                return Err(HaarError::InvalidFeature(format!("rect weight {} is not a finite non-zero", wr.weight)));
            }
        }
        let (pos, neg) = self.weight_mass();
        if (pos - neg).abs() > 1e-9 * pos.max(neg) {
            return Err(HaarError::InvalidFeature(format!(
                "weights are not zero-mean (positive mass {pos}, negative mass {neg})"
            )));
        }
        Ok(())
    }

    /// (positive weighted area, negative weighted area as a positive number).
    pub fn weight_mass(&self) -> (f64, f64) {
        weight_mass(&self.rects)
    }

    /// Σ weight · area over all rects; zero for a valid feature.
    pub fn weighted_area(&self) -> f64 {
        self.rects.iter().map(|r| r.weight * r.rect.area() as f64).sum()
    }

    /// Un-normalized weighted rect sum with the base window placed at `(ox, oy)`.
    /// Callers guarantee the base window fits at that origin.
    #[inline]
    pub fn raw_value_at(&self, ii: &IntegralImage, ox: u32, oy: u32) -> f64 {
        let mut acc = 0.0;
        for wr in &self.rects {
            let r = wr.rect;
            acc += wr.weight * ii.rect_sum_unchecked(ox + r.x, oy + r.y, r.w, r.h) as f64;
        }
        acc
    }

    /// Normalized feature value over `window`.
    ///
    /// When `window` is larger than the base window the feature is scaled by
    /// `window.w / base_w` with [`scale_feature`]; the window height must match
    /// the same scale after rounding.
    pub fn evaluate(&self, ii: &IntegralImage, window: Rect, inv_stddev: f64) -> Result<f64, HaarError> {
        let out = || HaarError::FeatureOutOfWindow { window, base_w: self.base_w, base_h: self.base_h };
        if !window.fits_in(ii.image_width(), ii.image_height()) {
            return Err(out());
        }
        if window.w == self.base_w && window.h == self.base_h {
            return Ok(inv_stddev * self.raw_value_at(ii, window.x, window.y));
        }
        let Some(scale) = window_scale(self.base_w, self.base_h, window.w, window.h) else {
            return Err(out());
        };
        let scaled = scale_feature(self, scale);
        if scaled.rects.iter().any(|wr| !wr.rect.fits_in(window.w, window.h)) {
            return Err(out());
        }
        Ok(inv_stddev * scaled.value_at(ii, window.x, window.y))
    }
}

fn weight_mass(rects: &[WeightedRect]) -> (f64, f64) {
    let mut pos = 0.0;
    let mut neg = 0.0;
    for wr in rects {
        let m = wr.weight * wr.rect.area() as f64;
        if m > 0.0 {
            pos += m;
        } else {
            neg -= m;
        }
    }
    (pos, neg)
}

/// Scale that maps a `base_w x base_h` window onto `w x h` under rounding.
///
/// Prefers `w / base_w`, then `h / base_h`, then the middle of the range of
/// scales that round to both sides. `None` if no scale `>= 1` fits.
pub fn window_scale(base_w: u32, base_h: u32, w: u32, h: u32) -> Option<f64> {
    let fits = |s: f64| s >= 1.0 && (base_w as f64 * s).round() as u32 == w && (base_h as f64 * s).round() as u32 == h;
    let (bw, bh) = (base_w as f64, base_h as f64);
    let lo = ((w as f64 - 0.5) / bw).max((h as f64 - 0.5) / bh).max(1.0);
    let hi = ((w as f64 + 0.5) / bw).min((h as f64 + 0.5) / bh);
    [w as f64 / bw, h as f64 / bh, (lo + hi) / 2.0].into_iter().find(|&s| fits(s))
}

/// A feature resized for a larger detection window.
///
/// `value_at` returns `correction · Σ weight · rect_sum`. The correction
/// folds in the ratio of original to scaled total rect area, and any
/// rebalancing divisor introduced when rounding broke the zero-mean balance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledFeature {
    pub rects: Vec<WeightedRect>,
    pub correction: f64,
}

impl ScaledFeature {
    #[inline]
    pub fn value_at(&self, ii: &IntegralImage, ox: u32, oy: u32) -> f64 {
        let mut acc = 0.0;
        for wr in &self.rects {
            let r = wr.rect;
            acc += wr.weight * ii.rect_sum_unchecked(ox + r.x, oy + r.y, r.w, r.h) as f64;
        }
        self.correction * acc
    }

    pub fn weighted_area(&self) -> f64 {
        self.rects.iter().map(|r| r.weight * r.rect.area() as f64).sum()
    }
}

/// Scales a feature's rectangles by `scale` (≥ 1).
///
/// Rect edges are rounded to the nearest pixel, so rects that tile at the base
/// scale still tile after scaling. If rounding changes the balance between
/// positive and negative weighted area, positive weights are multiplied by
/// the negative mass and negative weights by the positive mass, and the
/// common factor is divided back out in the correction term. The result is
/// the positive weights rescaled by `negative mass / positive mass`, with the
/// zero-mean property exact in floating point.
pub fn scale_feature(feature: &HaarFeature, scale: f64) -> ScaledFeature {
    assert!(scale >= 1.0, "scale must be >= 1, got {scale}");
    if scale == 1.0 {
        return ScaledFeature { rects: feature.rects.clone(), correction: 1.0 };
    }
    let round = |v: u32| (v as f64 * scale).round() as u32;
    let mut rects: Vec<WeightedRect> = feature
        .rects
        .iter()
        .map(|wr| {
            let r = wr.rect;
            let x0 = round(r.x);
            let y0 = round(r.y);
            let x1 = round(r.x + r.w).max(x0 + 1);
            let y1 = round(r.y + r.h).max(y0 + 1);
            WeightedRect { rect: Rect::new(x0, y0, x1 - x0, y1 - y0), weight: wr.weight }
        })
        .collect();

    let orig_area: u64 = feature.rects.iter().map(|r| r.rect.area()).sum();
    let scaled_area: u64 = rects.iter().map(|r| r.rect.area()).sum();
    let mut correction = orig_area as f64 / scaled_area as f64;

    let (pos, neg) = weight_mass(&rects);
    if pos != neg && pos > 0.0 && neg > 0.0 {
        for wr in &mut rects {
            wr.weight *= if wr.weight > 0.0 { neg } else { pos };
        }
        correction /= pos;
    }
    ScaledFeature { rects, correction }
}

/// Every canonical feature that fits a `base_w x base_h` window.
///
/// Order is kind-major (EdgeH, EdgeV, LineH, LineV, Quad), then by position
/// `y`, `x`, then unit-cell height and width, all ascending.
pub fn enumerate_features(base_w: u32, base_h: u32) -> Result<Vec<HaarFeature>, HaarError> {
    if base_w < 4 || base_h < 4 {
        return Err(HaarError::WindowTooSmall(base_w, base_h));
    }
    let mut out = Vec::new();
    for kind in FeatureKind::CANONICAL {
        let (kx, ky) = kind.cells();
        for y in 0..base_h {
            for x in 0..base_w {
                for ch in 1..=(base_h - y) / ky {
                    for cw in 1..=(base_w - x) / kx {
                        out.push(canonical_feature(kind, x, y, cw, ch, base_w, base_h));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Builds one canonical feature from its origin and unit-cell size.
pub fn canonical_feature(kind: FeatureKind, x: u32, y: u32, cw: u32, ch: u32, base_w: u32, base_h: u32) -> HaarFeature {
    let cell = |i: u32, j: u32, weight: f64| WeightedRect { rect: Rect::new(x + i * cw, y + j * ch, cw, ch), weight };
    let rects = match kind {
        FeatureKind::EdgeH => vec![cell(0, 0, -1.0), cell(1, 0, 1.0)],
        FeatureKind::EdgeV => vec![cell(0, 0, -1.0), cell(0, 1, 1.0)],
        FeatureKind::LineH => vec![cell(0, 0, -1.0), cell(1, 0, 2.0), cell(2, 0, -1.0)],
        FeatureKind::LineV => vec![cell(0, 0, -1.0), cell(0, 1, 2.0), cell(0, 2, -1.0)],
        FeatureKind::Quad => vec![cell(0, 0, -1.0), cell(1, 0, 1.0), cell(0, 1, 1.0), cell(1, 1, -1.0)],
        FeatureKind::Custom => panic!("custom features have no canonical geometry"),
    };
    HaarFeature { kind, rects, base_w, base_h }
}
