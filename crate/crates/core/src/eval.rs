//! Matching detections to ground truth and the accuracy, completeness and
//! quality metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cascade::Cascade;
use crate::dataset::TruthBox;
use crate::detect::{raw_hits, scan_scales, DetectError, DetectParams, Detection};
use crate::imagecore::{compute_integral, GrayImage, Rect};

pub const DEFAULT_IOU_MIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub detection: usize,
    pub truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub matches: Vec<Match>,
    /// Detections dropped because they only overlap `ignore` boxes.
    pub ignored: Vec<usize>,
}

/// Greedy one-to-one matching by descending IoU.
///
/// Detections are first put in a canonical order (by box, then score), so the
/// counts do not depend on input order; IoU ties go to the lower canonical
/// detection, then the lower truth index. Unmatched detections overlapping an
/// ignore box by at least `iou_min` count as neither TP nor FP.
pub fn match_detections(dets: &[Detection], truth: &[TruthBox], iou_min: f64) -> MatchResult {
    assert!(iou_min > 0.0 && iou_min < 1.0, "iou_min must lie in (0, 1), got {iou_min}");
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        (da.rect.y, da.rect.x, da.rect.w, da.rect.h)
            .cmp(&(db.rect.y, db.rect.x, db.rect.w, db.rect.h))
            .then(db.score.total_cmp(&da.score))
            .then(db.neighbors.cmp(&da.neighbors))
    });

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (rank, &di) in order.iter().enumerate() {
        for (ti, t) in truth.iter().enumerate() {
            if t.ignore {
                continue;
            }
            let iou = dets[di].rect.iou(&t.rect);
            if iou >= iou_min {
                pairs.push((iou, rank, ti));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut det_used = vec![false; dets.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut matches = Vec::new();
    for (iou, rank, ti) in pairs {
        let di = order[rank];
        if !det_used[di] && !truth_used[ti] {
            det_used[di] = true;
            truth_used[ti] = true;
            matches.push(Match { detection: di, truth: ti, iou });
        }
    }

    let mut ignored = Vec::new();
    let mut fp = 0;
    for &di in &order {
        if det_used[di] {
            continue;
        }
        if truth.iter().any(|t| t.ignore && dets[di].rect.iou(&t.rect) >= iou_min) {
            ignored.push(di);
        } else {
            fp += 1;
        }
    }
    ignored.sort_unstable();
    let fn_ = truth.iter().zip(&truth_used).filter(|(t, &u)| !t.ignore && !u).count();
    MatchResult { tp: matches.len(), fp, fn_, matches, ignored }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Counts { tp, fp, fn_ }
    }

    pub fn add(self, o: Counts) -> Counts {
        Counts::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl From<&MatchResult> for Counts {
    fn from(m: &MatchResult) -> Self {
        Counts::new(m.tp, m.fp, m.fn_)
    }
}

/// The three ratios; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub completeness: Option<f64>,
    pub quality: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// accuracy = tp/(tp+fp), completeness = tp/(tp+fn), quality = tp/(tp+fp+fn).
pub fn compute_metrics(c: Counts) -> Metrics {
    Metrics {
        accuracy: ratio(c.tp, c.tp + c.fp),
        completeness: ratio(c.tp, c.tp + c.fn_),
        quality: ratio(c.tp, c.tp + c.fp + c.fn_),
    }
}

/// Free-form scene description columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneMeta {
    pub label: String,
    pub frame_size: Option<String>,
    pub frame_rate: Option<String>,
    pub scene_type: Option<String>,
    pub surface: Option<String>,
    pub noise: Option<String>,
    pub lighting: Option<String>,
    pub shadow_size: Option<String>,
    pub shadow_strength: Option<String>,
    pub shadow_direction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub image: String,
    #[serde(flatten)]
    pub counts: Counts,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene: SceneMeta,
    pub frames: usize,
    #[serde(flatten)]
    pub counts: Counts,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub per_image: Vec<ImageRow>,
}

/// Sums counts over frames, then applies the ratios once.
pub fn scene_report(per_image: &[(String, Counts)], meta: SceneMeta) -> SceneReport {
    let counts = per_image.iter().fold(Counts::default(), |acc, (_, c)| acc.add(*c));
    SceneReport {
        scene: meta,
        frames: per_image.len(),
        counts,
        metrics: compute_metrics(counts),
        per_image: per_image
            .iter()
            .map(|(image, c)| ImageRow { image: image.clone(), counts: *c, metrics: compute_metrics(*c) })
            .collect(),
    }
}

/// Scan-window tallies over frames with known objects.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowTally {
    /// Scanned windows overlapping no truth box by `iou_min` or more.
    pub negative_windows: u64,
    /// Of those, windows the cascade accepts.
    pub false_positives: u64,
    pub positive_windows: u64,
    pub accepted_positive_windows: u64,
}

impl WindowTally {
    pub fn false_positive_rate(&self) -> Option<f64> {
        (self.negative_windows > 0).then(|| self.false_positives as f64 / self.negative_windows as f64)
    }
}

/// Per-window tallies of the raw (ungrouped) scan on `frame`.
pub fn window_tally(c: &Cascade, frame: &GrayImage, truth: &[Rect], p: &DetectParams, iou_min: f64) -> Result<WindowTally, DetectError> {
    let ii = compute_integral(frame);
    let is_object = |r: &Rect| truth.iter().any(|t| r.iou(t) >= iou_min);
    let mut tally = WindowTally::default();
    for level in scan_scales(frame.width(), frame.height(), c.base_w, c.base_h, p) {
        for (x, y) in level.positions() {
            if is_object(&Rect::new(x, y, level.window_w, level.window_h)) {
                tally.positive_windows += 1;
            } else {
                tally.negative_windows += 1;
            }
        }
    }
    for hit in raw_hits(c, &ii, p)? {
        if is_object(&hit.rect) {
            tally.accepted_positive_windows += 1;
        } else {
            tally.false_positives += 1;
        }
    }
    Ok(tally)
}

impl std::ops::Add for WindowTally {
    type Output = WindowTally;
    fn add(self, o: WindowTally) -> WindowTally {
        WindowTally {
            negative_windows: self.negative_windows + o.negative_windows,
            false_positives: self.false_positives + o.false_positives,
            positive_windows: self.positive_windows + o.positive_windows,
            accepted_positive_windows: self.accepted_positive_windows + o.accepted_positive_windows,
        }
    }
}

fn csv_value(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{:.2}%", 100.0 * v))
}

/// `scene,frames,tp,fp,fn,accuracy,completeness,quality`
pub fn render_csv(reports: &[SceneReport]) -> String {
    let mut out = String::from("scene,frames,tp,fp,fn,accuracy,completeness,quality\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            csv_field(&r.scene.label),
            r.frames,
            r.counts.tp,
            r.counts.fp,
            r.counts.fn_,
            csv_value(r.metrics.accuracy),
            csv_value(r.metrics.completeness),
            csv_value(r.metrics.quality)
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_json(reports: &[SceneReport]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
    s.push('\n');
    s
}

/// Aligned text table, one row per scene.
pub fn render_text(reports: &[SceneReport]) -> String {
    let header = ["Scene", "Frames", "TP", "FP", "FN", "Accuracy", "Completeness", "Quality"];
    let rows: Vec<[String; 8]> = reports
        .iter()
        .map(|r| {
            [
                r.scene.label.clone(),
                r.frames.to_string(),
                r.counts.tp.to_string(),
                r.counts.fp.to_string(),
                r.counts.fn_.to_string(),
                pct(r.metrics.accuracy),
                pct(r.metrics.completeness),
                pct(r.metrics.quality),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec());
    for row in &rows {
        line(row.iter().map(String::as_str).collect());
    }
    out
}
