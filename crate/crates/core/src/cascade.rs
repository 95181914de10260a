//! The attentional cascade: an ordered chain of boosted stages where a window
//! must pass every stage, and the first rejecting stage ends evaluation.
//!
//! Training grows one stage at a time. Each stage is boosted on the current
//! positives against negatives mined from the cascade's own false positives,
//! adding weak classifiers until its calibrated threshold keeps the detection
//! rate at `d_min` while letting through at most `f_max` of the negatives.

use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boost::{BoostConfig, BoostError, Booster, Label, Polarity, StrongClassifier, TrainingSample};
use crate::detect::{scan_scales, DetectParams};
use crate::haar::{enumerate_features, scale_feature, window_scale, HaarError, HaarFeature, ScaledFeature};
use crate::imagecore::{compute_integral, GrayImage, IntegralImage, Rect};

/// Calibrated thresholds sit this far below the boundary positive's score.
pub const CALIBRATION_MARGIN: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("insufficient negatives: found {found} qualifying windows, needed at least {required} of {needed}")]
    InsufficientNegatives { found: usize, required: usize, needed: usize },
    #[error("empty validation set")]
    EmptyValidationSet,
    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error(transparent)]
    Haar(#[from] HaarError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub classifier: StrongClassifier,
}

/// Training telemetry for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub index: usize,
    pub weak: usize,
    /// Detection rate on the stage's validation positives.
    pub d: f64,
    /// False-positive rate on the stage's bootstrapped negatives.
    pub f: f64,
    pub negpool: usize,
    pub positives: usize,
}

impl StageStats {
    /// `stage=<i> weak=<n> d=<val> f=<val> negpool=<n>`
    pub fn log_line(&self) -> String {
        format!("stage={} weak={} d={} f={} negpool={}", self.index, self.weak, self.d, self.f, self.negpool)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeTrainConfig {
    pub d_min: f64,
    pub f_max: f64,
    pub f_target: f64,
    pub max_stages: usize,
    pub max_weak_per_stage: usize,
    pub seed: u64,
    /// Fraction of positives held out for threshold calibration; 0 calibrates
    /// on the training positives themselves.
    pub holdout_fraction: f64,
    /// Negatives bootstrapped per stage; `None` means as many as positives.
    pub negatives_per_stage: Option<usize>,
    /// Grid used to scan negative images for false positives.
    pub scan: DetectParams,
    pub boost: BoostConfig,
}

impl Default for CascadeTrainConfig {
    fn default() -> Self {
        CascadeTrainConfig {
            d_min: 0.995,
            f_max: 0.5,
            f_target: 1e-4,
            max_stages: 20,
            max_weak_per_stage: 100,
            seed: 0,
            holdout_fraction: 0.0,
            negatives_per_stage: None,
            scan: DetectParams::default(),
            boost: BoostConfig::default(),
        }
    }
}

impl CascadeTrainConfig {
    pub fn validate(&self) -> Result<(), CascadeError> {
        let bad = |m: String| Err(CascadeError::InvalidConfig(m));
        if !(self.f_max > 0.0 && self.f_max < 1.0) {
            return bad(format!("f_max {} must lie in (0, 1)", self.f_max));
        }
        if !(self.d_min > 0.0 && self.d_min <= 1.0) {
            return bad(format!("d_min {} must lie in (0, 1]", self.d_min));
        }
        if !(self.f_target > 0.0) {
            return bad(format!("f_target {} must be positive", self.f_target));
        }
        if self.max_stages == 0 || self.max_weak_per_stage == 0 {
            return bad("max_stages and max_weak_per_stage must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!("holdout_fraction {} must lie in [0, 1)", self.holdout_fraction));
        }
        self.scan.validate().map_err(|e| CascadeError::InvalidConfig(e.to_string()))
    }
}

/// How a cascade was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub config: CascadeTrainConfig,
    pub seed: u64,
    pub positives: usize,
    pub negative_images: usize,
    pub stages: Vec<StageStats>,
    /// Why training stopped.
    pub stop_reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    pub base_w: u32,
    pub base_h: u32,
    pub stages: Vec<Stage>,
    pub provenance: Option<TrainingProvenance>,
}

/// Outcome of running a window through the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    /// Passed every stage. `margin` is the last stage's score minus its
    /// threshold (0 for an empty cascade).
    Accepted { margin: f64 },
    Rejected { stage: usize },
}

impl Decision {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Decision::Accepted { .. })
    }
}

/// Hook for counting work done during chain evaluation.
pub trait EvalObserver {
    fn feature_evaluated(&mut self, _stage: usize) {}
}

impl EvalObserver for () {}

/// Per-stage count of feature evaluations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalCounter {
    pub per_stage: Vec<u64>,
}

impl EvalObserver for EvalCounter {
    fn feature_evaluated(&mut self, stage: usize) {
        if self.per_stage.len() <= stage {
            self.per_stage.resize(stage + 1, 0);
        }
        self.per_stage[stage] += 1;
    }
}

impl EvalCounter {
    pub fn stage(&self, i: usize) -> u64 {
        self.per_stage.get(i).copied().unwrap_or(0)
    }
}

impl Cascade {
    pub fn new(base_w: u32, base_h: u32) -> Self {
        Cascade { base_w, base_h, stages: Vec::new(), provenance: None }
    }

    pub fn weak_count(&self) -> usize {
        self.stages.iter().map(|s| s.classifier.weak.len()).sum()
    }

    /// Runs `window` through the chain, stopping at the first rejecting stage.
    pub fn classify_window(&self, ii: &IntegralImage, window: Rect, inv_stddev: f64) -> Result<Decision, HaarError> {
        self.classify_window_observed(ii, window, inv_stddev, &mut ())
    }

    pub fn classify_window_observed(
        &self,
        ii: &IntegralImage,
        window: Rect,
        inv_stddev: f64,
        obs: &mut impl EvalObserver,
    ) -> Result<Decision, HaarError> {
        let bad = || HaarError::FeatureOutOfWindow { window, base_w: self.base_w, base_h: self.base_h };
        if !window.fits_in(ii.image_width(), ii.image_height()) {
            return Err(bad());
        }
        if window.w == self.base_w && window.h == self.base_h {
            return Ok(self.scaled(1.0).classify_at(ii, window.x, window.y, inv_stddev, obs));
        }
        let Some(scale) = window_scale(self.base_w, self.base_h, window.w, window.h) else {
            return Err(bad());
        };
        Ok(self.scaled(scale).classify_at(ii, window.x, window.y, inv_stddev, obs))
    }

    /// The cascade with every feature resized for windows `scale` times the base.
    pub fn scaled(&self, scale: f64) -> ScaledCascade {
        let stages = self
            .stages
            .iter()
            .map(|st| ScaledStage {
                weak: st
                    .classifier
                    .weak
                    .iter()
                    .map(|w| ScaledWeak { feature: scale_feature(&w.feature, scale), threshold: w.threshold, polarity: w.polarity, alpha: w.alpha })
                    .collect(),
                threshold: st.classifier.stage_threshold,
            })
            .collect();
        ScaledCascade {
            window_w: (self.base_w as f64 * scale).round() as u32,
            window_h: (self.base_h as f64 * scale).round() as u32,
            stages,
        }
    }

    /// Every feature referenced by the cascade, in stage order.
    pub fn features(&self) -> impl Iterator<Item = &HaarFeature> {
        self.stages.iter().flat_map(|s| s.classifier.weak.iter().map(|w| &w.feature))
    }
}

#[derive(Debug, Clone)]
struct ScaledWeak {
    feature: ScaledFeature,
    threshold: f64,
    polarity: Polarity,
    alpha: f64,
}

#[derive(Debug, Clone)]
struct ScaledStage {
    weak: Vec<ScaledWeak>,
    threshold: f64,
}

/// A cascade prepared for one window size.
#[derive(Debug, Clone)]
pub struct ScaledCascade {
    pub window_w: u32,
    pub window_h: u32,
    stages: Vec<ScaledStage>,
}

impl ScaledCascade {
    /// Chain decision for the window at `(ox, oy)`; the caller guarantees it fits.
    #[inline]
    pub fn classify_at(&self, ii: &IntegralImage, ox: u32, oy: u32, inv_stddev: f64, obs: &mut impl EvalObserver) -> Decision {
        let mut margin = 0.0;
        for (si, st) in self.stages.iter().enumerate() {
            let mut score = 0.0;
            for w in &st.weak {
                obs.feature_evaluated(si);
                let v = inv_stddev * w.feature.value_at(ii, ox, oy);
                let hit = match w.polarity {
                    Polarity::Below => v < w.threshold,
                    Polarity::Above => v > w.threshold,
                };
                if hit {
                    score += w.alpha;
                }
            }
            if score < st.threshold {
                return Decision::Rejected { stage: si };
            }
            margin = score - st.threshold;
        }
        Decision::Accepted { margin }
    }

    /// Chain decision with the window's own variance normalization.
    #[inline]
    pub fn classify(&self, ii: &IntegralImage, ox: u32, oy: u32) -> Decision {
        let inv = ii.inv_stddev(Rect::new(ox, oy, self.window_w, self.window_h));
        self.classify_at(ii, ox, oy, inv, &mut ())
    }
}

/// Largest threshold that keeps at least `d_min` of `scores` at or above it,
/// less [`CALIBRATION_MARGIN`], clamped at 0.
pub fn threshold_for_scores(scores: &[f64], d_min: f64) -> Result<f64, CascadeError> {
    if scores.is_empty() {
        return Err(CascadeError::EmptyValidationSet);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let keep = ((d_min * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    let k = n - keep.max(1);
    Ok((sorted[k] - CALIBRATION_MARGIN).max(0.0))
}

/// Stage threshold calibrated so at least `d_min` of the validation positives pass.
pub fn calibrate_stage_threshold(sc: &StrongClassifier, validation_positives: &[TrainingSample], d_min: f64) -> Result<f64, CascadeError> {
    let scores: Vec<f64> = validation_positives.iter().map(|s| sc.score_at(&s.ii, 0, 0, s.inv_stddev())).collect();
    threshold_for_scores(&scores, d_min)
}

/// Mines windows that `cascade` accepts from `negative_images`.
///
/// Every image is scanned on the detection grid. Each qualifying window draws
/// a key from a per-image seeded stream; the `needed` smallest keys are kept
/// and returned in key order, cropped and resampled to the base window.
pub fn bootstrap_negatives(
    cascade: &Cascade,
    negative_images: &[GrayImage],
    needed: usize,
    seed: u64,
    grid: &DetectParams,
) -> Result<Vec<GrayImage>, CascadeError> {
    if needed == 0 {
        return Err(CascadeError::InvalidConfig("needed must be >= 1".into()));
    }
    let scaled_cache = std::sync::Mutex::new(Vec::<(u64, std::sync::Arc<ScaledCascade>)>::new());
    let scaled_for = |scale: f64| -> std::sync::Arc<ScaledCascade> {
        let key = scale.to_bits();
        let mut cache = scaled_cache.lock().expect("cache lock");
        if let Some((_, sc)) = cache.iter().find(|(k, _)| *k == key) {
            return sc.clone();
        }
        let sc = std::sync::Arc::new(cascade.scaled(scale));
        cache.push((key, sc.clone()));
        sc
    };

    // (key, image, window) kept per image, then merged
    let per_image: Vec<(usize, Vec<(u64, usize, Rect)>)> = negative_images
        .par_iter()
        .enumerate()
        .map(|(idx, img)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut heap: BinaryHeap<(u64, usize, Rect)> = BinaryHeap::new();
            let mut found = 0usize;
            if img.width() < cascade.base_w || img.height() < cascade.base_h {
                return (0, Vec::new());
            }
            let ii = compute_integral(img);
            for level in scan_scales(img.width(), img.height(), cascade.base_w, cascade.base_h, grid) {
                let sc = scaled_for(level.scale);
                for (x, y) in level.positions() {
                    let accepted = cascade.stages.is_empty() || sc.classify(&ii, x, y).is_accepted();
                    if !accepted {
                        continue;
                    }
                    found += 1;
                    let key: u64 = rng.gen();
                    let item = (key, idx, Rect::new(x, y, level.window_w, level.window_h));
                    if heap.len() < needed {
                        heap.push(item);
                    } else if item < *heap.peek().expect("non-empty heap") {
                        heap.pop();
                        heap.push(item);
                    }
                }
            }
            (found, heap.into_vec())
        })
        .collect();

    let found: usize = per_image.iter().map(|(f, _)| f).sum();
    let required = needed.div_ceil(2);
    if found < required {
        return Err(CascadeError::InsufficientNegatives { found, required, needed });
    }
    let mut kept: Vec<(u64, usize, Rect)> = per_image.into_iter().flat_map(|(_, v)| v).collect();
    kept.sort();
    kept.truncate(needed);
    Ok(kept
        .into_par_iter()
        .map(|(_, idx, r)| {
            negative_images[idx].crop_resized(r, cascade.base_w, cascade.base_h).expect("scan windows lie inside the image")
        })
        .collect())
}

/// [`train_cascade_with_log`] without a log sink.
pub fn train_cascade(positives: &[GrayImage], negative_images: &[GrayImage], cfg: &CascadeTrainConfig) -> Result<Cascade, CascadeError> {
    train_cascade_with_log(positives, negative_images, cfg, |_| {})
}

/// Trains a cascade stage by stage. `on_stage` receives each stage's telemetry
/// as soon as the stage is appended.
pub fn train_cascade_with_log(
    positives: &[GrayImage],
    negative_images: &[GrayImage],
    cfg: &CascadeTrainConfig,
    mut on_stage: impl FnMut(&StageStats),
) -> Result<Cascade, CascadeError> {
    cfg.validate()?;
    let first = positives.first().ok_or_else(|| CascadeError::DegenerateSamples("no positives".into()))?;
    let (base_w, base_h) = (first.width(), first.height());
    if let Some(p) = positives.iter().find(|p| p.width() != base_w || p.height() != base_h) {
        return Err(CascadeError::DegenerateSamples(format!(
            "positive of size {}x{} differs from base window {base_w}x{base_h}",
            p.width(),
            p.height()
        )));
    }
    if !negative_images.iter().any(|n| n.width() >= base_w && n.height() >= base_h) {
        return Err(CascadeError::InsufficientNegatives { found: 0, required: 1, needed: 1 });
    }
    let pool = enumerate_features(base_w, base_h)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..positives.len()).collect();
    let holdout = (cfg.holdout_fraction * positives.len() as f64).floor() as usize;
    if holdout > 0 {
        order.shuffle(&mut rng);
    }
    let (val_idx, train_idx) = order.split_at(holdout);
    let mut train_pos: Vec<TrainingSample> =
        train_idx.iter().map(|&i| TrainingSample::new(&positives[i], Label::Positive, 1.0)).collect();
    let mut val_pos: Vec<TrainingSample> = if holdout > 0 {
        val_idx.iter().map(|&i| TrainingSample::new(&positives[i], Label::Positive, 1.0)).collect()
    } else {
        Vec::new()
    };
    if train_pos.is_empty() {
        return Err(CascadeError::DegenerateSamples("no training positives after holdout".into()));
    }

    let mut cascade = Cascade::new(base_w, base_h);
    let mut stats = Vec::new();
    let mut cumulative_f = 1.0;
    let stop_reason;

    loop {
        if cumulative_f <= cfg.f_target {
            stop_reason = format!("false-positive target reached ({cumulative_f:e} <= {:e})", cfg.f_target);
            break;
        }
        if cascade.stages.len() >= cfg.max_stages {
            stop_reason = format!("max_stages {} reached", cfg.max_stages);
            break;
        }
        let stage_index = cascade.stages.len();

        // positives still passing the chain
        if stage_index > 0 {
            let keep = |set: &mut Vec<TrainingSample>| {
                let base = cascade.scaled(1.0);
                set.retain(|s| base.classify_at(&s.ii, 0, 0, s.inv_stddev(), &mut ()).is_accepted());
            };
            keep(&mut train_pos);
            keep(&mut val_pos);
            if train_pos.is_empty() {
                stop_reason = "no positives pass the current cascade".into();
                break;
            }
        }

        let needed = cfg.negatives_per_stage.unwrap_or(train_pos.len()).max(1);
        let stage_seed = cfg.seed.wrapping_add(0x5DEE_CE66_D1CE_4E5B_u64.wrapping_mul(stage_index as u64 + 1));
        let negatives = match bootstrap_negatives(&cascade, negative_images, needed, stage_seed, &cfg.scan) {
            Ok(n) => n,
            Err(e @ CascadeError::InsufficientNegatives { .. }) => {
                if cascade.stages.is_empty() {
                    return Err(e);
                }
                stop_reason = format!("negatives exhausted: {e}");
                break;
            }
            Err(e) => return Err(e),
        };

        let pos_w = 0.5 / train_pos.len() as f64;
        let neg_w = 0.5 / negatives.len() as f64;
        let mut samples: Vec<TrainingSample> = train_pos.iter().map(|s| TrainingSample { weight: pos_w, ..s.clone() }).collect();
        samples.extend(negatives.iter().map(|img| TrainingSample::new(img, Label::Negative, neg_w)));
        let n_pos = train_pos.len();
        let validation: &[TrainingSample] = if val_pos.is_empty() { &samples[..n_pos] } else { &val_pos };

        let mut booster = Booster::new(&samples, &pool, cfg.boost)?;
        let mut best: Option<(StrongClassifier, f64, f64)> = None;
        for _ in 0..cfg.max_weak_per_stage {
            if let Err(e) = booster.round().map(|_| ()) {
                if matches!(e, BoostError::NoUsefulFeature { .. }) && !booster.weak().is_empty() {
                    break;
                }
                return Err(e.into());
            }
            let mut sc = booster.classifier();
            sc.stage_threshold = calibrate_stage_threshold(&sc, validation, cfg.d_min)?;
            let scores = booster.scores();
            let f = rate(&scores[n_pos..], sc.stage_threshold);
            let d = if val_pos.is_empty() {
                rate(&scores[..n_pos], sc.stage_threshold)
            } else {
                let vs: Vec<f64> = val_pos.iter().map(|s| sc.score_at(&s.ii, 0, 0, s.inv_stddev())).collect();
                rate(&vs, sc.stage_threshold)
            };
            let done = f <= cfg.f_max;
            best = Some((sc, d, f));
            if done {
                break;
            }
        }
        let (classifier, d, f) = best.expect("at least one boosting round");
        let st = StageStats { index: stage_index, weak: classifier.weak.len(), d, f, negpool: negatives.len(), positives: n_pos };
        on_stage(&st);
        stats.push(st);
        cascade.stages.push(Stage { classifier });
        cumulative_f *= f;
    }

    cascade.provenance = Some(TrainingProvenance {
        config: cfg.clone(),
        seed: cfg.seed,
        positives: positives.len(),
        negative_images: negative_images.len(),
        stages: stats,
        stop_reason,
    });
    Ok(cascade)
}

/// Fraction of scores at or above `threshold`.
fn rate(scores: &[f64], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boost::WeakClassifier;
    use crate::haar::{canonical_feature, FeatureKind};
    use crate::testutil::{noise, random_cascade};

    #[test]
    fn empty_cascade_accepts() {
        let c = Cascade::new(8, 8);
        let ii = compute_integral(&GrayImage::filled(20, 20, 4).unwrap());
        assert!(c.classify_window(&ii, Rect::new(3, 3, 8, 8), 1.0).unwrap().is_accepted());
        assert!(c.classify_window(&ii, Rect::new(0, 0, 16, 16), 1.0).unwrap().is_accepted());
    }

    #[test]
    fn unreachable_first_stage_rejects_early() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut c = random_cascade(&mut rng, 8, 2, 3);
        let total = c.stages[0].classifier.total_alpha();
        c.stages[0].classifier.stage_threshold = total + 1.0;
        for _ in 0..50 {
            let img = noise(&mut rng, 16, 16);
            let ii = compute_integral(&img);
            let w = Rect::new(rng.gen_range(0..=8), rng.gen_range(0..=8), 8, 8);
            let mut counter = EvalCounter::default();
            let d = c.classify_window_observed(&ii, w, ii.inv_stddev(w), &mut counter).unwrap();
            assert_eq!(d, Decision::Rejected { stage: 0 });
            assert_eq!(counter.stage(0), 3);
            assert_eq!(counter.stage(1), 0);
        }
    }

    #[test]
    fn chain_is_conjunction_of_stages() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let c = random_cascade(&mut rng, 10, 3, 4);
        let mut seen = [0usize; 2];
        for _ in 0..1000 {
            let img = noise(&mut rng, 24, 24);
            let ii = compute_integral(&img);
            let size = [10, 15, 20][rng.gen_range(0..3)];
            let w = Rect::new(rng.gen_range(0..=24 - size), rng.gen_range(0..=24 - size), size, size);
            let inv = ii.inv_stddev(w);
            let each: Vec<bool> = c
                .stages
                .iter()
                .map(|s| {
                    let score = crate::boost::strong_score(&s.classifier, &ii, w, inv).unwrap();
                    s.classifier.accepts_score(score)
                })
                .collect();
            let got = c.classify_window(&ii, w, inv).unwrap();
            assert_eq!(got.is_accepted(), each.iter().all(|&b| b));
            if let Decision::Rejected { stage } = got {
                assert!(!each[stage] && each[..stage].iter().all(|&b| b));
            }
            seen[got.is_accepted() as usize] += 1;
        }
        assert!(seen[0] > 0 && seen[1] > 0, "{seen:?}");
    }

    #[test]
    fn appending_a_stage_never_unrejects() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let c3 = random_cascade(&mut rng, 8, 3, 3);
        let mut c2 = c3.clone();
        c2.stages.pop();
        for _ in 0..500 {
            let ii = compute_integral(&noise(&mut rng, 8, 8));
            let w = Rect::new(0, 0, 8, 8);
            let inv = ii.inv_stddev(w);
            if !c2.classify_window(&ii, w, inv).unwrap().is_accepted() {
                assert!(!c3.classify_window(&ii, w, inv).unwrap().is_accepted());
            }
        }
    }

    #[test]
    fn calibration_keep_all() {
        let t = threshold_for_scores(&[3.0, 1.5, 2.0], 1.0).unwrap();
        assert_eq!(t, 1.5 - CALIBRATION_MARGIN);
    }

    #[test]
    fn calibration_order_statistic() {
        let scores: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let t = threshold_for_scores(&scores, 0.9).unwrap();
        assert_eq!(t, 2.0 - CALIBRATION_MARGIN);
        assert_eq!(scores.iter().filter(|&&s| s >= t).count(), 9);
    }

    #[test]
    fn calibration_meets_detection_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..200 {
            let n = rng.gen_range(1..300);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64 * 0.25).collect();
            let d = rng.gen_range(0.5..=1.0);
            let t = threshold_for_scores(&scores, d).unwrap();
            assert!(rate(&scores, t) >= d - 1e-12);
        }
        assert!(matches!(threshold_for_scores(&[], 0.9), Err(CascadeError::EmptyValidationSet)));
    }

    #[test]
    fn bootstrap_empty_cascade_fills_request() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let imgs: Vec<GrayImage> = (0..3).map(|_| noise(&mut rng, 20, 20)).collect();
        let c = Cascade::new(8, 8);
        let got = bootstrap_negatives(&c, &imgs, 40, 7, &DetectParams::default()).unwrap();
        assert_eq!(got.len(), 40);
        assert!(got.iter().all(|g| g.width() == 8 && g.height() == 8));
        assert_eq!(got, bootstrap_negatives(&c, &imgs, 40, 7, &DetectParams::default()).unwrap());
    }

    #[test]
    fn bootstrap_rejecting_cascade_is_insufficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let imgs: Vec<GrayImage> = (0..3).map(|_| noise(&mut rng, 20, 20)).collect();
        let mut c = random_cascade(&mut rng, 8, 1, 2);
        c.stages[0].classifier.stage_threshold = 1e9;
        let err = bootstrap_negatives(&c, &imgs, 10, 1, &DetectParams::default()).unwrap_err();
        assert!(matches!(err, CascadeError::InsufficientNegatives { found: 0, .. }));
    }

    fn square_positive(rng: &mut ChaCha8Rng) -> GrayImage {
        let bg: u8 = rng.gen_range(170..230);
        let fg: u8 = rng.gen_range(20..80);
        GrayImage::from_fn(12, 12, |x, y| {
            let inside = (3..9).contains(&x) && (3..9).contains(&y);
            let base = if inside { fg } else { bg } as i32;
            (base + rng.gen_range(-10..=10)).clamp(0, 255) as u8
        })
        .unwrap()
    }

    #[test]
    fn small_training_run_meets_stage_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let positives: Vec<GrayImage> = (0..60).map(|_| square_positive(&mut rng)).collect();
        let negatives: Vec<GrayImage> = (0..20).map(|_| noise(&mut rng, 40, 40)).collect();
        let cfg = CascadeTrainConfig { max_stages: 4, f_target: 1e-3, seed: 5, ..Default::default() };
        let mut logged = Vec::new();
        let c = train_cascade_with_log(&positives, &negatives, &cfg, |s| logged.push(s.log_line())).unwrap();
        let prov = c.provenance.as_ref().unwrap();
        assert!(!c.stages.is_empty());
        assert_eq!(logged.len(), c.stages.len());
        for st in &prov.stages {
            assert!(st.d >= cfg.d_min);
            assert!(st.f <= cfg.f_max || st.weak == cfg.max_weak_per_stage);
        }
        // determinism
        let again = train_cascade(&positives, &negatives, &cfg).unwrap();
        assert_eq!(c, again);

        // qualifying windows shrink as stages are appended
        let grid = DetectParams::default();
        let mut last = usize::MAX;
        for k in 0..=c.stages.len() {
            let partial = Cascade { stages: c.stages[..k].to_vec(), ..c.clone() };
            let count = match bootstrap_negatives(&partial, &negatives, 1_000_000, 1, &grid) {
                Ok(v) => v.len(),
                Err(CascadeError::InsufficientNegatives { found, .. }) => found,
                Err(e) => panic!("{e}"),
            };
            assert!(count <= last);
            last = count;
        }
    }

    #[test]
    fn loose_target_stops_after_one_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let positives: Vec<GrayImage> = (0..30).map(|_| square_positive(&mut rng)).collect();
        let negatives: Vec<GrayImage> = (0..5).map(|_| noise(&mut rng, 30, 30)).collect();
        let cfg = CascadeTrainConfig { f_max: 0.5, f_target: 0.5, seed: 1, ..Default::default() };
        let c = train_cascade(&positives, &negatives, &cfg).unwrap();
        assert_eq!(c.stages.len(), 1);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = CascadeTrainConfig { f_max: 1.5, ..Default::default() };
        assert!(cfg.validate().is_err());
        let positives = vec![GrayImage::filled(8, 8, 1).unwrap()];
        let small = vec![GrayImage::filled(4, 4, 1).unwrap()];
        let err = train_cascade(&positives, &small, &CascadeTrainConfig::default()).unwrap_err();
        assert!(matches!(err, CascadeError::InsufficientNegatives { .. }));
    }

    #[test]
    fn scaled_window_decision_matches_explicit_scaling() {
        let f = canonical_feature(FeatureKind::EdgeH, 0, 0, 4, 8, 8, 8);
        let c = Cascade {
            base_w: 8,
            base_h: 8,
            stages: vec![Stage {
                classifier: StrongClassifier {
                    weak: vec![WeakClassifier { feature: f, threshold: 0.0, polarity: Polarity::Above, alpha: 1.0 }],
                    stage_threshold: 0.5,
                },
            }],
            provenance: None,
        };
        let img = GrayImage::from_fn(16, 16, |x, _| if x < 8 { 10 } else { 200 }).unwrap();
        let ii = compute_integral(&img);
        let w = Rect::new(0, 0, 16, 16);
        assert!(c.classify_window(&ii, w, ii.inv_stddev(w)).unwrap().is_accepted());
        let flipped = GrayImage::from_fn(16, 16, |x, _| if x < 8 { 200 } else { 10 }).unwrap();
        let ii = compute_integral(&flipped);
        assert_eq!(c.classify_window(&ii, w, ii.inv_stddev(w)).unwrap(), Decision::Rejected { stage: 0 });
    }
}
