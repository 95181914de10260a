//! Decision stumps over Haar features and Discrete AdaBoost.
//!
//! A stump thresholds one feature value: it predicts positive iff
//! `polarity · value < polarity · threshold`. The optimal stump for a feature
//! comes from one scan over the samples sorted by feature value. Boosting
//! picks, each round, the pool feature whose optimal stump has the lowest
//! weighted error, then down-weights the samples that stump got right.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::haar::{HaarError, HaarFeature};
use crate::imagecore::{compute_integral, GrayImage, IntegralImage, Rect};

/// Lower/upper clamp on the weighted error used to derive vote weights.
pub const ERROR_CLAMP: f64 = 1e-10;

/// A round whose best stump errs at least this much is no better than chance.
pub const USELESS_ERROR: f64 = 0.5 - 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoostError {
    #[error("degenerate training set: {0}")]
    DegenerateSamples(String),
    #[error("no feature in the pool beats chance (best weighted error {best_error})")]
    NoUsefulFeature { best_error: f64 },
    #[error(transparent)]
    Haar(#[from] HaarError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

/// One base-window-sized training example.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub ii: IntegralImage,
    pub label: Label,
    pub weight: f64,
}

impl TrainingSample {
    pub fn new(img: &GrayImage, label: Label, weight: f64) -> Self {
        TrainingSample { ii: compute_integral(img), label, weight }
    }

    pub fn window(&self) -> Rect {
        Rect::new(0, 0, self.ii.image_width(), self.ii.image_height())
    }

    pub fn inv_stddev(&self) -> f64 {
        self.ii.inv_stddev(self.window())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Polarity {
    /// Positive below the threshold.
    Below,
    /// Positive above the threshold.
    Above,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Below => 1.0,
            Polarity::Above => -1.0,
        }
    }
}

impl From<Polarity> for i8 {
    fn from(p: Polarity) -> i8 {
        match p {
            Polarity::Below => 1,
            Polarity::Above => -1,
        }
    }
}

impl TryFrom<i8> for Polarity {
    type Error = String;
    fn try_from(v: i8) -> Result<Self, String> {
        match v {
            1 => Ok(Polarity::Below),
            -1 => Ok(Polarity::Above),
            other => Err(format!("polarity must be +1 or -1, got {other}")),
        }
    }
}

#[inline]
fn stump_predicts(value: f64, threshold: f64, polarity: Polarity) -> bool {
    match polarity {
        Polarity::Below => value < threshold,
        Polarity::Above => value > threshold,
    }
}

/// Threshold and polarity of a fitted stump, plus its weighted error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stump {
    pub threshold: f64,
    pub polarity: Polarity,
    pub error: f64,
}

impl Stump {
    pub fn predicts(&self, value: f64) -> bool {
        stump_predicts(value, self.threshold, self.polarity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakClassifier {
    pub feature: HaarFeature,
    pub threshold: f64,
    pub polarity: Polarity,
    /// Vote weight α.
    pub alpha: f64,
}

impl WeakClassifier {
    #[inline]
    pub fn predicts(&self, value: f64) -> bool {
        stump_predicts(value, self.threshold, self.polarity)
    }
}

/// A boosted weighted vote over weak classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongClassifier {
    pub weak: Vec<WeakClassifier>,
    pub stage_threshold: f64,
}

impl StrongClassifier {
    pub fn total_alpha(&self) -> f64 {
        self.weak.iter().map(|w| w.alpha).sum()
    }

    /// Σ α·h over a base-sized window at `(ox, oy)`.
    #[inline]
    pub fn score_at(&self, ii: &IntegralImage, ox: u32, oy: u32, inv_stddev: f64) -> f64 {
        let mut score = 0.0;
        for wc in &self.weak {
            if wc.predicts(inv_stddev * wc.feature.raw_value_at(ii, ox, oy)) {
                score += wc.alpha;
            }
        }
        score
    }

    pub fn accepts_score(&self, score: f64) -> bool {
        score >= self.stage_threshold
    }
}

/// Σ α·h over `window` (any size the features scale to).
pub fn strong_score(sc: &StrongClassifier, ii: &IntegralImage, window: Rect, inv_stddev: f64) -> Result<f64, HaarError> {
    let mut score = 0.0;
    for wc in &sc.weak {
        if wc.predicts(wc.feature.evaluate(ii, window, inv_stddev)?) {
            score += wc.alpha;
        }
    }
    Ok(score)
}

fn check_samples(samples: &[TrainingSample]) -> Result<(u64, u64), BoostError> {
    if samples.is_empty() {
        return Err(BoostError::DegenerateSamples("no samples".into()));
    }
    let pos = samples.iter().filter(|s| s.label.is_positive()).count() as u64;
    let neg = samples.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(BoostError::DegenerateSamples(format!("{pos} positives and {neg} negatives; both classes are required")));
    }
    let (w, h) = (samples[0].ii.image_width(), samples[0].ii.image_height());
    if let Some(s) = samples.iter().find(|s| s.ii.image_width() != w || s.ii.image_height() != h) {
        return Err(BoostError::DegenerateSamples(format!(
            "sample size {}x{} differs from {w}x{h}",
            s.ii.image_width(),
            s.ii.image_height()
        )));
    }
    if let Some(s) = samples.iter().find(|s| !(s.weight > 0.0 && s.weight.is_finite())) {
        return Err(BoostError::DegenerateSamples(format!("sample weight {} is not positive", s.weight)));
    }
    Ok((w as u64, h as u64))
}

/// Threshold strictly below `v`.
fn below(v: f64) -> f64 {
    let t = v - 1.0;
    if t < v {
        t
    } else {
        v - v.abs() * 1e-9
    }
}

/// Threshold separating sorted neighbours `a < b` for the given polarity.
fn split_threshold(a: f64, b: f64, polarity: Polarity) -> f64 {
    let mid = a + (b - a) / 2.0;
    if a < mid && mid < b {
        mid
    } else {
        // a and b are adjacent floats
        match polarity {
            Polarity::Below => b,
            Polarity::Above => a,
        }
    }
}

/// Result of a sorted scan: split after the first `below` sorted samples.
#[derive(Debug, Clone, Copy)]
struct Split {
    below: usize,
    polarity: Polarity,
    error: f64,
}

/// Scans samples in ascending value order. `next(i)` yields the sample index
/// at sorted position `i` and whether its value equals the previous one.
#[inline]
fn scan_sorted(
    n: usize,
    mut next: impl FnMut(usize) -> (usize, bool),
    is_pos: &[bool],
    weights: &[f64],
    w_pos: f64,
    w_neg: f64,
) -> Split {
    // split before everything: Below predicts all negative, Above all positive
    let mut best = if w_pos <= w_neg {
        Split { below: 0, polarity: Polarity::Below, error: w_pos }
    } else {
        Split { below: 0, polarity: Polarity::Above, error: w_neg }
    };
    let (mut s_pos, mut s_neg) = (0.0, 0.0);
    for i in 0..n {
        let (idx, tied) = next(i);
        // a split is legal between position i-1 and i only when values differ
        if i > 0 && !tied {
            let err_below = (w_pos - s_pos) + s_neg;
            let err_above = s_pos + (w_neg - s_neg);
            if err_below < best.error {
                best = Split { below: i, polarity: Polarity::Below, error: err_below };
            }
            if err_above < best.error {
                best = Split { below: i, polarity: Polarity::Above, error: err_above };
            }
        }
        if is_pos[idx] {
            s_pos += weights[idx];
        } else {
            s_neg += weights[idx];
        }
    }
    best
}

/// Optimal stump for raw per-sample values.
///
/// Ties in error keep the smaller threshold (the earlier split), and at a
/// single split `Below` wins over `Above`.
pub fn best_stump(values: &[f64], labels: &[Label], weights: &[f64]) -> Result<Stump, BoostError> {
    let n = values.len();
    if n == 0 || labels.len() != n || weights.len() != n {
        return Err(BoostError::DegenerateSamples("values, labels and weights must be equal non-empty lengths".into()));
    }
    let is_pos: Vec<bool> = labels.iter().map(|l| l.is_positive()).collect();
    if is_pos.iter().all(|&p| p) || is_pos.iter().all(|&p| !p) {
        return Err(BoostError::DegenerateSamples("both classes are required".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let (w_pos, w_neg) = class_weights(&is_pos, weights);
    let split = scan_sorted(
        n,
        |i| (order[i], i > 0 && values[order[i]] == values[order[i - 1]]),
        &is_pos,
        weights,
        w_pos,
        w_neg,
    );
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    Ok(finish_stump(split, |i| sorted[i], values, &is_pos, weights))
}

fn class_weights(is_pos: &[bool], weights: &[f64]) -> (f64, f64) {
    let mut w_pos = 0.0;
    let mut w_neg = 0.0;
    for (&p, &w) in is_pos.iter().zip(weights) {
        if p {
            w_pos += w;
        } else {
            w_neg += w;
        }
    }
    (w_pos, w_neg)
}

/// Turns a split into a concrete threshold and recomputes its error directly.
fn finish_stump(
    split: Split,
    sorted_value: impl Fn(usize) -> f64,
    values: &[f64],
    is_pos: &[bool],
    weights: &[f64],
) -> Stump {
    let threshold = if split.below == 0 {
        below(sorted_value(0))
    } else {
        split_threshold(sorted_value(split.below - 1), sorted_value(split.below), split.polarity)
    };
    let error = stump_error(values, is_pos, weights, threshold, split.polarity);
    Stump { threshold, polarity: split.polarity, error }
}

/// Weighted misclassification of a stump, summed in sample order.
pub fn stump_error(values: &[f64], is_pos: &[bool], weights: &[f64], threshold: f64, polarity: Polarity) -> f64 {
    let mut err = 0.0;
    for i in 0..values.len() {
        if stump_predicts(values[i], threshold, polarity) != is_pos[i] {
            err += weights[i];
        }
    }
    err
}

/// Optimal stump for one feature over normalized training samples.
pub fn train_stump(feature: &HaarFeature, samples: &[TrainingSample]) -> Result<Stump, BoostError> {
    check_samples(samples)?;
    let values = feature_values(feature, samples)?;
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let weights: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    best_stump(&values, &labels, &weights)
}

fn feature_values(feature: &HaarFeature, samples: &[TrainingSample]) -> Result<Vec<f64>, HaarError> {
    samples.iter().map(|s| feature.evaluate(&s.ii, s.window(), s.inv_stddev())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    /// Presort every pool feature's sample order once and reuse it each round.
    pub cache_features: bool,
    /// Upper bound on cache memory; above it training recomputes values per round.
    pub cache_budget_bytes: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig { cache_features: true, cache_budget_bytes: 768 << 20 }
    }
}

/// Per-round telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub feature_index: usize,
    /// Weighted error of the chosen stump before clamping.
    pub raw_error: f64,
    /// Error after clamping into `[ERROR_CLAMP, 1 - ERROR_CLAMP]`; α derives from it.
    pub error: f64,
    pub alpha: f64,
    /// Σ weights after this round's update and normalization.
    pub weight_sum: f64,
}

/// Sorted sample order per pool feature. The top bit of each entry marks a
/// value equal to its predecessor's.
enum SortedCache {
    Narrow(Vec<u16>),
    Wide(Vec<u32>),
}

const NARROW_TIE: u16 = 1 << 15;
const WIDE_TIE: u32 = 1 << 31;

/// Incremental Discrete AdaBoost over a fixed sample set and feature pool.
pub struct Booster<'a> {
    samples: &'a [TrainingSample],
    pool: &'a [HaarFeature],
    is_pos: Vec<bool>,
    inv_std: Vec<f64>,
    weights: Vec<f64>,
    initial_weights: Vec<f64>,
    cache: Option<SortedCache>,
    weak: Vec<WeakClassifier>,
    records: Vec<RoundRecord>,
}

impl<'a> Booster<'a> {
    pub fn new(samples: &'a [TrainingSample], pool: &'a [HaarFeature], cfg: BoostConfig) -> Result<Self, BoostError> {
        let (w, h) = check_samples(samples)?;
        if pool.is_empty() {
            return Err(BoostError::DegenerateSamples("empty feature pool".into()));
        }
        if let Some(f) = pool.iter().find(|f| f.base_w as u64 != w || f.base_h as u64 != h) {
            return Err(HaarError::FeatureOutOfWindow { window: Rect::new(0, 0, w as u32, h as u32), base_w: f.base_w, base_h: f.base_h }.into());
        }
        let n = samples.len();
        let is_pos = samples.iter().map(|s| s.label.is_positive()).collect();
        let inv_std = samples.iter().map(|s| s.inv_stddev()).collect();
        let total: f64 = samples.iter().map(|s| s.weight).sum();
        let initial_weights: Vec<f64> = samples.iter().map(|s| s.weight / total).collect();
        let mut booster = Booster {
            samples,
            pool,
            is_pos,
            inv_std,
            weights: initial_weights.clone(),
            initial_weights,
            cache: None,
            weak: Vec::new(),
            records: Vec::new(),
        };
        let entry = if n <= NARROW_TIE as usize { 2 } else { 4 };
        if cfg.cache_features && n < WIDE_TIE as usize && pool.len().saturating_mul(n).saturating_mul(entry) <= cfg.cache_budget_bytes {
            booster.cache = Some(booster.build_cache());
        }
        Ok(booster)
    }

    fn values_into(&self, feature: &HaarFeature, out: &mut [f64]) {
        for (i, s) in self.samples.iter().enumerate() {
            out[i] = self.inv_std[i] * feature.raw_value_at(&s.ii, 0, 0);
        }
    }

    fn sorted_order(&self, values: &[f64], order: &mut Vec<u32>) {
        order.clear();
        order.extend(0..values.len() as u32);
        order.sort_unstable_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]).then(a.cmp(&b)));
    }

    fn build_cache(&self) -> SortedCache {
        let n = self.samples.len();
        let fill = |chunk_index: usize, write: &mut dyn FnMut(usize, u32, bool), values: &mut Vec<f64>, order: &mut Vec<u32>| {
            self.values_into(&self.pool[chunk_index], values);
            self.sorted_order(values, order);
            for i in 0..n {
                let idx = order[i];
                let tied = i > 0 && values[idx as usize] == values[order[i - 1] as usize];
                write(i, idx, tied);
            }
        };
        if n <= NARROW_TIE as usize {
            let mut table = vec![0u16; self.pool.len() * n];
            table.par_chunks_mut(n).enumerate().for_each_init(
                || (vec![0.0; n], Vec::with_capacity(n)),
                |(values, order), (f, chunk)| {
                    fill(f, &mut |i, idx, tied| chunk[i] = idx as u16 | if tied { NARROW_TIE } else { 0 }, values, order);
                },
            );
            SortedCache::Narrow(table)
        } else {
            let mut table = vec![0u32; self.pool.len() * n];
            table.par_chunks_mut(n).enumerate().for_each_init(
                || (vec![0.0; n], Vec::with_capacity(n)),
                |(values, order), (f, chunk)| {
                    fill(f, &mut |i, idx, tied| chunk[i] = idx | if tied { WIDE_TIE } else { 0 }, values, order);
                },
            );
            SortedCache::Wide(table)
        }
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    /// Best split of every pool feature; returns (feature index, split) with the
    /// lowest error, ties to the lower index.
    fn select(&self) -> (usize, Split) {
        let n = self.samples.len();
        let (w_pos, w_neg) = class_weights(&self.is_pos, &self.weights);
        let pick = |a: (usize, Split), b: (usize, Split)| {
            if b.1.error < a.1.error || (b.1.error == a.1.error && b.0 < a.0) {
                b
            } else {
                a
            }
        };
        let scan_cached = |f: usize| -> Split {
            match self.cache.as_ref().expect("cache") {
                SortedCache::Narrow(t) => {
                    let row = &t[f * n..(f + 1) * n];
                    scan_sorted(
                        n,
                        |i| ((row[i] & !NARROW_TIE) as usize, row[i] & NARROW_TIE != 0),
                        &self.is_pos,
                        &self.weights,
                        w_pos,
                        w_neg,
                    )
                }
                SortedCache::Wide(t) => {
                    let row = &t[f * n..(f + 1) * n];
                    scan_sorted(
                        n,
                        |i| ((row[i] & !WIDE_TIE) as usize, row[i] & WIDE_TIE != 0),
                        &self.is_pos,
                        &self.weights,
                        w_pos,
                        w_neg,
                    )
                }
            }
        };
        if self.cache.is_some() {
            (0..self.pool.len())
                .into_par_iter()
                .map(|f| (f, scan_cached(f)))
                .reduce_with(pick)
                .expect("non-empty pool")
        } else {
            (0..self.pool.len())
                .into_par_iter()
                .map_init(
                    || (vec![0.0; n], Vec::with_capacity(n)),
                    |(values, order), f| {
                        self.values_into(&self.pool[f], values);
                        self.sorted_order(values, order);
                        let split = scan_sorted(
                            n,
                            |i| {
                                let idx = order[i] as usize;
                                (idx, i > 0 && values[idx] == values[order[i - 1] as usize])
                            },
                            &self.is_pos,
                            &self.weights,
                            w_pos,
                            w_neg,
                        );
                        (f, split)
                    },
                )
                .reduce_with(pick)
                .expect("non-empty pool")
        }
    }

    /// Runs one boosting round and appends its weak classifier.
    pub fn round(&mut self) -> Result<&RoundRecord, BoostError> {
        let (f, split) = self.select();
        let feature = &self.pool[f];
        let mut values = vec![0.0; self.samples.len()];
        self.values_into(feature, &mut values);
        let mut order = Vec::new();
        self.sorted_order(&values, &mut order);
        let stump = finish_stump(split, |i| values[order[i] as usize], &values, &self.is_pos, &self.weights);

        if stump.error >= USELESS_ERROR {
            return Err(BoostError::NoUsefulFeature { best_error: stump.error });
        }
        let error = stump.error.clamp(ERROR_CLAMP, 1.0 - ERROR_CLAMP);
        let beta = error / (1.0 - error);
        let alpha = (1.0 / beta).ln();
        for i in 0..values.len() {
            if stump.predicts(values[i]) == self.is_pos[i] {
                self.weights[i] *= beta;
            }
        }
        let total: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= total;
        }
        let weight_sum: f64 = self.weights.iter().sum();
        self.weak.push(WeakClassifier { feature: feature.clone(), threshold: stump.threshold, polarity: stump.polarity, alpha });
        self.records.push(RoundRecord { feature_index: f, raw_error: stump.error, error, alpha, weight_sum });
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn weak(&self) -> &[WeakClassifier] {
        &self.weak
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    /// Current sample weights, normalized to sum to 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Normalized weights the booster started from.
    pub fn initial_weights(&self) -> &[f64] {
        &self.initial_weights
    }

    /// Strong classifier with the majority-vote threshold ½·Σα.
    pub fn classifier(&self) -> StrongClassifier {
        let weak = self.weak.clone();
        let total: f64 = weak.iter().map(|w| w.alpha).sum();
        StrongClassifier { weak, stage_threshold: 0.5 * total }
    }

    /// Strong-classifier scores of every training sample at the base window.
    pub fn scores(&self) -> Vec<f64> {
        let sc = StrongClassifier { weak: self.weak.clone(), stage_threshold: 0.0 };
        self.samples.iter().zip(&self.inv_std).map(|(s, &inv)| sc.score_at(&s.ii, 0, 0, inv)).collect()
    }
}

/// Output of [`adaboost_train`].
#[derive(Debug, Clone)]
pub struct BoostOutcome {
    pub classifier: StrongClassifier,
    pub rounds: Vec<RoundRecord>,
    /// True when a round found no feature better than chance and training stopped.
    pub stopped_early: bool,
}

/// Discrete AdaBoost for `rounds` rounds.
///
/// If a later round finds no useful feature, training stops and the rounds
/// completed so far are returned with `stopped_early`. If the very first
/// round fails, the error is returned.
pub fn adaboost_train(
    samples: &[TrainingSample],
    pool: &[HaarFeature],
    rounds: usize,
    cfg: BoostConfig,
) -> Result<BoostOutcome, BoostError> {
    if rounds == 0 {
        return Err(BoostError::DegenerateSamples("rounds must be >= 1".into()));
    }
    let mut booster = Booster::new(samples, pool, cfg)?;
    let mut stopped_early = false;
    for _ in 0..rounds {
        match booster.round() {
            Ok(_) => {}
            Err(e @ BoostError::NoUsefulFeature { .. }) => {
                if booster.weak().is_empty() {
                    return Err(e);
                }
                stopped_early = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(BoostOutcome { classifier: booster.classifier(), rounds: booster.records().to_vec(), stopped_early })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::{canonical_feature, enumerate_features, FeatureKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_min_error(values: &[f64], labels: &[Label], weights: &[f64]) -> f64 {
        let is_pos: Vec<bool> = labels.iter().map(|l| l.is_positive()).collect();
        let mut sorted: Vec<f64> = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let mut candidates = vec![sorted[0] - 1.0];
        candidates.extend(sorted.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        candidates.push(sorted[sorted.len() - 1] + 1.0);
        let mut best = f64::INFINITY;
        for t in candidates {
            for p in [Polarity::Below, Polarity::Above] {
                best = best.min(stump_error(values, &is_pos, weights, t, p));
            }
        }
        best
    }

    #[test]
    fn separable_surrogate() {
        let values = [2.0, 3.0, 0.0, 1.0];
        let labels = [Label::Positive, Label::Positive, Label::Negative, Label::Negative];
        let s = best_stump(&values, &labels, &[0.25; 4]).unwrap();
        assert_eq!(s.threshold, 1.5);
        assert_eq!(s.polarity, Polarity::Above);
        assert_eq!(s.error, 0.0);
    }

    #[test]
    fn identical_values_pick_majority() {
        let labels = [Label::Positive, Label::Negative, Label::Negative];
        let s = best_stump(&[5.0; 3], &labels, &[0.5, 0.25, 0.25]).unwrap();
        assert_eq!(s.error, 0.5);
        let s = best_stump(&[5.0; 3], &labels, &[0.2, 0.4, 0.4]).unwrap();
        assert_eq!(s.error, 0.2);
        // majority negative: every sample predicted negative
        assert!(!s.predicts(5.0));
        let s = best_stump(&[5.0; 3], &labels, &[0.6, 0.2, 0.2]).unwrap();
        assert_eq!(s.error, 0.4);
        assert!(s.predicts(5.0));
    }

    #[test]
    fn one_class_is_degenerate() {
        let err = best_stump(&[1.0, 2.0], &[Label::Positive; 2], &[0.5; 2]).unwrap_err();
        assert!(matches!(err, BoostError::DegenerateSamples(_)));
    }

    #[test]
    fn stump_is_optimal_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n = 50;
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64 * 0.5).collect();
            let mut labels: Vec<Label> = (0..n).map(|_| if rng.gen() { Label::Positive } else { Label::Negative }).collect();
            labels[0] = Label::Positive;
            labels[1] = Label::Negative;
            // dyadic weights summing to exactly 1
            let mut counts: Vec<u32> = (0..n).map(|_| rng.gen_range(1..30)).collect();
            let s: u32 = counts[..n - 1].iter().sum();
            counts[n - 1] = 2048 - s;
            let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / 2048.0).collect();
            let stump = best_stump(&values, &labels, &weights).unwrap();
            assert!(stump.error <= brute_force_min_error(&values, &labels, &weights));
            assert!(stump.error <= 0.5);
        }
    }

    fn sample(img: GrayImage, label: Label) -> TrainingSample {
        TrainingSample::new(&img, label, 1.0)
    }

    /// Four 4x4 samples whose classes are an XOR of left/right and top/bottom brightness.
    fn xor_samples() -> Vec<TrainingSample> {
        let quadrants = |tl: u8, tr: u8, bl: u8, br: u8| {
            GrayImage::from_fn(4, 4, |x, y| match (x < 2, y < 2) {
                (true, true) => tl,
                (false, true) => tr,
                (true, false) => bl,
                (false, false) => br,
            })
            .unwrap()
        };
        vec![
            sample(quadrants(200, 10, 200, 10), Label::Positive),
            sample(quadrants(10, 200, 10, 200), Label::Positive),
            sample(quadrants(200, 200, 10, 10), Label::Negative),
            sample(quadrants(10, 10, 200, 200), Label::Negative),
        ]
    }

    #[test]
    fn separable_set_one_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut samples = Vec::new();
        for i in 0..20 {
            let dark_left = i % 2 == 0;
            let img = GrayImage::from_fn(6, 6, |x, _| {
                let base = if (x < 3) == dark_left { 30 } else { 200 };
                base + rng.gen_range(0..20)
            })
            .unwrap();
            samples.push(sample(img, if dark_left { Label::Positive } else { Label::Negative }));
        }
        let pool = enumerate_features(6, 6).unwrap();
        let out = adaboost_train(&samples, &pool, 1, BoostConfig::default()).unwrap();
        let sc = &out.classifier;
        for s in &samples {
            let score = sc.score_at(&s.ii, 0, 0, s.inv_stddev());
            assert_eq!(sc.accepts_score(score), s.label.is_positive());
        }
    }

    #[test]
    fn xor_needs_several_stumps() {
        let samples = xor_samples();
        let pool = enumerate_features(4, 4).unwrap();
        // no single stump separates the set
        for f in &pool {
            assert!(train_stump(f, &samples).unwrap().error > 0.0);
        }
        // edge features only, to keep the run comparable with the hand recurrence below
        let edges: Vec<HaarFeature> = pool.iter().filter(|f| matches!(f.kind, FeatureKind::EdgeH | FeatureKind::EdgeV)).cloned().collect();
        let out = adaboost_train(&samples, &edges, 3, BoostConfig::default()).unwrap();
        assert_eq!(out.rounds.len(), 3);
        let errors: usize = samples
            .iter()
            .filter(|s| out.classifier.accepts_score(out.classifier.score_at(&s.ii, 0, 0, s.inv_stddev())) != s.label.is_positive())
            .count();
        assert_eq!(errors, 0);
    }

    #[test]
    fn xor_recurrence_by_hand() {
        // hand oracle: round 1 picks a stump with error 1/4, so β = 1/3 and α = ln 3
        let samples = xor_samples();
        let pool: Vec<HaarFeature> = enumerate_features(4, 4)
            .unwrap()
            .into_iter()
            .filter(|f| matches!(f.kind, FeatureKind::EdgeH | FeatureKind::EdgeV))
            .collect();
        let mut b = Booster::new(&samples, &pool, BoostConfig::default()).unwrap();
        let r = b.round().unwrap().clone();
        assert!((r.raw_error - 0.25).abs() < 1e-15);
        assert!((r.alpha - 3f64.ln()).abs() < 1e-12);
        // correct samples shrink by 1/3 to 1/12,1/12,1/12,1/4, then renormalize
        let mut w = b.weights().to_vec();
        w.sort_by(f64::total_cmp);
        for (got, want) in w.iter().zip([1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.5]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn cached_and_uncached_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let samples: Vec<TrainingSample> = (0..60)
            .map(|i| {
                let label = if i % 3 == 0 { Label::Positive } else { Label::Negative };
                let img = GrayImage::from_fn(8, 8, |x, y| {
                    let v: u8 = rng.gen_range(0..120);
                    if label.is_positive() && (2..6).contains(&x) && y > 3 { v / 3 } else { v + 100 }
                })
                .unwrap();
                sample(img, label)
            })
            .collect();
        let pool = enumerate_features(8, 8).unwrap();
        let on = adaboost_train(&samples, &pool, 6, BoostConfig::default()).unwrap();
        let off = adaboost_train(&samples, &pool, 6, BoostConfig { cache_features: false, ..Default::default() }).unwrap();
        assert_eq!(on.classifier, off.classifier);
        assert_eq!(on.rounds, off.rounds);
    }

    #[test]
    fn recurrence_and_bound_on_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let samples: Vec<TrainingSample> = (0..200)
            .map(|_| {
                let label = if rng.gen_bool(0.4) { Label::Positive } else { Label::Negative };
                let img = GrayImage::from_fn(6, 6, |x, _| {
                    let v: u8 = rng.gen_range(0..200);
                    if label.is_positive() && x < 3 && rng.gen_bool(0.6) { v / 2 } else { v }
                })
                .unwrap();
                sample(img, label)
            })
            .collect();
        let pool = enumerate_features(6, 6).unwrap();
        let mut b = Booster::new(&samples, &pool, BoostConfig::default()).unwrap();
        // independent replay of the weight recurrence
        let mut w: Vec<f64> = vec![1.0 / 200.0; 200];
        let mut bound = 1.0;
        for _ in 0..10 {
            let r = b.round().unwrap().clone();
            assert!(r.raw_error < 0.5);
            assert!((r.weight_sum - 1.0).abs() <= 1e-12);
            let wc = b.weak().last().unwrap();
            let beta = r.error / (1.0 - r.error);
            for (i, s) in samples.iter().enumerate() {
                let v = wc.feature.evaluate(&s.ii, s.window(), s.inv_stddev()).unwrap();
                if wc.predicts(v) == s.label.is_positive() {
                    w[i] *= beta;
                }
            }
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            for (a, e) in b.weights().iter().zip(&w) {
                assert!((a - e).abs() <= 1e-12 * e.max(1e-300).max(*a));
            }
            bound *= 2.0 * (r.error * (1.0 - r.error)).sqrt();
            let sc = b.classifier();
            let train_err: f64 = samples
                .iter()
                .zip(b.initial_weights())
                .filter(|(s, _)| sc.accepts_score(sc.score_at(&s.ii, 0, 0, s.inv_stddev())) != s.label.is_positive())
                .map(|(_, &w)| w)
                .sum();
            assert!(train_err <= bound, "{train_err} > {bound}");
        }
    }

    #[test]
    fn empty_classifier_accepts_at_zero() {
        let sc = StrongClassifier { weak: vec![], stage_threshold: 0.0 };
        let ii = compute_integral(&GrayImage::filled(4, 4, 3).unwrap());
        let s = strong_score(&sc, &ii, Rect::new(0, 0, 4, 4), 1.0).unwrap();
        assert_eq!(s, 0.0);
        assert!(sc.accepts_score(s));
    }

    #[test]
    fn single_stump_scores_alpha_on_positive() {
        let pos = GrayImage::from_fn(4, 4, |x, _| if x < 2 { 20 } else { 220 }).unwrap();
        let neg = GrayImage::from_fn(4, 4, |x, _| if x < 2 { 220 } else { 20 }).unwrap();
        let samples = vec![sample(pos.clone(), Label::Positive), sample(neg, Label::Negative)];
        let pool = vec![canonical_feature(FeatureKind::EdgeH, 0, 0, 2, 4, 4, 4)];
        let out = adaboost_train(&samples, &pool, 1, BoostConfig::default()).unwrap();
        let sc = out.classifier;
        let ii = compute_integral(&pos);
        let w = Rect::new(0, 0, 4, 4);
        let score = strong_score(&sc, &ii, w, ii.inv_stddev(w)).unwrap();
        assert_eq!(score, sc.weak[0].alpha);
        assert_eq!(sc.stage_threshold, sc.weak[0].alpha / 2.0);
        assert!(sc.accepts_score(score));
    }

    #[test]
    fn no_useful_feature_on_first_round() {
        let img = GrayImage::filled(4, 4, 9).unwrap();
        let samples = vec![sample(img.clone(), Label::Positive), sample(img, Label::Negative)];
        let pool = enumerate_features(4, 4).unwrap();
        let err = adaboost_train(&samples, &pool, 2, BoostConfig::default()).unwrap_err();
        assert!(matches!(err, BoostError::NoUsefulFeature { .. }));
    }

    #[test]
    fn deterministic_training() {
        let samples = xor_samples();
        let pool = enumerate_features(4, 4).unwrap();
        let a = adaboost_train(&samples, &pool, 4, BoostConfig::default()).unwrap();
        let b = adaboost_train(&samples, &pool, 4, BoostConfig::default()).unwrap();
        assert_eq!(a.classifier, b.classifier);
    }

    proptest::proptest! {
        #[test]
        fn score_ignores_brightness_offset(seed in 0u64..200, c in 0u8..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<TrainingSample> = (0..30)
                .map(|i| {
                    let img = GrayImage::from_fn(6, 6, |_, _| rng.gen_range(0..200)).unwrap();
                    sample(img, if i % 2 == 0 { Label::Positive } else { Label::Negative })
                })
                .collect();
            let pool = enumerate_features(6, 6).unwrap();
            let sc = adaboost_train(&samples, &pool, 3, BoostConfig::default()).unwrap().classifier;
            let img = GrayImage::from_fn(6, 6, |_, _| rng.gen_range(0..200)).unwrap();
            let brighter = GrayImage::from_fn(6, 6, |x, y| img.get(x, y) + c).unwrap();
            let w = Rect::new(0, 0, 6, 6);
            let (a, b) = (compute_integral(&img), compute_integral(&brighter));
            proptest::prop_assert_eq!(
                strong_score(&sc, &a, w, a.inv_stddev(w)).unwrap(),
                strong_score(&sc, &b, w, b.inv_stddev(w)).unwrap()
            );
        }
    }
}
