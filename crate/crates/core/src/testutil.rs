//! Shared helpers for unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::boost::{Polarity, StrongClassifier, WeakClassifier};
use crate::cascade::{Cascade, Stage};
use crate::haar::enumerate_features;
use crate::imagecore::GrayImage;

/// Cascade of random canonical stumps with thresholds in the range where
/// noise windows split both ways.
pub(crate) fn random_cascade(rng: &mut ChaCha8Rng, base: u32, stages: usize, weak_per: usize) -> Cascade {
    let pool = enumerate_features(base, base).unwrap();
    let mut c = Cascade::new(base, base);
    for _ in 0..stages {
        let weak: Vec<WeakClassifier> = (0..weak_per)
            .map(|_| WeakClassifier {
                feature: pool[rng.gen_range(0..pool.len())].clone(),
                threshold: rng.gen_range(-3.0..3.0),
                polarity: if rng.gen() { Polarity::Below } else { Polarity::Above },
                alpha: rng.gen_range(0.1..2.0),
            })
            .collect();
        let total: f64 = weak.iter().map(|w| w.alpha).sum();
        let stage_threshold = rng.gen_range(0.2..0.6) * total;
        c.stages.push(Stage { classifier: StrongClassifier { weak, stage_threshold } });
    }
    c
}

pub(crate) fn noise(rng: &mut ChaCha8Rng, w: u32, h: u32) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng.gen()).unwrap()
}
