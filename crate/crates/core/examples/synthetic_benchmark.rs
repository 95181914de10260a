//! Trains on the synthetic dark-square task and evaluates on its held-out frames.
//!
//! `cargo run --release -p vjcascade --example synthetic_benchmark [seed] [f_target]`

use std::time::Instant;

use vjcascade::cascade::{train_cascade_with_log, CascadeTrainConfig};
use vjcascade::dataset::{synth_dataset, SynthSpec};
use vjcascade::detect::{detect_multiscale, DetectParams};
use vjcascade::eval::{compute_metrics, match_detections, window_tally, Counts, WindowTally, DEFAULT_IOU_MIN};
use vjcascade::dataset::TruthBox;

fn main() {
    let seed = std::env::args().nth(1).map_or(42, |s| s.parse().expect("seed"));
    let f_target = std::env::args().nth(2).map_or(1e-7, |s| s.parse().expect("f_target"));
    let start = Instant::now();
    let spec = SynthSpec { seed, ..Default::default() };
    let data = synth_dataset(&spec);
    println!("synth: {:.1}s", start.elapsed().as_secs_f64());

    let cfg = CascadeTrainConfig { seed, f_target, ..Default::default() };
    let cascade = train_cascade_with_log(&data.positives, &data.negatives, &cfg, |s| {
        println!("{} t={:.1}s", s.log_line(), start.elapsed().as_secs_f64())
    })
    .expect("training");
    println!("train: {:.1}s, {} stages, {} weak", start.elapsed().as_secs_f64(), cascade.stages.len(), cascade.weak_count());

    let params = DetectParams::default();
    let mut counts = Counts::default();
    let mut tally = WindowTally::default();
    for (frame, truth) in data.frames.iter().zip(&data.truth) {
        let dets = detect_multiscale(&cascade, frame, &params).expect("detect");
        let tb: Vec<TruthBox> = truth.iter().map(|&rect| TruthBox { rect, ignore: false }).collect();
        counts = counts.add((&match_detections(&dets, &tb, DEFAULT_IOU_MIN)).into());
        tally = tally + window_tally(&cascade, frame, truth, &params, DEFAULT_IOU_MIN).expect("tally");
    }
    let m = compute_metrics(counts);
    println!("counts {counts:?} metrics {m:?}");
    println!("window fp rate {:?} ({tally:?})", tally.false_positive_rate());
    println!("total: {:.1}s", start.elapsed().as_secs_f64());
}
