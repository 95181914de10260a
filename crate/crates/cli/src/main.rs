//! `vjcascade`: train, run, convert and score Haar cascades.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vjcascade::cascade::{train_cascade_with_log, Cascade, CascadeError, CascadeTrainConfig, Decision};
use vjcascade::cascadexml::{from_canonical_json, parse_cascade_xml, to_canonical_json, write_cascade_xml, FormatError};
use vjcascade::dataset::{
    format_detection, load_ground_truth, load_manifest, load_negative_list, parse_detections, synth_dataset, DatasetError, SynthSpec,
};
use vjcascade::detect::{annotate, detect_multiscale, scan_scales, DetectError, DetectParams};
use vjcascade::eval::{match_detections, render_csv, render_json, render_text, scene_report, Counts, SceneMeta};
use vjcascade::imagecore::{compute_integral, load_image, GrayImage, ImageError, Rect};

const EXIT_INPUT: u8 = 3;
const EXIT_INVARIANT: u8 = 4;

#[derive(Parser)]
#[command(name = "vjcascade", version, about = "Boosted Haar cascade training and detection")]
struct Cli {
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a cascade from a positive manifest and a negative image list.
    Train(TrainArgs),
    /// Run a cascade over images.
    Detect(DetectArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Convert a cascade between XML and canonical JSON.
    Convert(ConvertArgs),
    /// Generate the synthetic dark-square dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    negatives: PathBuf,
    /// Output prefix: writes <out>.xml, <out>.json and <out>.report.json.
    #[arg(long)]
    out: PathBuf,
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base window width.
    #[arg(long, default_value_t = 24)]
    width: u32,
    /// Base window height.
    #[arg(long, default_value_t = 24)]
    height: u32,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d_min: Option<f64>,
    #[arg(long)]
    f_max: Option<f64>,
    #[arg(long)]
    f_target: Option<f64>,
    #[arg(long)]
    max_stages: Option<usize>,
    #[arg(long)]
    max_weak: Option<usize>,
    #[arg(long)]
    holdout: Option<f64>,
}

#[derive(Args, Clone)]
struct ScanArgs {
    /// JSON detection parameters; flags below override its fields.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    scale_step: Option<f64>,
    #[arg(long)]
    stride: Option<u32>,
    #[arg(long)]
    min_size: Option<u32>,
    #[arg(long)]
    max_size: Option<u32>,
    #[arg(long)]
    min_neighbors: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetFormat {
    Text,
    Json,
}

#[derive(Args)]
struct DetectArgs {
    /// Cascade file, XML or canonical JSON.
    #[arg(long)]
    model: PathBuf,
    /// Images to scan.
    images: Vec<PathBuf>,
    /// File listing one image path per line, relative to the list.
    #[arg(long)]
    list: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DetFormat::Text)]
    format: DetFormat,
    /// Write detections here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for PNG copies of the images with boxes drawn in.
    #[arg(long)]
    annotate: Option<PathBuf>,
    #[command(flatten)]
    scan: ScanArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Detection list; repeat together with --truth for several scenes.
    #[arg(long, required = true)]
    detections: Vec<PathBuf>,
    #[arg(long, required = true)]
    truth: Vec<PathBuf>,
    /// Scene labels, in the same order.
    #[arg(long)]
    label: Vec<String>,
    /// JSON array of scene descriptions, in the same order.
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long, default_value_t = vjcascade::eval::DEFAULT_IOU_MIN)]
    iou_min: f64,
    /// Output prefix: writes <out>.txt, <out>.csv and <out>.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    input: PathBuf,
    /// Output file; the format follows its extension unless --to is given.
    output: PathBuf,
    #[arg(long, value_enum)]
    to: Option<ModelFormat>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelFormat {
    Xml,
    Json,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON synthetic-task spec; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    positives: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    heldout: Option<usize>,
}

/// A failed run: exit code plus a machine-readable description.
#[derive(Debug, Serialize)]
struct Failure {
    #[serde(skip)]
    code: u8,
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

impl Failure {
    fn input(error: &'static str, message: impl Into<String>, path: Option<&Path>) -> Self {
        Failure { code: EXIT_INPUT, error, message: message.into(), path: path.map(|p| p.display().to_string()) }
    }

    fn invariant(message: impl Into<String>) -> Self {
        Failure { code: EXIT_INVARIANT, error: "InvariantViolation", message: message.into(), path: None }
    }
}

fn image_failure(path: &Path, e: ImageError) -> Failure {
    let kind = match e {
        ImageError::FileNotFound(_) => "MissingFile",
        ImageError::Io { .. } => "Io",
        ImageError::UnsupportedFormat(_) => "UnsupportedFormat",
        _ => "CorruptImage",
    };
    Failure::input(kind, format!("{}: {e}", path.display()), Some(path))
}

fn dataset_failure(e: DatasetError) -> Failure {
    let (kind, path) = match &e {
        DatasetError::MalformedManifest { path, .. } => ("MalformedManifest", path.clone()),
        DatasetError::MissingFile { file, .. } => ("MissingFile", file.clone()),
        DatasetError::RectOutOfImage { path, .. } => ("RectOutOfImage", path.clone()),
        DatasetError::Image { path, .. } => ("CorruptImage", path.clone()),
        DatasetError::Io { path, .. } => ("Io", path.clone()),
    };
    Failure::input(kind, e.to_string(), Some(&path))
}

fn format_failure(path: &Path, e: FormatError) -> Failure {
    let kind = match e {
        FormatError::MalformedXml(_) => "MalformedXml",
        FormatError::MalformedJson(_) => "MalformedJson",
        FormatError::SchemaViolation(_) => "SchemaViolation",
        FormatError::UnsupportedFormat(_) => "UnsupportedFormat",
        FormatError::UnsupportedFeatureType(_) => "UnsupportedFeatureType",
        FormatError::UnsupportedTreeShape(_) => "UnsupportedTreeShape",
    };
    Failure::input(kind, format!("{}: {e}", path.display()), Some(path))
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| {
        let kind = if e.kind() == std::io::ErrorKind::NotFound { "MissingFile" } else { "Io" };
        Failure::input(kind, format!("{}: {e}", path.display()), Some(path))
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_slice(&read(path)?).map_err(|e| Failure::input("MalformedConfig", format!("{}: {e}", path.display()), Some(path)))
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::input("Io", format!("{}: {e}", path.display()), Some(path));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_model(path: &Path) -> Result<Cascade, Failure> {
    let bytes = read(path)?;
    let first = bytes.iter().find(|b| !b.is_ascii_whitespace());
    let parsed = if first == Some(&b'{') { from_canonical_json(&bytes) } else { parse_cascade_xml(&bytes) };
    parsed.map_err(|e| format_failure(path, e))
}

fn train_config(a: &TrainArgs) -> Result<CascadeTrainConfig, Failure> {
    let mut cfg: CascadeTrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => CascadeTrainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.d_min {
        cfg.d_min = v;
    }
    if let Some(v) = a.f_max {
        cfg.f_max = v;
    }
    if let Some(v) = a.f_target {
        cfg.f_target = v;
    }
    if let Some(v) = a.max_stages {
        cfg.max_stages = v;
    }
    if let Some(v) = a.max_weak {
        cfg.max_weak_per_stage = v;
    }
    if let Some(v) = a.holdout {
        cfg.holdout_fraction = v;
    }
    cfg.validate().map_err(|e| Failure::input("InvalidConfig", e.to_string(), a.config.as_deref()))?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = train_config(&a)?;
    let manifest = load_manifest(&a.manifest).map_err(dataset_failure)?;
    let neg_paths = load_negative_list(&a.negatives).map_err(dataset_failure)?;
    let positives = manifest.positive_windows(a.width, a.height);
    let negatives = neg_paths
        .iter()
        .map(|p| load_image(p).map_err(|e| image_failure(p, e)))
        .collect::<Result<Vec<GrayImage>, _>>()?;

    let cascade = train_cascade_with_log(&positives, &negatives, &cfg, |s| eprintln!("{}", s.log_line())).map_err(|e| match e {
        CascadeError::InsufficientNegatives { .. } | CascadeError::DegenerateSamples(_) | CascadeError::InvalidConfig(_) => {
            Failure::input("TrainingInput", e.to_string(), None)
        }
        other => Failure::invariant(other.to_string()),
    })?;

    let json = to_canonical_json(&cascade);
    let xml = write_cascade_xml(&cascade);
    #[derive(Serialize)]
    struct Report<'a> {
        manifest: String,
        negatives: String,
        base_w: u32,
        base_h: u32,
        stages: usize,
        weak: usize,
        provenance: &'a Option<vjcascade::cascade::TrainingProvenance>,
    }
    let report = Report {
        manifest: a.manifest.display().to_string(),
        negatives: a.negatives.display().to_string(),
        base_w: cascade.base_w,
        base_h: cascade.base_h,
        stages: cascade.stages.len(),
        weak: cascade.weak_count(),
        provenance: &cascade.provenance,
    };
    let mut report_bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    report_bytes.push(b'\n');
    write_atomic(&with_suffix(&a.out, ".xml"), &xml)?;
    write_atomic(&with_suffix(&a.out, ".json"), &json)?;
    write_atomic(&with_suffix(&a.out, ".report.json"), &report_bytes)?;
    Ok(())
}

fn scan_params(a: &ScanArgs) -> Result<DetectParams, Failure> {
    let mut p: DetectParams = match &a.params {
        Some(path) => read_json(path)?,
        None => DetectParams::default(),
    };
    if let Some(v) = a.scale_step {
        p.scale_step = v;
    }
    if let Some(v) = a.stride {
        p.window_stride = v;
    }
    if a.min_size.is_some() {
        p.min_size = a.min_size;
    }
    if a.max_size.is_some() {
        p.max_size = a.max_size;
    }
    if let Some(v) = a.min_neighbors {
        p.min_neighbors = v;
    }
    p.validate().map_err(|e| Failure::input("InvalidParams", e.to_string(), a.params.as_deref()))?;
    Ok(p)
}

#[derive(Serialize)]
struct DetectionOut<'a> {
    image: &'a str,
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    score: f64,
    neighbors: usize,
}

fn cmd_detect(a: DetectArgs) -> Result<(), Failure> {
    let params = scan_params(&a.scan)?;
    let cascade = load_model(&a.model)?;
    let mut images: Vec<(String, PathBuf)> = a.images.iter().map(|p| (p.display().to_string(), p.clone())).collect();
    if let Some(list) = &a.list {
        let text = String::from_utf8_lossy(&read(list)?).into_owned();
        let dir = list.parent().map(Path::to_path_buf).unwrap_or_default();
        for l in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            images.push((l.to_string(), dir.join(l)));
        }
    }
    if images.is_empty() {
        return Err(Failure { code: 2, error: "Usage", message: "no images given".into(), path: None });
    }

    let mut lines = String::new();
    let mut json_rows = Vec::new();
    let mut all = Vec::new();
    for (name, path) in &images {
        let img = load_image(path).map_err(|e| image_failure(path, e))?;
        let dets = detect_multiscale(&cascade, &img, &params).map_err(|e| match e {
            DetectError::ImageSmallerThanWindow { .. } => Failure::input("ImageSmallerThanWindow", format!("{}: {e}", path.display()), Some(path)),
            DetectError::InvalidParams(m) => Failure::input("InvalidParams", m, None),
        })?;
        if let Some(dir) = &a.annotate {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
            write_atomic(&dir.join(format!("{stem}.png")), &annotate(&img, &dets, 255).to_png())?;
        }
        all.push((name.clone(), dets));
    }
    for (name, dets) in &all {
        for d in dets {
            lines.push_str(&format_detection(name, d));
            lines.push('\n');
            json_rows.push(DetectionOut { image: name, x: d.rect.x, y: d.rect.y, w: d.rect.w, h: d.rect.h, score: d.score, neighbors: d.neighbors });
        }
    }
    let out = match a.format {
        DetFormat::Text => lines.into_bytes(),
        DetFormat::Json => {
            let mut v = serde_json::to_vec_pretty(&json_rows).expect("detections serialize");
            v.push(b'\n');
            v
        }
    };
    match &a.out {
        Some(p) => write_atomic(p, &out),
        None => std::io::stdout().write_all(&out).map_err(|e| Failure::input("Io", e.to_string(), None)),
    }
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    if a.detections.len() != a.truth.len() {
        return Err(Failure { code: 2, error: "Usage", message: "give one --truth per --detections".into(), path: None });
    }
    if !(a.iou_min > 0.0 && a.iou_min < 1.0) {
        return Err(Failure::input("InvalidParams", format!("iou_min {} must lie in (0, 1)", a.iou_min), None));
    }
    let metas: Vec<SceneMeta> = match &a.meta {
        Some(p) => read_json(p)?,
        None => Vec::new(),
    };
    let mut reports = Vec::new();
    for (i, (det_path, truth_path)) in a.detections.iter().zip(&a.truth).enumerate() {
        let truth = load_ground_truth(truth_path).map_err(dataset_failure)?;
        let text = String::from_utf8_lossy(&read(det_path)?).into_owned();
        let records = parse_detections(&text, det_path).map_err(dataset_failure)?;
        let mut per_image: Vec<(String, Vec<vjcascade::detect::Detection>)> = truth.images.keys().map(|k| (k.clone(), Vec::new())).collect();
        for r in records {
            let key = truth.resolve(&r.image).ok_or_else(|| {
                Failure::input("UnknownImage", format!("{}: image {} is not in {}", det_path.display(), r.image, truth_path.display()), Some(det_path))
            })?;
            let boxes_key = per_image.iter().position(|(k, _)| k == key).expect("resolved keys come from the truth");
            per_image[boxes_key].1.push(r.detection);
        }
        let counts: Vec<(String, Counts)> = per_image
            .iter()
            .map(|(k, dets)| (k.clone(), (&match_detections(dets, &truth.images[k], a.iou_min)).into()))
            .collect();
        let mut meta = metas.get(i).cloned().unwrap_or_default();
        if let Some(l) = a.label.get(i) {
            meta.label = l.clone();
        }
        if meta.label.is_empty() {
            meta.label = format!("Scene {}", i + 1);
        }
        reports.push(scene_report(&counts, meta));
    }
    let text = render_text(&reports);
    print!("{text}");
    if let Some(prefix) = &a.out {
        write_atomic(&with_suffix(prefix, ".txt"), text.as_bytes())?;
        write_atomic(&with_suffix(prefix, ".csv"), render_csv(&reports).as_bytes())?;
        write_atomic(&with_suffix(prefix, ".json"), render_json(&reports).as_bytes())?;
    }
    Ok(())
}

/// Compares chain decisions of two cascades on seeded random windows.
fn decision_check(a: &Cascade, b: &Cascade) -> Result<(), Failure> {
    if (a.base_w, a.base_h) != (b.base_w, b.base_h) {
        return Err(Failure::invariant("converted cascade changed the window size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (w, h) = (a.base_w * 3, a.base_h * 3);
    let levels = scan_scales(w, h, a.base_w, a.base_h, &DetectParams::default());
    for i in 0..500 {
        let img = GrayImage::from_fn(w, h, |_, _| rng.gen()).expect("non-empty image");
        let ii = compute_integral(&img);
        let l = levels[rng.gen_range(0..levels.len())];
        let r = Rect::new(rng.gen_range(0..=w - l.window_w), rng.gen_range(0..=h - l.window_h), l.window_w, l.window_h);
        let inv = ii.inv_stddev(r);
        let da = a.classify_window(&ii, r, inv).map_err(|e| Failure::invariant(e.to_string()))?;
        let db = b.classify_window(&ii, r, inv).map_err(|e| Failure::invariant(e.to_string()))?;
        let same = matches!((da, db), (Decision::Accepted { .. }, Decision::Accepted { .. })) || da == db;
        if !same {
            return Err(Failure::invariant(format!("conversion changed the decision on check window {i}: {da:?} vs {db:?}")));
        }
    }
    Ok(())
}

fn cmd_convert(a: ConvertArgs) -> Result<(), Failure> {
    let to = match a.to {
        Some(t) => t,
        None => match a.output.extension().and_then(|e| e.to_str()) {
            Some("xml") => ModelFormat::Xml,
            Some("json") => ModelFormat::Json,
            _ => return Err(Failure { code: 2, error: "Usage", message: "cannot infer output format; pass --to".into(), path: None }),
        },
    };
    let cascade = load_model(&a.input)?;
    let bytes = match to {
        ModelFormat::Xml => write_cascade_xml(&cascade),
        ModelFormat::Json => to_canonical_json(&cascade),
    };
    let back = match to {
        ModelFormat::Xml => parse_cascade_xml(&bytes),
        ModelFormat::Json => from_canonical_json(&bytes),
    }
    .map_err(|e| Failure::invariant(format!("converted output does not parse: {e}")))?;
    decision_check(&cascade, &back)?;
    write_atomic(&a.output, &bytes)
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    let mut spec: SynthSpec = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.positives {
        spec.positives = v;
    }
    if let Some(v) = a.negatives {
        spec.negatives = v;
    }
    if let Some(v) = a.heldout {
        spec.heldout = v;
    }
    synth_dataset(&spec).write(&a.out).map_err(dataset_failure)?;
    let mut spec_bytes = serde_json::to_vec_pretty(&spec).expect("spec serializes");
    spec_bytes.push(b'\n');
    write_atomic(&a.out.join("spec.json"), &spec_bytes)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", serde_json::json!({"error": "Usage", "message": e.to_string()}));
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Convert(a) => cmd_convert(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::to_string(&f).expect("failure serializes"));
            ExitCode::from(f.code)
        }
    }
}
