//! Cascade files: the new-style OpenCV traincascade XML format (HAAR
//! features, BOOST stages, stump trees) and a canonical JSON form.
//!
//! XML stumps carry two leaf values; the stage sums the leaf picked by each
//! stump and compares the total with the stage threshold. Internally a stump
//! votes α or nothing, so on read each stump becomes
//!
//! * `l0 >= l1`: α = l0 - l1, [`Polarity::Below`] at the stump threshold,
//! * `l1 > l0`: α = l1 - l0, [`Polarity::Above`] just below the stump threshold,
//!
//! and the stage threshold drops by Σ min(l0, l1). XML feature values are
//! normalized by `(width - 2) * (height - 2)` times the window deviation, so
//! stump thresholds are multiplied by that area on read and divided by it on
//! write. See `docs/cascade-format.md`.

use std::fmt::Write as _;

use roxmltree::{Document, Node};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boost::{Polarity, StrongClassifier, WeakClassifier};
use crate::cascade::{Cascade, Stage, TrainingProvenance};
use crate::haar::{FeatureKind, HaarFeature, WeightedRect};
use crate::imagecore::Rect;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("unsupported format: legacy cascade root <{0}>")]
    UnsupportedFormat(String),
    #[error("unsupported feature type: {0}")]
    UnsupportedFeatureType(String),
    #[error("unsupported tree shape: {0}")]
    UnsupportedTreeShape(String),
}

fn schema(msg: impl Into<String>) -> FormatError {
    FormatError::SchemaViolation(msg.into())
}

/// One stump as stored in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct DocWeak {
    pub feature_index: usize,
    pub threshold: f64,
    /// Leaf taken when the normalized value is below `threshold`.
    pub leaf_below: f64,
    /// Leaf taken otherwise.
    pub leaf_above: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocStage {
    pub threshold: f64,
    pub weak: Vec<DocWeak>,
}

/// A cascade file in its stored form.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeDocument {
    pub width: u32,
    pub height: u32,
    pub stages: Vec<DocStage>,
    pub features: Vec<Vec<WeightedRect>>,
}

/// Factor between stored and internal stump thresholds.
pub fn threshold_unit(width: u32, height: u32) -> f64 {
    (width.saturating_sub(2) as f64) * (height.saturating_sub(2) as f64)
}

impl CascadeDocument {
    /// Internal cascade with the leaf-sum semantics mapped onto α votes.
    pub fn to_cascade(&self) -> Result<Cascade, FormatError> {
        let unit = threshold_unit(self.width, self.height);
        let mut features: Vec<Option<HaarFeature>> = vec![None; self.features.len()];
        let mut stages = Vec::with_capacity(self.stages.len());
        for (si, st) in self.stages.iter().enumerate() {
            let mut weak = Vec::with_capacity(st.weak.len());
            let mut offset = 0.0;
            for (wi, w) in st.weak.iter().enumerate() {
                let slot = features
                    .get_mut(w.feature_index)
                    .ok_or_else(|| schema(format!("stage {si} weak {wi}: feature index {} out of range ({} features)", w.feature_index, self.features.len())))?;
                if slot.is_none() {
                    let f = HaarFeature::new(FeatureKind::Custom, self.features[w.feature_index].clone(), self.width, self.height)
                        .map_err(|e| schema(format!("feature {}: {e}", w.feature_index)))?;
                    *slot = Some(f);
                }
                let feature = slot.clone().expect("filled above");
                let t = w.threshold * unit;
                let (threshold, polarity, alpha) = if w.leaf_below >= w.leaf_above {
                    (t, Polarity::Below, w.leaf_below - w.leaf_above)
                } else {
                    (t.next_down(), Polarity::Above, w.leaf_above - w.leaf_below)
                };
                if !alpha.is_finite() || !threshold.is_finite() {
                    return Err(schema(format!("stage {si} weak {wi}: non-finite stump")));
                }
                offset += w.leaf_below.min(w.leaf_above);
                weak.push(WeakClassifier { feature, threshold, polarity, alpha });
            }
            let stage_threshold = st.threshold - offset;
            if !stage_threshold.is_finite() {
                return Err(schema(format!("stage {si}: non-finite threshold")));
            }
            stages.push(Stage { classifier: StrongClassifier { weak, stage_threshold } });
        }
        Ok(Cascade { base_w: self.width, base_h: self.height, stages, provenance: None })
    }

    /// Stored form of `c`: one feature entry per stump, leaves `(α, 0)` or
    /// `(0, α)`, no stage offset.
    pub fn from_cascade(c: &Cascade) -> Self {
        let unit = threshold_unit(c.base_w, c.base_h);
        let mut features = Vec::new();
        let stages = c
            .stages
            .iter()
            .map(|st| DocStage {
                threshold: st.classifier.stage_threshold,
                weak: st
                    .classifier
                    .weak
                    .iter()
                    .map(|w| {
                        features.push(w.feature.rects.clone());
                        let (threshold, leaf_below, leaf_above) = match w.polarity {
                            Polarity::Below => (encode_threshold(w.threshold, unit), w.alpha, 0.0),
                            Polarity::Above => (encode_threshold(w.threshold.next_up(), unit), 0.0, w.alpha),
                        };
                        DocWeak { feature_index: features.len() - 1, threshold, leaf_below, leaf_above }
                    })
                    .collect(),
            })
            .collect();
        CascadeDocument { width: c.base_w, height: c.base_h, stages, features }
    }
}

/// Stored threshold `x` whose product with `unit` reproduces `target`
/// exactly when such a value sits within a few ulps of `target / unit`.
fn encode_threshold(target: f64, unit: f64) -> f64 {
    let x0 = target / unit;
    if x0 * unit == target {
        return x0;
    }
    let (mut lo, mut hi) = (x0, x0);
    for _ in 0..64 {
        lo = lo.next_down();
        hi = hi.next_up();
        if hi * unit == target {
            return hi;
        }
        if lo * unit == target {
            return lo;
        }
    }
    x0
}

fn elements<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(|n| n.is_element())
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Result<Node<'a, 'i>, FormatError> {
    elements(node)
        .find(|n| n.tag_name().name() == name)
        .ok_or_else(|| schema(format!("missing <{name}> in <{}>", node.tag_name().name())))
}

fn opt_child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    elements(node).find(|n| n.tag_name().name() == name)
}

fn items<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    elements(node).filter(|n| n.tag_name().name() == "_")
}

fn text(node: Node) -> String {
    node.children().filter(|n| n.is_text()).filter_map(|n| n.text()).collect()
}

fn parse_uint(node: Node, what: &str) -> Result<u32, FormatError> {
    let t = text(node);
    t.trim().parse().map_err(|_| schema(format!("{what}: expected a non-negative integer, got {:?}", t.trim())))
}

fn parse_real(s: &str, what: &str) -> Result<f64, FormatError> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(schema(format!("{what}: expected a finite real, got {s:?}"))),
    }
}

/// Parses the stored form without mapping it to α votes.
pub fn parse_cascade_document(bytes: &[u8]) -> Result<CascadeDocument, FormatError> {
    let src = std::str::from_utf8(bytes).map_err(|e| FormatError::MalformedXml(format!("invalid UTF-8: {e}")))?;
    let doc = Document::parse(src).map_err(|e| FormatError::MalformedXml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "opencv_storage" {
        return Err(schema(format!("root element is <{}>, expected <opencv_storage>", root.tag_name().name())));
    }
    let cascade = match opt_child(root, "cascade") {
        Some(c) => c,
        None => {
            if let Some(legacy) = elements(root).find(|n| n.attribute("type_id") == Some("opencv-haar-classifier")) {
                return Err(FormatError::UnsupportedFormat(legacy.tag_name().name().to_string()));
            }
            return Err(schema("missing <cascade> in <opencv_storage>"));
        }
    };

    let stage_type = text(child(cascade, "stageType")?);
    if stage_type.trim() != "BOOST" {
        return Err(schema(format!("stageType {:?} is not BOOST", stage_type.trim())));
    }
    let feature_type = text(child(cascade, "featureType")?);
    if feature_type.trim() != "HAAR" {
        return Err(FormatError::UnsupportedFeatureType(feature_type.trim().to_string()));
    }
    let width = parse_uint(child(cascade, "width")?, "width")?;
    let height = parse_uint(child(cascade, "height")?, "height")?;
    if width < 3 || height < 3 {
        return Err(schema(format!("window {width}x{height} is smaller than 3x3")));
    }

    let mut features = Vec::new();
    for (fi, f) in items(child(cascade, "features")?).enumerate() {
        if let Some(t) = opt_child(f, "tilted") {
            if text(t).trim() != "0" {
                return Err(FormatError::UnsupportedFeatureType(format!("feature {fi} is tilted")));
            }
        }
        let mut rects = Vec::new();
        for r in items(child(f, "rects")?) {
            let t = text(r);
            let parts: Vec<&str> = t.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(schema(format!("feature {fi}: rect entry needs 5 numbers, got {}", parts.len())));
            }
            let mut geom = [0u32; 4];
            for (g, p) in geom.iter_mut().zip(&parts[..4]) {
                *g = p.parse().map_err(|_| schema(format!("feature {fi}: bad rect coordinate {p:?}")))?;
            }
            let rect = Rect::new(geom[0], geom[1], geom[2], geom[3]);
            if rect.w == 0 || rect.h == 0 || !rect.fits_in(width, height) {
                return Err(schema(format!("feature {fi}: rect {rect} outside window {width}x{height}")));
            }
            let weight = parse_real(parts[4], &format!("feature {fi} weight"))?;
            rects.push(WeightedRect { rect, weight });
        }
        if rects.is_empty() {
            return Err(schema(format!("feature {fi} has no rects")));
        }
        features.push(rects);
    }

    let declared = parse_uint(child(cascade, "stageNum")?, "stageNum")? as usize;
    let mut stages = Vec::new();
    for (si, s) in items(child(cascade, "stages")?).enumerate() {
        let threshold = parse_real(text(child(s, "stageThreshold")?).trim(), &format!("stage {si} threshold"))?;
        let mut weak = Vec::new();
        for (wi, w) in items(child(s, "weakClassifiers")?).enumerate() {
            let nodes_text = text(child(w, "internalNodes")?);
            let nodes: Vec<&str> = nodes_text.split_whitespace().collect();
            let leaves_text = text(child(w, "leafValues")?);
            let leaves: Vec<&str> = leaves_text.split_whitespace().collect();
            if nodes.len() != 4 || leaves.len() != 2 {
                return Err(FormatError::UnsupportedTreeShape(format!(
                    "stage {si} weak {wi}: {} internal-node numbers and {} leaves (stumps need 4 and 2)",
                    nodes.len(),
                    leaves.len()
                )));
            }
            let child_ref = |p: &str| -> Result<usize, FormatError> {
                match p.parse::<i64>() {
                    Ok(0) => Ok(0),
                    Ok(-1) => Ok(1),
                    _ => Err(FormatError::UnsupportedTreeShape(format!("stage {si} weak {wi}: child reference {p:?} is not a leaf"))),
                }
            };
            let (left, right) = (child_ref(nodes[0])?, child_ref(nodes[1])?);
            if left == right {
                return Err(FormatError::UnsupportedTreeShape(format!("stage {si} weak {wi}: both branches reach leaf {left}")));
            }
            let feature_index: usize =
                nodes[2].parse().map_err(|_| schema(format!("stage {si} weak {wi}: bad feature index {:?}", nodes[2])))?;
            if feature_index >= features.len() {
                return Err(schema(format!(
                    "stage {si} weak {wi}: feature index {feature_index} out of range ({} features)",
                    features.len()
                )));
            }
            let threshold = parse_real(nodes[3], &format!("stage {si} weak {wi} threshold"))?;
            let leaf = [parse_real(leaves[0], "leaf value")?, parse_real(leaves[1], "leaf value")?];
            weak.push(DocWeak { feature_index, threshold, leaf_below: leaf[left], leaf_above: leaf[right] });
        }
        if weak.is_empty() {
            return Err(schema(format!("stage {si} has no weak classifiers")));
        }
        if let Some(m) = opt_child(s, "maxWeakCount") {
            let m = parse_uint(m, "maxWeakCount")? as usize;
            if m != weak.len() {
                return Err(schema(format!("stage {si}: maxWeakCount {m} but {} weak classifiers", weak.len())));
            }
        }
        stages.push(DocStage { threshold, weak });
    }
    if stages.len() != declared {
        return Err(schema(format!("stageNum {declared} but {} stages", stages.len())));
    }
    Ok(CascadeDocument { width, height, stages, features })
}

/// Parses a new-style HAAR cascade file.
pub fn parse_cascade_xml(bytes: &[u8]) -> Result<Cascade, FormatError> {
    parse_cascade_document(bytes)?.to_cascade()
}

/// Serializes `c` as new-style HAAR cascade XML. Byte output depends only on `c`.
pub fn write_cascade_xml(c: &Cascade) -> Vec<u8> {
    write_document(&CascadeDocument::from_cascade(c))
}

pub fn write_document(d: &CascadeDocument) -> Vec<u8> {
    let max_weak = d.stages.iter().map(|s| s.weak.len()).max().unwrap_or(0);
    let mut o = String::new();
    o.push_str("<?xml version=\"1.0\"?>\n<opencv_storage>\n<cascade type_id=\"opencv-cascade-classifier\">\n");
    o.push_str("  <stageType>BOOST</stageType>\n  <featureType>HAAR</featureType>\n");
    let _ = writeln!(o, "  <height>{}</height>\n  <width>{}</width>", d.height, d.width);
    let _ = writeln!(o, "  <stageParams>\n    <maxWeakCount>{max_weak}</maxWeakCount></stageParams>");
    o.push_str("  <featureParams>\n    <maxCatCount>0</maxCatCount></featureParams>\n");
    let _ = writeln!(o, "  <stageNum>{}</stageNum>", d.stages.len());
    o.push_str("  <stages>\n");
    for st in &d.stages {
        let _ = write!(
            o,
            "    <_>\n      <maxWeakCount>{}</maxWeakCount>\n      <stageThreshold>{:e}</stageThreshold>\n      <weakClassifiers>",
            st.weak.len(),
            st.threshold
        );
        for w in &st.weak {
            let _ = write!(
                o,
                "\n        <_>\n          <internalNodes>\n            0 -1 {} {:e}</internalNodes>\n          <leafValues>\n            {:e} {:e}</leafValues></_>",
                w.feature_index, w.threshold, w.leaf_below, w.leaf_above
            );
        }
        o.push_str("</weakClassifiers></_>\n");
    }
    o.push_str("  </stages>\n  <features>\n");
    for f in &d.features {
        o.push_str("    <_>\n      <rects>");
        for wr in f {
            let r = wr.rect;
            let _ = write!(o, "\n        <_>\n          {} {} {} {} {:e}</_>", r.x, r.y, r.w, r.h, wr.weight);
        }
        o.push_str("</rects>\n      <tilted>0</tilted></_>\n");
    }
    o.push_str("  </features>\n</cascade>\n</opencv_storage>\n");
    o.into_bytes()
}

/// Identifies canonical JSON cascade files.
pub const JSON_FORMAT: &str = "vjcascade";
pub const JSON_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonCascade {
    format: String,
    version: u32,
    base_w: u32,
    base_h: u32,
    stages: Vec<JsonStage>,
    provenance: Option<TrainingProvenance>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonStage {
    stage_threshold: f64,
    weak: Vec<JsonWeak>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonWeak {
    kind: FeatureKind,
    rects: Vec<JsonRect>,
    threshold: f64,
    polarity: i8,
    alpha: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRect {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    weight: f64,
}

/// Canonical JSON: fixed key order, shortest round-trip reals, provenance kept.
pub fn to_canonical_json(c: &Cascade) -> Vec<u8> {
    let doc = JsonCascade {
        format: JSON_FORMAT.to_string(),
        version: JSON_VERSION,
        base_w: c.base_w,
        base_h: c.base_h,
        stages: c
            .stages
            .iter()
            .map(|st| JsonStage {
                stage_threshold: st.classifier.stage_threshold,
                weak: st
                    .classifier
                    .weak
                    .iter()
                    .map(|w| JsonWeak {
                        kind: w.feature.kind,
                        rects: w
                            .feature
                            .rects
                            .iter()
                            .map(|r| JsonRect { x: r.rect.x.into(), y: r.rect.y.into(), w: r.rect.w.into(), h: r.rect.h.into(), weight: r.weight })
                            .collect(),
                        threshold: w.threshold,
                        polarity: w.polarity.into(),
                        alpha: w.alpha,
                    })
                    .collect(),
            })
            .collect(),
        provenance: c.provenance.clone(),
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("cascade serializes");
    out.push(b'\n');
    out
}

pub fn from_canonical_json(bytes: &[u8]) -> Result<Cascade, FormatError> {
    let doc: JsonCascade = serde_json::from_slice(bytes).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => schema(e.to_string()),
        _ => FormatError::MalformedJson(e.to_string()),
    })?;
    if doc.format != JSON_FORMAT || doc.version != JSON_VERSION {
        return Err(schema(format!("unsupported format {:?} version {}", doc.format, doc.version)));
    }
    if doc.base_w < 3 || doc.base_h < 3 {
        return Err(schema(format!("window {}x{} is smaller than 3x3", doc.base_w, doc.base_h)));
    }
    let mut stages = Vec::with_capacity(doc.stages.len());
    for (si, st) in doc.stages.into_iter().enumerate() {
        let mut weak = Vec::with_capacity(st.weak.len());
        for (wi, w) in st.weak.into_iter().enumerate() {
            let at = |m: String| schema(format!("stage {si} weak {wi}: {m}"));
            let mut rects = Vec::with_capacity(w.rects.len());
            for r in &w.rects {
                let coord = |v: i64, name: &str| u32::try_from(v).map_err(|_| at(format!("rect {name} {v} out of range")));
                let rect = Rect::new(coord(r.x, "x")?, coord(r.y, "y")?, coord(r.w, "w")?, coord(r.h, "h")?);
                if rect.w == 0 || rect.h == 0 {
                    return Err(at(format!("empty rect {rect}")));
                }
                rects.push(WeightedRect { rect, weight: r.weight });
            }
            let feature = HaarFeature::new(w.kind, rects, doc.base_w, doc.base_h).map_err(|e| at(e.to_string()))?;
            let polarity = Polarity::try_from(w.polarity).map_err(at)?;
            weak.push(WeakClassifier { feature, threshold: w.threshold, polarity, alpha: w.alpha });
        }
        stages.push(Stage { classifier: StrongClassifier { weak, stage_threshold: st.stage_threshold } });
    }
    Ok(Cascade { base_w: doc.base_w, base_h: doc.base_h, stages, provenance: doc.provenance })
}
