//! End-to-end detection: image and prompt in, filtered detections out.
//!
//! The detection JSON has a fixed key order and prints every real with six
//! decimals, so identical inputs give byte-identical files:
//!
//! ```text
//! {
//!   "image": "<file name>",
//!   "prompt": "<text>" | null,
//!   "prompt_classes": ["<name>", ..] | null,
//!   "provenance": {"<name>": [["<lemma>", <similarity>], ..], ..} | null,
//!   "detections": [{"class": "<name>", "class_id": <int>, "score": <real>, "box": [x1, y1, x2, y2]}, ..],
//!   "dropped_count": <int>
//! }
//! ```
//!
//! The `null` forms appear when the prompt filter is bypassed.

use std::fmt::Write as _;
use std::path::Path;

use crate::backbone::{self, backbone_forward_with};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::exec::{ConvKernel, Exec};
use crate::filter::{filter, FilteredResult};
use crate::heads::{self, decode, lead_head_forward, nms, Detection, RawPrediction};
use crate::image::load_image_ppm;
use crate::pyramid::{self, pyramid_forward, FusionState};
use crate::tensor::Tensor;
use crate::text::{CategoryVocab, EmbeddingTable, PromptClassSet, TextPipeline};
use crate::weights::{ParamSpec, WeightContainer};

/// Every parameter the forward pass reads, in graph order.
pub fn layout(cfg: &PipelineConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    backbone::layout(&cfg.backbone, &mut out);
    pyramid::layout(&cfg.pyramid, cfg.backbone.stage_channels, &mut out);
    let anchors = cfg.head.anchor_set(&cfg.pyramid.level_strides).per_level();
    heads::layout(
        cfg.pyramid.num_levels,
        cfg.pyramid.fused_channels(),
        cfg.head.num_classes,
        anchors,
        &mut out,
    );
    out
}

pub fn seed_weights(cfg: &PipelineConfig, seed: u64) -> WeightContainer {
    WeightContainer::seeded(&layout(cfg), seed)
}

/// Loads a weight file and checks it against the configured graph.
pub fn load_weights(path: &Path, cfg: &PipelineConfig) -> Result<WeightContainer> {
    let w = WeightContainer::load(path)?;
    w.validate(&layout(cfg))?;
    Ok(w)
}

/// Backbone, pyramid and lead heads.
pub fn forward(exec: &Exec, image: &Tensor, cfg: &PipelineConfig, weights: &WeightContainer) -> Result<(FusionState, RawPrediction)> {
    let features = backbone_forward_with(exec, image, &cfg.backbone, weights)?;
    let state = pyramid_forward(exec, &features, &cfg.pyramid, weights)?;
    let anchors = cfg.head.anchor_set(&cfg.pyramid.level_strides).per_level();
    let levels = state
        .lead
        .iter()
        .enumerate()
        .map(|(k, lead)| lead_head_forward(exec, lead, cfg.head.num_classes, anchors, weights, k + 1))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        state,
        RawPrediction {
            num_classes: cfg.head.num_classes,
            levels,
        },
    ))
}

/// Decoded detections after class-wise NMS, before any prompt filtering.
pub fn detect(exec: &Exec, image: &Tensor, cfg: &PipelineConfig, weights: &WeightContainer) -> Result<Vec<Detection>> {
    let (_, raw) = forward(exec, image, cfg, weights)?;
    let strides = &cfg.pyramid.level_strides;
    let dets = decode(&raw, &cfg.head.anchor_set(strides), strides, cfg.head.conf_threshold)?;
    Ok(nms(&dets, cfg.head.iou_threshold))
}

/// Outcome of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub image: String,
    pub prompt: Option<String>,
    /// `None` when filtering was bypassed.
    pub filtered: Option<FilteredResult>,
    pub unfiltered: Vec<Detection>,
}

impl DetectionReport {
    pub fn detections(&self) -> &[Detection] {
        match &self.filtered {
            Some(f) => &f.detections,
            None => &self.unfiltered,
        }
    }

    pub fn prompt_set(&self) -> Option<&PromptClassSet> {
        self.filtered.as_ref().map(|f| &f.prompt_set)
    }

    pub fn to_json(&self, vocab: &CategoryVocab) -> String {
        let name = |id: usize| vocab.name(id).unwrap_or("?");
        let mut s = String::from("{\n");
        writeln!(s, "  \"image\": {},", json_str(&self.image)).unwrap();
        writeln!(s, "  \"prompt\": {},", self.prompt.as_deref().map_or("null".into(), json_str)).unwrap();
        match self.prompt_set() {
            Some(p) => {
                let names: Vec<String> = p.class_ids.iter().map(|&c| json_str(name(c))).collect();
                writeln!(s, "  \"prompt_classes\": [{}],", names.join(", ")).unwrap();
                let prov: Vec<String> = p
                    .provenance
                    .iter()
                    .map(|(&c, entries)| {
                        let e: Vec<String> = entries
                            .iter()
                            .map(|(lemma, score)| format!("[{}, {}]", json_str(lemma), real(*score)))
                            .collect();
                        format!("{}: [{}]", json_str(name(c)), e.join(", "))
                    })
                    .collect();
                writeln!(s, "  \"provenance\": {{{}}},", prov.join(", ")).unwrap();
            }
            None => {
                s.push_str("  \"prompt_classes\": null,\n");
                s.push_str("  \"provenance\": null,\n");
            }
        }
        let dets = self.detections();
        if dets.is_empty() {
            s.push_str("  \"detections\": [],\n");
        } else {
            s.push_str("  \"detections\": [\n");
            for (i, d) in dets.iter().enumerate() {
                let b: Vec<String> = d.bbox.iter().map(|&v| real(f64::from(v))).collect();
                write!(
                    s,
                    "    {{\"class\": {}, \"class_id\": {}, \"score\": {}, \"box\": [{}]}}",
                    json_str(name(d.class_id)),
                    d.class_id,
                    real(f64::from(d.score)),
                    b.join(", ")
                )
                .unwrap();
                s.push_str(if i + 1 < dets.len() { ",\n" } else { "\n" });
            }
            s.push_str("  ],\n");
        }
        let dropped = self.filtered.as_ref().map_or(0, |f| f.dropped_count);
        writeln!(s, "  \"dropped_count\": {dropped}").unwrap();
        s.push_str("}\n");
        s
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

/// Six decimals, with negative zero printed as zero.
fn real(v: f64) -> String {
    let t = format!("{v:.6}");
    if t == "-0.000000" {
        "0.000000".into()
    } else {
        t
    }
}

/// A loaded detector: config, weights, text resources and vocabulary.
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub weights: WeightContainer,
    pub text: TextPipeline,
    pub table: EmbeddingTable,
    pub vocab: CategoryVocab,
    pub kernel: ConvKernel,
}

impl Pipeline {
    /// Checks the cross-file invariants: weights match the graph and the
    /// vocabulary size matches the class count.
    pub fn new(
        cfg: PipelineConfig,
        weights: WeightContainer,
        text: TextPipeline,
        table: EmbeddingTable,
        vocab: CategoryVocab,
    ) -> Result<Self> {
        cfg.validate()?;
        weights.validate(&layout(&cfg))?;
        if vocab.len() != cfg.head.num_classes {
            return Err(Error::config(format!(
                "head.num_classes = {} but the vocabulary has {} classes",
                cfg.head.num_classes,
                vocab.len()
            )));
        }
        Ok(Pipeline {
            cfg,
            weights,
            text,
            table,
            vocab,
            kernel: ConvKernel::default(),
        })
    }

    pub fn with_kernel(mut self, kernel: ConvKernel) -> Self {
        self.kernel = kernel;
        self
    }

    /// Runs one image. `prompt = None` bypasses the prompt filter.
    pub fn detect_tensor(&self, image_name: &str, image: &Tensor, prompt: Option<&str>) -> Result<DetectionReport> {
        let exec = Exec::new(self.kernel);
        let unfiltered = detect(&exec, image, &self.cfg, &self.weights)?;
        let filtered = match prompt {
            Some(p) => {
                let set = self.text.prompt_to_classes(p, &self.table, &self.vocab, self.cfg.text.tau)?;
                Some(filter(&unfiltered, &set))
            }
            None => None,
        };
        Ok(DetectionReport {
            image: image_name.to_string(),
            prompt: prompt.map(str::to_string),
            filtered,
            unfiltered,
        })
    }

    /// Reads `image`, detects, and writes the JSON report to `out` atomically.
    pub fn run_detect(&self, image: &Path, prompt: Option<&str>, pad: bool, out: &Path) -> Result<DetectionReport> {
        let t = load_image_ppm(image, pad)?;
        let name = image.file_name().map_or_else(|| image.display().to_string(), |n| n.to_string_lossy().into_owned());
        let report = self.detect_tensor(&name, &t, prompt)?;
        crate::write_atomic(out, report.to_json(&self.vocab).as_bytes())?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::StageBlockKind;
    use crate::tensor::Shape;

    fn vocab3() -> CategoryVocab {
        CategoryVocab::parse("0 dog 1 0 0\n1 person 0 1 0\n2 car 0 0 1\n", "v").unwrap()
    }

    fn pipeline(kind: StageBlockKind) -> Pipeline {
        let cfg = PipelineConfig::desk(kind);
        let w = seed_weights(&cfg, 42);
        Pipeline::new(cfg, w, TextPipeline::default(), EmbeddingTable::new(3, 0).unwrap(), vocab3()).unwrap()
    }

    fn image() -> Tensor {
        Tensor::from_fn(Shape::new(1, 3, 64, 64), |_, c, y, x| ((c * 7 + y * 3 + x) % 17) as f32 / 16.0).unwrap()
    }

    #[test]
    fn forward_uses_every_weight() {
        let cfg = PipelineConfig::desk(StageBlockKind::Msp);
        let w = seed_weights(&cfg, 1);
        let img = Tensor::zeros(Shape::new(1, 3, 32, 32)).unwrap();
        forward(&Exec::default(), &img, &cfg, &w).unwrap();
        for spec in layout(&cfg) {
            let mut missing = w.clone();
            missing.remove(&spec.name);
            let e = forward(&Exec::default(), &img, &cfg, &missing).unwrap_err();
            assert!(e.to_string().contains(spec.name.trim_end_matches(".weight").trim_end_matches(".bias")), "{e}");
        }
    }

    #[test]
    fn no_prompt_bypasses_filter() {
        let p = pipeline(StageBlockKind::Csp);
        let r = p.detect_tensor("x.ppm", &image(), None).unwrap();
        assert!(r.filtered.is_none());
        assert_eq!(r.detections(), &r.unfiltered[..]);
        let json = r.to_json(&p.vocab);
        assert!(json.contains("\"prompt\": null") && json.contains("\"dropped_count\": 0"));
    }

    #[test]
    fn json_is_deterministic_and_parses() {
        let p = pipeline(StageBlockKind::Elan);
        let a = p.detect_tensor("x.ppm", &image(), Some("a dog")).unwrap().to_json(&p.vocab);
        let b = p.detect_tensor("x.ppm", &image(), Some("a dog")).unwrap().to_json(&p.vocab);
        assert_eq!(a, b);
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["prompt_classes"], serde_json::json!(["dog"]));
        for d in v["detections"].as_array().unwrap() {
            assert_eq!(d["class"], "dog");
        }
    }

    #[test]
    fn vocabulary_must_match_class_count() {
        let cfg = PipelineConfig::desk(StageBlockKind::Csp);
        let w = seed_weights(&cfg, 42);
        let v = CategoryVocab::parse("0 dog 1 0\n1 cat 0 1\n", "v").unwrap();
        let e = Pipeline::new(cfg, w, TextPipeline::default(), EmbeddingTable::new(2, 0).unwrap(), v);
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn real_formatting() {
        assert_eq!(real(-0.0), "0.000000");
        assert_eq!(real(0.25), "0.250000");
        assert_eq!(real(-1.5), "-1.500000");
    }
}
