//! Anchor-based lead heads, box decoding and class-wise NMS.
//!
//! Per anchor `a` the box map holds `(tx, ty, tw, th)` at channels
//! `4a..4a+4`, the class map holds `num_classes` logits from `a * num_classes`,
//! and the objectness map holds one logit at channel `a`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::Tensor;
use crate::weights::{push_conv, ParamSpec, WeightContainer};

pub const DEFAULT_CONF: f32 = 0.25;
pub const DEFAULT_IOU: f32 = 0.45;
/// Anchor sizes per level, as multiples of the level's base size `2 * stride`.
pub const ANCHOR_MULTIPLES: [f32; 3] = [1.0, 2.0, 4.0];

fn default_conf() -> f32 {
    DEFAULT_CONF
}

fn default_iou() -> f32 {
    DEFAULT_IOU
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub num_classes: usize,
    #[serde(default = "default_conf")]
    pub conf_threshold: f32,
    #[serde(default = "default_iou")]
    pub iou_threshold: f32,
    /// `anchors[k]` lists `[width, height]` pairs for level `k + 1`; derived
    /// from the level strides when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<Vec<[f32; 2]>>>,
}

impl HeadConfig {
    pub fn desk() -> Self {
        HeadConfig {
            num_classes: 3,
            conf_threshold: DEFAULT_CONF,
            iou_threshold: DEFAULT_IOU,
            anchors: None,
        }
    }

    pub fn anchor_set(&self, strides: &[usize]) -> AnchorSet {
        match &self.anchors {
            Some(levels) => AnchorSet {
                levels: levels.iter().map(|l| l.iter().map(|&[w, h]| (w, h)).collect()).collect(),
            },
            None => AnchorSet::default_for(strides),
        }
    }

    pub fn validate(&self, strides: &[usize]) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("head.num_classes must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return Err(Error::config("head.conf_threshold must lie in [0, 1]"));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::config("head.iou_threshold must lie in (0, 1]"));
        }
        if let Some(levels) = &self.anchors {
            if levels.len() != strides.len() {
                return Err(Error::config(format!(
                    "head.anchors has {} levels but the pyramid has {}",
                    levels.len(),
                    strides.len()
                )));
            }
            let per = levels[0].len();
            for (k, l) in levels.iter().enumerate() {
                if l.is_empty() || l.len() != per {
                    return Err(Error::config(format!(
                        "head.anchors[{k}] must hold the same non-zero number of anchors as every level"
                    )));
                }
                if l.iter().flatten().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(Error::config(format!("head.anchors[{k}] sizes must be positive")));
                }
            }
        }
        Ok(())
    }
}

/// Anchor `(width, height)` pairs in pixels, one list per level.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub levels: Vec<Vec<(f32, f32)>>,
}

impl AnchorSet {
    /// Squares of 1, 2 and 4 times `2 * stride` at every level.
    pub fn default_for(strides: &[usize]) -> Self {
        let levels = strides
            .iter()
            .map(|&s| {
                ANCHOR_MULTIPLES
                    .iter()
                    .map(|m| {
                        let side = m * 2.0 * s as f32;
                        (side, side)
                    })
                    .collect()
            })
            .collect();
        AnchorSet { levels }
    }

    pub fn per_level(&self) -> usize {
        self.levels.first().map_or(0, Vec::len)
    }
}

/// Raw logits of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPrediction {
    pub cls: Tensor,
    pub boxes: Tensor,
    pub obj: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction {
    pub num_classes: usize,
    pub levels: Vec<LevelPrediction>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub score: f32,
    /// `(x1, y1, x2, y2)` in image pixels.
    pub bbox: [f32; 4],
}

/// Score descending, then class id, then box coordinates ascending.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class_id.cmp(&b.class_id))
        .then_with(|| {
            a.bbox
                .iter()
                .zip(&b.bbox)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

fn head_node(k: usize, branch: &str) -> String {
    format!("head.level{k}.{branch}")
}

/// Three parallel 1x1 branches over `lead_k`; `k` is the 1-based level.
pub fn lead_head_forward(
    exec: &Exec,
    lead_k: &Tensor,
    num_classes: usize,
    anchors: usize,
    weights: &WeightContainer,
    k: usize,
) -> Result<LevelPrediction> {
    let c = lead_k.channels();
    let branch = |name: &str, out: usize| -> Result<Tensor> {
        exec.conv(lead_k, &weights.conv(&head_node(k, name), c, out, 1, 1, 0)?)
    };
    Ok(LevelPrediction {
        cls: branch("cls", anchors * num_classes)?,
        boxes: branch("box", anchors * 4)?,
        obj: branch("obj", anchors)?,
    })
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Decodes every cell and anchor, keeping boxes with `score >= conf_threshold`.
///
/// Output order is level, row, column, anchor. Boxes are clipped to the image
/// (level extent times stride) and dropped if clipping leaves no area.
pub fn decode(raw: &RawPrediction, anchors: &AnchorSet, strides: &[usize], conf_threshold: f32) -> Result<Vec<Detection>> {
    if raw.levels.len() != strides.len() || anchors.levels.len() != strides.len() {
        return Err(Error::arg(format!(
            "decode: {} prediction levels, {} anchor levels, {} strides",
            raw.levels.len(),
            anchors.levels.len(),
            strides.len()
        )));
    }
    let nc = raw.num_classes;
    let mut out = Vec::new();
    for ((lvl, anc), &s) in raw.levels.iter().zip(&anchors.levels).zip(strides) {
        let a_n = anc.len();
        let sh = lvl.obj.shape();
        if lvl.cls.channels() != a_n * nc || lvl.boxes.channels() != a_n * 4 || sh.c != a_n {
            return Err(Error::shape(format!(
                "decode: channel counts ({}, {}, {}) do not fit {a_n} anchors and {nc} classes",
                lvl.cls.channels(),
                lvl.boxes.channels(),
                sh.c
            )));
        }
        let sf = s as f32;
        let (img_w, img_h) = ((sh.w * s) as f32, (sh.h * s) as f32);
        for gy in 0..sh.h {
            for gx in 0..sh.w {
                for (a, &(aw, ah)) in anc.iter().enumerate() {
                    let mut best = 0;
                    let mut best_logit = lvl.cls.get(0, a * nc, gy, gx);
                    for c in 1..nc {
                        let v = lvl.cls.get(0, a * nc + c, gy, gx);
                        if v > best_logit {
                            best = c;
                            best_logit = v;
                        }
                    }
                    let score = sigmoid(lvl.obj.get(0, a, gy, gx)) * sigmoid(best_logit);
                    if score < conf_threshold {
                        continue;
                    }
                    let t = |i: usize| lvl.boxes.get(0, a * 4 + i, gy, gx);
                    let cx = (2.0 * sigmoid(t(0)) - 0.5 + gx as f32) * sf;
                    let cy = (2.0 * sigmoid(t(1)) - 0.5 + gy as f32) * sf;
                    let w = (2.0 * sigmoid(t(2))).powi(2) * aw;
                    let h = (2.0 * sigmoid(t(3))).powi(2) * ah;
                    let x1 = (cx - w / 2.0).clamp(0.0, img_w);
                    let y1 = (cy - h / 2.0).clamp(0.0, img_h);
                    let x2 = (cx + w / 2.0).clamp(0.0, img_w);
                    let y2 = (cy + h / 2.0).clamp(0.0, img_h);
                    if x1 < x2 && y1 < y2 {
                        out.push(Detection {
                            class_id: best,
                            score,
                            bbox: [x1, y1, x2, y2],
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

fn area(b: &[f32; 4]) -> f32 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &[f32; 4], b: &[f32; 4]) -> f32 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Class-wise greedy suppression; the result is in [`detection_order`].
pub fn nms(dets: &[Detection], iou_threshold: f32) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(detection_order);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Head parameters for `levels` levels over `in_channels`-wide lead maps.
pub fn layout(levels: usize, in_channels: usize, num_classes: usize, anchors: usize, out: &mut Vec<ParamSpec>) {
    for k in 1..=levels {
        push_conv(out, &head_node(k, "cls"), in_channels, anchors * num_classes, 1);
        push_conv(out, &head_node(k, "box"), in_channels, anchors * 4, 1);
        push_conv(out, &head_node(k, "obj"), in_channels, anchors, 1);
    }
}
