//! Independent reference implementations used by the integration tests.
//! They favour the obvious algorithm over speed.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgdet::heads::{AnchorSet, Detection, RawPrediction};
use sgdet::text::CategoryVocab;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn read_lemma_corpus() -> Vec<(String, String)> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/lemma_corpus.tsv");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (s, m) = l.split_once('\t').expect("surface<TAB>lemma");
            (s.trim().to_string(), m.trim().to_string())
        })
        .collect()
}

// ---- hashing recipes ----

fn fnv(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

struct SplitMix(u64);

impl SplitMix {
    fn finish(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        Self::finish(self.0)
    }
}

/// Out-of-vocabulary vector recipe.
pub fn oov_oracle(term: &str, dim: usize, salt: u64) -> Vec<f32> {
    let mut g = SplitMix(fnv(term.as_bytes()) ^ SplitMix::finish(salt.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    let scale = 2f64.powi(-53);
    let v: Vec<f64> = (0..dim).map(|_| ((g.next() >> 11) as f64 + 0.5) * scale * 2.0 - 1.0).collect();
    let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

/// Seeded weight recipe: a murmur3-style finalizer over a mixed key.
pub fn weight_oracle(seed: u64, name: &str, index: u64) -> f32 {
    let key = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(fnv(name.as_bytes()).wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
        .wrapping_add((index + 1).wrapping_mul(0x1656_67B1_9E37_79F9));
    let mut z = key;
    for m in [0xFF51_AFD7_ED55_8CCDu64, 0xC4CE_B9FE_1A85_EC53] {
        z ^= z >> 33;
        z = z.wrapping_mul(m);
    }
    z ^= z >> 33;
    let top24 = (z >> 40) as f64;
    (((top24 + 0.5) / 16_777_216.0 * 2.0 - 1.0) * 0.1) as f32
}

// ---- category mapping ----

/// A vocabulary of `n` random classes where every fifth class repeats the
/// vector of an earlier one, so exact ties occur.
pub fn seeded_vocab(n: usize, dim: usize, seed: u64) -> (CategoryVocab, Vec<Vec<f32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors: Vec<Vec<f32>> = Vec::with_capacity(n);
    for i in 0..n {
        if i % 5 == 4 {
            let j = rng.gen_range(0..i);
            vectors.push(vectors[j].clone());
        } else {
            vectors.push((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
        }
    }
    let classes = vectors.iter().enumerate().map(|(i, v)| (format!("class{i}"), v.clone())).collect();
    (CategoryVocab::new(classes).unwrap(), vectors)
}

/// Scores every class, then returns the smallest id attaining the maximum.
pub fn scan_oracle(q: &[f32], classes: &[Vec<f32>]) -> (usize, f64) {
    let n2 = |v: &[f32]| v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    let qn = n2(q);
    let scores: Vec<f64> = classes
        .iter()
        .map(|c| q.iter().zip(c).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum::<f64>() / (qn * n2(c)))
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let id = scores.iter().position(|&s| s == max).unwrap();
    (id, max)
}

// ---- boxes ----

/// IoU of integer boxes by counting covered unit cells.
pub fn grid_iou(a: [i32; 4], b: [i32; 4]) -> f32 {
    let lo_x = a[0].min(b[0]);
    let hi_x = a[2].max(b[2]);
    let lo_y = a[1].min(b[1]);
    let hi_y = a[3].max(b[3]);
    let inside = |r: [i32; 4], x: i32, y: i32| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
    let (mut inter, mut union) = (0u32, 0u32);
    for y in lo_y..hi_y {
        for x in lo_x..hi_x {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += u32::from(ia && ib);
            union += u32::from(ia || ib);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f32 / union as f32
    }
}

fn order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class_id.cmp(&b.class_id))
        .then_with(|| {
            for i in 0..4 {
                match a.bbox[i].total_cmp(&b.bbox[i]) {
                    Ordering::Equal => {}
                    o => return o,
                }
            }
            Ordering::Equal
        })
}

pub fn sorted(dets: &[Detection]) -> Vec<Detection> {
    let mut v = dets.to_vec();
    v.sort_by(order);
    v
}

/// Reference greedy suppression over a precomputed overlap matrix.
pub fn greedy_nms(dets: &[Detection], thr: f32, iou: impl Fn(&[f32; 4], &[f32; 4]) -> f32) -> Vec<Detection> {
    let s = sorted(dets);
    let mut alive = vec![true; s.len()];
    for i in 0..s.len() {
        if !alive[i] {
            continue;
        }
        for j in i + 1..s.len() {
            if s[j].class_id == s[i].class_id && iou(&s[i].bbox, &s[j].bbox) >= thr {
                alive[j] = false;
            }
        }
    }
    s.into_iter().zip(alive).filter(|(_, a)| *a).map(|(d, _)| d).collect()
}

/// Searches all subsets for the unique one that is a fixed point of
/// "keep a box iff no kept, earlier, same-class box overlaps it".
pub fn exhaustive_nms(dets: &[Detection], thr: f32, iou: impl Fn(&[f32; 4], &[f32; 4]) -> f32) -> Vec<Detection> {
    let s = sorted(dets);
    let n = s.len();
    assert!(n <= 16);
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let kept = |i: usize| mask & (1 << i) != 0;
        let consistent = (0..n).all(|i| {
            let blocked = (0..i).any(|k| kept(k) && s[k].class_id == s[i].class_id && iou(&s[k].bbox, &s[i].bbox) >= thr);
            kept(i) == !blocked
        });
        if consistent {
            found.push(mask);
        }
    }
    assert_eq!(found.len(), 1, "fixed point must be unique");
    (0..n).filter(|&i| found[0] & (1 << i) != 0).map(|i| s[i]).collect()
}

// ---- decode ----

fn sig(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-cell decode written against the channel layout: anchor `a` owns
/// class channels `a*C..(a+1)*C`, box channels `4a..4a+4` and objectness `a`.
pub fn decode_oracle(raw: &RawPrediction, anchors: &AnchorSet, strides: &[usize], conf: f32) -> Vec<Detection> {
    let c = raw.num_classes;
    let mut out = Vec::new();
    for (l, lvl) in raw.levels.iter().enumerate() {
        let s = strides[l] as f32;
        let shape = lvl.obj.shape();
        let (gh, gw) = (shape.h, shape.w);
        let plane = gh * gw;
        let (cls, bx, obj) = (lvl.cls.data(), lvl.boxes.data(), lvl.obj.data());
        for cell in 0..plane {
            let (gy, gx) = (cell / gw, cell % gw);
            for (a, &(aw, ah)) in anchors.levels[l].iter().enumerate() {
                let logits: Vec<f32> = (0..c).map(|k| cls[(a * c + k) * plane + cell]).collect();
                // first maximum wins
                let mut arg = 0;
                for k in 0..c {
                    if logits[k] > logits[arg] {
                        arg = k;
                    }
                }
                let score = sig(obj[a * plane + cell]) * sig(logits[arg]);
                if score < conf {
                    continue;
                }
                let t: Vec<f32> = (0..4).map(|i| bx[(a * 4 + i) * plane + cell]).collect();
                let cx = (2.0 * sig(t[0]) - 0.5 + gx as f32) * s;
                let cy = (2.0 * sig(t[1]) - 0.5 + gy as f32) * s;
                let w = (2.0 * sig(t[2])).powi(2) * aw;
                let h = (2.0 * sig(t[3])).powi(2) * ah;
                let (iw, ih) = (gw as f32 * s, gh as f32 * s);
                let b = [
                    (cx - w / 2.0).max(0.0).min(iw),
                    (cy - h / 2.0).max(0.0).min(ih),
                    (cx + w / 2.0).max(0.0).min(iw),
                    (cy + h / 2.0).max(0.0).min(ih),
                ];
                if b[2] > b[0] && b[3] > b[1] {
                    out.push(Detection {
                        class_id: arg,
                        score,
                        bbox: b,
                    });
                }
            }
        }
    }
    out
}

// ---- random detections ----

/// A random list of integer-cornered boxes, small enough to overlap often.
pub fn random_detections(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let x1 = rng.gen_range(0..24) as f32;
            let y1 = rng.gen_range(0..24) as f32;
            let w = rng.gen_range(1..12) as f32;
            let h = rng.gen_range(1..12) as f32;
            Detection {
                class_id: rng.gen_range(0..classes),
                // few distinct values so score ties happen
                score: rng.gen_range(1..20) as f32 / 20.0,
                bbox: [x1, y1, x1 + w, y1 + h],
            }
        })
        .collect()
}

// ---- end to end ----

pub const GOLDEN_PROMPT: &str = "dogs walking";

/// The desk detector with seed-42 weights, built-in text data, the desk word
/// vectors and the three-class vocabulary.
pub fn desk_pipeline(kind: sgdet::backbone::StageBlockKind, kernel: sgdet::exec::ConvKernel) -> sgdet::pipeline::Pipeline {
    use sgdet::config::PipelineConfig;
    use sgdet::pipeline::{seed_weights, Pipeline};
    use sgdet::text::{EmbeddingTable, TextPipeline};
    let cfg = PipelineConfig::desk(kind);
    let weights = seed_weights(&cfg, 42);
    let table = EmbeddingTable::load(&fixture("desk_embeddings.txt")).unwrap();
    let vocab = CategoryVocab::load(&fixture("vocab3.txt")).unwrap();
    Pipeline::new(cfg, weights, TextPipeline::default(), table, vocab)
        .unwrap()
        .with_kernel(kernel)
}

pub fn desk_image() -> sgdet::tensor::Tensor {
    sgdet::image::load_image_ppm(&fixture("desk.ppm"), false).unwrap()
}
