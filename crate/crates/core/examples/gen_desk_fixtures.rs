//! Regenerates the desk fixtures: word vectors, the 3- and 80-class
//! vocabularies and a 64x64 test image.
//!
//! cargo run -p sgdet --example gen_desk_fixtures -- crates/core/fixtures

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgdet::image::encode_ppm;
use sgdet::tensor::{Shape, Tensor};

const DIM: usize = 64;
const SALT: u64 = 2024;
const SEED: u64 = 7;
/// Largest cosine a non-synonym may have with any class.
const UNRELATED_MAX: f64 = 0.3;

const COCO: [&str; 80] = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat", "traffic_light",
    "fire_hydrant", "stop_sign", "parking_meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella", "handbag", "tie", "suitcase", "frisbee",
    "skis", "snowboard", "sports_ball", "kite", "baseball_bat", "baseball_glove", "skateboard", "surfboard",
    "tennis_racket", "bottle", "wine_glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple",
    "sandwich", "orange", "broccoli", "carrot", "hot_dog", "pizza", "donut", "cake", "chair", "couch",
    "potted_plant", "bed", "dining_table", "toilet", "tv", "laptop", "mouse", "remote", "keyboard",
    "cell_phone", "microwave", "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors",
    "teddy_bear", "hair_drier", "toothbrush",
];

const SYNONYMS: [(&str, &[&str]); 3] = [
    ("dog", &["puppy", "hound", "doggy", "canine"]),
    ("person", &["man", "woman", "child", "pedestrian", "human", "boy", "girl"]),
    ("car", &["automobile", "sedan", "vehicle", "taxi"]),
];

const UNRELATED: [&str; 40] = [
    "walk", "run", "park", "street", "road", "red", "blue", "green", "two", "three", "sit", "stand", "play",
    "big", "small", "left", "right", "find", "show", "look", "see", "traffic", "light", "fire", "stop",
    "sign", "sport", "ball", "wine", "glass", "hot", "table", "phone", "teddy", "tree", "grass", "sky",
    "building", "field", "water",
];

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec<f64> {
    unit((0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Rounds to the six decimals written to disk, so checks see file values.
fn quantize(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| format!("{x:.6}").parse().unwrap()).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn row(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ")
}

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crates/core/fixtures".into()));
    std::fs::create_dir_all(&out).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let mut classes: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for name in COCO {
        classes.insert(name, quantize(&random_unit(&mut rng)));
    }
    let max_class_cos = |v: &[f64], skip: Option<&str>, classes: &BTreeMap<&str, Vec<f64>>| {
        classes
            .iter()
            .filter(|(n, _)| Some(**n) != skip)
            .map(|(_, c)| cos(v, c))
            .fold(f64::NEG_INFINITY, f64::max)
    };

    let mut table: Vec<(String, Vec<f64>)> = Vec::new();
    for name in ["dog", "person", "car"] {
        table.push((name.into(), classes[name].clone()));
    }
    for (class, words) in SYNONYMS {
        for w in words {
            loop {
                let noise = random_unit(&mut rng);
                let v: Vec<f64> = classes[class].iter().zip(&noise).map(|(c, n)| c + 0.6 * n).collect();
                let v = quantize(&unit(v));
                if cos(&v, &classes[class]) >= 0.7 && max_class_cos(&v, Some(class), &classes) < UNRELATED_MAX {
                    table.push(((*w).into(), v));
                    break;
                }
            }
        }
    }
    for w in UNRELATED {
        loop {
            let v = quantize(&random_unit(&mut rng));
            if max_class_cos(&v, None, &classes) < UNRELATED_MAX {
                table.push((w.into(), v));
                break;
            }
        }
    }

    let mut emb = format!("d {DIM} {SALT}\n");
    for (t, v) in &table {
        writeln!(emb, "{t} {}", row(v)).unwrap();
    }
    std::fs::write(out.join("desk_embeddings.txt"), emb).unwrap();

    let mut v3 = String::new();
    for (i, name) in ["dog", "person", "car"].iter().enumerate() {
        writeln!(v3, "{i} {name} {}", row(&classes[name])).unwrap();
    }
    std::fs::write(out.join("vocab3.txt"), v3).unwrap();

    let mut v80 = String::new();
    for (i, name) in COCO.iter().enumerate() {
        writeln!(v80, "{i} {name} {}", row(&classes[name])).unwrap();
    }
    std::fs::write(out.join("coco80.txt"), v80).unwrap();

    // A sky-to-grass gradient with a brown blob and a grey box.
    let img = Tensor::from_fn(Shape::new(1, 3, 64, 64), |_, c, y, x| {
        let (fy, fx) = (y as f32 / 63.0, x as f32 / 63.0);
        let blob = ((fx - 0.35).powi(2) + (fy - 0.6).powi(2)) < 0.02;
        let boxed = (40..58).contains(&x) && (20..34).contains(&y);
        let px: [f32; 3] = if blob {
            [0.55, 0.35, 0.2]
        } else if boxed {
            [0.5, 0.5, 0.55]
        } else if y < 32 {
            [0.4 + 0.2 * fx, 0.6, 0.9]
        } else {
            [0.2, 0.5 + 0.2 * fx, 0.2]
        };
        px[c] + ((x * 7 + y * 13 + c * 5) % 11) as f32 / 255.0
    })
    .unwrap();
    std::fs::write(out.join("desk.ppm"), encode_ppm(&img).unwrap()).unwrap();
    println!("wrote fixtures to {}", out.display());
}
