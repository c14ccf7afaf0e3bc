//! Deterministic synthetic detection corpora and fixture verification.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::{parse_corpus, write_corpus};
use crate::domain::{AnnotatedImage, BoundingBox, Detection, GroundTruthBox};
use crate::labelmap::LabelMap;

pub const IMAGE_WIDTH: u32 = 320;
pub const IMAGE_HEIGHT: u32 = 240;

/// Fine evaluation labels and their coarse detector label. `None` marks an
/// evaluation class the detector vocabulary does not cover.
const FINE_LABELS: &[(&str, Option<&str>)] = &[
    ("rose-wine", Some("wine")),
    ("red-wine", Some("wine")),
    ("white-wine", Some("wine")),
    ("waffle", Some("waffle")),
    ("pomegranate", Some("pomegranate")),
    ("apple-green", Some("apple")),
    ("apple-red", Some("apple")),
    ("pear", Some("pear")),
    ("bread-white", Some("bread")),
    ("bread-whole-wheat", Some("bread")),
    ("leaf-salad", Some("salad")),
    ("rice", Some("rice")),
    ("pizza-margherita", Some("pizza")),
    ("banana", Some("banana")),
    ("egg", Some("egg")),
    ("coffee-with-milk", Some("coffee")),
    ("kumquat", None),
    ("tofu", None),
];

/// Pairs the synthetic detector tends to confuse.
const CONFUSIONS: &[(&str, &str)] = &[("apple", "pear"), ("pear", "apple"), ("bread", "waffle")];

/// The label map matching [`FINE_LABELS`]; also shipped as `labelmap.json`.
pub fn fixture_label_map() -> LabelMap {
    let vocab = fixture_vocabulary();
    let entries = FINE_LABELS
        .iter()
        .filter_map(|(fine, coarse)| coarse.map(|c| (fine.to_string(), c.to_string())))
        .filter(|(f, c)| f != c);
    LabelMap::new(vocab, entries).expect("fixture label map is valid")
}

pub fn fixture_vocabulary() -> Vec<String> {
    let mut v: Vec<String> = FINE_LABELS
        .iter()
        .filter_map(|(_, c)| c.map(str::to_owned))
        .collect();
    v.sort();
    v.dedup();
    v
}

pub fn label_map_json(map: &LabelMap) -> String {
    let vocab: Vec<&String> = map.coarse_vocabulary().iter().collect();
    let mapping: serde_json::Map<String, serde_json::Value> = FINE_LABELS
        .iter()
        .filter_map(|(fine, _)| match map.map_label(fine).coarse() {
            Some(c) if c != *fine => Some((fine.to_string(), serde_json::Value::from(c))),
            _ => None,
        })
        .collect();
    let doc = serde_json::json!({ "coarse_vocabulary": vocab, "mapping": mapping });
    let mut s = serde_json::to_string_pretty(&doc).expect("json");
    s.push('\n');
    s
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let p = 10f64.powi(decimals);
    (x * p).round() / p
}

fn jittered(rng: &mut ChaCha8Rng, b: &BoundingBox, frac: f64) -> BoundingBox {
    let w = b.width();
    let h = b.height();
    let mut j = |scale: f64| rng.random_range(-frac..frac) * scale;
    let x0 = (b.x_min() + j(w)).max(0.0);
    let y0 = (b.y_min() + j(h)).max(0.0);
    let x1 = (b.x_max() + j(w)).min(IMAGE_WIDTH as f64);
    let y1 = (b.y_max() + j(h)).min(IMAGE_HEIGHT as f64);
    let (x0, y0, x1, y1) = (round_to(x0, 1), round_to(y0, 1), round_to(x1, 1), round_to(y1, 1));
    BoundingBox::new(x0, y0, x1.max(x0 + 1.0), y1.max(y0 + 1.0)).expect("jittered box is valid")
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = round_to(rng.random_range(30.0..110.0), 1);
    let h = round_to(rng.random_range(30.0..100.0), 1);
    let x = round_to(rng.random_range(0.0..(IMAGE_WIDTH as f64 - w)), 1);
    let y = round_to(rng.random_range(0.0..(IMAGE_HEIGHT as f64 - h)), 1);
    BoundingBox::new(x, y, round_to(x + w, 1), round_to(y + h, 1)).expect("random box is valid")
}

fn latency(rng: &mut ChaCha8Rng) -> f64 {
    // log-normal around 1.5 s, clamped to the 0.5..3.8 s band
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    round_to((1.5f64.ln() + 0.45 * z).exp().clamp(0.5, 3.8), 2)
}

fn confidence(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    round_to(rng.random_range(lo..hi), 3)
}

/// One synthetic image: ground truth in fine labels, predictions in coarse
/// detector labels.
fn gen_image(rng: &mut ChaCha8Rng, index: usize, vocab: &[String]) -> AnnotatedImage {
    let n_gt = rng.random_range(1..=4);
    let mut ground_truth = Vec::with_capacity(n_gt);
    let mut predictions = Vec::new();
    for _ in 0..n_gt {
        let (fine, coarse) = FINE_LABELS[rng.random_range(0..FINE_LABELS.len())];
        let bbox = random_box(rng);
        ground_truth.push(GroundTruthBox::new(fine, bbox).expect("fixture label"));

        let roll: f64 = rng.random();
        let predicted = match coarse {
            Some(c) if roll < 0.75 => Some((c.to_owned(), confidence(rng, 0.45, 0.99), 0.12)),
            Some(c) if roll < 0.87 => {
                let other = CONFUSIONS
                    .iter()
                    .find(|(from, _)| *from == c)
                    .map(|(_, to)| to.to_string())
                    .unwrap_or_else(|| vocab[rng.random_range(0..vocab.len())].clone());
                Some((other, confidence(rng, 0.3, 0.8), 0.12))
            }
            Some(c) if roll < 0.93 => Some((c.to_owned(), confidence(rng, 0.3, 0.9), 0.45)),
            Some(_) => None,
            None if roll < 0.5 => {
                Some((vocab[rng.random_range(0..vocab.len())].clone(), confidence(rng, 0.2, 0.7), 0.1))
            }
            None => None,
        };
        if let Some((label, conf, jitter)) = predicted {
            let b = jittered(rng, &bbox, jitter);
            predictions.push(Detection::new(label.clone(), b, conf).expect("fixture detection"));
            if rng.random::<f64>() < 0.1 {
                let b = jittered(rng, &bbox, 0.2);
                let conf = round_to(conf * 0.6, 3);
                predictions.push(Detection::new(label, b, conf).expect("fixture detection"));
            }
        }
    }
    if rng.random::<f64>() < 0.35 {
        let label = vocab[rng.random_range(0..vocab.len())].clone();
        let conf = confidence(rng, 0.05, 0.6);
        predictions.push(Detection::new(label, random_box(rng), conf).expect("fixture detection"));
    }
    predictions.sort_by(Detection::rank_cmp);
    AnnotatedImage {
        image_id: format!("img_{:04}", index + 1),
        ground_truth,
        predictions,
        detect_seconds: Some(latency(rng)),
    }
}

/// Generates `n` images from `seed`. The same `(n, seed)` always yields the
/// same corpus on every platform.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<AnnotatedImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = fixture_vocabulary();
    (0..n).map(|i| gen_image(&mut rng, i, &vocab)).collect()
}

fn label_color(label: &str) -> Rgb<u8> {
    let h = Sha256::digest(label.as_bytes());
    Rgb([h[0] | 0x40, h[1] | 0x40, h[2] | 0x40])
}

/// Flat-colored PNG with one filled rectangle per ground-truth box. The image
/// id is stamped into the first row so every image hashes differently.
pub fn render_scene_png(image: &AnnotatedImage) -> Vec<u8> {
    let mut img = RgbImage::from_pixel(IMAGE_WIDTH, IMAGE_HEIGHT, Rgb([236, 232, 224]));
    for gt in &image.ground_truth {
        let color = label_color(&gt.label);
        let b = &gt.bbox;
        let (x0, y0) = (b.x_min() as u32, b.y_min() as u32);
        let x1 = (b.x_max().ceil() as u32).min(IMAGE_WIDTH);
        let y1 = (b.y_max().ceil() as u32).min(IMAGE_HEIGHT);
        for y in y0..y1 {
            for x in x0..x1 {
                img.put_pixel(x, y, color);
            }
        }
    }
    for (i, byte) in image.image_id.bytes().enumerate().take(IMAGE_WIDTH as usize) {
        img.put_pixel(i as u32, 0, Rgb([byte, byte, byte]));
    }
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("in-memory png encode");
    buf.into_inner()
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FixtureError + '_ {
    move |source| FixtureError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Writes a generated fixture tree:
///
/// ```text
/// out/corpus.jsonl        evaluation corpus (fine GT labels, coarse predictions)
/// out/labelmap.json       fine -> coarse mapping
/// out/detector/<id>.png   synthetic image
/// out/detector/<id>.json  stub-detector sidecar (predictions only)
/// ```
pub fn write_fixture_tree(out: &Path, n: usize, seed: u64) -> Result<Vec<AnnotatedImage>, FixtureError> {
    let corpus = generate_corpus(n, seed);
    let detector_dir = out.join("detector");
    std::fs::create_dir_all(&detector_dir).map_err(io_err(&detector_dir))?;

    let corpus_path = out.join("corpus.jsonl");
    let mut buf = Vec::new();
    write_corpus(&mut buf, &corpus).map_err(io_err(&corpus_path))?;
    std::fs::write(&corpus_path, buf).map_err(io_err(&corpus_path))?;

    let map_path = out.join("labelmap.json");
    std::fs::write(&map_path, label_map_json(&fixture_label_map())).map_err(io_err(&map_path))?;

    for image in &corpus {
        let png = detector_dir.join(format!("{}.png", image.image_id));
        std::fs::write(&png, render_scene_png(image)).map_err(io_err(&png))?;
        let sidecar = AnnotatedImage {
            ground_truth: vec![],
            ..image.clone()
        };
        let path = detector_dir.join(format!("{}.json", image.image_id));
        let mut text = serde_json::to_string_pretty(&sidecar).expect("json");
        text.push('\n');
        std::fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(corpus)
}

/// Outcome of [`verify_tree`]: every file checked, and every violation found.
#[derive(Debug, Default)]
pub struct VerifyReport {
    pub checked: Vec<PathBuf>,
    pub violations: Vec<FixtureError>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn invalid(path: &Path, message: impl Into<String>) -> FixtureError {
    FixtureError::Invalid {
        path: path.to_owned(),
        message: message.into(),
    }
}

fn verify_file(path: &Path) -> Result<(), FixtureError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    match ext.as_str() {
        "jsonl" if name.starts_with("recipes") => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let parsed = crate::recommend::parse_recipe_documents(&text);
            if parsed.skipped > 0 {
                return Err(invalid(path, format!("{} malformed recipe document(s)", parsed.skipped)));
            }
            crate::recommend::check_unique_ids(&parsed.recipes).map_err(|e| invalid(path, e.to_string()))
        }
        "jsonl" => {
            let file = std::fs::File::open(path).map_err(io_err(path))?;
            parse_corpus(std::io::BufReader::new(file))
                .map(|_| ())
                .map_err(|e| invalid(path, e.to_string()))
        }
        "json" => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| invalid(path, e.to_string()))?;
            if value.get("coarse_vocabulary").is_some() {
                LabelMap::from_json(&text)
                    .map(|_| ())
                    .map_err(|e| invalid(path, e.to_string()))
            } else if value.get("image_id").is_some() {
                serde_json::from_value::<AnnotatedImage>(value)
                    .map(|_| ())
                    .map_err(|e| invalid(path, e.to_string()))
            } else {
                Ok(())
            }
        }
        "csv" => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            crate::nutrition::parse_nutrient_table(&text)
                .map(|_| ())
                .map_err(|e| invalid(path, e.to_string()))
        }
        "png" | "jpg" | "jpeg" => {
            let bytes = std::fs::read(path).map_err(io_err(path))?;
            image::load_from_memory(&bytes)
                .map(|_| ())
                .map_err(|e| invalid(path, format!("undecodable image: {e}")))
        }
        _ => Ok(()),
    }
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), FixtureError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Checks the invariants of every recognised fixture file under `dir`:
/// corpora and sidecars, label maps, nutrient tables, recipe corpora and
/// images.
pub fn verify_tree(dir: &Path) -> Result<VerifyReport, FixtureError> {
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    let mut report = VerifyReport::default();
    for f in files {
        if let Err(e) = verify_file(&f) {
            report.violations.push(e);
        }
        report.checked.push(f);
    }
    Ok(report)
}
