//! Acceptance suite: one line per criterion, `PASS` or `FAIL`, with the
//! measured runtime against its budget.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use platescope_core::corpus::read_corpus;
use platescope_core::eval::{
    average_precision, evaluate_corpus, evaluate_projected, f1_score, latency_stats, match_image, report_to_json,
    EvalConfig,
};
use platescope_core::geometry::{iou, nms};
use platescope_core::labelmap::{project_corpus, LabelMap, UnmappedPolicy};
use platescope_core::nutrition::{aggregate_profiles, FixtureNutrientSource, NutrientQuery, NutrientSource};
use platescope_core::recommend::FixtureRecipeSource;
use platescope_core::{AnnotatedImage, BoundingBox, Detection, GroundTruthBox, NutrientProfile};
use platescope_server::{router, AppState, Secrets, ServiceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            name: "F1 from P=0.785, R=0.728 is 0.7554 +/- 0.0005",
            budget: Some(Duration::from_millis(1)),
            check: f1_consistency,
        },
        Criterion {
            name: "greedy matcher equals naive reference on 1000 seeded scenes",
            budget: Some(Duration::from_secs(10)),
            check: matcher_oracle,
        },
        Criterion {
            name: "AP golden case 0.833333 +/- 1e-6, perfect 1.0, empty 0.0",
            budget: None,
            check: ap_golden,
        },
        Criterion {
            name: "IoU/NMS properties over 10000 random pairs and sets",
            budget: Some(Duration::from_secs(10)),
            check: iou_nms_properties,
        },
        Criterion {
            name: "pre-projected corpus report is byte-identical to in-pipeline projection",
            budget: None,
            check: label_mapping_invariant,
        },
        Criterion {
            name: "cli eval reproduces the golden report byte-for-byte",
            budget: Some(Duration::from_secs(5)),
            check: cli_golden,
        },
        Criterion {
            name: "latency median of [0.5, 1.5, 3.8] is 1.5, even count averages the middle",
            budget: None,
            check: latency,
        },
        Criterion {
            name: "POST /api/meals round trip for meal_001",
            budget: Some(Duration::from_secs(2)),
            check: meal_round_trip,
        },
        Criterion {
            name: "profile goals 2008.5 +/- 0.1 and top-k equals brute force on 100 corpora",
            budget: Some(Duration::from_secs(10)),
            check: goals_and_recommendations,
        },
        Criterion {
            name: "nutrient aggregation: commutative, associative, zero identity, linear",
            budget: None,
            check: aggregation_properties,
        },
    ];

    // Pay one-time process costs (unwind setup, stdout, first page faults) before any timed region.
    let _ = catch_unwind(|| Instant::now().elapsed());
    println!("running {} acceptance criteria", criteria.len());

    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let over = c.budget.is_some_and(|b| elapsed > b);
        let timing = match c.budget {
            Some(b) => format!("{elapsed:.2?} of {b:?}"),
            None => format!("{elapsed:.2?}"),
        };
        let (status, detail) = match (&outcome, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; over budget")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} [{:>2}] {} ({timing}): {detail}", i + 1, c.name);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn f1_consistency() -> Outcome {
    let f1 = f1_score(0.785, 0.728);
    ensure!((f1 - 0.7554).abs() <= 0.0005, "F1 = {f1}");
    ensure!((f1 - 0.755).abs() < 0.0005, "F1 = {f1} does not round to the reported 75.5%");
    Ok(format!("F1 = {f1:.6}"))
}

type IBox = [i64; 4];

struct Scene {
    gt: Vec<(&'static str, IBox)>,
    preds: Vec<(&'static str, IBox, f64)>,
}

fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
    const LABELS: [&str; 2] = ["rice", "wine"];
    const CONF: [f64; 4] = [0.3, 0.5, 0.5, 0.9];
    let ibox = |rng: &mut ChaCha8Rng| {
        let (x, y) = (rng.random_range(0..12), rng.random_range(0..12));
        [x, y, x + rng.random_range(1..8), y + rng.random_range(1..8)]
    };
    let gt: Vec<(&str, IBox)> = (0..rng.random_range(0..=6))
        .map(|_| (LABELS[rng.random_range(0..2)], ibox(rng)))
        .collect();
    // most predictions are jittered copies of a ground-truth box
    let preds = (0..rng.random_range(0..=6))
        .map(|_| {
            let conf = CONF[rng.random_range(0..4)];
            if gt.is_empty() || rng.random_bool(0.3) {
                return (LABELS[rng.random_range(0..2)], ibox(rng), conf);
            }
            let (label, b) = gt[rng.random_range(0..gt.len())];
            let mut j = || rng.random_range(-1..=1);
            let (x0, y0) = ((b[0] + j()).max(0), (b[1] + j()).max(0));
            (label, [x0, y0, (b[2] + j()).max(x0 + 1), (b[3] + j()).max(y0 + 1)], conf)
        })
        .collect();
    Scene { gt, preds }
}

/// Selection-based greedy matcher over exact rational IoU. Returns (tp, fp, fn).
fn naive_counts(s: &Scene, num: i64, den: i64) -> (usize, usize, usize) {
    let before = |a: usize, b: usize| {
        let (la, ba, ca) = s.preds[a];
        let (lb, bb, cb) = s.preds[b];
        (-ca, la, ba, a).partial_cmp(&(-cb, lb, bb, b)) == Some(std::cmp::Ordering::Less)
    };
    let mut done = vec![false; s.preds.len()];
    let mut taken = vec![false; s.gt.len()];
    let mut tp = 0;
    for _ in 0..s.preds.len() {
        let mut p = None;
        for (i, d) in done.iter().enumerate() {
            if !d && p.is_none_or(|q| before(i, q)) {
                p = Some(i);
            }
        }
        let p = p.unwrap();
        done[p] = true;
        let (label, pb, _) = s.preds[p];
        let mut best: Option<(usize, i64, i64)> = None;
        for (g, (gl, gb)) in s.gt.iter().enumerate() {
            if taken[g] || *gl != label {
                continue;
            }
            let w = (pb[2].min(gb[2]) - pb[0].max(gb[0])).max(0);
            let h = (pb[3].min(gb[3]) - pb[1].max(gb[1])).max(0);
            let inter = w * h;
            let union = (pb[2] - pb[0]) * (pb[3] - pb[1]) + (gb[2] - gb[0]) * (gb[3] - gb[1]) - inter;
            if inter * den < num * union {
                continue;
            }
            if best.is_none_or(|(_, bi, bu)| inter * bu > bi * union) {
                best = Some((g, inter, union));
            }
        }
        if let Some((g, _, _)) = best {
            taken[g] = true;
            tp += 1;
        }
    }
    (tp, s.preds.len() - tp, s.gt.len() - tp)
}

fn to_image(s: &Scene) -> AnnotatedImage {
    let b = |v: IBox| BoundingBox::new(v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64).unwrap();
    AnnotatedImage {
        image_id: "scene".into(),
        ground_truth: s.gt.iter().map(|(l, v)| GroundTruthBox::new(*l, b(*v)).unwrap()).collect(),
        predictions: s.preds.iter().map(|(l, v, c)| Detection::new(*l, b(*v), *c).unwrap()).collect(),
        detect_seconds: None,
    }
}

fn matcher_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut totals = (0, 0, 0);
    for n in 0..1000 {
        let scene = random_scene(&mut rng);
        let m = match_image(&to_image(&scene), 0.5).map_err(|e| e.to_string())?;
        let got = (m.matched_pairs.len(), m.unmatched_predictions.len(), m.unmatched_ground_truth.len());
        let want = naive_counts(&scene, 1, 2);
        ensure!(got == want, "scene {n}: matcher {got:?}, reference {want:?}");
        totals = (totals.0 + got.0, totals.1 + got.1, totals.2 + got.2);
    }
    Ok(format!("1000 scenes agree; tp={} fp={} fn={}", totals.0, totals.1, totals.2))
}

fn ap_golden() -> Outcome {
    let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2).ok_or("AP undefined")?;
    ensure!((ap - 0.833333).abs() <= 1e-6, "AP = {ap}");
    let perfect = average_precision(&[(0.9, true), (0.6, true), (0.3, true)], 3);
    ensure!(perfect == Some(1.0), "perfect ranking AP = {perfect:?}");
    let empty = average_precision(&[], 2);
    ensure!(empty == Some(0.0), "empty AP = {empty:?}");
    Ok(format!("AP = {ap:.7}"))
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let x = rng.random_range(0.0..100.0);
    let y = rng.random_range(0.0..100.0);
    BoundingBox::new(x, y, x + rng.random_range(0.5..60.0), y + rng.random_range(0.5..60.0)).unwrap()
}

fn iou_nms_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1007);
    for n in 0..10_000 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let (ab, ba) = (iou(&a, &b), iou(&b, &a));
        ensure!(ab == ba, "pair {n}: asymmetric {ab} vs {ba}");
        ensure!((0.0..=1.0).contains(&ab), "pair {n}: iou {ab} out of range");
        ensure!(iou(&a, &a) == 1.0, "pair {n}: self iou {}", iou(&a, &a));
    }
    const LABELS: [&str; 3] = ["bread", "rice", "wine"];
    for n in 0..10_000 {
        let dets: Vec<Detection> = (0..rng.random_range(0..10))
            .map(|_| {
                let conf = (rng.random_range(1..=20) as f64) / 20.0;
                Detection::new(LABELS[rng.random_range(0..3)], random_box(&mut rng), conf).unwrap()
            })
            .collect();
        let t = rng.random_range(0.0..=1.0);
        let kept = nms(&dets, t);
        ensure!(nms(&kept, t) == kept, "set {n}: not idempotent");
        for k in &kept {
            ensure!(dets.contains(k), "set {n}: output not a subset");
        }
        ensure!(
            kept.windows(2).all(|w| w[0].confidence >= w[1].confidence),
            "set {n}: output not in descending confidence"
        );
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                ensure!(a.label != b.label || iou(&a.bbox, &b.bbox) <= t, "set {n}: kept overlapping {}", a.label);
            }
        }
    }
    Ok("0 violations".into())
}

fn shipped_corpus() -> (Vec<AnnotatedImage>, LabelMap) {
    let dir = fixtures().join("corpus");
    (
        read_corpus(dir.join("corpus.jsonl")).unwrap(),
        LabelMap::load(dir.join("labelmap.json")).unwrap(),
    )
}

fn label_mapping_invariant() -> Outcome {
    let (corpus, map) = shipped_corpus();
    let config = EvalConfig::default();
    let inside = report_to_json(&evaluate_corpus(&corpus, &map, config).map_err(|e| e.to_string())?);
    let projected = project_corpus(&map, &corpus, UnmappedPolicy::Drop).map_err(|e| e.to_string())?;
    let outside = report_to_json(&evaluate_projected(&projected, config).map_err(|e| e.to_string())?);
    let twice = report_to_json(&evaluate_corpus(&projected, &map, config).map_err(|e| e.to_string())?);
    ensure!(inside == outside, "pre-projected report differs");
    ensure!(inside == twice, "re-projecting a projected corpus changes the report");
    Ok(format!("{} images, {} report bytes", corpus.len(), inside.len()))
}

fn cli_golden() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = dir.path().join("report.json");
    let corpus = fixtures().join("corpus");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_platescope"))
        .arg("eval")
        .arg(corpus.join("corpus.jsonl"))
        .arg(corpus.join("labelmap.json"))
        .arg("--report")
        .arg(&report)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "exit {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    let got = std::fs::read(&report).map_err(|e| e.to_string())?;
    let golden = std::fs::read(fixtures().join("golden/eval_report.json")).map_err(|e| e.to_string())?;
    ensure!(got == golden, "report differs from the golden file");
    Ok(String::from_utf8_lossy(&out.stdout).trim().to_owned())
}

fn latency() -> Outcome {
    let s = latency_stats(&[0.5, 1.5, 3.8]).map_err(|e| e.to_string())?;
    ensure!(s.median == 1.5 && s.min == 0.5 && s.max == 3.8, "{s:?}");
    let even = latency_stats(&[2.0, 1.0]).map_err(|e| e.to_string())?;
    ensure!(even.median == 1.5, "even-count median {}", even.median);
    let single = latency_stats(&[2.0]).map_err(|e| e.to_string())?;
    ensure!(single.min == 2.0 && single.median == 2.0 && single.max == 2.0 && single.mean == 2.0, "{single:?}");
    Ok(format!("min {} median {} max {}", s.min, s.median, s.max))
}

fn nutrient_table() -> std::collections::BTreeMap<String, [f64; 5]> {
    let text = std::fs::read_to_string(fixtures().join("nutrition.csv")).unwrap();
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            let v: Vec<f64> = cells[1..].iter().map(|c| c.parse().unwrap()).collect();
            (cells[0].to_owned(), [v[0], v[1], v[2], v[3], v[4]])
        })
        .collect()
}

fn profile_array(v: &Value) -> [f64; 5] {
    ["calories", "fat_g", "protein_g", "carbs_g", "fiber_g"].map(|k| v[k].as_f64().unwrap_or(f64::NAN))
}

struct App {
    _dir: std::sync::Arc<tempfile::TempDir>,
    state: AppState,
    router: axum::Router,
}

impl App {
    fn new() -> App {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ServiceConfig::default();
        config.detector.fixture_dir = Some(fixtures().join("meals"));
        config.nutrition.table = Some(fixtures().join("nutrition.csv"));
        config.recipes.corpus = Some(fixtures().join("recipes.jsonl"));
        config.store.path = Some(dir.path().join("food_log.csv"));
        let noon = Utc.with_ymd_and_hms(2026, 3, 1, 12, 0, 0).unwrap();
        let state = AppState::from_config(&config, &Secrets::default()).unwrap().with_clock(move || noon);
        App {
            router: router(state.clone(), &[], None),
            state,
            _dir: std::sync::Arc::new(dir),
        }
    }

    /// Same service and store, different recipe corpus.
    fn with_recipes(&self, jsonl: &str) -> App {
        let mut state = self.state.clone();
        state.recipes = std::sync::Arc::new(FixtureRecipeSource::from_jsonl(jsonl).unwrap());
        App {
            router: router(state.clone(), &[], None),
            state,
            _dir: self._dir.clone(),
        }
    }

    async fn call(&self, req: Request<Body>) -> (StatusCode, Value) {
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Request::get(uri).body(Body::empty()).unwrap()).await
    }

    async fn put_json(&self, uri: &str, body: &Value) -> (StatusCode, Value) {
        let req = Request::put(uri)
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        self.call(req).await
    }

    async fn upload(&self, file_name: &str, png: &[u8]) -> (StatusCode, Value) {
        const BOUNDARY: &str = "acceptance-boundary";
        let mut body = format!(
            "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"{file_name}\"\r\n\
             Content-Type: image/png\r\n\r\n"
        )
        .into_bytes();
        body.extend_from_slice(png);
        body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
        let req = Request::post("/api/meals")
            .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
            .body(Body::from(body))
            .unwrap();
        self.call(req).await
    }
}

fn block_on<F: std::future::Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap().block_on(f)
}

fn meal_round_trip() -> Outcome {
    block_on(async {
        let app = App::new();
        let (_, before) = app.get("/api/log?day=2026-03-01").await;
        ensure!(before["entries"].as_array().is_some_and(Vec::is_empty), "log not empty at start: {before}");

        let png = std::fs::read(fixtures().join("meals/meal_001.png")).unwrap();
        let (status, meal) = app.upload("meal_001.png", &png).await;
        ensure!(status == StatusCode::OK, "{status}: {meal}");
        let sidecar: Value =
            serde_json::from_slice(&std::fs::read(fixtures().join("meals/meal_001.json")).unwrap()).unwrap();
        ensure!(meal["detections"] == sidecar["predictions"], "detections differ from the sidecar");

        let table = nutrient_table();
        let labels: Vec<&str> = sidecar["predictions"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p["label"].as_str().unwrap())
            .collect();
        let mut expected = [0.0; 5];
        for label in &labels {
            for (e, v) in expected.iter_mut().zip(table[*label]) {
                *e += v;
            }
        }
        ensure!(profile_array(&meal["total"]) == expected, "total {} != {expected:?}", meal["total"]);

        let (_, log) = app.get("/api/log?day=2026-03-01").await;
        let entries = log["entries"].as_array().ok_or("no entries")?;
        let mut logged: Vec<&str> = entries.iter().map(|e| e["label"].as_str().unwrap()).collect();
        let mut want = labels.clone();
        logged.sort();
        want.sort();
        ensure!(logged == want, "log gained {logged:?}, expected {want:?}");
        ensure!(log["daily_total"] == meal["total"], "daily_total {} != meal total", log["daily_total"]);
        Ok(format!("{} entries, {} kcal", entries.len(), expected[0]))
    })
}

const TAGS: [(&str, &str); 4] = [
    ("Vegetarian", "vegetarian"),
    ("Vegan", "vegan"),
    ("Gluten-Free", "gluten-free"),
    ("Dairy-Free", "dairy-free"),
];

struct RandomRecipe {
    id: String,
    servings: f64,
    totals: [f64; 5],
    tags: BTreeSet<&'static str>,
}

impl RandomRecipe {
    fn per_serving(&self) -> [f64; 5] {
        self.totals.map(|x| x / self.servings)
    }

    fn document(&self) -> String {
        let codes = ["ENERC_KCAL", "FAT", "PROCNT", "CHOCDF", "FIBTG"];
        let nutrients: serde_json::Map<String, Value> = codes
            .iter()
            .zip(self.totals)
            .map(|(c, q)| (c.to_string(), json!({"label": c, "quantity": q, "unit": "g"})))
            .collect();
        let labels: Vec<&str> = TAGS.iter().filter(|(_, n)| self.tags.contains(n)).map(|(raw, _)| *raw).collect();
        json!({
            "uri": format!("http://recipes.invalid/ontology#recipe_{}", self.id),
            "label": format!("Recipe {}", self.id),
            "yield": self.servings,
            "totalNutrients": nutrients,
            "healthLabels": labels,
        })
        .to_string()
    }
}

fn random_recipes(rng: &mut ChaCha8Rng) -> Vec<RandomRecipe> {
    let n = rng.random_range(1..=60);
    let mut ids: Vec<u32> = (0..1000).collect();
    (0..n)
        .map(|_| {
            let id = ids.swap_remove(rng.random_range(0..ids.len()));
            let scale = [3000.0, 150.0, 150.0, 400.0, 60.0];
            RandomRecipe {
                id: format!("{id:04}"),
                servings: rng.random_range(1..=8) as f64,
                totals: scale.map(|s: f64| (rng.random_range(0.0..s) * 10.0).round() / 10.0),
                tags: TAGS.iter().filter(|_| rng.random_bool(0.5)).map(|(_, n)| *n).collect(),
            }
        })
        .collect()
}

fn brute_force(
    recipes: &[RandomRecipe],
    targets: [f64; 5],
    meals: u32,
    required: &BTreeSet<&str>,
    excluded: &BTreeSet<&str>,
    k: usize,
) -> Vec<(String, f64)> {
    let per_meal = targets.map(|t| t / meals as f64);
    let mut all: Vec<(String, f64)> = recipes
        .iter()
        .filter(|r| required.is_subset(&r.tags) && r.tags.is_disjoint(excluded))
        .map(|r| {
            let v = r.per_serving();
            let score = (0..5)
                .map(|f| (v[f] - per_meal[f]).abs() / if per_meal[f] > 1.0 { per_meal[f] } else { 1.0 })
                .sum();
            (r.id.clone(), score)
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn goals_and_recommendations() -> Outcome {
    block_on(async {
        let app = App::new();
        let profile = json!({"age": 25, "sex": "male", "weight_kg": 70, "height_cm": 175, "activity_factor": 1.2});
        let (status, goals) = app.put_json("/api/goals", &json!({ "profile": profile })).await;
        ensure!(status == StatusCode::OK, "{status}: {goals}");
        let calories = goals["targets"]["calories"].as_f64().ok_or("no calories")?;
        let bmr = 10.0 * 70.0 + 6.25 * 175.0 - 5.0 * 25.0 + 5.0;
        ensure!((calories - 2008.5).abs() <= 0.1, "calories {calories}");
        ensure!((calories - bmr * 1.2).abs() <= 0.1, "calories {calories} vs {}", bmr * 1.2);

        let base = app;
        let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
        let mut returned = 0;
        for n in 0..100 {
            let recipes = random_recipes(&mut rng);
            let text: Vec<String> = recipes.iter().map(RandomRecipe::document).collect();
            let app = base.with_recipes(&(text.join("\n") + "\n"));

            let targets = [3000.0, 120.0, 150.0, 350.0, 40.0].map(|s: f64| rng.random_range(1..=s as u32) as f64);
            let body = json!({"targets": {
                "calories": targets[0], "fat_g": targets[1], "protein_g": targets[2],
                "carbs_g": targets[3], "fiber_g": targets[4],
            }});
            let (status, _) = app.put_json("/api/goals", &body).await;
            ensure!(status == StatusCode::OK, "corpus {n}: goals rejected");

            let mut required = BTreeSet::new();
            let mut excluded = BTreeSet::new();
            for (_, tag) in TAGS {
                match rng.random_range(0..4) {
                    0 => {
                        required.insert(tag);
                    }
                    1 => {
                        excluded.insert(tag);
                    }
                    _ => {}
                }
            }
            let meals = rng.random_range(1..=4u32);
            let k = rng.random_range(1..=10usize);
            let mut uri = format!("/api/recommendations?meals_remaining={meals}&k={k}");
            for t in &required {
                uri.push_str(&format!("&required={t}"));
            }
            if !excluded.is_empty() {
                uri.push_str(&format!("&excluded={}", excluded.iter().copied().collect::<Vec<_>>().join(",")));
            }
            let (status, resp) = app.get(&uri).await;
            ensure!(status == StatusCode::OK, "corpus {n}: {status} {resp}");

            let recs = resp["recommendations"].as_array().ok_or("no recommendations")?;
            for r in recs {
                let tags: BTreeSet<&str> = r["recipe"]["diet_tags"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|t| t.as_str().unwrap())
                    .collect();
                ensure!(
                    required.is_subset(&tags) && tags.is_disjoint(&excluded),
                    "corpus {n}: {} violates tag constraints",
                    r["recipe"]["recipe_id"]
                );
            }
            let got: Vec<&str> = recs.iter().map(|r| r["recipe"]["recipe_id"].as_str().unwrap()).collect();
            let want = brute_force(&recipes, targets, meals, &required, &excluded, k);
            let want_ids: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
            ensure!(got == want_ids, "corpus {n}: got {got:?}, brute force {want_ids:?}");
            for (r, (_, score)) in recs.iter().zip(&want) {
                let s = r["score"].as_f64().unwrap();
                ensure!((s - score).abs() <= 1e-9 * score.max(1.0), "corpus {n}: score {s} vs {score}");
            }
            returned += recs.len();
        }
        Ok(format!("calories {calories}; 100 corpora, {returned} recommendations checked"))
    })
}

fn random_profile(rng: &mut ChaCha8Rng) -> NutrientProfile {
    NutrientProfile::from_array([3000.0, 200.0, 200.0, 400.0, 60.0].map(|s: f64| rng.random_range(0.0..s))).unwrap()
}

fn close(a: &NutrientProfile, b: &NutrientProfile) -> bool {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0))
}

fn aggregation_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa66);
    for n in 0..10_000 {
        let (a, b, c) = (random_profile(&mut rng), random_profile(&mut rng), random_profile(&mut rng));
        ensure!(close(&aggregate_profiles([&a, &b]), &aggregate_profiles([&b, &a])), "case {n}: not commutative");
        let left = aggregate_profiles([&aggregate_profiles([&a, &b]), &c]);
        let right = aggregate_profiles([&a, &aggregate_profiles([&b, &c])]);
        ensure!(close(&left, &right), "case {n}: not associative");
        ensure!(aggregate_profiles([&a, &NutrientProfile::ZERO]) == a, "case {n}: zero is not a right identity");
        ensure!(aggregate_profiles([&NutrientProfile::ZERO, &a]) == a, "case {n}: zero is not a left identity");
    }
    ensure!(aggregate_profiles(std::iter::empty()) == NutrientProfile::ZERO, "empty sum is not zero");

    let table = nutrient_table();
    let source = FixtureNutrientSource::from_csv(&std::fs::read_to_string(fixtures().join("nutrition.csv")).unwrap())
        .map_err(|e| e.to_string())?;
    block_on(async {
        for (label, row) in &table {
            for q in 1..=12u32 {
                let got = source
                    .query(&NutrientQuery::new(label.as_str(), q).unwrap())
                    .await
                    .map_err(|e| e.to_string())?;
                let want = row.map(|x| x * q as f64);
                ensure!(got.to_array() == want, "{label} x{q}: {:?} != {want:?}", got.to_array());
            }
        }
        Ok(())
    })?;
    Ok(format!("10000 triples, {} fixture foods x 12 quantities", table.len()))
}
