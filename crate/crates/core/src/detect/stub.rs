use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sha256_hex, Capability, DetectError, DetectorBackend, ImageInput};
use crate::domain::{AnnotatedImage, Detection};

/// Artificial delay added to each stub call.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum SyntheticLatency {
    #[default]
    None,
    Fixed(Duration),
    /// Uniform in `[min, max]`, drawn from a seeded generator.
    Uniform { min: Duration, max: Duration, seed: u64 },
}

/// Replays recorded detections from JSON sidecars.
///
/// Lookup is by SHA-256 of the image bytes when an image file sits next to
/// the sidecar, then by file stem of the upload name.
#[derive(Debug)]
pub struct StubBackend {
    capability: Capability,
    by_hash: HashMap<String, Vec<Detection>>,
    by_stem: HashMap<String, Vec<Detection>>,
    latency: SyntheticLatency,
    rng: Mutex<ChaCha8Rng>,
}

impl StubBackend {
    pub fn from_sidecars(
        sidecars: impl IntoIterator<Item = (String, Option<String>, Vec<Detection>)>,
        latency: SyntheticLatency,
    ) -> Self {
        let mut by_hash = HashMap::new();
        let mut by_stem = HashMap::new();
        let mut vocabulary = BTreeSet::new();
        for (stem, hash, detections) in sidecars {
            vocabulary.extend(detections.iter().map(|d| d.label.clone()));
            if let Some(hash) = hash {
                by_hash.insert(hash, detections.clone());
            }
            by_stem.insert(stem, detections);
        }
        let seed = match latency {
            SyntheticLatency::Uniform { seed, .. } => seed,
            _ => 0,
        };
        Self {
            capability: Capability {
                name: "stub-fixture".into(),
                vocabulary: vocabulary.into_iter().collect(),
                input_size: None,
            },
            by_hash,
            by_stem,
            latency,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn len(&self) -> usize {
        self.by_stem.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_stem.is_empty()
    }

    fn delay(&self) -> Option<Duration> {
        match &self.latency {
            SyntheticLatency::None => None,
            SyntheticLatency::Fixed(d) => Some(*d),
            SyntheticLatency::Uniform { min, max, .. } => {
                let mut rng = self.rng.lock().unwrap_or_else(|p| p.into_inner());
                let secs = if max > min {
                    rng.random_range(min.as_secs_f64()..=max.as_secs_f64())
                } else {
                    min.as_secs_f64()
                };
                Some(Duration::from_secs_f64(secs))
            }
        }
    }
}

impl DetectorBackend for StubBackend {
    fn capability(&self) -> &Capability {
        &self.capability
    }

    fn detect_raw(&self, input: &ImageInput) -> Result<Vec<Detection>, DetectError> {
        if let Some(d) = self.delay() {
            std::thread::sleep(d);
        }
        let found = self.by_hash.get(&input.sha256).or_else(|| {
            input
                .name_hint
                .as_deref()
                .map(file_stem)
                .and_then(|stem| self.by_stem.get(stem))
        });
        Ok(found.cloned().unwrap_or_default())
    }
}

fn file_stem(name: &str) -> &str {
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    base.rsplit_once('.').map_or(base, |(stem, _)| stem)
}

/// Loads every `*.json` sidecar in `dir`. Each must be an annotated-image
/// record; only its predictions are used. A sibling `<stem>.png`, `.jpg` or
/// `.jpeg` is hashed for byte-exact lookup.
pub fn load_stub_backend(dir: &Path, latency: SyntheticLatency) -> Result<StubBackend, DetectError> {
    let entries = std::fs::read_dir(dir).map_err(|_| DetectError::MissingFile {
        what: "sidecar directory",
        path: dir.display().to_string(),
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();

    let mut sidecars = Vec::with_capacity(paths.len());
    for path in paths {
        let sidecar_err = |message: String| DetectError::Sidecar {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(&path).map_err(|e| sidecar_err(e.to_string()))?;
        let record: AnnotatedImage = serde_json::from_str(&text).map_err(|e| sidecar_err(e.to_string()))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| sidecar_err("non UTF-8 file name".into()))?
            .to_owned();
        let hash = ["png", "jpg", "jpeg"]
            .iter()
            .map(|ext| path.with_extension(ext))
            .find(|p| p.is_file())
            .map(|p| std::fs::read(&p).map(|b| sha256_hex(&b)))
            .transpose()
            .map_err(|e| sidecar_err(e.to_string()))?;
        sidecars.push((stem, hash, record.predictions));
    }
    Ok(StubBackend::from_sidecars(sidecars, latency))
}
