//! Many-to-one projection of fine evaluation classes onto the coarse
//! detector vocabulary (e.g. `rose-wine` and `red-wine` both become `wine`).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use crate::domain::AnnotatedImage;

#[derive(Debug, thiserror::Error)]
pub enum LabelMapError {
    #[error("label map could not be parsed: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("reading label map {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("mapping `{fine}` -> `{coarse}` targets a label outside coarse_vocabulary")]
    InvalidTarget { fine: String, coarse: String },
    #[error("chained mapping: coarse label `{label}` is also mapped to `{target}`")]
    Chain { label: String, target: String },
    #[error("empty label in label map")]
    EmptyLabel,
    #[error("image `{image_id}`: label `{label}` has no coarse mapping")]
    Unmapped { image_id: String, label: String },
}

/// Result of looking a label up in a [`LabelMap`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mapped<'a> {
    Coarse(&'a str),
    Unmapped,
}

impl<'a> Mapped<'a> {
    pub fn coarse(&self) -> Option<&'a str> {
        match self {
            Mapped::Coarse(s) => Some(s),
            Mapped::Unmapped => None,
        }
    }
}

/// What [`project_corpus`] does with a label that has no coarse mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnmappedPolicy {
    #[default]
    Drop,
    Error,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelMapDocument {
    coarse_vocabulary: Vec<String>,
    #[serde(default)]
    mapping: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    entries: BTreeMap<String, String>,
    coarse_vocabulary: BTreeSet<String>,
}

impl LabelMap {
    pub fn new(
        coarse_vocabulary: impl IntoIterator<Item = String>,
        entries: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, LabelMapError> {
        let coarse_vocabulary: BTreeSet<String> = coarse_vocabulary.into_iter().collect();
        let entries: BTreeMap<String, String> = entries.into_iter().collect();
        if coarse_vocabulary.iter().any(|l| l.trim().is_empty()) {
            return Err(LabelMapError::EmptyLabel);
        }
        for (fine, coarse) in &entries {
            if fine.trim().is_empty() {
                return Err(LabelMapError::EmptyLabel);
            }
            if !coarse_vocabulary.contains(coarse) {
                return Err(LabelMapError::InvalidTarget {
                    fine: fine.clone(),
                    coarse: coarse.clone(),
                });
            }
            if coarse_vocabulary.contains(fine) && fine != coarse {
                return Err(LabelMapError::Chain {
                    label: fine.clone(),
                    target: coarse.clone(),
                });
            }
        }
        Ok(Self {
            entries,
            coarse_vocabulary,
        })
    }

    /// Identity map over a vocabulary; every label in it maps to itself.
    pub fn identity(coarse_vocabulary: impl IntoIterator<Item = String>) -> Self {
        Self::new(coarse_vocabulary, std::iter::empty()).expect("identity map is always valid")
    }

    pub fn from_json(text: &str) -> Result<Self, LabelMapError> {
        let doc: LabelMapDocument = serde_json::from_str(text)?;
        Self::new(doc.coarse_vocabulary, doc.mapping)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LabelMapError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LabelMapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn coarse_vocabulary(&self) -> &BTreeSet<String> {
        &self.coarse_vocabulary
    }

    pub fn map_label<'a>(&'a self, label: &'a str) -> Mapped<'a> {
        if let Some(coarse) = self.entries.get(label) {
            Mapped::Coarse(coarse)
        } else if let Some(coarse) = self.coarse_vocabulary.get(label) {
            Mapped::Coarse(coarse)
        } else {
            Mapped::Unmapped
        }
    }
}

/// Replaces every label in the corpus with its coarse label. Boxes, image ids
/// and image count are untouched; unmapped labels are dropped or rejected
/// according to `policy`.
pub fn project_corpus(
    map: &LabelMap,
    corpus: &[AnnotatedImage],
    policy: UnmappedPolicy,
) -> Result<Vec<AnnotatedImage>, LabelMapError> {
    corpus.iter().map(|img| project_image(map, img, policy)).collect()
}

pub fn project_image(
    map: &LabelMap,
    image: &AnnotatedImage,
    policy: UnmappedPolicy,
) -> Result<AnnotatedImage, LabelMapError> {
    let resolve = |label: &str| -> Result<Option<String>, LabelMapError> {
        match (map.map_label(label), policy) {
            (Mapped::Coarse(c), _) => Ok(Some(c.to_owned())),
            (Mapped::Unmapped, UnmappedPolicy::Drop) => Ok(None),
            (Mapped::Unmapped, UnmappedPolicy::Error) => Err(LabelMapError::Unmapped {
                image_id: image.image_id.clone(),
                label: label.to_owned(),
            }),
        }
    };

    let mut ground_truth = Vec::with_capacity(image.ground_truth.len());
    for gt in &image.ground_truth {
        if let Some(label) = resolve(&gt.label)? {
            let mut gt = gt.clone();
            gt.label = label;
            ground_truth.push(gt);
        }
    }
    let mut predictions = Vec::with_capacity(image.predictions.len());
    for p in &image.predictions {
        if let Some(label) = resolve(&p.label)? {
            let mut p = p.clone();
            p.label = label;
            predictions.push(p);
        }
    }
    Ok(AnnotatedImage {
        image_id: image.image_id.clone(),
        ground_truth,
        predictions,
        detect_seconds: image.detect_seconds,
    })
}
