//! ONNX detector backend. Expects a single-output head of shape
//! `[1, 4 + classes, anchors]` with `(cx, cy, w, h)` in input pixels followed
//! by per-class scores, as produced by common one-stage exporters.

use std::path::Path;

use super::{Capability, DetectError, DetectorBackend, ImageInput};
use crate::domain::Detection;

/// Raw candidates below this score are never emitted.
#[cfg(feature = "onnx")]
pub const MIN_RAW_SCORE: f32 = 0.01;

/// Reads a vocabulary file: one label per line, blank lines ignored.
pub fn read_vocabulary(path: &Path) -> Result<Vec<String>, DetectError> {
    let text = std::fs::read_to_string(path).map_err(|_| DetectError::MissingFile {
        what: "vocabulary file",
        path: path.display().to_string(),
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

pub struct ModelBackend {
    capability: Capability,
    #[cfg(feature = "onnx")]
    plan: std::sync::Arc<tract_onnx::prelude::TypedSimplePlan>,
}

impl std::fmt::Debug for ModelBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelBackend")
            .field("capability", &self.capability)
            .finish_non_exhaustive()
    }
}

/// Loads an ONNX model and its vocabulary. Fails if either file is missing,
/// if the model cannot be loaded, or if the head's class count differs from
/// the vocabulary length.
pub fn load_model_backend(
    model_file: &Path,
    vocabulary_file: &Path,
    input_size: (u32, u32),
) -> Result<ModelBackend, DetectError> {
    if !model_file.is_file() {
        return Err(DetectError::MissingFile {
            what: "model file",
            path: model_file.display().to_string(),
        });
    }
    let vocabulary = read_vocabulary(vocabulary_file)?;
    if vocabulary.is_empty() {
        return Err(DetectError::VocabularyMismatch { vocabulary: 0, model: 0 });
    }
    build(model_file, vocabulary, input_size)
}

#[cfg(not(feature = "onnx"))]
fn build(_: &Path, _: Vec<String>, _: (u32, u32)) -> Result<ModelBackend, DetectError> {
    Err(DetectError::Unavailable(
        "this build has no ONNX runtime; rebuild with the `onnx` feature".into(),
    ))
}

#[cfg(not(feature = "onnx"))]
impl DetectorBackend for ModelBackend {
    fn capability(&self) -> &Capability {
        &self.capability
    }

    fn detect_raw(&self, _: &ImageInput) -> Result<Vec<Detection>, DetectError> {
        Err(DetectError::Unavailable("ONNX runtime not compiled in".into()))
    }
}

#[cfg(feature = "onnx")]
fn build(model_file: &Path, vocabulary: Vec<String>, input_size: (u32, u32)) -> Result<ModelBackend, DetectError> {
    use tract_onnx::prelude::*;

    let load_err = |e: TractError| DetectError::Backend {
        backend: "model".into(),
        message: format!("{}: {e:#}", model_file.display()),
    };
    let (w, h) = input_size;
    let model = tract_onnx::onnx()
        .model_for_path(model_file)
        .and_then(|m| m.with_input_fact(0, f32::fact([1, 3, h as usize, w as usize]).into()))
        .and_then(|m| m.into_optimized())
        .map_err(load_err)?;
    let fact = model.output_fact(0).map_err(load_err)?;
    let shape: Vec<usize> = fact
        .shape
        .as_concrete()
        .map(|s| s.to_vec())
        .ok_or_else(|| DetectError::Backend {
            backend: "model".into(),
            message: format!("{}: output shape is not concrete", model_file.display()),
        })?;
    if shape.len() != 3 || shape[0] != 1 || shape[1] < 5 {
        return Err(DetectError::Backend {
            backend: "model".into(),
            message: format!(
                "{}: expected output [1, 4 + classes, anchors], got {shape:?}",
                model_file.display()
            ),
        });
    }
    let classes = shape[1] - 4;
    if classes != vocabulary.len() {
        return Err(DetectError::VocabularyMismatch {
            vocabulary: vocabulary.len(),
            model: classes,
        });
    }
    let plan = model.into_runnable().map_err(load_err)?;
    Ok(ModelBackend {
        capability: Capability {
            name: "model".into(),
            vocabulary,
            input_size: Some(input_size),
        },
        plan,
    })
}

#[cfg(feature = "onnx")]
impl DetectorBackend for ModelBackend {
    fn capability(&self) -> &Capability {
        &self.capability
    }

    fn detect_raw(&self, input: &ImageInput) -> Result<Vec<Detection>, DetectError> {
        use crate::domain::BoundingBox;
        use tract_onnx::prelude::*;

        let run_err = |e: TractError| DetectError::Backend {
            backend: "model".into(),
            message: format!("{e:#}"),
        };
        let (w, h) = self.capability.input_size.expect("model backends declare an input size");
        let (orig_w, orig_h) = (input.image.width() as f64, input.image.height() as f64);
        let resized = input
            .image
            .resize_exact(w, h, image::imageops::FilterType::Triangle)
            .to_rgb8();
        let tensor: Tensor = tract_ndarray::Array4::from_shape_fn((1, 3, h as usize, w as usize), |(_, c, y, x)| {
            resized[(x as u32, y as u32)][c] as f32 / 255.0
        })
        .into();
        let outputs = self.plan.run(tvec!(tensor.into())).map_err(run_err)?;
        let view = outputs[0].to_plain_array_view::<f32>().map_err(run_err)?;
        let (sx, sy) = (orig_w / w as f64, orig_h / h as f64);
        let mut detections = Vec::new();
        for a in 0..view.shape()[2] {
            let (class, score) = (0..self.capability.vocabulary.len())
                .map(|c| (c, view[[0, 4 + c, a]]))
                .fold((0, f32::MIN), |best, cur| if cur.1 > best.1 { cur } else { best });
            if score < MIN_RAW_SCORE {
                continue;
            }
            let [cx, cy, bw, bh] = [0, 1, 2, 3].map(|i| view[[0, i, a]] as f64);
            let x_min = ((cx - bw / 2.0) * sx).clamp(0.0, orig_w);
            let y_min = ((cy - bh / 2.0) * sy).clamp(0.0, orig_h);
            let x_max = ((cx + bw / 2.0) * sx).clamp(0.0, orig_w);
            let y_max = ((cy + bh / 2.0) * sy).clamp(0.0, orig_h);
            let Ok(bbox) = BoundingBox::new(x_min, y_min, x_max, y_max) else {
                continue;
            };
            detections.push(Detection {
                label: self.capability.vocabulary[class].clone(),
                bbox,
                confidence: f64::from(score.min(1.0)),
            });
        }
        Ok(detections)
    }
}
