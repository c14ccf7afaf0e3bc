//! Shared domain values: boxes, detections, annotated images and nutrient
//! profiles. Every constructor validates, so a value that exists is valid.

use std::fmt;
use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("malformed box [{0}, {1}, {2}, {3}]: need finite coordinates >= 0 with min < max")]
    MalformedBox(f64, f64, f64, f64),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("label must not be empty")]
    EmptyLabel,
    #[error("detect_seconds {0} must be finite and >= 0")]
    DetectSeconds(f64),
    #[error("nutrient field `{field}` is {value}; must be finite and >= 0")]
    Nutrient { field: &'static str, value: f64 },
}

/// Axis-aligned box in pixel corner coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, ValidationError> {
        let coords = [x_min, y_min, x_max, y_max];
        let ok = coords.iter().all(|c| c.is_finite() && *c >= 0.0) && x_min < x_max && y_min < y_max;
        if !ok {
            return Err(ValidationError::MalformedBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Converts a center/size box, as emitted by most single-stage detector heads.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, ValidationError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = ValidationError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

fn check_label(label: &str) -> Result<(), ValidationError> {
    if label.trim().is_empty() {
        Err(ValidationError::EmptyLabel)
    } else {
        Ok(())
    }
}

/// A confidence-scored, localized food-class prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection")]
pub struct Detection {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Deserialize)]
struct RawDetection {
    label: String,
    #[serde(rename = "box")]
    bbox: BoundingBox,
    confidence: f64,
}

impl TryFrom<RawDetection> for Detection {
    type Error = ValidationError;

    fn try_from(r: RawDetection) -> Result<Self, Self::Error> {
        Detection::new(r.label, r.bbox, r.confidence)
    }
}

impl Detection {
    pub fn new(
        label: impl Into<String>,
        bbox: BoundingBox,
        confidence: f64,
    ) -> Result<Self, ValidationError> {
        let label = label.into();
        check_label(&label)?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ValidationError::Confidence(confidence));
        }
        Ok(Self {
            label,
            bbox,
            confidence,
        })
    }

    /// Total order used wherever detections are ranked: descending
    /// confidence, then lexicographic label, then ascending box corners.
    pub fn rank_cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .confidence
            .total_cmp(&self.confidence)
            .then_with(|| self.label.cmp(&other.label))
            .then_with(|| self.bbox.x_min.total_cmp(&other.bbox.x_min))
            .then_with(|| self.bbox.y_min.total_cmp(&other.bbox.y_min))
            .then_with(|| self.bbox.x_max.total_cmp(&other.bbox.x_max))
            .then_with(|| self.bbox.y_max.total_cmp(&other.bbox.y_max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGroundTruth")]
pub struct GroundTruthBox {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Deserialize)]
struct RawGroundTruth {
    label: String,
    #[serde(rename = "box")]
    bbox: BoundingBox,
}

impl TryFrom<RawGroundTruth> for GroundTruthBox {
    type Error = ValidationError;

    fn try_from(r: RawGroundTruth) -> Result<Self, Self::Error> {
        GroundTruthBox::new(r.label, r.bbox)
    }
}

impl GroundTruthBox {
    pub fn new(label: impl Into<String>, bbox: BoundingBox) -> Result<Self, ValidationError> {
        let label = label.into();
        check_label(&label)?;
        Ok(Self { label, bbox })
    }
}

/// One image of an evaluation corpus (also the detector sidecar format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAnnotatedImage")]
pub struct AnnotatedImage {
    pub image_id: String,
    #[serde(default)]
    pub ground_truth: Vec<GroundTruthBox>,
    #[serde(default)]
    pub predictions: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detect_seconds: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnnotatedImage {
    image_id: String,
    #[serde(default)]
    ground_truth: Vec<GroundTruthBox>,
    #[serde(default)]
    predictions: Vec<Detection>,
    #[serde(default)]
    detect_seconds: Option<f64>,
}

impl TryFrom<RawAnnotatedImage> for AnnotatedImage {
    type Error = ValidationError;

    fn try_from(r: RawAnnotatedImage) -> Result<Self, Self::Error> {
        check_label(&r.image_id)?;
        if let Some(s) = r.detect_seconds {
            if !(s.is_finite() && s >= 0.0) {
                return Err(ValidationError::DetectSeconds(s));
            }
        }
        Ok(Self {
            image_id: r.image_id,
            ground_truth: r.ground_truth,
            predictions: r.predictions,
            detect_seconds: r.detect_seconds,
        })
    }
}

/// Calories (kcal) plus fat, protein, carbohydrate and fiber (grams).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawProfile")]
pub struct NutrientProfile {
    pub calories: f64,
    pub fat_g: f64,
    pub protein_g: f64,
    pub carbs_g: f64,
    pub fiber_g: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    calories: f64,
    fat_g: f64,
    protein_g: f64,
    carbs_g: f64,
    fiber_g: f64,
}

impl TryFrom<RawProfile> for NutrientProfile {
    type Error = ValidationError;

    fn try_from(r: RawProfile) -> Result<Self, Self::Error> {
        NutrientProfile::new(r.calories, r.fat_g, r.protein_g, r.carbs_g, r.fiber_g)
    }
}

/// Field names in canonical order, matching [`NutrientProfile::to_array`].
pub const NUTRIENT_FIELDS: [&str; 5] = ["calories", "fat_g", "protein_g", "carbs_g", "fiber_g"];

impl NutrientProfile {
    pub const ZERO: NutrientProfile = NutrientProfile {
        calories: 0.0,
        fat_g: 0.0,
        protein_g: 0.0,
        carbs_g: 0.0,
        fiber_g: 0.0,
    };

    pub fn new(
        calories: f64,
        fat_g: f64,
        protein_g: f64,
        carbs_g: f64,
        fiber_g: f64,
    ) -> Result<Self, ValidationError> {
        Self::from_array([calories, fat_g, protein_g, carbs_g, fiber_g])
    }

    pub fn from_array(values: [f64; 5]) -> Result<Self, ValidationError> {
        for (field, value) in NUTRIENT_FIELDS.iter().zip(values) {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ValidationError::Nutrient { field, value });
            }
        }
        let [calories, fat_g, protein_g, carbs_g, fiber_g] = values;
        Ok(Self {
            calories,
            fat_g,
            protein_g,
            carbs_g,
            fiber_g,
        })
    }

    pub fn to_array(self) -> [f64; 5] {
        [
            self.calories,
            self.fat_g,
            self.protein_g,
            self.carbs_g,
            self.fiber_g,
        ]
    }

    /// Applies `f` fieldwise; the result is re-validated.
    pub fn try_map(self, f: impl Fn(f64) -> f64) -> Result<Self, ValidationError> {
        Self::from_array(self.to_array().map(f))
    }
}

impl Add for NutrientProfile {
    type Output = NutrientProfile;

    fn add(self, rhs: Self) -> Self {
        NutrientProfile {
            calories: self.calories + rhs.calories,
            fat_g: self.fat_g + rhs.fat_g,
            protein_g: self.protein_g + rhs.protein_g,
            carbs_g: self.carbs_g + rhs.carbs_g,
            fiber_g: self.fiber_g + rhs.fiber_g,
        }
    }
}

/// Scaling by a nonnegative factor.
impl Mul<f64> for NutrientProfile {
    type Output = NutrientProfile;

    fn mul(self, k: f64) -> Self {
        NutrientProfile {
            calories: self.calories * k,
            fat_g: self.fat_g * k,
            protein_g: self.protein_g * k,
            carbs_g: self.carbs_g * k,
            fiber_g: self.fiber_g * k,
        }
    }
}

impl fmt::Display for NutrientProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.1} kcal, fat {:.1} g, protein {:.1} g, carbs {:.1} g, fiber {:.1} g",
            self.calories, self.fat_g, self.protein_g, self.carbs_g, self.fiber_g
        )
    }
}
