//! Food detection evaluation, nutrient aggregation, meal logging and recipe
//! ranking.

pub mod corpus;
pub mod detect;
pub mod domain;
pub mod eval;
pub mod fixtures;
pub mod geometry;
pub mod labelmap;
pub mod nutrition;
pub mod recommend;
pub mod store;

pub use domain::{AnnotatedImage, BoundingBox, Detection, GroundTruthBox, NutrientProfile};
