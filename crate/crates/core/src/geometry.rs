//! Box overlap and class-aware non-maximum suppression.

use crate::domain::{BoundingBox, Detection};

/// Intersection over union of two valid boxes. Returns a value in `[0, 1]`,
/// exactly `1.0` for identical boxes and `0.0` for disjoint ones.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let iw = a.x_max().min(b.x_max()) - a.x_min().max(b.x_min());
    let ih = a.y_max().min(b.y_max()) - a.y_min().max(b.y_min());
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Class-aware NMS. Within each label, detections are visited in rank order
/// (see [`Detection::rank_cmp`]) and dropped when their IoU with an already
/// kept same-label detection exceeds `iou_threshold`. Output is in rank order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut ranked: Vec<&Detection> = detections.iter().collect();
    ranked.sort_by(|a, b| a.rank_cmp(b));

    let mut kept: Vec<&Detection> = Vec::with_capacity(ranked.len());
    for det in ranked {
        let suppressed = kept
            .iter()
            .any(|k| k.label == det.label && iou(&k.bbox, &det.bbox) > iou_threshold);
        if !suppressed {
            kept.push(det);
        }
    }
    kept.into_iter().cloned().collect()
}
