//! Bounding-box algebra and the IoU / GIoU evaluation loss.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("invalid box: requires x1 < x2 and y1 < y2, got ({x1}, {y1}, {x2}, {y2})")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
}

/// Axis-aligned box with corner ordering enforced at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, DetectError> {
        if !(x1 < x2 && y1 < y2) || !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(DetectError::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Closed-boundary membership test.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x1 && u <= self.x2 && v >= self.y1 && v <= self.y2
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Smallest box framing both.
    pub fn enclosing(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }
}

/// One detector output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: i64,
    pub confidence: f64,
    /// Seconds.
    pub timestamp: f64,
}

impl Detection {
    pub fn new(bbox: BBox, class_id: i64, confidence: f64, timestamp: f64) -> Result<Self, DetectError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(DetectError::InvalidConfidence(confidence));
        }
        Ok(Self {
            bbox,
            class_id,
            confidence,
            timestamp,
        })
    }
}

/// JSON-lines record for detections: one object per line.
#[derive(Debug, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub t: f64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class: i64,
    pub conf: f64,
}

impl TryFrom<DetectionRecord> for Detection {
    type Error = DetectError;

    fn try_from(r: DetectionRecord) -> Result<Self, DetectError> {
        Detection::new(BBox::new(r.x1, r.y1, r.x2, r.y2)?, r.class, r.conf, r.t)
    }
}

/// Intersection over union; 0 for disjoint boxes, in [0, 1].
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Generalized IoU: IoU minus the enclosing-box deadweight share, in (-1, 1].
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let c = a.enclosing(b).area();
    inter / union - (c - union) / c
}

/// 1 - GIoU.
pub fn giou_loss(a: &BBox, b: &BBox) -> f64 {
    1.0 - giou(a, b)
}
