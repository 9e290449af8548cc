use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::NUM_CLASSES;

/// One detection `(x1, y1, x2, y2, s, cls[, block])` in normalized
/// image-plane or BEV-plane coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
    pub class: usize,
    /// Occlusion flag: `Some(true)` when the object is hidden in the image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<bool>,
}

impl Detection {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64, score: f64, class: usize) -> Result<Self> {
        let d = Detection {
            x1,
            y1,
            x2,
            y2,
            score,
            class,
            block: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_block(mut self, block: bool) -> Self {
        self.block = Some(block);
        self
    }

    pub fn bbox(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if ![self.x1, self.y1, self.x2, self.y2].iter().all(|&v| unit(v)) {
            return Err(Error::InvalidDetection(format!("coordinates outside [0,1]: {:?}", self.bbox())));
        }
        if self.x1 > self.x2 || self.y1 > self.y2 {
            return Err(Error::InvalidDetection(format!("inverted box {:?}", self.bbox())));
        }
        if !unit(self.score) {
            return Err(Error::InvalidDetection(format!("score {} outside [0,1]", self.score)));
        }
        if self.class >= NUM_CLASSES {
            return Err(Error::InvalidDetection(format!("class {} outside 0..{NUM_CLASSES}", self.class)));
        }
        Ok(())
    }

    /// Clips the box to the unit square; `None` if nothing remains.
    pub fn clipped(mut self) -> Option<Self> {
        self.x1 = self.x1.clamp(0.0, 1.0);
        self.y1 = self.y1.clamp(0.0, 1.0);
        self.x2 = self.x2.clamp(0.0, 1.0);
        self.y2 = self.y2.clamp(0.0, 1.0);
        if self.x2 <= self.x1 || self.y2 <= self.y1 {
            None
        } else {
            Some(self)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    PointCloud,
}

impl Modality {
    pub fn other(self) -> Self {
        match self {
            Modality::Image => Modality::PointCloud,
            Modality::PointCloud => Modality::Image,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::PointCloud => "pc",
        }
    }
}

/// Ordered detections of one modality. Order matters for overwrite
/// rasterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub modality: Modality,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(modality: Modality) -> Self {
        DetectionSet {
            modality,
            detections: Vec::new(),
        }
    }

    pub fn from_vec(modality: Modality, detections: Vec<Detection>) -> Self {
        DetectionSet { modality, detections }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Detection> {
        self.detections.iter()
    }

    pub fn push(&mut self, d: Detection) {
        self.detections.push(d);
    }

    pub fn validate(&self) -> Result<()> {
        self.detections.iter().try_for_each(Detection::validate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Detection::new(0.1, 0.1, 0.2, 0.3, 0.5, 2).is_ok());
        assert!(Detection::new(0.3, 0.1, 0.2, 0.3, 0.5, 0).is_err());
        assert!(Detection::new(0.1, 0.1, 1.2, 0.3, 0.5, 0).is_err());
        assert!(Detection::new(0.1, 0.1, 0.2, 0.3, 1.5, 0).is_err());
        assert!(Detection::new(0.1, 0.1, 0.2, 0.3, 0.5, 3).is_err());
    }

    #[test]
    fn clipping() {
        let d = Detection {
            x1: -0.2,
            y1: 0.5,
            x2: 0.3,
            y2: 1.4,
            score: 0.5,
            class: 0,
            block: None,
        };
        let c = d.clipped().unwrap();
        assert_eq!(c.bbox(), [0.0, 0.5, 0.3, 1.0]);
        let outside = Detection { x1: 1.2, x2: 1.5, ..d };
        assert!(outside.clipped().is_none());
    }
}
