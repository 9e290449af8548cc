//! KITTI object label text: 15 whitespace-separated fields per object, 16
//! with a trailing detection score.

use std::fmt::Write as _;

use mmdr_core::fusion::{Detection, DetectionSet, Modality};

use crate::error::{Error, Result};

/// KITTI type strings in class-index order.
pub const CLASS_NAMES: [&str; 3] = ["Pedestrian", "Car", "Cyclist"];

pub fn class_index(kind: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|&n| n == kind)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub kind: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// `left, top, right, bottom` in pixels.
    pub bbox: [f64; 4],
    /// Height, width, length in meters.
    pub dimensions: [f64; 3],
    /// Camera-frame `x, y, z` in meters.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiLabel {
    /// A 2D-only record with KITTI's placeholder values for the 3D fields.
    pub fn from_box(kind: &str, bbox: [f64; 4], occluded: bool, score: Option<f64>) -> Self {
        KittiLabel {
            kind: kind.into(),
            truncated: 0.0,
            occluded: occluded as i32,
            alpha: -10.0,
            bbox,
            dimensions: [-1.0; 3],
            location: [-1000.0; 3],
            rotation_y: -10.0,
            score,
        }
    }
}

/// Parses label text. Blank lines are skipped; any other line must have 15
/// or 16 fields.
pub fn parse_kitti_labels(text: &str) -> Result<Vec<KittiLabel>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 15 && fields.len() != 16 {
            return Err(Error::Parse {
                line: line_no,
                detail: format!("expected 15 or 16 fields, found {}", fields.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            fields[k].parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                detail: format!("field {} is not a number: {:?}", k + 1, fields[k]),
            })
        };
        let occluded = fields[2].parse::<i32>().map_err(|_| Error::Parse {
            line: line_no,
            detail: format!("field 3 is not an integer: {:?}", fields[2]),
        })?;
        out.push(KittiLabel {
            kind: fields[0].to_string(),
            truncated: num(1)?,
            occluded,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            dimensions: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        });
    }
    Ok(out)
}

/// Two decimals like the KITTI tools print, unless that would lose bits;
/// then the shortest exact representation.
fn num(v: f64) -> String {
    let short = format!("{v:.2}");
    if short.parse::<f64>().map(f64::to_bits) == Ok(v.to_bits()) {
        short
    } else {
        format!("{v}")
    }
}

pub fn write_kitti_labels(records: &[KittiLabel]) -> String {
    let mut out = String::new();
    for r in records {
        let mut fields = vec![r.kind.clone(), num(r.truncated), r.occluded.to_string(), num(r.alpha)];
        fields.extend(r.bbox.iter().chain(&r.dimensions).chain(&r.location).map(|&v| num(v)));
        fields.push(num(r.rotation_y));
        if let Some(s) = r.score {
            fields.push(num(s));
        }
        let _ = writeln!(out, "{}", fields.join(" "));
    }
    out
}

/// Image-plane detections from KITTI records: pixel boxes normalized by the
/// image size, unknown types dropped (their count is returned), `occluded >
/// 0` mapped to block. Missing scores read as 1.
pub fn kitti_to_detections(records: &[KittiLabel], width: f64, height: f64) -> Result<(DetectionSet, usize)> {
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::Config(format!("image size must be positive, got {width}x{height}")));
    }
    let mut set = DetectionSet::new(Modality::Image);
    let mut ignored = 0;
    for r in records {
        let Some(class) = class_index(&r.kind) else {
            ignored += 1;
            continue;
        };
        let raw = [r.bbox[0] / width, r.bbox[1] / height, r.bbox[2] / width, r.bbox[3] / height];
        let b = raw.map(|v| v.clamp(0.0, 1.0));
        if b != raw {
            log::warn!("{} box {:?} leaves the {width}x{height} image; clamped", r.kind, r.bbox);
        }
        let score = r.score.unwrap_or(1.0).clamp(0.0, 1.0);
        set.push(Detection::new(b[0], b[1], b[2], b[3], score, class)?.with_block(r.occluded > 0));
    }
    if ignored > 0 {
        log::info!("ignored {ignored} records of other types");
    }
    Ok((set, ignored))
}

/// Inverse of [`kitti_to_detections`] for 2D output.
pub fn detections_to_kitti(set: &DetectionSet, width: f64, height: f64) -> Vec<KittiLabel> {
    set.iter()
        .map(|d| {
            let bbox = [d.x1 * width, d.y1 * height, d.x2 * width, d.y2 * height];
            KittiLabel::from_box(CLASS_NAMES[d.class], bbox, d.block.unwrap_or(false), Some(d.score))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59 0.99";

    #[test]
    fn parses_standard_line() {
        let r = &parse_kitti_labels(LINE).unwrap()[0];
        assert_eq!(r.kind, "Car");
        assert_eq!(r.occluded, 0);
        assert_eq!(r.bbox, [587.01, 173.33, 614.12, 200.12]);
        assert_eq!(r.location, [-0.65, 1.71, 46.70]);
        assert_eq!(r.score, Some(0.99));
        assert_eq!(write_kitti_labels(&parse_kitti_labels(LINE).unwrap()).trim_end(), LINE);
    }

    #[test]
    fn short_line_names_its_number() {
        let text = format!("{LINE}\n\nCar 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70");
        match parse_kitti_labels(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalization_examples() {
        let recs = parse_kitti_labels(&format!(
            "{LINE}\nDontCare -1 -1 -10 0 0 10 10 -1 -1 -1 -1000 -1000 -1000 -10\nPedestrian 0 2 0 0 0 1242 375 1 1 1 0 0 0 0"
        ))
        .unwrap();
        let (set, ignored) = kitti_to_detections(&recs, 1242.0, 375.0).unwrap();
        assert_eq!(ignored, 1);
        let d = set.detections[0];
        assert_eq!(d.bbox(), [587.01 / 1242.0, 173.33 / 375.0, 614.12 / 1242.0, 200.12 / 375.0]);
        assert!((d.x1 - 0.47263).abs() < 1e-5 && (d.y2 - 0.53365).abs() < 1e-5);
        assert_eq!(set.detections[1].bbox(), [0.0, 0.0, 1.0, 1.0]);
        assert_eq!(set.detections[1].block, Some(true));
    }

    #[test]
    fn out_of_image_box_is_clamped() {
        let recs = vec![KittiLabel::from_box("Car", [-5.0, 10.0, 50.0, 120.0], false, None)];
        let (set, _) = kitti_to_detections(&recs, 100.0, 100.0).unwrap();
        assert_eq!(set.detections[0].bbox(), [0.0, 0.1, 0.5, 1.0]);
    }
}
