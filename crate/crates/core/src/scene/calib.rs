use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned object footprint on the ground plane, world meters.
/// `cx` is lateral, `cz` is depth along the camera axis; `w` spans x and `l`
/// spans z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevBox {
    pub cx: f64,
    pub cz: f64,
    pub w: f64,
    pub l: f64,
}

impl BevBox {
    pub fn near(&self) -> f64 {
        self.cz - 0.5 * self.l
    }

    pub fn far(&self) -> f64 {
        self.cz + 0.5 * self.l
    }

    pub fn area(&self) -> f64 {
        self.w * self.l
    }

    pub fn intersection(&self, other: &BevBox) -> f64 {
        let ix = (self.cx + 0.5 * self.w).min(other.cx + 0.5 * other.w) - (self.cx - 0.5 * self.w).max(other.cx - 0.5 * other.w);
        let iz = self.far().min(other.far()) - self.near().max(other.near());
        ix.max(0.0) * iz.max(0.0)
    }
}

/// World region covered by the BEV grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevExtent {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for BevExtent {
    fn default() -> Self {
        BevExtent {
            x_min: -9.0,
            x_max: 9.0,
            z_min: 0.0,
            z_max: 18.0,
        }
    }
}

impl BevExtent {
    /// Normalized `(x1, y1, x2, y2)` with x lateral and y along depth, clipped
    /// to the unit square; `None` when the footprint lies outside.
    pub fn normalize(&self, b: &BevBox) -> Option<[f64; 4]> {
        let sx = self.x_max - self.x_min;
        let sz = self.z_max - self.z_min;
        let raw = [
            (b.cx - 0.5 * b.w - self.x_min) / sx,
            (b.near() - self.z_min) / sz,
            (b.cx + 0.5 * b.w - self.x_min) / sx,
            (b.far() - self.z_min) / sz,
        ];
        clip_unit(raw)
    }

    pub fn denormalize(&self, n: [f64; 4]) -> BevBox {
        let sx = self.x_max - self.x_min;
        let sz = self.z_max - self.z_min;
        let (x1, x2) = (self.x_min + n[0] * sx, self.x_min + n[2] * sx);
        let (z1, z2) = (self.z_min + n[1] * sz, self.z_min + n[3] * sz);
        BevBox {
            cx: 0.5 * (x1 + x2),
            cz: 0.5 * (z1 + z2),
            w: x2 - x1,
            l: z2 - z1,
        }
    }
}

pub(crate) fn clip_unit(b: [f64; 4]) -> Option<[f64; 4]> {
    if !b.iter().all(|v| v.is_finite()) {
        return None;
    }
    let c = [b[0].clamp(0.0, 1.0), b[1].clamp(0.0, 1.0), b[2].clamp(0.0, 1.0), b[3].clamp(0.0, 1.0)];
    if c[2] <= c[0] || c[3] <= c[1] {
        None
    } else {
        Some(c)
    }
}

/// How BEV footprints map to the image plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Projection {
    /// Per-axis affine map from normalized BEV to normalized image
    /// coordinates; exactly invertible, ignores object height.
    Affine { scale: [f64; 2], offset: [f64; 2] },
    /// Camera at height `cam_height` above a flat ground, looking along +z.
    /// Image coordinates are normalized by image width (square image):
    /// `u = cu + focal * x / z`, `v = horizon + focal * (cam_height - y) / z`
    /// with `y` the height above ground and `v` growing downward.
    PinholeGroundPlane {
        focal: f64,
        cam_height: f64,
        horizon: f64,
        cu: f64,
    },
}

/// Which way [`Calibration::project_box`] maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    BevToImage,
    ImageToBev,
}

/// BEV <-> image mapping plus the BEV grid extent.
///
/// This is a synthetic stand-in for real sensor calibration. In pinhole mode
/// an object's image box is the projection of its near (camera-facing) face,
/// which is what makes the mapping invertible from the box bottom edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub extent: BevExtent,
    pub projection: Projection,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration::pinhole()
    }
}

impl Calibration {
    pub fn pinhole() -> Self {
        Calibration {
            extent: BevExtent::default(),
            projection: Projection::PinholeGroundPlane {
                focal: 1.0,
                cam_height: 1.6,
                horizon: 0.35,
                cu: 0.5,
            },
        }
    }

    pub fn affine_identity() -> Self {
        Calibration {
            extent: BevExtent::default(),
            projection: Projection::Affine {
                scale: [1.0, 1.0],
                offset: [0.0, 0.0],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.extent;
        if !(e.x_max > e.x_min && e.z_max > e.z_min) {
            return Err(Error::contract("Calibration", "empty BEV extent"));
        }
        match self.projection {
            Projection::Affine { scale, .. } => {
                if scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
                    return Err(Error::contract("Calibration", "affine scale must be finite and nonzero"));
                }
            }
            Projection::PinholeGroundPlane { focal, cam_height, .. } => {
                if focal == 0.0 || !focal.is_finite() {
                    return Err(Error::contract("Calibration", "focal length must be finite and nonzero"));
                }
                if cam_height <= 0.0 || !cam_height.is_finite() {
                    return Err(Error::contract("Calibration", "camera height must be positive"));
                }
            }
        }
        Ok(())
    }

    /// True when the pinhole camera sees the footprint's near face entirely
    /// within the image width; always true for affine mode.
    pub fn in_horizontal_view(&self, b: &BevBox, margin: f64) -> bool {
        match self.projection {
            Projection::Affine { .. } => true,
            Projection::PinholeGroundPlane { focal, cu, .. } => {
                let z = b.near();
                if z <= 0.0 {
                    return false;
                }
                let u1 = cu + focal * (b.cx - 0.5 * b.w) / z;
                let u2 = cu + focal * (b.cx + 0.5 * b.w) / z;
                u1.min(u2) >= margin && u1.max(u2) <= 1.0 - margin
            }
        }
    }

    /// Unclipped image box of a footprint with the given height.
    pub fn image_box_raw(&self, b: &BevBox, height: f64) -> Result<Option<[f64; 4]>> {
        self.validate()?;
        Ok(match self.projection {
            Projection::Affine { scale, offset } => {
                let sx = self.extent.x_max - self.extent.x_min;
                let sz = self.extent.z_max - self.extent.z_min;
                let n = [
                    (b.cx - 0.5 * b.w - self.extent.x_min) / sx,
                    (b.near() - self.extent.z_min) / sz,
                    (b.cx + 0.5 * b.w - self.extent.x_min) / sx,
                    (b.far() - self.extent.z_min) / sz,
                ];
                Some(affine_apply(n, scale, offset))
            }
            Projection::PinholeGroundPlane {
                focal,
                cam_height,
                horizon,
                cu,
            } => {
                let z = b.near();
                if z <= 1e-9 {
                    return Ok(None);
                }
                let ua = cu + focal * (b.cx - 0.5 * b.w) / z;
                let ub = cu + focal * (b.cx + 0.5 * b.w) / z;
                let va = horizon + focal * (cam_height - height) / z;
                let vb = horizon + focal * cam_height / z;
                Some([ua.min(ub), va.min(vb), ua.max(ub), va.max(vb)])
            }
        })
    }

    /// Image box of a footprint, clipped to the view.
    pub fn bev_to_image(&self, b: &BevBox, height: f64) -> Result<Option<[f64; 4]>> {
        Ok(self.image_box_raw(b, height)?.and_then(clip_unit))
    }

    /// Inverts [`Calibration::bev_to_image`] under the ground-contact
    /// assumption. The image box does not reveal the footprint's depth
    /// extent, so `length` supplies it. Returns the footprint and the object
    /// height (0 in affine mode).
    pub fn image_to_bev(&self, img: [f64; 4], length: f64) -> Result<Option<(BevBox, f64)>> {
        self.validate()?;
        Ok(match self.projection {
            Projection::Affine { scale, offset } => {
                let inv_scale = [1.0 / scale[0], 1.0 / scale[1]];
                let inv_offset = [-offset[0] / scale[0], -offset[1] / scale[1]];
                let n = affine_apply(img, inv_scale, inv_offset);
                Some((self.extent.denormalize(n), 0.0))
            }
            Projection::PinholeGroundPlane {
                focal,
                cam_height,
                horizon,
                cu,
            } => {
                let dv = img[3] - horizon;
                if dv <= 0.0 {
                    return Ok(None);
                }
                let z = focal * cam_height / dv;
                if z <= 0.0 {
                    return Ok(None);
                }
                let x1 = (img[0] - cu) * z / focal;
                let x2 = (img[2] - cu) * z / focal;
                let height = cam_height - (img[1] - horizon) * z / focal;
                let b = BevBox {
                    cx: 0.5 * (x1 + x2),
                    cz: z + 0.5 * length,
                    w: (x2 - x1).abs(),
                    l: length,
                };
                Some((b, height))
            }
        })
    }

    /// Maps a normalized box between planes. BEV boxes are normalized over
    /// [`BevExtent`]; `height` is used going to the image, `length` coming
    /// back. Results are clipped; `None` when nothing of the box is in view.
    pub fn project_box(&self, b: [f64; 4], direction: Direction, height: f64, length: f64) -> Result<Option<[f64; 4]>> {
        match direction {
            Direction::BevToImage => self.bev_to_image(&self.extent.denormalize(b), height),
            Direction::ImageToBev => Ok(self
                .image_to_bev(b, length)?
                .and_then(|(bev, _)| self.extent.normalize(&bev))),
        }
    }
}

fn affine_apply(n: [f64; 4], scale: [f64; 2], offset: [f64; 2]) -> [f64; 4] {
    let a = [n[0] * scale[0] + offset[0], n[1] * scale[1] + offset[1]];
    let b = [n[2] * scale[0] + offset[0], n[3] * scale[1] + offset[1]];
    [a[0].min(b[0]), a[1].min(b[1]), a[0].max(b[0]), a[1].max(b[1])]
}
