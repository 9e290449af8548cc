use super::calib::{Calibration, Direction, Projection};
use super::CLASS_PRIORS;
use crate::error::Result;
use crate::fusion::{Detection, DetectionSet, Modality};
use crate::gridnet::Tensor;

/// Maps detections into the other sensor's plane using class-prior height
/// (BEV to image) or class-prior length (image to BEV). Boxes that leave the
/// view are dropped; scores, classes and block flags are kept.
pub fn project_detections(dets: &DetectionSet, calib: &Calibration) -> Result<DetectionSet> {
    let direction = match dets.modality {
        Modality::PointCloud => Direction::BevToImage,
        Modality::Image => Direction::ImageToBev,
    };
    let mut out = DetectionSet::new(dets.modality.other());
    for d in dets.iter() {
        let prior = CLASS_PRIORS[d.class];
        if let Some(b) = calib.project_box(d.bbox(), direction, prior.height, prior.length)? {
            out.push(Detection {
                x1: b[0],
                y1: b[1],
                x2: b[2],
                y2: b[3],
                ..*d
            });
        }
    }
    Ok(out)
}

/// Resamples a BEV raster `(1, C, G, G)` onto the image grid: each image
/// cell center below the horizon is cast onto the ground plane and takes the
/// nearest BEV cell's values; cells above the horizon or outside the BEV
/// extent are zero. In affine mode the image cell maps through the inverse
/// affine transform.
pub fn resample_bev_to_image(bev: &Tensor, calib: &Calibration) -> Result<Tensor> {
    calib.validate()?;
    let [b, c, grid, _] = bev.shape();
    let mut out = Tensor::zeros(bev.shape());
    let g = grid as f64;
    let e = &calib.extent;
    for i in 0..grid {
        for j in 0..grid {
            let (u, v) = ((i as f64 + 0.5) / g, (j as f64 + 0.5) / g);
            let n = match calib.projection {
                Projection::PinholeGroundPlane {
                    focal,
                    cam_height,
                    horizon,
                    cu,
                } => {
                    if v <= horizon {
                        continue;
                    }
                    let z = focal * cam_height / (v - horizon);
                    let x = (u - cu) * z / focal;
                    ((x - e.x_min) / (e.x_max - e.x_min), (z - e.z_min) / (e.z_max - e.z_min))
                }
                Projection::Affine { scale, offset } => ((u - offset[0]) / scale[0], (v - offset[1]) / scale[1]),
            };
            if !(0.0..1.0).contains(&n.0) || !(0.0..1.0).contains(&n.1) {
                continue;
            }
            let (bi, bj) = ((n.0 * g) as usize, (n.1 * g) as usize);
            for bb in 0..b {
                for ch in 0..c {
                    out.set(bb, ch, i, j, bev.get(bb, ch, bi.min(grid - 1), bj.min(grid - 1)));
                }
            }
        }
    }
    Ok(out)
}

/// Inverse perspective mapping of an image raster onto the BEV grid: each
/// BEV cell center on the ground plane is projected into the image and takes
/// the nearest image cell's values. Cells that project outside the image are
/// zero.
pub fn resample_image_to_bev(image: &Tensor, calib: &Calibration) -> Result<Tensor> {
    calib.validate()?;
    let [b, c, grid, _] = image.shape();
    let mut out = Tensor::zeros(image.shape());
    let g = grid as f64;
    let e = &calib.extent;
    for i in 0..grid {
        for j in 0..grid {
            let (nx, nz) = ((i as f64 + 0.5) / g, (j as f64 + 0.5) / g);
            let (u, v) = match calib.projection {
                Projection::PinholeGroundPlane {
                    focal,
                    cam_height,
                    horizon,
                    cu,
                } => {
                    let x = e.x_min + nx * (e.x_max - e.x_min);
                    let z = e.z_min + nz * (e.z_max - e.z_min);
                    if z <= 0.0 {
                        continue;
                    }
                    (cu + focal * x / z, horizon + focal * cam_height / z)
                }
                Projection::Affine { scale, offset } => (nx * scale[0] + offset[0], nz * scale[1] + offset[1]),
            };
            if !(0.0..1.0).contains(&u) || !(0.0..1.0).contains(&v) {
                continue;
            }
            let (ii, ij) = ((u * g) as usize, (v * g) as usize);
            for bb in 0..b {
                for ch in 0..c {
                    out.set(bb, ch, i, j, image.get(bb, ch, ii.min(grid - 1), ij.min(grid - 1)));
                }
            }
        }
    }
    Ok(out)
}
