use alloc::vec::Vec;

use super::Scene;
use crate::gridnet::Tensor;

pub const IMAGE_CHANNELS: usize = 3;
pub const BEV_CHANNELS: usize = 2;

/// Flat per-class colors: pedestrian, vehicle, cyclist.
const CLASS_COLORS: [[f64; 3]; 3] = [[0.9, 0.25, 0.2], [0.2, 0.4, 0.9], [0.25, 0.85, 0.3]];

/// Height that maps to 1.0 in the BEV height channel, meters.
const HEIGHT_SCALE: f64 = 2.0;

/// Fraction of cell `(i, j)` covered by a normalized box, per axis.
fn coverage_1d(lo: f64, hi: f64, cell: usize, grid: usize) -> f64 {
    let g = grid as f64;
    let a = cell as f64 / g;
    let b = (cell + 1) as f64 / g;
    ((hi.min(b) - lo.max(a)).max(0.0)) * g
}

fn cells_touched(lo: f64, hi: f64, grid: usize) -> core::ops::Range<usize> {
    let g = grid as f64;
    let start = crate::math::floor(lo * g).max(0.0) as usize;
    let end = (crate::math::ceil(hi * g).max(0.0) as usize).min(grid);
    start.min(end)..end
}

/// Calls `f(i, j, fraction)` for every cell the box overlaps with positive
/// area.
fn for_each_covered(b: [f64; 4], grid: usize, mut f: impl FnMut(usize, usize, f64)) {
    for i in cells_touched(b[0], b[2], grid) {
        let fx = coverage_1d(b[0], b[2], i, grid);
        if fx <= 0.0 {
            continue;
        }
        for j in cells_touched(b[1], b[3], grid) {
            let fy = coverage_1d(b[1], b[3], j, grid);
            if fy > 0.0 {
                f(i, j, fx * fy);
            }
        }
    }
}

/// Renders the camera image `(1, 3, G, G)` and the BEV raster `(1, 2, G, G)`.
///
/// The image shows every non-occluded object as a flat class-colored box,
/// painted far to near with area-weighted blending at box edges. BEV channel
/// 0 is the footprint coverage of lidar-visible objects and channel 1 their
/// normalized height.
pub fn render_inputs(scene: &Scene, grid: usize) -> (Tensor, Tensor) {
    let mut image = Tensor::zeros([1, IMAGE_CHANNELS, grid, grid]);
    let mut bev = Tensor::zeros([1, BEV_CHANNELS, grid, grid]);

    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.sort_by(|&a, &b| {
        let (za, zb) = (scene.objects[a].bev.near(), scene.objects[b].bev.near());
        zb.total_cmp(&za).then(a.cmp(&b))
    });
    for &i in &order {
        let o = &scene.objects[i];
        if o.occluded_in_image {
            continue;
        }
        let Some(b) = scene.image_box(i) else { continue };
        let color = CLASS_COLORS[o.class];
        for_each_covered(b, grid, |x, y, frac| {
            for (c, &cv) in color.iter().enumerate() {
                let old = image.get(0, c, x, y);
                image.set(0, c, x, y, cv * frac + old * (1.0 - frac));
            }
        });
    }

    for (i, o) in scene.objects.iter().enumerate() {
        if !o.visible_to_lidar {
            continue;
        }
        let Some(b) = scene.bev_box(i) else { continue };
        let h = (o.height / HEIGHT_SCALE).min(1.0);
        for_each_covered(b, grid, |x, y, frac| {
            let occ = (bev.get(0, 0, x, y) + frac).min(1.0);
            bev.set(0, 0, x, y, occ);
            let hv = bev.get(0, 1, x, y).max(h * frac);
            bev.set(0, 1, x, y, hv);
        });
    }
    (image, bev)
}
