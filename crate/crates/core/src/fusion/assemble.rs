use core::ops::Range;

use super::global::GlobalFeature;
use super::raster::ResultFeatureGrid;
use crate::error::{Error, Result};
use crate::gridnet::Tensor;

/// Channel layout of a fusion feature:
/// `[own result feature | other result feature (projected) | own global feature]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionLayout {
    pub classes: usize,
    pub scales: usize,
}

impl FusionLayout {
    pub fn channels(&self) -> usize {
        2 * self.classes + self.scales
    }

    pub fn own_rf(&self) -> Range<usize> {
        0..self.classes
    }

    pub fn other_rf(&self) -> Range<usize> {
        self.classes..2 * self.classes
    }

    pub fn global(&self) -> Range<usize> {
        2 * self.classes..self.channels()
    }
}

/// `(b, 2K + S, G, G)` input of a second-stage detector.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionFeature {
    pub layout: FusionLayout,
    pub tensor: Tensor,
}

impl FusionFeature {
    pub fn own_rf(&self) -> Tensor {
        let r = self.layout.own_rf();
        self.tensor.slice_channels(r.start, r.end).expect("layout in range")
    }

    pub fn other_rf(&self) -> Tensor {
        let r = self.layout.other_rf();
        self.tensor.slice_channels(r.start, r.end).expect("layout in range")
    }

    pub fn global(&self) -> Tensor {
        let r = self.layout.global();
        self.tensor.slice_channels(r.start, r.end).expect("layout in range")
    }
}

/// Concatenates own result feature, projected other-modality result feature
/// and own global feature along channels.
pub fn build_fusion(own_rf: &ResultFeatureGrid, other_rf: &ResultFeatureGrid, own_gf: &GlobalFeature) -> Result<FusionFeature> {
    if own_rf.classes() != other_rf.classes() {
        return Err(Error::ShapeMismatch {
            op: "build_fusion",
            lhs: own_rf.tensor().shape(),
            rhs: other_rf.tensor().shape(),
        });
    }
    let tensor = Tensor::concat_channels(&[own_rf.tensor(), other_rf.tensor(), own_gf.tensor()]).map_err(|e| match e {
        Error::ShapeMismatch { lhs, rhs, .. } => Error::ShapeMismatch {
            op: "build_fusion",
            lhs,
            rhs,
        },
        other => other,
    })?;
    Ok(FusionFeature {
        layout: FusionLayout {
            classes: own_rf.classes(),
            scales: own_gf.scales(),
        },
        tensor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{rasterize_results, Detection, RasterMode};

    #[test]
    fn nine_channels_and_slices() {
        let a = Detection::new(0.1, 0.1, 0.4, 0.6, 0.8, 0).unwrap();
        let b = Detection::new(0.5, 0.2, 0.9, 0.9, 0.6, 2).unwrap();
        let own = rasterize_results(&[a], 16, 3, RasterMode::Overwrite).unwrap();
        let other = rasterize_results(&[b], 16, 3, RasterMode::Overwrite).unwrap();
        let gf = GlobalFeature(Tensor::full([1, 3, 16, 16], 0.25));
        let f = build_fusion(&own, &other, &gf).unwrap();
        assert_eq!(f.tensor.shape(), [1, 9, 16, 16]);
        assert_eq!(&f.own_rf(), own.tensor());
        assert_eq!(&f.other_rf(), other.tensor());
        assert_eq!(&f.global(), gf.tensor());
    }

    #[test]
    fn spatial_mismatch_is_rejected() {
        let own = ResultFeatureGrid::zeros(16, 3);
        let other = ResultFeatureGrid::zeros(8, 3);
        let gf = GlobalFeature(Tensor::zeros([1, 3, 16, 16]));
        assert!(matches!(
            build_fusion(&own, &other, &gf),
            Err(Error::ShapeMismatch { op: "build_fusion", .. })
        ));
    }
}
