use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gridnet::{Bound, Conv, ConvTranspose, Graph, ParamStore, Tensor, Var, LEAKY_SLOPE};

/// `S`-channel grid, one channel per backbone scale, `(b, S, G, G)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeature(pub Tensor);

impl GlobalFeature {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn grid_size(&self) -> usize {
        self.0.height()
    }

    pub fn scales(&self) -> usize {
        self.0.channels()
    }
}

/// One scale: transposed conv up to the fusion grid, then 1x1 down to a
/// single channel.
#[derive(Debug, Clone, Copy)]
pub struct GlobalBranch {
    pub in_size: usize,
    pub in_channels: usize,
    pub up: ConvTranspose,
    pub reduce: Conv,
}

/// Learnable global-feature extractor for one modality.
#[derive(Debug, Clone)]
pub struct GlobalFeatureParams {
    pub grid: usize,
    /// Leaky ReLU after the transposed conv. Without it the extractor is
    /// linear in its inputs.
    pub activation: bool,
    pub branches: Vec<GlobalBranch>,
}

impl GlobalFeatureParams {
    /// `scales` lists `(spatial size, channels, upsampled channels)` per
    /// input map, coarse to fine. Each size must divide `grid`; the
    /// transposed conv uses kernel = stride = `grid / size` and no padding.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        grid: usize,
        scales: &[(usize, usize, usize)],
        activation: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut branches = Vec::with_capacity(scales.len());
        for (s, &(size, channels, up_channels)) in scales.iter().enumerate() {
            if size == 0 || !grid.is_multiple_of(size) {
                return Err(Error::contract(
                    "GlobalFeatureParams::new",
                    format!("scale {size} does not divide grid {grid}"),
                ));
            }
            let stride = grid / size;
            let up = ConvTranspose::new(store, &format!("{prefix}.s{s}.up"), channels, up_channels, stride, stride, 0, rng)?;
            let reduce = Conv::pointwise(store, &format!("{prefix}.s{s}.reduce"), up_channels, 1, rng)?;
            branches.push(GlobalBranch {
                in_size: size,
                in_channels: channels,
                up,
                reduce,
            });
        }
        Ok(GlobalFeatureParams {
            grid,
            activation,
            branches,
        })
    }

    pub fn scales(&self) -> usize {
        self.branches.len()
    }

    /// In-graph extraction; `ms` is ordered like the branches.
    pub fn forward(&self, g: &mut Graph, p: &Bound, ms: &[Var]) -> Result<Var> {
        if ms.len() != self.branches.len() {
            return Err(Error::contract(
                "extract_global",
                format!("{} feature maps for {} scales", ms.len(), self.branches.len()),
            ));
        }
        let mut outs = Vec::with_capacity(ms.len());
        for (br, &x) in self.branches.iter().zip(ms) {
            let s = g.value(x).shape();
            if s[1] != br.in_channels || s[2] != br.in_size || s[3] != br.in_size {
                return Err(Error::ShapeMismatch {
                    op: "extract_global",
                    lhs: s,
                    rhs: [s[0], br.in_channels, br.in_size, br.in_size],
                });
            }
            let mut y = br.up.forward(g, p, x)?;
            if self.activation {
                y = g.leaky_relu(y, LEAKY_SLOPE);
            }
            let y = br.reduce.forward(g, p, y)?;
            debug_assert_eq!(g.value(y).height(), self.grid);
            outs.push(y);
        }
        g.concat_channels(&outs)
    }
}

/// Evaluates the extractor on concrete maps (coarse to fine).
pub fn extract_global(ms: &[Tensor], params: &GlobalFeatureParams, store: &ParamStore) -> Result<GlobalFeature> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, &[]);
    let vars: Vec<Var> = ms.iter().map(|t| g.input(t.clone())).collect();
    let out = params.forward(&mut g, &p, &vars)?;
    Ok(GlobalFeature(g.value(out).clone()))
}
