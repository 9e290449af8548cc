use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::GlobalFeatureParams;
use crate::gridnet::{Bound, Conv, ConvTranspose, Graph, ParamStore, Tensor, Var, LEAKY_SLOPE};
use crate::NUM_CLASSES;

/// Initial bias of the objectness logits, `-ln(99)`: every cell starts at
/// probability 0.01, so the summed background loss does not swamp the first
/// updates.
pub const HEAD_PRIOR_BIAS: f64 = -4.59511985013459;

/// Channel widths of the three backbone stages (full, half and quarter
/// resolution).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneWidths(pub [usize; 3]);

impl Default for BackboneWidths {
    fn default() -> Self {
        BackboneWidths([8, 16, 32])
    }
}

/// Raw per-cell head outputs as graph variables.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub cls: Var,
    pub reg: Var,
    pub obj: Var,
    pub block: Option<Var>,
}

impl HeadVars {
    pub fn values(&self, g: &Graph) -> DensePredictions {
        DensePredictions {
            cls: g.value(self.cls).clone(),
            reg: g.value(self.reg).clone(),
            obj: g.value(self.obj).clone(),
            block: self.block.map(|b| g.value(b).clone()),
        }
    }
}

/// Raw logits / offsets per cell at head resolution `Gp`: `cls (b, K, Gp, Gp)`,
/// `reg (b, 4, Gp, Gp)` as `(dx, dy, log w, log h)`, `obj (b, 1, Gp, Gp)` and
/// optionally `block (b, 1, Gp, Gp)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensePredictions {
    pub cls: Tensor,
    pub reg: Tensor,
    pub obj: Tensor,
    pub block: Option<Tensor>,
}

impl DensePredictions {
    pub fn grid_size(&self) -> usize {
        self.obj.height()
    }

    /// Predictions of batch item `b` as a batch of one.
    pub fn item(&self, b: usize) -> DensePredictions {
        let pick = |t: &Tensor| {
            let [_, c, h, w] = t.shape();
            let n = c * h * w;
            Tensor::from_vec([1, c, h, w], t.data()[b * n..(b + 1) * n].to_vec()).expect("sized")
        };
        DensePredictions {
            cls: pick(&self.cls),
            reg: pick(&self.reg),
            obj: pick(&self.obj),
            block: self.block.as_ref().map(pick),
        }
    }
}

fn act(g: &mut Graph, x: Var) -> Var {
    g.leaky_relu(x, LEAKY_SLOPE)
}

fn set_bias(store: &mut ParamStore, conv: &Conv, v: f64) {
    store.value_mut(conv.bias).data_mut().iter_mut().for_each(|b| *b = v);
}

/// Dense prediction head: 1x1 convolutions for class, box and objectness
/// (and optionally block) logits. With `decoupled` the class logits and the
/// box/objectness/block logits each get their own 3x3 branch first.
#[derive(Debug, Clone)]
pub struct Head {
    pub cls_branch: Option<Conv>,
    pub reg_branch: Option<Conv>,
    pub cls: Conv,
    pub reg: Conv,
    pub obj: Conv,
    pub block: Option<Conv>,
}

impl Head {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_c: usize,
        decoupled: bool,
        with_block: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let (cls_branch, reg_branch) = if decoupled {
            (
                Some(Conv::same3(store, &format!("{prefix}.cls_branch"), in_c, in_c, rng)?),
                Some(Conv::same3(store, &format!("{prefix}.reg_branch"), in_c, in_c, rng)?),
            )
        } else {
            (None, None)
        };
        let cls = Conv::pointwise(store, &format!("{prefix}.cls"), in_c, NUM_CLASSES, rng)?;
        let reg = Conv::pointwise(store, &format!("{prefix}.reg"), in_c, 4, rng)?;
        let obj = Conv::pointwise(store, &format!("{prefix}.obj"), in_c, 1, rng)?;
        set_bias(store, &obj, HEAD_PRIOR_BIAS);
        store.value_mut(reg.bias).data_mut().iter_mut().for_each(|b| *b = 0.0);
        let block = if with_block {
            // Block is supervised on positives only, where it is common.
            Some(Conv::pointwise(store, &format!("{prefix}.block"), in_c, 1, rng)?)
        } else {
            None
        };
        Ok(Head {
            cls_branch,
            reg_branch,
            cls,
            reg,
            obj,
            block,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<HeadVars> {
        let xc = match &self.cls_branch {
            Some(c) => {
                let y = c.forward(g, p, x)?;
                act(g, y)
            }
            None => x,
        };
        let xr = match &self.reg_branch {
            Some(c) => {
                let y = c.forward(g, p, x)?;
                act(g, y)
            }
            None => x,
        };
        Ok(HeadVars {
            cls: self.cls.forward(g, p, xc)?,
            reg: self.reg.forward(g, p, xr)?,
            obj: self.obj.forward(g, p, xr)?,
            block: match &self.block {
                Some(b) => Some(b.forward(g, p, xr)?),
                None => None,
            },
        })
    }
}

/// Output of a first-stage forward pass.
#[derive(Debug, Clone)]
pub struct FirstStageOutput {
    pub head: HeadVars,
    /// Multi-scale maps at `G`, `G/2` and `G/4`.
    pub ms_feats: [Var; 3],
}

/// Single-modality detector: shallow stem(s) at full resolution, two
/// stride-2 stages, an upsampling neck back to `G/2` and a dense head there.
///
/// With several stems (one per input raster) their activated outputs are
/// summed before the deep stages, which is the feature-level fusion scheme.
#[derive(Debug, Clone)]
pub struct FirstStage {
    pub prefix: alloc::string::String,
    pub in_channels: Vec<usize>,
    pub widths: BackboneWidths,
    pub stems: Vec<Conv>,
    pub stage2: Conv,
    pub stage3: Conv,
    pub up: ConvTranspose,
    pub fuse: Conv,
    pub head: Head,
}

impl FirstStage {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: &[usize],
        widths: BackboneWidths,
        rng: &mut R,
    ) -> Result<Self> {
        let [c1, c2, c3] = widths.0;
        let stems = in_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let name = if in_channels.len() == 1 {
                    format!("{prefix}.stem")
                } else {
                    format!("{prefix}.stem{i}")
                };
                Conv::same3(store, &name, c, c1, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let stage2 = Conv::down3(store, &format!("{prefix}.stage2"), c1, c2, rng)?;
        let stage3 = Conv::down3(store, &format!("{prefix}.stage3"), c2, c3, rng)?;
        let up = ConvTranspose::new(store, &format!("{prefix}.neck_up"), c3, c2, 2, 2, 0, rng)?;
        let fuse = Conv::same3(store, &format!("{prefix}.neck"), 2 * c2, c2, rng)?;
        let head = Head::new(store, &format!("{prefix}.head"), c2, false, false, rng)?;
        Ok(FirstStage {
            prefix: prefix.into(),
            in_channels: in_channels.to_vec(),
            widths,
            stems,
            stage2,
            stage3,
            up,
            fuse,
            head,
        })
    }

    /// Layout of the global-feature extractor matching this backbone's maps.
    /// Every deconvolution outputs the narrowest width: the 1x1 reduction to
    /// a single channel follows anyway, and full-resolution deconvolutions at
    /// the deep widths would cost as much as the whole detector.
    pub fn global_scales(&self, grid: usize) -> [(usize, usize, usize); 3] {
        let [c1, c2, c3] = self.widths.0;
        [(grid, c1, c1), (grid / 2, c2, c1), (grid / 4, c3, c1)]
    }

    /// Head resolution for input size `grid`.
    pub fn head_grid(grid: usize) -> usize {
        grid / 2
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, inputs: &[Var]) -> Result<FirstStageOutput> {
        if inputs.len() != self.stems.len() {
            return Err(Error::contract(
                "first_stage_forward",
                format!("{} inputs for {} stems", inputs.len(), self.stems.len()),
            ));
        }
        let mut shallow: Option<Var> = None;
        for ((stem, &x), &c) in self.stems.iter().zip(inputs).zip(&self.in_channels) {
            let s = g.value(x).shape();
            if s[1] != c || !s[2].is_multiple_of(4) || s[2] != s[3] {
                return Err(Error::ShapeMismatch {
                    op: "first_stage_forward",
                    lhs: s,
                    rhs: [s[0], c, s[2], s[2]],
                });
            }
            let y = stem.forward(g, p, x)?;
            let y = act(g, y);
            shallow = Some(match shallow {
                Some(acc) => g.add(acc, y)?,
                None => y,
            });
        }
        let f1 = shallow.ok_or_else(|| Error::contract("first_stage_forward", "no stems"))?;
        let y = self.stage2.forward(g, p, f1)?;
        let f2 = act(g, y);
        let y = self.stage3.forward(g, p, f2)?;
        let f3 = act(g, y);
        let y = self.up.forward(g, p, f3)?;
        let u = act(g, y);
        let cat = g.concat_channels(&[u, f2])?;
        let y = self.fuse.forward(g, p, cat)?;
        let n = act(g, y);
        let head = self.head.forward(g, p, n)?;
        Ok(FirstStageOutput {
            head,
            ms_feats: [f1, f2, f3],
        })
    }

    /// Forward pass on concrete rasters without gradient tracking.
    pub fn infer(&self, store: &ParamStore, inputs: &[&Tensor]) -> Result<(DensePredictions, [Tensor; 3])> {
        let mut g = Graph::new();
        let p = store.bind_prefix(&mut g, &self.prefix, false);
        let xs: Vec<Var> = inputs.iter().map(|t| g.input((*t).clone())).collect();
        let out = self.forward(&mut g, &p, &xs)?;
        let ms = out.ms_feats.map(|v| g.value(v).clone());
        Ok((out.head.values(&g), ms))
    }
}

/// Post-fusion detector over a `2K + S` channel fusion feature: a small
/// encoder-decoder with skip connections at `G`, `G/2`, `G/4`, `G/8` and a
/// decoupled head at full resolution. The image variant also predicts block.
#[derive(Debug, Clone)]
pub struct SecondStage {
    pub prefix: alloc::string::String,
    pub in_channels: usize,
    pub width: usize,
    pub enc1: Conv,
    pub enc2: Conv,
    pub enc3: Conv,
    pub enc4: Conv,
    pub up3: ConvTranspose,
    pub dec3: Conv,
    pub up2: ConvTranspose,
    pub dec2: Conv,
    pub up1: ConvTranspose,
    pub dec1: Conv,
    pub head: Head,
}

impl SecondStage {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        width: usize,
        with_block: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let c = width;
        Ok(SecondStage {
            prefix: prefix.into(),
            in_channels,
            width,
            enc1: Conv::same3(store, &format!("{prefix}.enc1"), in_channels, c, rng)?,
            enc2: Conv::down3(store, &format!("{prefix}.enc2"), c, 2 * c, rng)?,
            enc3: Conv::down3(store, &format!("{prefix}.enc3"), 2 * c, 4 * c, rng)?,
            enc4: Conv::down3(store, &format!("{prefix}.enc4"), 4 * c, 8 * c, rng)?,
            up3: ConvTranspose::new(store, &format!("{prefix}.up3"), 8 * c, 4 * c, 2, 2, 0, rng)?,
            dec3: Conv::same3(store, &format!("{prefix}.dec3"), 8 * c, 4 * c, rng)?,
            up2: ConvTranspose::new(store, &format!("{prefix}.up2"), 4 * c, 2 * c, 2, 2, 0, rng)?,
            dec2: Conv::same3(store, &format!("{prefix}.dec2"), 4 * c, 2 * c, rng)?,
            up1: ConvTranspose::new(store, &format!("{prefix}.up1"), 2 * c, c, 2, 2, 0, rng)?,
            dec1: Conv::same3(store, &format!("{prefix}.dec1"), 2 * c, c, rng)?,
            head: Head::new(store, &format!("{prefix}.head"), c, true, with_block, rng)?,
        })
    }

    pub fn with_block(&self) -> bool {
        self.head.block.is_some()
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, fusion: Var) -> Result<HeadVars> {
        let s = g.value(fusion).shape();
        if s[1] != self.in_channels || !s[2].is_multiple_of(8) || s[2] != s[3] {
            return Err(Error::ShapeMismatch {
                op: "second_stage_forward",
                lhs: s,
                rhs: [s[0], self.in_channels, s[2], s[2]],
            });
        }
        let y = self.enc1.forward(g, p, fusion)?;
        let e1 = act(g, y);
        let y = self.enc2.forward(g, p, e1)?;
        let e2 = act(g, y);
        let y = self.enc3.forward(g, p, e2)?;
        let e3 = act(g, y);
        let y = self.enc4.forward(g, p, e3)?;
        let e4 = act(g, y);
        let y = self.up3.forward(g, p, e4)?;
        let u3 = act(g, y);
        let cat = g.concat_channels(&[u3, e3])?;
        let y = self.dec3.forward(g, p, cat)?;
        let d3 = act(g, y);
        let y = self.up2.forward(g, p, d3)?;
        let u2 = act(g, y);
        let cat = g.concat_channels(&[u2, e2])?;
        let y = self.dec2.forward(g, p, cat)?;
        let d2 = act(g, y);
        let y = self.up1.forward(g, p, d2)?;
        let u1 = act(g, y);
        let cat = g.concat_channels(&[u1, e1])?;
        let y = self.dec1.forward(g, p, cat)?;
        let d1 = act(g, y);
        self.head.forward(g, p, d1)
    }
}

/// Image or BEV branch of the fused model: global-feature extractor plus
/// second-stage detector, both under one parameter prefix.
#[derive(Debug, Clone)]
pub struct FusionBranch {
    pub prefix: alloc::string::String,
    pub global: GlobalFeatureParams,
    pub detector: SecondStage,
}

impl FusionBranch {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        grid: usize,
        backbone: &FirstStage,
        width: usize,
        with_block: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let global = GlobalFeatureParams::new(
            store,
            &format!("{prefix}.global"),
            grid,
            &backbone.global_scales(grid),
            true,
            rng,
        )?;
        let detector = SecondStage::new(
            store,
            &format!("{prefix}.det"),
            2 * NUM_CLASSES + global.scales(),
            width,
            with_block,
            rng,
        )?;
        Ok(FusionBranch {
            prefix: prefix.into(),
            global,
            detector,
        })
    }

    /// Extracts the global feature from `ms`, concatenates
    /// `[own_rf | other_rf | global]` and runs the detector.
    pub fn forward(&self, g: &mut Graph, p: &Bound, own_rf: Var, other_rf: Var, ms: &[Var]) -> Result<HeadVars> {
        let gf = self.global.forward(g, p, ms)?;
        let fusion = g.concat_channels(&[own_rf, other_rf, gf])?;
        self.detector.forward(g, p, fusion)
    }
}
