use serde::{Deserialize, Serialize};

use super::network::HeadVars;
use super::targets::Targets;
use crate::error::{Error, Result};
use crate::gridnet::{Graph, Var};

/// `beta1 * L_cls + beta2 * L_reg + beta3 * L_obj + beta4 * L_block`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub reg: f64,
    pub obj: f64,
    pub block: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 1.0,
            reg: 1.0,
            obj: 1.0,
            block: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.cls, self.reg, self.obj, self.block];
        if w.iter().any(|&b| !(b >= 0.0 && b.is_finite())) || w.iter().all(|&b| b == 0.0) {
            return Err(Error::contract("LossWeights", "weights must be non-negative with at least one positive"));
        }
        Ok(())
    }

    pub fn combine(&self, c: &LossComponents) -> f64 {
        self.cls * c.cls + self.reg * c.reg + self.obj * c.obj + self.block * c.block
    }
}

/// Values of the individual loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub cls: f64,
    pub reg: f64,
    pub obj: f64,
    pub block: f64,
}

/// Builds the detection loss in `g`:
///
/// - `L_cls`: BCE of class probabilities against one-hot targets on positive
///   cells,
/// - `L_reg`: `1 - IoU` of decoded boxes on positive cells,
/// - `L_obj`: BCE of objectness summed over all cells and divided by the
///   number of positives (at least one), so sparse scenes still push
///   objectness up on object cells,
/// - `L_block`: BCE of the occlusion probability on positive cells (zero
///   when the head has no block branch).
pub fn detection_loss(g: &mut Graph, head: &HeadVars, t: &Targets, w: &LossWeights) -> Result<(Var, LossComponents)> {
    let cls_p = g.sigmoid(head.cls);
    let l_cls = g.bce(cls_p, t.cls.clone(), Some(t.cls_mask()))?;
    let boxes = g.decode_boxes(head.reg)?;
    let l_reg = g.iou_loss(boxes, t.boxes.clone(), t.obj.clone())?;
    let obj_p = g.sigmoid(head.obj);
    let l_obj_mean = g.bce(obj_p, t.obj.clone(), None)?;
    let cells = t.obj.len() as f64;
    let l_obj = g.scale(l_obj_mean, cells / (t.positives().max(1) as f64));
    let mut comps = LossComponents {
        cls: g.value(l_cls).item(),
        reg: g.value(l_reg).item(),
        obj: g.value(l_obj).item(),
        block: 0.0,
    };
    let a = g.scale(l_cls, w.cls);
    let b = g.scale(l_reg, w.reg);
    let c = g.scale(l_obj, w.obj);
    let mut total = g.add(a, b)?;
    total = g.add(total, c)?;
    if let Some(block) = head.block {
        let bp = g.sigmoid(block);
        let l_block = g.bce(bp, t.block.clone(), Some(t.obj.clone()))?;
        comps.block = g.value(l_block).item();
        let d = g.scale(l_block, w.block);
        total = g.add(total, d)?;
    }
    Ok((total, comps))
}
