//! Shape algebra of the three branches, evaluated without touching data.
//!
//! The fusion recurrence adds `cs_fg(F_{i+1})` to `g_i(G_i)`. The
//! channel-separate generator halves the spatial size, and `g_i` copies
//! stage `i+1` of the backbone (channel growth and stride), so both operands
//! land on `(C_{i+1}, H_{i+1}/2, W_{i+1}/2)` whenever the stage strides are
//! consistent. [`ShapePlan::new`] checks this for a given input size when a
//! model is built.

use std::fmt;

use crate::anchors::CropConfig;
use crate::error::{Error, Result};
use crate::generators::channel_ranges;

use super::config::{BackboneConfig, ModelConfig, StageConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpatialShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl fmt::Display for SpatialShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    pub input: SpatialShape,
    /// `F_0 .. F_4`.
    pub main: [SpatialShape; 5],
    /// `G_0 .. G_4`.
    pub fused: [SpatialShape; 5],
    /// Lengths of `v_3` and `v_4`.
    pub fem_len: [usize; 2],
}

fn stage_out(stage: &StageConfig, s: SpatialShape) -> SpatialShape {
    SpatialShape {
        c: stage.out_channels,
        h: s.h.div_ceil(stage.stride),
        w: s.w.div_ceil(stage.stride),
    }
}

/// Output shape of the channel-separate generator, or why it cannot run.
pub(crate) fn cs_shape(crop: &CropConfig, s: SpatialShape) -> Result<SpatialShape> {
    if s.h < 2 || s.w < 2 {
        return Err(Error::config(format!("channel-separate generator needs at least 2x2, got {s}")));
    }
    let anchors = crop.propose(s.h, s.w)?;
    channel_ranges(s.c, anchors.len())?;
    let (oh, ow) = (s.h / 2, s.w / 2);
    for a in &anchors {
        if a.height() < oh || a.width() < ow {
            return Err(Error::config(format!(
                "crop {a} on a {s} map is smaller than the pooled {oh}x{ow} patch; use sigma >= 0.5"
            )));
        }
    }
    Ok(SpatialShape { c: s.c, h: oh, w: ow })
}

/// Shapes `F_0 .. F_4` for an `h x w` input.
pub fn main_shapes(b: &BackboneConfig, h: usize, w: usize) -> Result<[SpatialShape; 5]> {
    let mut s = SpatialShape {
        c: b.stem.out_channels,
        h: h.div_ceil(b.stem.stride),
        w: w.div_ceil(b.stem.stride),
    };
    if b.stem.pool {
        s.h /= 2;
        s.w /= 2;
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::config(format!("input {h}x{w} is too small for the stem")));
    }
    let mut out = [s; 5];
    for (i, stage) in b.stages.iter().enumerate() {
        s = stage_out(stage, s);
        out[i + 1] = s;
    }
    Ok(out)
}

/// Shapes `G_0 .. G_4`, failing with the offending level if the fusion
/// addition is not shape-legal.
pub fn fused_shapes(b: &BackboneConfig, crop: &CropConfig, main: &[SpatialShape; 5]) -> Result<[SpatialShape; 5]> {
    let mut g = [cs_shape(crop, main[0])?; 5];
    for i in 0..3 {
        let fresh = cs_shape(crop, main[i + 1])?;
        let carried = stage_out(&b.stages[i], g[i]);
        if fresh != carried {
            return Err(Error::shape(format!(
                "fusion level {i}: cs_fg(F_{}) is {fresh} but g_{i}(G_{i}) is {carried}",
                i + 1
            )));
        }
        g[i + 1] = fresh;
    }
    g[4] = stage_out(&b.stages[3], g[3]);
    Ok(g)
}

impl ShapePlan {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let b = &cfg.backbone;
        let input = SpatialShape {
            c: b.in_channels,
            h: cfg.input_size,
            w: cfg.input_size,
        };
        let main = main_shapes(b, input.h, input.w)?;
        let fused = fused_shapes(b, &cfg.crop, &main)?;
        let k = cfg.crop.num_anchors();
        for level in [3, 4] {
            cfg.crop.propose(main[level].h, main[level].w).map_err(|e| {
                Error::config(format!("ensemble head on F_{level} ({}): {e}", main[level]))
            })?;
        }
        Ok(ShapePlan {
            input,
            main,
            fused,
            fem_len: [main[3].c * k, main[4].c * k],
        })
    }
}
