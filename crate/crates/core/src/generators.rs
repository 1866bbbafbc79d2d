//! Channel-separate and full-channel feature generators.
//!
//! Both crop a feature map with the region-proposal anchors. The
//! channel-separate generator gives patch `j` its own contiguous slice of
//! channels, pools each patch to half the map size and re-concatenates, so
//! the output has the input's channel count at half the resolution. The
//! full-channel generator keeps every channel of every patch and reduces each
//! to its spatial mean, producing a `C * k` vector.

use std::ops::Range;
use std::sync::Arc;

use crate::anchors::{Anchor, AnchorCache, CropConfig};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Channel slices for `k` patches over `c` channels: `floor(c/k)` each, the
/// last one absorbing the remainder.
pub fn channel_ranges(c: usize, k: usize) -> Result<Vec<Range<usize>>> {
    if k == 0 {
        return Err(Error::config("at least one patch is required"));
    }
    if c < k {
        return Err(Error::config(format!(
            "channel-separate extraction needs at least one channel per patch: {c} channels for {k} patches"
        )));
    }
    let per = c / k;
    Ok((0..k)
        .map(|j| {
            let lo = j * per;
            let hi = if j == k - 1 { c } else { (j + 1) * per };
            lo..hi
        })
        .collect())
}

/// Traced channel-separate extraction of `f` over `anchors`.
pub fn channel_separate_extract_traced<T: Scalar>(tape: &mut Tape<T>, f: Var, anchors: &[Anchor]) -> Result<Var> {
    let s = tape.shape(f);
    if s.h < 2 || s.w < 2 {
        return Err(Error::shape(format!(
            "channel-separate extraction needs a map of at least 2x2, got {s}"
        )));
    }
    let ranges = channel_ranges(s.c, anchors.len())?;
    let (out_h, out_w) = (s.h / 2, s.w / 2);
    let mut parts = Vec::with_capacity(anchors.len());
    for (a, r) in anchors.iter().zip(ranges) {
        a.check_within(s.h, s.w)?;
        let sliced = tape.slice_channels(f, r.start, r.end)?;
        let cropped = tape.crop_spatial(sliced, *a)?;
        parts.push(tape.adaptive_avg_pool(cropped, out_h, out_w)?);
    }
    tape.concat_channels(&parts)
}

/// Traced full-channel extraction: per-anchor global means, concatenated.
pub fn full_channel_extract_traced<T: Scalar>(tape: &mut Tape<T>, f: Var, anchors: &[Anchor]) -> Result<Var> {
    if anchors.is_empty() {
        return Err(Error::config("at least one anchor is required"));
    }
    let s = tape.shape(f);
    let mut parts = Vec::with_capacity(anchors.len());
    for a in anchors {
        a.check_within(s.h, s.w)?;
        let cropped = tape.crop_spatial(f, *a)?;
        parts.push(tape.global_avg_pool(cropped));
    }
    tape.concat_channels(&parts)
}

fn eval<T: Scalar>(f: &Tensor<T>, op: impl FnOnce(&mut Tape<T>, Var) -> Result<Var>) -> Result<Tensor<T>> {
    let mut tape = Tape::inference();
    let x = tape.constant(f.clone());
    let y = op(&mut tape, x)?;
    Ok(tape.value(y).clone())
}

pub fn channel_separate_extract<T: Scalar>(f: &Tensor<T>, anchors: &[Anchor]) -> Result<Tensor<T>> {
    eval(f, |t, x| channel_separate_extract_traced(t, x, anchors))
}

pub fn full_channel_extract<T: Scalar>(f: &Tensor<T>, anchors: &[Anchor]) -> Result<Tensor<T>> {
    eval(f, |t, x| full_channel_extract_traced(t, x, anchors))
}

/// Region proposal followed by channel-separate extraction.
pub fn cs_fg<T: Scalar>(f: &Tensor<T>, cfg: &CropConfig) -> Result<Tensor<T>> {
    let s = f.shape();
    channel_separate_extract(f, &cfg.propose(s.h, s.w)?)
}

/// Region proposal followed by full-channel extraction.
pub fn fc_fg<T: Scalar>(f: &Tensor<T>, cfg: &CropConfig) -> Result<Tensor<T>> {
    let s = f.shape();
    full_channel_extract(f, &cfg.propose(s.h, s.w)?)
}

/// Both generators bound to one crop configuration, with anchors memoized
/// per map size.
#[derive(Clone, Debug)]
pub struct FeatureGenerator {
    anchors: AnchorCache,
}

impl FeatureGenerator {
    pub fn new(cfg: CropConfig) -> Result<Self> {
        Ok(FeatureGenerator {
            anchors: AnchorCache::new(cfg)?,
        })
    }

    pub fn config(&self) -> &CropConfig {
        self.anchors.config()
    }

    pub fn anchors(&self, h: usize, w: usize) -> Result<Arc<Vec<Anchor>>> {
        self.anchors.get(h, w)
    }

    pub fn cs_fg<T: Scalar>(&self, tape: &mut Tape<T>, f: Var) -> Result<Var> {
        let s = tape.shape(f);
        let anchors = self.anchors.get(s.h, s.w)?;
        channel_separate_extract_traced(tape, f, &anchors)
    }

    pub fn fc_fg<T: Scalar>(&self, tape: &mut Tape<T>, f: Var) -> Result<Var> {
        let s = tape.shape(f);
        let anchors = self.anchors.get(s.h, s.w)?;
        full_channel_extract_traced(tape, f, &anchors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::{propose_seven, CropStrategy};
    use crate::tensor::Shape;

    #[test]
    fn ranges_for_512_and_8() {
        let r = channel_ranges(512, 7).unwrap();
        assert_eq!(r[0], 0..73);
        assert_eq!(r[1], 73..146);
        assert_eq!(r[6], 438..512);
        let r = channel_ranges(8, 7).unwrap();
        assert_eq!(&r[..6], &[0..1, 1..2, 2..3, 3..4, 4..5, 5..6]);
        assert_eq!(r[6], 6..8);
        assert!(matches!(channel_ranges(6, 7), Err(Error::Config(_))));
    }

    #[test]
    fn constant_channels_survive() {
        let f = Tensor::from_fn(Shape::new(1, 7, 4, 4).unwrap(), |_, c, _, _| c as f64);
        let out = cs_fg(&f, &CropConfig::default()).unwrap();
        assert_eq!(out.shape().dims(), [1, 7, 2, 2]);
        for c in 0..7 {
            for i in 0..4 {
                assert_eq!(out.data()[c * 4 + i], c as f64);
            }
        }
    }

    #[test]
    fn spatial_halving_and_odd_floor() {
        let f = Tensor::<f64>::full(Shape::new(1, 64, 16, 16).unwrap(), 1.0);
        assert_eq!(cs_fg(&f, &CropConfig::default()).unwrap().shape().dims(), [1, 64, 8, 8]);
        let g = Tensor::<f64>::full(Shape::new(1, 7, 5, 5).unwrap(), 1.0);
        assert_eq!(cs_fg(&g, &CropConfig::default()).unwrap().shape().dims(), [1, 7, 2, 2]);
    }

    #[test]
    fn too_few_channels_is_config_error() {
        let f = Tensor::<f64>::full(Shape::new(1, 6, 8, 8).unwrap(), 1.0);
        assert!(matches!(cs_fg(&f, &CropConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn full_channel_constant_channels() {
        let f = Tensor::from_fn(Shape::new(1, 2, 8, 8).unwrap(), |_, c, _, _| if c == 0 { 0.25 } else { -3.0 });
        let v = fc_fg(&f, &CropConfig::default()).unwrap();
        assert_eq!(v.shape().dims(), [1, 14, 1, 1]);
        for j in 0..7 {
            assert_eq!(&v.data()[2 * j..2 * j + 2], &[0.25, -3.0]);
        }
    }

    #[test]
    fn full_channel_column_ramp_orders_corners() {
        let f = Tensor::from_fn(Shape::new(1, 1, 8, 8).unwrap(), |_, _, _, w| w as f64);
        let v = fc_fg(&f, &CropConfig::default()).unwrap();
        let d = v.data();
        // anchors 0,1 are the left corners, 2,3 the right corners
        assert!(d[0] < d[2] && d[0] < d[3] && d[1] < d[2] && d[1] < d[3]);
    }

    #[test]
    fn full_channel_lengths() {
        let f = Tensor::<f64>::full(Shape::new(1, 64, 4, 4).unwrap(), 1.0);
        assert_eq!(fc_fg(&f, &CropConfig::default()).unwrap().shape().c, 448);
        let grid = CropConfig {
            strategy: CropStrategy::Grid,
            ..CropConfig::default()
        };
        assert_eq!(fc_fg(&f, &grid).unwrap().shape().dims(), [1, 576, 1, 1]);
    }

    #[test]
    fn composition_matches_two_step() {
        let f = Tensor::from_fn(Shape::new(2, 9, 6, 6).unwrap(), |n, c, h, w| ((n + c * h + w) as f64).sin());
        let anchors = propose_seven(6, 6, 0.5).unwrap();
        let cfg = CropConfig::default();
        assert_eq!(cs_fg(&f, &cfg).unwrap(), channel_separate_extract(&f, &anchors).unwrap());
        assert_eq!(fc_fg(&f, &cfg).unwrap(), full_channel_extract(&f, &anchors).unwrap());
    }

    #[test]
    fn invalid_anchor_is_bounds_error() {
        let f = Tensor::<f64>::full(Shape::new(1, 7, 4, 4).unwrap(), 1.0);
        let mut anchors = propose_seven(4, 4, 0.5).unwrap();
        anchors[3].x2 = 5;
        assert!(matches!(channel_separate_extract(&f, &anchors), Err(Error::Bounds(_))));
        assert!(matches!(full_channel_extract(&f, &anchors), Err(Error::Bounds(_))));
    }
}
