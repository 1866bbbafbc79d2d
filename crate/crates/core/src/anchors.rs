//! Fixed-position region proposal: the 7-crop layout and the sliding-window
//! `(k+1)^2` grid.
//!
//! Anchors are half-open pixel rectangles `[x1, x2) x [y1, y2)` on a feature
//! map. Fractional coordinates are floored. Anchor lists depend only on the
//! map's spatial size and the crop settings, never on feature values.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Anchor {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

impl Anchor {
    pub fn new(x1: usize, y1: usize, x2: usize, y2: usize) -> Result<Self> {
        if x1 >= x2 {
            return Err(Error::bounds(format!("anchor x1={x1} must be < x2={x2}")));
        }
        if y1 >= y2 {
            return Err(Error::bounds(format!("anchor y1={y1} must be < y2={y2}")));
        }
        Ok(Anchor { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> usize {
        self.x2 - self.x1
    }

    pub fn height(&self) -> usize {
        self.y2 - self.y1
    }

    /// Checks the anchor is non-empty and lies inside an `h x w` frame.
    pub fn check_within(&self, h: usize, w: usize) -> Result<()> {
        if self.x1 >= self.x2 {
            return Err(Error::bounds(format!("anchor {self}: x1={} is not < x2={}", self.x1, self.x2)));
        }
        if self.y1 >= self.y2 {
            return Err(Error::bounds(format!("anchor {self}: y1={} is not < y2={}", self.y1, self.y2)));
        }
        if self.x2 > w {
            return Err(Error::bounds(format!("anchor {self}: x2={} exceeds width {w}", self.x2)));
        }
        if self.y2 > h {
            return Err(Error::bounds(format!("anchor {self}: y2={} exceeds height {h}", self.y2)));
        }
        Ok(())
    }
}

impl fmt::Display for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x1, self.y1, self.x2, self.y2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CropStrategy {
    /// Four corners, center, middle-row band, middle-column band.
    SevenCrop,
    /// `(k+1)^2` sliding windows.
    Grid,
}

impl fmt::Display for CropStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CropStrategy::SevenCrop => "7crop",
            CropStrategy::Grid => "grid",
        })
    }
}

impl FromStr for CropStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "7crop" | "seven_crop" => Ok(CropStrategy::SevenCrop),
            "grid" | "9crop" | "grid_crop" => Ok(CropStrategy::Grid),
            other => Err(Error::config(format!("unknown crop strategy {other:?} (expected 7crop or grid)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropConfig {
    pub strategy: CropStrategy,
    /// Window side as a fraction of the frame side, in `(0, 1)`.
    pub sigma: f64,
    /// Grid loop bound; the grid has `(grid_k + 1)^2` windows.
    pub grid_k: usize,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig {
            strategy: CropStrategy::SevenCrop,
            sigma: 0.5,
            grid_k: 2,
        }
    }
}

impl CropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::config(format!("crop sigma must be in (0, 1), got {}", self.sigma)));
        }
        if self.grid_k < 1 {
            return Err(Error::config("crop grid k must be >= 1"));
        }
        Ok(())
    }

    /// Number of anchors this configuration produces.
    pub fn num_anchors(&self) -> usize {
        match self.strategy {
            CropStrategy::SevenCrop => 7,
            CropStrategy::Grid => (self.grid_k + 1) * (self.grid_k + 1),
        }
    }

    /// Anchors for an `h x w` map.
    pub fn propose(&self, h: usize, w: usize) -> Result<Vec<Anchor>> {
        self.validate()?;
        match self.strategy {
            CropStrategy::SevenCrop => propose_seven(h, w, self.sigma),
            CropStrategy::Grid => propose_grid(h, w, self.sigma, self.grid_k),
        }
    }
}

fn floor_coord(v: f64) -> usize {
    v.floor().max(0.0) as usize
}

fn check_window(h: usize, w: usize, sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::config(format!("crop sigma must be in (0, 1), got {sigma}")));
    }
    let ww = floor_coord(w as f64 * sigma);
    let wh = floor_coord(h as f64 * sigma);
    if ww < 1 || wh < 1 {
        return Err(Error::config(format!(
            "crop window on a {h}x{w} map with sigma={sigma} is {wh}x{ww} after flooring; \
             use a larger sigma or a larger feature map"
        )));
    }
    Ok(())
}

fn to_anchor(h: usize, w: usize, sigma: f64, c: [f64; 4]) -> Result<Anchor> {
    let a = Anchor {
        x1: floor_coord(c[0]),
        y1: floor_coord(c[1]),
        x2: floor_coord(c[2]),
        y2: floor_coord(c[3]),
    };
    if a.x1 >= a.x2 || a.y1 >= a.y2 {
        return Err(Error::config(format!(
            "degenerate crop {a} on a {h}x{w} map with sigma={sigma}; use a larger sigma or a larger feature map"
        )));
    }
    a.check_within(h, w)?;
    Ok(a)
}

/// The seven fixed crops in order: top-left, bottom-left, top-right,
/// bottom-right, center, middle-row band, middle-column band.
pub fn propose_seven(h: usize, w: usize, sigma: f64) -> Result<Vec<Anchor>> {
    check_window(h, w, sigma)?;
    let (hf, wf) = (h as f64, w as f64);
    let lo = 1.0 - sigma;
    let hi = 1.0 + sigma;
    let coords = [
        [0.0, 0.0, wf * sigma, hf * sigma],
        [0.0, hf * lo, wf * sigma, hf],
        [wf * lo, 0.0, wf, hf * sigma],
        [wf * lo, hf * lo, wf, hf],
        [wf * lo / 2.0, hf * lo / 2.0, wf * hi / 2.0, hf * hi / 2.0],
        [0.0, hf * lo / 2.0, wf, hf * hi / 2.0],
        [wf * lo / 2.0, 0.0, wf * hi / 2.0, hf],
    ];
    coords.into_iter().map(|c| to_anchor(h, w, sigma, c)).collect()
}

/// Sliding windows of size `(h*sigma, w*sigma)` at strides
/// `h(1-sigma)/k, w(1-sigma)/k`; the outer loop walks columns, the inner rows.
pub fn propose_grid(h: usize, w: usize, sigma: f64, k: usize) -> Result<Vec<Anchor>> {
    check_window(h, w, sigma)?;
    if k < 1 {
        return Err(Error::config("grid k must be >= 1"));
    }
    let (hf, wf) = (h as f64, w as f64);
    let kf = k as f64;
    let stride_h = hf * (1.0 - sigma) / kf;
    let stride_w = wf * (1.0 - sigma) / kf;
    let mut out = Vec::with_capacity((k + 1) * (k + 1));
    for m in 0..=k {
        for n in 0..=k {
            let (mf, nf) = (m as f64, n as f64);
            out.push(to_anchor(
                h,
                w,
                sigma,
                [
                    mf * stride_w,
                    nf * stride_h,
                    mf * stride_w + wf * sigma,
                    nf * stride_h + hf * sigma,
                ],
            )?);
        }
    }
    Ok(out)
}

type AnchorLists = HashMap<(usize, usize), Arc<Vec<Anchor>>>;

/// Memoizes anchor lists by map size for one crop configuration.
#[derive(Debug)]
pub struct AnchorCache {
    cfg: CropConfig,
    lists: Mutex<AnchorLists>,
}

impl AnchorCache {
    pub fn new(cfg: CropConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(AnchorCache {
            cfg,
            lists: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &CropConfig {
        &self.cfg
    }

    pub fn get(&self, h: usize, w: usize) -> Result<Arc<Vec<Anchor>>> {
        let mut lists = self.lists.lock().expect("anchor cache poisoned");
        if let Some(a) = lists.get(&(h, w)) {
            return Ok(Arc::clone(a));
        }
        let a = Arc::new(self.cfg.propose(h, w)?);
        lists.insert((h, w), Arc::clone(&a));
        Ok(a)
    }
}

impl Clone for AnchorCache {
    fn clone(&self) -> Self {
        AnchorCache {
            cfg: self.cfg,
            lists: Mutex::new(self.lists.lock().expect("anchor cache poisoned").clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(x1: usize, y1: usize, x2: usize, y2: usize) -> Anchor {
        Anchor { x1, y1, x2, y2 }
    }

    #[test]
    fn seven_crop_on_8x8() {
        let got = propose_seven(8, 8, 0.5).unwrap();
        assert_eq!(
            got,
            vec![
                a(0, 0, 4, 4),
                a(0, 4, 4, 8),
                a(4, 0, 8, 4),
                a(4, 4, 8, 8),
                a(2, 2, 6, 6),
                a(0, 2, 8, 6),
                a(2, 0, 6, 8)
            ]
        );
    }

    #[test]
    fn seven_crop_on_4x4_quadrants() {
        let got = propose_seven(4, 4, 0.5).unwrap();
        assert_eq!(&got[..4], &[a(0, 0, 2, 2), a(0, 2, 2, 4), a(2, 0, 4, 2), a(2, 2, 4, 4)]);
        assert_eq!(got[4], a(1, 1, 3, 3));
    }

    #[test]
    fn center_crop_rotation_symmetric() {
        for s in (4..64).step_by(4) {
            let c = propose_seven(s, s, 0.5).unwrap()[4];
            // A 90 degree rotation maps (x, y) -> (s - y, x); the center window maps onto itself.
            let rotated = a(s - c.y2, c.x1, s - c.y1, c.x2);
            assert_eq!(rotated, c, "size {s}");
        }
    }

    #[test]
    fn grid_on_8x8_k2() {
        let got = propose_grid(8, 8, 0.5, 2).unwrap();
        let mut expect = Vec::new();
        for x in [0, 2, 4] {
            for y in [0, 2, 4] {
                expect.push(a(x, y, x + 4, y + 4));
            }
        }
        assert_eq!(got, expect);
    }

    #[test]
    fn grid_k1_is_corner_quadrants() {
        let got = propose_grid(8, 8, 0.5, 1).unwrap();
        assert_eq!(got, vec![a(0, 0, 4, 4), a(0, 4, 4, 8), a(4, 0, 8, 4), a(4, 4, 8, 8)]);
    }

    #[test]
    fn grid_first_anchor_is_origin_window() {
        for &sigma in &[0.2, 0.35, 0.5, 0.9] {
            let got = propose_grid(20, 13, sigma, 1).unwrap();
            assert_eq!(got[0], a(0, 0, (13.0 * sigma) as usize, (20.0 * sigma) as usize));
        }
    }

    #[test]
    fn degenerate_window_is_config_error() {
        let err = propose_seven(1, 1, 0.5).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("larger sigma")));
        assert!(propose_grid(3, 3, 0.2, 2).is_err());
        assert!(propose_seven(8, 8, 1.0).is_err());
        assert!(propose_grid(8, 8, 0.5, 0).is_err());
    }

    #[test]
    fn anchor_bounds_errors_name_coordinate() {
        let err = a(0, 0, 9, 4).check_within(8, 8).unwrap_err();
        assert!(err.to_string().contains("x2=9"));
        let err = a(0, 3, 4, 3).check_within(8, 8).unwrap_err();
        assert!(err.to_string().contains("y1=3"));
    }

    #[test]
    fn cache_returns_same_list() {
        let cache = AnchorCache::new(CropConfig::default()).unwrap();
        let x = cache.get(16, 16).unwrap();
        let y = cache.get(16, 16).unwrap();
        assert!(Arc::ptr_eq(&x, &y));
        assert_eq!(*x, propose_seven(16, 16, 0.5).unwrap());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("7crop".parse::<CropStrategy>().unwrap(), CropStrategy::SevenCrop);
        assert_eq!("grid".parse::<CropStrategy>().unwrap(), CropStrategy::Grid);
        assert!("5crop".parse::<CropStrategy>().is_err());
    }
}
