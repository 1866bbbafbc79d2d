use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motif {
    Square,
    HStripe,
    VStripe,
    Blob,
}

impl Motif {
    fn covers(self, y: usize, x: usize, m: usize) -> bool {
        match self {
            Motif::Square => true,
            Motif::HStripe => (y * 4 / m).is_multiple_of(2),
            Motif::VStripe => (x * 4 / m).is_multiple_of(2),
            Motif::Blob => {
                let r = m as f64 / 2.0;
                let dy = y as f64 + 0.5 - r;
                let dx = x as f64 + 0.5 - r;
                dy * dy + dx * dx <= r * r
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Motif::Square => "square",
            Motif::HStripe => "hstripe",
            Motif::VStripe => "vstripe",
            Motif::Blob => "blob",
        }
    }
}

/// Placement regions; the corners are the quadrants of the frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
}

impl Region {
    /// Top-left corner of an `m`-sided motif centered in the region.
    fn origin(self, size: usize, m: usize) -> (usize, usize) {
        let q = size / 4;
        let far = size - q;
        let (cy, cx) = match self {
            Region::TopLeft => (q, q),
            Region::TopRight => (q, far),
            Region::BottomLeft => (far, q),
            Region::BottomRight => (far, far),
            Region::Center => (size / 2, size / 2),
        };
        (cy - m / 2, cx - m / 2)
    }

    fn name(self) -> &'static str {
        match self {
            Region::TopLeft => "tl",
            Region::TopRight => "tr",
            Region::BottomLeft => "bl",
            Region::BottomRight => "br",
            Region::Center => "c",
        }
    }
}

impl fmt::Display for Motif {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

type Layout = [(Motif, Region); 2];

/// Classes `2p` and `2p + 1` place the same two motifs in swapped regions.
const LAYOUTS: [Layout; 8] = {
    use Motif::*;
    use Region::*;
    [
        [(Square, TopLeft), (HStripe, BottomRight)],
        [(Square, BottomRight), (HStripe, TopLeft)],
        [(VStripe, TopRight), (Blob, BottomLeft)],
        [(VStripe, BottomLeft), (Blob, TopRight)],
        [(Square, Center), (VStripe, TopLeft)],
        [(Square, TopLeft), (VStripe, Center)],
        [(HStripe, TopRight), (Blob, Center)],
        [(HStripe, Center), (Blob, TopRight)],
    ]
};

/// Class pairs that differ only in where their motifs sit.
pub const CONFUSABLE_PAIRS: [(usize, usize); 4] = [(0, 1), (2, 3), (4, 5), (6, 7)];

/// Parameters of the synthetic scene task.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub num_classes: usize,
    pub image_size: usize,
    /// Motif side in pixels; `None` means a quarter of the image.
    pub motif_size: Option<usize>,
    pub background: f64,
    pub foreground: f64,
    pub noise_std: f64,
    /// Maximum per-motif shift in pixels along each axis.
    pub jitter: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            num_classes: 8,
            image_size: 64,
            motif_size: None,
            background: 0.15,
            foreground: 0.3,
            noise_std: 0.3,
            jitter: 6,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn motif_side(&self) -> usize {
        self.motif_size.unwrap_or(self.image_size / 4)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=LAYOUTS.len()).contains(&self.num_classes) {
            return Err(Error::config(format!(
                "scene num_classes must be in 2..={}, got {}",
                LAYOUTS.len(),
                self.num_classes
            )));
        }
        let m = self.motif_side();
        if m < 2 || m + 2 * self.jitter > self.image_size / 2 {
            return Err(Error::config(format!(
                "motif of {m} px with jitter {} does not fit a quadrant of a {} px frame",
                self.jitter, self.image_size
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config(format!("noise_std must be finite and >= 0, got {}", self.noise_std)));
        }
        for v in [self.background, self.foreground] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("intensities must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    pub fn class_name(class: usize) -> String {
        LAYOUTS[class]
            .iter()
            .map(|(m, r)| format!("{}-{}", m.name(), r.name()))
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Confusable pairs present among this spec's classes.
    pub fn confusable_pairs(&self) -> Vec<(usize, usize)> {
        CONFUSABLE_PAIRS.iter().copied().filter(|&(_, b)| b < self.num_classes).collect()
    }
}

/// `count_per_class` three-channel images per class, class-major order.
/// Each sample draws from its own stream, so the set is a pure function of
/// the spec.
pub fn generate<T: Scalar>(spec: &SceneSpec, count_per_class: usize) -> Result<LabeledSet<T>> {
    spec.validate()?;
    if count_per_class == 0 {
        return Err(Error::config("count per class must be >= 1"));
    }
    let s = spec.image_size;
    let m = spec.motif_side();
    let j = spec.jitter as i64;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::config(e.to_string()))?;
    let plane = s * s;
    let mut pixels = Vec::with_capacity(spec.num_classes * count_per_class * 3 * plane);
    let mut labels = Vec::with_capacity(spec.num_classes * count_per_class);
    let mut canvas = vec![0.0f64; plane];
    for (class, layout) in LAYOUTS.iter().enumerate().take(spec.num_classes) {
        let class_seed = derive_seed(spec.seed, class as u64);
        for i in 0..count_per_class {
            let mut rng = rng_for(class_seed, i as u64);
            canvas.fill(spec.background);
            for &(motif, region) in layout {
                let (oy, ox) = region.origin(s, m);
                let (dy, dx) = if j > 0 {
                    (rng.random_range(-j..=j), rng.random_range(-j..=j))
                } else {
                    (0, 0)
                };
                let oy = oy.saturating_add_signed(dy as isize);
                let ox = ox.saturating_add_signed(dx as isize);
                for y in 0..m {
                    for x in 0..m {
                        if motif.covers(y, x, m) {
                            canvas[(oy + y) * s + ox + x] = spec.foreground;
                        }
                    }
                }
            }
            for _ in 0..3 {
                for &v in &canvas {
                    let v = if spec.noise_std > 0.0 { v + noise.sample(&mut rng) } else { v };
                    pixels.push(T::from_f64_lossy(v.clamp(0.0, 1.0)));
                }
            }
            labels.push(class);
        }
    }
    let names = (0..spec.num_classes).map(SceneSpec::class_name).collect();
    LabeledSet::new((3, s, s), pixels, labels, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_range() {
        let set: LabeledSet<f64> = generate(&SceneSpec::default(), 50).unwrap();
        assert_eq!(set.len(), 400);
        assert!(set.class_counts().iter().all(|&c| c == 50));
        assert!((0..set.len()).all(|i| set.image(i).iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn noiseless_samples_repeat() {
        let spec = SceneSpec {
            noise_std: 0.0,
            jitter: 0,
            seed: 5,
            ..SceneSpec::default()
        };
        let set: LabeledSet<f64> = generate(&spec, 2).unwrap();
        assert_eq!(set.image(0), set.image(1));
        assert_ne!(set.image(0), set.image(2));
    }

    #[test]
    fn swapped_pairs_share_global_mean() {
        let spec = SceneSpec {
            noise_std: 0.0,
            ..SceneSpec::default()
        };
        let set: LabeledSet<f64> = generate(&spec, 1).unwrap();
        for (a, b) in CONFUSABLE_PAIRS {
            let ma: f64 = set.image(a).iter().sum::<f64>() / set.image(a).len() as f64;
            let mb: f64 = set.image(b).iter().sum::<f64>() / set.image(b).len() as f64;
            assert!((ma - mb).abs() < 1e-9, "pair ({a},{b}): {ma} vs {mb}");
            assert_ne!(set.image(a), set.image(b));
        }
    }

    #[test]
    fn oversized_motif_is_config_error() {
        let spec = SceneSpec {
            motif_size: Some(40),
            ..SceneSpec::default()
        };
        assert!(matches!(generate::<f64>(&spec, 1), Err(Error::Config(_))));
    }

    #[test]
    fn seed_determinism() {
        let spec = SceneSpec {
            jitter: 2,
            seed: 11,
            ..SceneSpec::default()
        };
        let a: LabeledSet<f64> = generate(&spec, 3).unwrap();
        let b: LabeledSet<f64> = generate(&spec, 3).unwrap();
        assert_eq!(a, b);
    }
}
