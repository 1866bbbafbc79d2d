use std::fmt;
use std::str::FromStr;

use crate::anchors::CropConfig;
use crate::error::{Error, Result};

/// Branch loss weights `(main, fusion, ensemble level 3, ensemble level 4)`.
pub const DEFAULT_LAMBDA: [f64; 4] = [1.0, 0.5, 0.2, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StemConfig {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
    /// Halve the spatial size with a 2x2 average pool after the convolution.
    pub pool: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageConfig {
    pub blocks: usize,
    pub out_channels: usize,
    /// Stride of the stage's first block.
    pub stride: usize,
    pub residual: bool,
}

/// Stem plus exactly four stages (levels 1 to 4).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub name: String,
    pub in_channels: usize,
    pub stem: StemConfig,
    pub stages: [StageConfig; 4],
}

impl BackboneConfig {
    fn staged(name: &str, stem: StemConfig, blocks: [usize; 4], channels: [usize; 4]) -> Self {
        let strides = [1, 2, 2, 2];
        let stages = std::array::from_fn(|i| StageConfig {
            blocks: blocks[i],
            out_channels: channels[i],
            stride: strides[i],
            residual: true,
        });
        BackboneConfig {
            name: name.to_string(),
            in_channels: 3,
            stem,
            stages,
        }
    }

    /// 7x7 stride-2 stem with pooling, basic residual blocks `[3, 4, 6, 3]`
    /// at widths `[64, 128, 256, 512]`.
    pub fn resnet34_like() -> Self {
        Self::staged(
            "resnet34-like",
            StemConfig {
                kernel: 7,
                stride: 2,
                out_channels: 64,
                pool: true,
            },
            [3, 4, 6, 3],
            [64, 128, 256, 512],
        )
    }

    /// One residual block per stage at widths `[16, 32, 64, 128]`.
    pub fn tiny() -> Self {
        Self::staged(
            "tiny",
            StemConfig {
                kernel: 3,
                stride: 2,
                out_channels: 16,
                pool: true,
            },
            [1, 1, 1, 1],
            [16, 32, 64, 128],
        )
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "resnet34-like" | "resnet34" => Ok(Self::resnet34_like()),
            other => Err(Error::config(format!(
                "unknown backbone preset {other:?} (expected tiny or resnet34-like)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.stem.out_channels == 0 {
            return Err(Error::config("backbone channel counts must be >= 1"));
        }
        if self.stem.kernel != 3 && self.stem.kernel != 7 {
            return Err(Error::config(format!("stem kernel must be 3 or 7, got {}", self.stem.kernel)));
        }
        if !(1..=2).contains(&self.stem.stride) {
            return Err(Error::config(format!("stem stride must be 1 or 2, got {}", self.stem.stride)));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if !(1..=2).contains(&s.stride) {
                return Err(Error::config(format!("stage {} stride must be 1 or 2, got {}", i + 1, s.stride)));
            }
            if s.blocks == 0 || s.out_channels == 0 {
                return Err(Error::config(format!("stage {} needs >= 1 block and >= 1 channel", i + 1)));
            }
        }
        Ok(())
    }

    /// Channel count of `F_i` for `i` in `0..=4`.
    pub fn level_channels(&self, level: usize) -> usize {
        if level == 0 {
            self.stem.out_channels
        } else {
            self.stages[level - 1].out_channels
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub crop: CropConfig,
    pub num_classes: usize,
    pub lambda: [f64; 4],
    /// Side of the square input images the model is built for.
    pub input_size: usize,
}

impl ModelConfig {
    pub fn new(backbone: BackboneConfig, num_classes: usize, input_size: usize) -> Self {
        ModelConfig {
            backbone,
            crop: CropConfig::default(),
            num_classes,
            lambda: DEFAULT_LAMBDA,
            input_size,
        }
    }

    pub fn tiny(num_classes: usize) -> Self {
        Self::new(BackboneConfig::tiny(), num_classes, 64)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.crop.validate()?;
        if self.num_classes < 2 {
            return Err(Error::config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if let Some(l) = self.lambda.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::config(format!("branch weights must be finite and >= 0, got {l}")));
        }
        if self.input_size == 0 {
            return Err(Error::config("input_size must be >= 1"));
        }
        Ok(())
    }
}

/// Which auxiliary branches run; the main branch always does.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BranchSet {
    pub ffb: bool,
    pub fem: bool,
}

impl BranchSet {
    pub const MAIN_ONLY: BranchSet = BranchSet { ffb: false, fem: false };
    pub const FULL: BranchSet = BranchSet { ffb: true, fem: true };

    /// Parses a comma list drawn from `mb`, `ffb`, `fem`; `mb` is mandatory.
    pub fn parse_list(s: &str) -> Result<Self> {
        let mut mb = false;
        let mut set = BranchSet::MAIN_ONLY;
        let mut any = false;
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            any = true;
            match tok {
                "mb" | "main" => mb = true,
                "ffb" => set.ffb = true,
                "fem" => set.fem = true,
                other => return Err(Error::config(format!("unknown branch {other:?} (expected mb, ffb, fem)"))),
            }
        }
        if !any {
            return Err(Error::config("branch selection is empty"));
        }
        if !mb {
            return Err(Error::config("branch selection must include the main branch (mb)"));
        }
        Ok(set)
    }
}

impl FromStr for BranchSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_list(s)
    }
}

impl fmt::Display for BranchSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("mb")?;
        if self.ffb {
            f.write_str(",ffb")?;
        }
        if self.fem {
            f.write_str(",fem")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let r = BackboneConfig::resnet34_like();
        assert_eq!(r.stages.map(|s| s.blocks), [3, 4, 6, 3]);
        assert_eq!(r.stages.map(|s| s.out_channels), [64, 128, 256, 512]);
        let t = BackboneConfig::from_preset("tiny").unwrap();
        assert_eq!(t.stages.map(|s| s.out_channels), [16, 32, 64, 128]);
        assert!(BackboneConfig::from_preset("vgg16").is_err());
    }

    #[test]
    fn branch_lists() {
        assert_eq!(BranchSet::parse_list("mb").unwrap(), BranchSet::MAIN_ONLY);
        assert_eq!(BranchSet::parse_list("mb,ffb,fem").unwrap(), BranchSet::FULL);
        assert!(BranchSet::parse_list("").is_err());
        assert!(BranchSet::parse_list("ffb,fem").is_err());
        assert!(BranchSet::parse_list("mb,xyz").is_err());
        assert_eq!(BranchSet::FULL.to_string(), "mb,ffb,fem");
    }

    #[test]
    fn model_config_checks() {
        let mut c = ModelConfig::tiny(8);
        c.validate().unwrap();
        c.lambda[2] = -0.1;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny(1);
        assert!(c.validate().is_err());
        c.num_classes = 2;
        c.backbone.stages[1].stride = 3;
        assert!(c.validate().is_err());
    }
}
