//! Flat `key = value` experiment files.
//!
//! ```text
//! # comments run to the end of the line
//! backbone.preset = tiny
//! num_classes = 8
//! data.source = synthetic
//! crop.strategy = 7crop
//! schedule.preset = desk
//! ```
//!
//! `backbone.preset`, `num_classes` and `data.source` are required; every
//! other key has a default, and the schedule defaults to the `long` preset.
//! Unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::anchors::CropStrategy;
use crate::data::{self, LabeledSet, SceneSpec, SplitSpec};
use crate::error::{Error, Result};
use crate::net::{BackboneConfig, BranchSet, ModelConfig};
use crate::scalar::Scalar;
use crate::train::TrainConfig;

const REQUIRED: [&str; 3] = ["backbone.preset", "num_classes", "data.source"];

const KNOWN: [&str; 33] = [
    "backbone.preset",
    "num_classes",
    "input_size",
    "crop.strategy",
    "crop.sigma",
    "crop.k",
    "lambda.1",
    "lambda.2",
    "lambda.3",
    "lambda.4",
    "optimizer.lr",
    "optimizer.momentum",
    "optimizer.weight_decay",
    "schedule.preset",
    "schedule.epochs",
    "schedule.batch_size",
    "schedule.milestones",
    "schedule.factor",
    "train.seed",
    "train.runs",
    "train.branches",
    "train.eval_every",
    "data.source",
    "data.per_class",
    "data.image_size",
    "data.noise_std",
    "data.jitter",
    "data.motif_size",
    "data.foreground",
    "data.background",
    "data.seed",
    "data.training_rate",
    "data.split_seed",
];

/// Where samples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic { spec: SceneSpec, per_class: usize },
    /// Image directory or manifest file.
    Images(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub split: SplitSpec,
}

impl DataConfig {
    /// Builds the labeled set and splits it into `(train, test)`.
    pub fn load<T: Scalar>(&self) -> Result<(LabeledSet<T>, LabeledSet<T>)> {
        let set = match &self.source {
            DataSource::Synthetic { spec, per_class } => data::generate(spec, *per_class)?,
            DataSource::Images(path) => data::load_image_dir(path)?,
        };
        data::split(&set, self.split)
    }
}

/// Everything one experiment needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

struct Entries<'a> {
    path: &'a Path,
    map: BTreeMap<String, (usize, String)>,
}

impl Entries<'_> {
    fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .parse()
                .map(Some)
                .map_err(|e| Error::parse(self.path, format!("line {line}: bad value {raw:?} for {key}: {e}"))),
        }
    }

    fn set<V: FromStr>(&self, key: &str, slot: &mut V) -> Result<()>
    where
        V::Err: fmt::Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| v.as_str())
    }
}

fn parse_list(path: &Path, key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::parse(path, format!("bad entry {s:?} in {key}")))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::parse(path, e.to_string()))?;
        Self::parse(&text, path)
    }

    /// Parses file contents; `path` labels errors and anchors relative
    /// `data.source` paths.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, format!("line {lineno}: expected key = value")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN.contains(&k) {
                return Err(Error::parse(path, format!("line {lineno}: unknown key {k:?}")));
            }
            if map.insert(k.to_string(), (lineno, v.to_string())).is_some() {
                return Err(Error::parse(path, format!("line {lineno}: key {k:?} given twice")));
            }
        }
        for key in REQUIRED {
            if !map.contains_key(key) {
                return Err(Error::parse(path, format!("missing required key {key}")));
            }
        }
        let e = Entries { path, map };

        let preset: String = e.get("backbone.preset")?.expect("required");
        let backbone = BackboneConfig::from_preset(&preset)?;
        let default_size = if backbone.name == "tiny" { 64 } else { 224 };
        let num_classes = e.get("num_classes")?.expect("required");
        let input_size = e.get("input_size")?.unwrap_or(default_size);
        let mut model = ModelConfig::new(backbone, num_classes, input_size);
        if let Some(s) = e.get::<CropStrategy>("crop.strategy")? {
            model.crop.strategy = s;
        }
        e.set("crop.sigma", &mut model.crop.sigma)?;
        e.set("crop.k", &mut model.crop.grid_k)?;
        for i in 0..4 {
            e.set(&format!("lambda.{}", i + 1), &mut model.lambda[i])?;
        }

        let mut train = match e.raw("schedule.preset") {
            Some(p) => TrainConfig::from_preset(p)?,
            None => TrainConfig::long(),
        };
        e.set("optimizer.lr", &mut train.base_lr)?;
        e.set("optimizer.momentum", &mut train.momentum)?;
        e.set("optimizer.weight_decay", &mut train.weight_decay)?;
        e.set("schedule.epochs", &mut train.epochs)?;
        e.set("schedule.batch_size", &mut train.batch_size)?;
        e.set("schedule.factor", &mut train.lr_factor)?;
        if let Some(raw) = e.raw("schedule.milestones") {
            train.milestones = parse_list(path, "schedule.milestones", raw)?;
        }
        e.set("train.seed", &mut train.seed)?;
        e.set("train.runs", &mut train.runs)?;
        e.set("train.eval_every", &mut train.eval_every)?;
        if let Some(raw) = e.raw("train.branches") {
            train.branches = BranchSet::parse_list(raw)?;
        }

        let source_raw = e.raw("data.source").expect("required");
        let source = if source_raw == "synthetic" {
            let mut spec = SceneSpec {
                num_classes,
                ..SceneSpec::default()
            };
            e.set("data.image_size", &mut spec.image_size)?;
            e.set("data.noise_std", &mut spec.noise_std)?;
            e.set("data.jitter", &mut spec.jitter)?;
            e.set("data.foreground", &mut spec.foreground)?;
            e.set("data.background", &mut spec.background)?;
            e.set("data.seed", &mut spec.seed)?;
            spec.motif_size = e.get("data.motif_size")?;
            let mut per_class = 50;
            e.set("data.per_class", &mut per_class)?;
            spec.validate()?;
            DataSource::Synthetic { spec, per_class }
        } else {
            for key in KNOWN.iter().filter(|k| SYNTHETIC_ONLY.contains(k)) {
                if e.map.contains_key(*key) {
                    return Err(Error::parse(path, format!("{key} only applies to data.source = synthetic")));
                }
            }
            let base = path.parent().unwrap_or(Path::new("."));
            DataSource::Images(base.join(source_raw))
        };
        let mut split = SplitSpec {
            training_rate: 0.5,
            seed: 0,
        };
        e.set("data.training_rate", &mut split.training_rate)?;
        e.set("data.split_seed", &mut split.seed)?;

        let cfg = ExperimentConfig {
            model,
            train,
            data: DataConfig { source, split },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        crate::net::ShapePlan::new(&self.model)?;
        self.train.validate()?;
        let rate = self.data.split.training_rate;
        if !(rate > 0.0 && rate < 1.0) {
            return Err(Error::config(format!("data.training_rate must lie in (0, 1), got {rate}")));
        }
        if let DataSource::Synthetic { spec, .. } = &self.data.source {
            if spec.image_size != self.model.input_size {
                return Err(Error::config(format!(
                    "data.image_size {} differs from input_size {}",
                    spec.image_size, self.model.input_size
                )));
            }
        }
        Ok(())
    }
}

const SYNTHETIC_ONLY: [&str; 8] = [
    "data.per_class",
    "data.image_size",
    "data.noise_std",
    "data.jitter",
    "data.motif_size",
    "data.foreground",
    "data.background",
    "data.seed",
];

impl fmt::Display for ExperimentConfig {
    /// Renders every setting as a file that parses back to `self`
    /// (relative image paths become absolute).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.model;
        let t = &self.train;
        writeln!(f, "backbone.preset = {}", m.backbone.name)?;
        writeln!(f, "num_classes = {}", m.num_classes)?;
        writeln!(f, "input_size = {}", m.input_size)?;
        writeln!(f, "crop.strategy = {}", m.crop.strategy)?;
        writeln!(f, "crop.sigma = {}", m.crop.sigma)?;
        writeln!(f, "crop.k = {}", m.crop.grid_k)?;
        for (i, l) in m.lambda.iter().enumerate() {
            writeln!(f, "lambda.{} = {l}", i + 1)?;
        }
        writeln!(f, "optimizer.lr = {}", t.base_lr)?;
        writeln!(f, "optimizer.momentum = {}", t.momentum)?;
        writeln!(f, "optimizer.weight_decay = {}", t.weight_decay)?;
        writeln!(f, "schedule.epochs = {}", t.epochs)?;
        writeln!(f, "schedule.batch_size = {}", t.batch_size)?;
        let ms: Vec<String> = t.milestones.iter().map(usize::to_string).collect();
        writeln!(f, "schedule.milestones = {}", ms.join(","))?;
        writeln!(f, "schedule.factor = {}", t.lr_factor)?;
        writeln!(f, "train.seed = {}", t.seed)?;
        writeln!(f, "train.runs = {}", t.runs)?;
        writeln!(f, "train.branches = {}", t.branches)?;
        writeln!(f, "train.eval_every = {}", t.eval_every)?;
        match &self.data.source {
            DataSource::Synthetic { spec, per_class } => {
                writeln!(f, "data.source = synthetic")?;
                writeln!(f, "data.per_class = {per_class}")?;
                writeln!(f, "data.image_size = {}", spec.image_size)?;
                writeln!(f, "data.noise_std = {}", spec.noise_std)?;
                writeln!(f, "data.jitter = {}", spec.jitter)?;
                if let Some(m) = spec.motif_size {
                    writeln!(f, "data.motif_size = {m}")?;
                }
                writeln!(f, "data.foreground = {}", spec.foreground)?;
                writeln!(f, "data.background = {}", spec.background)?;
                writeln!(f, "data.seed = {}", spec.seed)?;
            }
            DataSource::Images(p) => writeln!(f, "data.source = {}", p.display())?,
        }
        writeln!(f, "data.training_rate = {}", self.data.split.training_rate)?;
        writeln!(f, "data.split_seed = {}", self.data.split.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "backbone.preset = tiny\nnum_classes = 8\ndata.source = synthetic\n";

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("exp.cfg"))
    }

    #[test]
    fn minimal_uses_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.model.input_size, 64);
        assert_eq!(c.model.lambda, [1.0, 0.5, 0.2, 0.5]);
        assert_eq!(c.train, TrainConfig::long());
        assert_eq!(c.data.split.training_rate, 0.5);
    }

    #[test]
    fn missing_key_is_named() {
        let e = parse("backbone.preset = tiny\ndata.source = synthetic\n").unwrap_err();
        assert!(e.is_config_class());
        assert!(e.to_string().contains("num_classes"), "{e}");
    }

    #[test]
    fn unknown_and_repeated_keys() {
        let e = parse(&format!("{MINIMAL}crop.sgima = 0.5\n")).unwrap_err();
        assert!(e.to_string().contains("crop.sgima"));
        let e = parse(&format!("{MINIMAL}num_classes = 4\n")).unwrap_err();
        assert!(e.to_string().contains("twice"));
        let e = parse(&format!("{MINIMAL}crop.sigma = big\n")).unwrap_err();
        assert!(e.to_string().contains("line 4"));
    }

    #[test]
    fn overrides_apply_over_preset() {
        let c = parse(&format!(
            "{MINIMAL}schedule.preset = long\nschedule.epochs = 3 # short\nschedule.milestones = 1, 2\n\
             crop.strategy = grid\ncrop.k = 1\nlambda.3 = 0\ntrain.branches = mb,fem\n"
        ))
        .unwrap();
        assert_eq!((c.train.epochs, c.train.batch_size), (3, 64));
        assert_eq!(c.train.milestones, vec![1, 2]);
        assert_eq!(c.model.crop.strategy, CropStrategy::Grid);
        assert_eq!(c.model.crop.num_anchors(), 4);
        assert_eq!(c.model.lambda[2], 0.0);
        assert_eq!(c.train.branches, BranchSet { ffb: false, fem: true });
    }

    #[test]
    fn display_round_trips() {
        let c = parse(&format!("{MINIMAL}data.jitter = 3\ndata.motif_size = 12\ntrain.seed = 9\n")).unwrap();
        assert_eq!(parse(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn semantic_errors_are_config_class() {
        for extra in ["crop.sigma = 0.2\n", "lambda.1 = -1\n", "schedule.epochs = 0\n", "data.image_size = 32\n"] {
            let e = parse(&format!("{MINIMAL}{extra}")).unwrap_err();
            assert!(e.is_config_class(), "{extra}: {e}");
        }
    }
}
