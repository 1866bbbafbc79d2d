//! Labeled image sets: a synthetic structured-scene generator, stratified
//! splits, and a reader for directories of binary PPM/PGM files.

mod pnm;
mod scene;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub use pnm::{read_pnm, write_pnm, PnmImage};
pub use scene::{generate, Motif, Region, SceneSpec, CONFUSABLE_PAIRS};

/// Images of identical shape `(c, h, w)` with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet<T> {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<T>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl<T: Scalar> LabeledSet<T> {
    pub fn new(
        (channels, height, width): (usize, usize, usize),
        pixels: Vec<T>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!("image shape {channels}x{height}x{width} has a zero dimension")));
        }
        if pixels.len() != labels.len() * channels * height * width {
            return Err(Error::shape(format!(
                "{} pixels do not hold {} images of {channels}x{height}x{width}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Domain(format!("label {l} with only {} classes", class_names.len())));
        }
        Ok(LabeledSet {
            channels,
            height,
            width,
            pixels,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `(c, h, w)` of every image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[T] {
        let len = self.image_len();
        &self.pixels[i * len..(i + 1) * len]
    }

    /// Stacks the listed samples into one `(indices.len(), c, h, w)` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let shape = Shape::new(indices.len(), self.channels, self.height, self.width)?;
        let mut data = Vec::with_capacity(shape.numel());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::bounds(format!("sample {i} of a set of {}", self.len())));
            }
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(shape, data)
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::bounds(format!("sample {i} of a set of {}", self.len())));
            }
            pixels.extend_from_slice(self.image(i));
        }
        Ok(LabeledSet {
            pixels,
            labels: self.batch_labels(indices),
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> Self {
        LabeledSet {
            channels: self.channels,
            height: self.height,
            width: self.width,
            pixels: Vec::new(),
            labels: Vec::new(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn cast<U: Scalar>(&self) -> LabeledSet<U> {
        LabeledSet {
            channels: self.channels,
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        }
    }
}

impl<T> fmt::Display for LabeledSet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} images of {}x{}x{} in {} classes",
            self.labels.len(),
            self.channels,
            self.height,
            self.width,
            self.class_names.len()
        )
    }
}

/// Fraction of each class that goes to training, and the shuffle seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub training_rate: f64,
    pub seed: u64,
}

/// Stratified split. Each class contributes `round(rate * count)` samples
/// to the training side; both sides keep the original sample order.
pub fn split<T: Scalar>(set: &LabeledSet<T>, spec: SplitSpec) -> Result<(LabeledSet<T>, LabeledSet<T>)> {
    let rate = spec.training_rate;
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::config(format!("training rate must lie in (0, 1), got {rate}")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..set.num_classes() {
        let mut members: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == class).collect();
        let n_train = (rate * members.len() as f64).round() as usize;
        if n_train == 0 || n_train == members.len() {
            return Err(Error::config(format!(
                "training rate {rate} leaves class {:?} ({} samples) with an empty side",
                set.class_names[class],
                members.len()
            )));
        }
        members.shuffle(&mut rng_for(spec.seed, class as u64));
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((set.subset(&train)?, set.subset(&test)?))
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("ppm" | "pgm")
    )
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// Reads a labeled image set.
///
/// `path` is either a directory laid out as `<root>/<class>/<image>.ppm|.pgm`
/// or a manifest file of `relative_path<TAB>class_name` lines (relative to
/// the manifest's directory). Samples are ordered by path and classes are
/// numbered in sorted name order; grayscale images are replicated to three
/// channels.
pub fn load_image_dir<T: Scalar>(path: &Path) -> Result<LabeledSet<T>> {
    let mut entries: Vec<(PathBuf, String)> = Vec::new();
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (rel, class) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, format!("line {}: expected path<TAB>class", lineno + 1)))?;
            entries.push((base.join(rel.trim()), class.trim().to_string()));
        }
    } else {
        for dir in sorted_entries(path)?.into_iter().filter(|p| p.is_dir()) {
            let class = dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::config(format!("class directory {} is not valid UTF-8", dir.display())))?
                .to_string();
            let files: Vec<PathBuf> = sorted_entries(&dir)?.into_iter().filter(|p| is_image(p)).collect();
            if files.is_empty() {
                return Err(Error::config(format!("class directory {} holds no .ppm/.pgm images", dir.display())));
            }
            entries.extend(files.into_iter().map(|f| (f, class.clone())));
        }
    }
    if entries.is_empty() {
        return Err(Error::config(format!("no images found under {}", path.display())));
    }
    entries.sort();
    let mut class_names: Vec<String> = entries.iter().map(|(_, c)| c.clone()).collect();
    class_names.sort();
    class_names.dedup();

    let mut dims = None;
    let mut pixels = Vec::new();
    let mut labels = Vec::with_capacity(entries.len());
    for (file, class) in &entries {
        let img = read_pnm(file)?;
        let d = (img.height, img.width);
        match dims {
            None => dims = Some(d),
            Some(first) if first != d => {
                return Err(Error::shape(format!(
                    "{} is {}x{} but earlier images are {}x{}",
                    file.display(),
                    d.0,
                    d.1,
                    first.0,
                    first.1
                )))
            }
            Some(_) => {}
        }
        pixels.extend(img.to_chw3::<T>());
        labels.push(class_names.binary_search(class).expect("class collected above"));
    }
    let (h, w) = dims.expect("at least one image");
    LabeledSet::new((3, h, w), pixels, labels, class_names)
}

/// Writes every image as `<root>/<class>/<index>.ppm` (or `.pgm` for one channel).
pub fn save_image_dir<T: Scalar>(set: &LabeledSet<T>, root: &Path) -> Result<()> {
    let (c, h, w) = set.image_dims();
    let ext = if c == 1 { "pgm" } else { "ppm" };
    for name in set.class_names() {
        fs::create_dir_all(root.join(name))?;
    }
    for i in 0..set.len() {
        let class = &set.class_names()[set.labels()[i]];
        let file = root.join(class).join(format!("{i:05}.{ext}"));
        write_pnm(&file, set.image(i), c, h, w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(per_class: usize, classes: usize) -> LabeledSet<f64> {
        let n = per_class * classes;
        let labels = (0..n).map(|i| i % classes).collect();
        let pixels = (0..n).map(|i| i as f64).collect();
        let names = (0..classes).map(|c| format!("c{c}")).collect();
        LabeledSet::new((1, 1, 1), pixels, labels, names).unwrap()
    }

    #[test]
    fn split_counts() {
        let set = toy(50, 8);
        let (tr, te) = split(&set, SplitSpec { training_rate: 0.5, seed: 3 }).unwrap();
        assert_eq!((tr.len(), te.len()), (200, 200));
        assert!(tr.class_counts().iter().all(|&c| c == 25));
        assert!(te.class_counts().iter().all(|&c| c == 25));
        let (tr2, _) = split(&set, SplitSpec { training_rate: 0.5, seed: 3 }).unwrap();
        assert_eq!(tr, tr2);

        let big = toy(100, 3);
        let (tr, _) = split(&big, SplitSpec { training_rate: 0.2, seed: 1 }).unwrap();
        assert!(tr.class_counts().iter().all(|&c| c == 20));
    }

    #[test]
    fn split_is_disjoint_partition() {
        let set = toy(10, 4);
        let (tr, te) = split(&set, SplitSpec { training_rate: 0.3, seed: 9 }).unwrap();
        let mut all: Vec<f64> = tr.pixels.iter().chain(&te.pixels).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..40).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn extreme_rate_is_config_error() {
        let set = toy(2, 2);
        assert!(matches!(
            split(&set, SplitSpec { training_rate: 0.1, seed: 0 }),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            split(&set, SplitSpec { training_rate: 1.0, seed: 0 }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn batch_stacks_images() {
        let set = toy(2, 2);
        let b = set.batch(&[3, 0]).unwrap();
        assert_eq!(b.shape().dims(), [2, 1, 1, 1]);
        assert_eq!(b.data(), &[3.0, 0.0]);
        assert_eq!(set.batch_labels(&[3, 0]), vec![1, 0]);
        assert!(set.batch(&[4]).is_err());
    }
}
