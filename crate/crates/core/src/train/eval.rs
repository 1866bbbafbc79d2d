use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::net::{Branch, BranchSet, MgmlNet};
use crate::scalar::Scalar;

const EVAL_BATCH: usize = 32;

/// Accuracy of one trained model on one labeled set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Overall accuracy in percent from the vote of the selected branches.
    pub oa: f64,
    /// Each branch scored alone, when it ran.
    pub branch_oa: [Option<f64>; 4],
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    /// Row-major `(n, num_classes)` vote scores.
    pub p_sum: Vec<f64>,
    pub num_classes: usize,
}

impl EvalReport {
    /// Accuracy in percent on the samples of classes `a` and `b` when the
    /// decision is restricted to those two classes; `None` if neither occurs.
    pub fn pairwise_accuracy(&self, a: usize, b: usize) -> Option<f64> {
        let k = self.num_classes;
        let mut total = 0usize;
        let mut correct = 0usize;
        for (i, &l) in self.labels.iter().enumerate() {
            if l != a && l != b {
                continue;
            }
            let row = &self.p_sum[i * k..(i + 1) * k];
            let pick = if row[b] > row[a] { b } else { a };
            total += 1;
            correct += usize::from(pick == l);
        }
        (total > 0).then(|| 100.0 * correct as f64 / total as f64)
    }

    /// Mean of [`Self::pairwise_accuracy`] over the pairs present.
    pub fn mean_pairwise(&self, pairs: &[(usize, usize)]) -> Option<f64> {
        let accs: Vec<f64> = pairs.iter().filter_map(|&(a, b)| self.pairwise_accuracy(a, b)).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

fn percent(correct: usize, total: usize) -> f64 {
    100.0 * correct as f64 / total as f64
}

/// Scores `net` on `set` with the selected branches voting.
pub fn evaluate<T: Scalar>(net: &MgmlNet<T>, set: &LabeledSet<T>, branches: BranchSet) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::config("evaluation set is empty"));
    }
    let k = net.config().num_classes;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut branch_correct = [0usize; 4];
    let mut predictions = Vec::with_capacity(set.len());
    let mut p_sum = Vec::with_capacity(set.len() * k);
    let all: Vec<usize> = (0..set.len()).collect();
    for idx in all.chunks(EVAL_BATCH) {
        let out = net.predict(&set.batch(idx)?, branches, false)?;
        let labels = set.batch_labels(idx);
        let preds = out.predictions();
        for (&l, &p) in labels.iter().zip(&preds) {
            confusion[l][p] += 1;
        }
        for b in Branch::ALL {
            if let Some(bp) = out.branch_predictions(b) {
                branch_correct[b.index()] += bp.iter().zip(&labels).filter(|(p, l)| p == l).count();
            }
        }
        predictions.extend(preds);
        p_sum.extend(out.p_sum.data().iter().map(|v| v.to_f64_lossy()));
    }
    let n = set.len();
    let correct = (0..k).map(|c| confusion[c][c]).sum();
    let branch_oa = Branch::ALL.map(|b| b.enabled_in(branches).then(|| percent(branch_correct[b.index()], n)));
    Ok(EvalReport {
        oa: percent(correct, n),
        branch_oa,
        confusion,
        labels: set.labels().to_vec(),
        predictions,
        p_sum,
        num_classes: k,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pairwise accuracy in percent of a nearest-centroid classifier that sees
/// only each image's global mean intensity.
pub fn global_mean_pairwise<T: Scalar>(train: &LabeledSet<T>, test: &LabeledSet<T>, (a, b): (usize, usize)) -> Result<f64> {
    let mean_of = |set: &LabeledSet<T>, i: usize| {
        let img = set.image(i);
        img.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / img.len() as f64
    };
    let centroid = |c: usize| -> Result<f64> {
        let vals: Vec<f64> = (0..train.len()).filter(|&i| train.labels()[i] == c).map(|i| mean_of(train, i)).collect();
        if vals.is_empty() {
            return Err(Error::config(format!("class {c} has no training samples")));
        }
        Ok(mean_std(&vals).0)
    };
    let (ca, cb) = (centroid(a)?, centroid(b)?);
    let mut total = 0usize;
    let mut correct = 0usize;
    for i in 0..test.len() {
        let l = test.labels()[i];
        if l != a && l != b {
            continue;
        }
        let m = mean_of(test, i);
        let pick = if (m - cb).abs() < (m - ca).abs() { b } else { a };
        total += 1;
        correct += usize::from(pick == l);
    }
    if total == 0 {
        return Err(Error::config(format!("no test samples of classes {a} or {b}")));
    }
    Ok(percent(correct, total))
}
