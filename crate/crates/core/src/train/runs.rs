use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use super::{train, EvalReport, TrainConfig, TrainHistory};
use crate::anchors::CropStrategy;
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::net::{BranchSet, MgmlNet, ModelConfig};
use crate::rng::derive_seed;
use crate::scalar::Scalar;

use super::eval::mean_std;

/// One trained repetition.
#[derive(Clone, Debug)]
pub struct RunResult<T> {
    pub run: usize,
    pub seed: u64,
    pub history: TrainHistory,
    pub report: EvalReport,
    pub net: MgmlNet<T>,
}

/// Worker count from `MGML_THREADS`, else the machine's parallelism.
pub fn threads_from_env() -> usize {
    std::env::var("MGML_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
}

/// Seed of repetition `run`: drives both initialization and shuffling.
pub fn run_seed(base: u64, run: usize) -> u64 {
    derive_seed(base, run as u64)
}

fn run_jobs<T: Scalar>(
    jobs: &[(ModelConfig, TrainConfig, usize)],
    train_set: &LabeledSet<T>,
    test: &LabeledSet<T>,
    threads: usize,
) -> Result<Vec<RunResult<T>>> {
    let one = |(model, cfg, run): &(ModelConfig, TrainConfig, usize)| -> Result<RunResult<T>> {
        let seed = run_seed(cfg.seed, *run);
        let mut net = MgmlNet::new(model.clone(), seed)?;
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let history = train(&mut net, train_set, Some(test), &cfg)?;
        let report = history.last_eval().expect("last epoch is always evaluated").clone();
        Ok(RunResult {
            run: *run,
            seed,
            history,
            report,
            net,
        })
    };
    if threads <= 1 {
        return jobs.iter().map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(one).collect())
}

/// `cfg.runs` independent repetitions; run `r` uses seed `derive(cfg.seed, r)`.
pub fn run_many<T: Scalar>(
    model: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &LabeledSet<T>,
    test: &LabeledSet<T>,
    threads: usize,
) -> Result<Vec<RunResult<T>>> {
    cfg.validate()?;
    let jobs: Vec<_> = (0..cfg.runs).map(|r| (model.clone(), cfg.clone(), r)).collect();
    run_jobs(&jobs, train_set, test, threads)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub label: &'static str,
    pub branches: BranchSet,
}

pub const ABLATION_VARIANTS: [Variant; 4] = [
    Variant {
        label: "baseline",
        branches: BranchSet::MAIN_ONLY,
    },
    Variant {
        label: "+FFB",
        branches: BranchSet { ffb: true, fem: false },
    },
    Variant {
        label: "+FEM",
        branches: BranchSet { ffb: false, fem: true },
    },
    Variant {
        label: "full",
        branches: BranchSet::FULL,
    },
];

/// Accuracy over repetitions of one model variant.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub branches: BranchSet,
    pub oa: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Per-run mean accuracy over the confusable class pairs.
    pub pairwise: Vec<f64>,
}

impl AblationRow {
    pub fn from_runs<T>(label: String, branches: BranchSet, runs: &[RunResult<T>], pairs: &[(usize, usize)]) -> Self {
        let oa: Vec<f64> = runs.iter().map(|r| r.report.oa).collect();
        let (mean, std) = mean_std(&oa);
        let pairwise = runs.iter().filter_map(|r| r.report.mean_pairwise(pairs)).collect();
        AblationRow {
            label,
            branches,
            oa,
            mean,
            std,
            pairwise,
        }
    }

    pub fn pairwise_mean(&self) -> Option<f64> {
        (!self.pairwise.is_empty()).then(|| mean_std(&self.pairwise).0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "variant,branches,runs,mean_oa,std_oa,pairwise_oa")?;
        for r in &self.rows {
            let pw = r.pairwise_mean().map(|v| format!("{v:.4}")).unwrap_or_default();
            writeln!(
                w,
                "{},\"{}\",{},{:.4},{:.4},{pw}",
                r.label,
                r.branches,
                r.oa.len(),
                r.mean,
                r.std
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>16} {:>10}", "variant", "OA (mean ± std)", "pairwise")?;
        for r in &self.rows {
            let pw = r.pairwise_mean().map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
            writeln!(f, "{:<10} {:>8.2} ± {:<5.2} {:>10}", r.label, r.mean, r.std, pw)?;
        }
        Ok(())
    }
}

fn table<T>(
    specs: &[(String, BranchSet)],
    results: Vec<RunResult<T>>,
    runs: usize,
    pairs: &[(usize, usize)],
) -> AblationTable {
    let rows = specs
        .iter()
        .zip(results.chunks(runs))
        .map(|((label, b), chunk)| AblationRow::from_runs(label.clone(), *b, chunk, pairs))
        .collect();
    AblationTable { rows }
}

/// Trains the baseline, +FFB, +FEM and full variants under the same run
/// seeds; each row reports the vote of the branches that variant trains.
pub fn ablate<T: Scalar>(
    model: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &LabeledSet<T>,
    test: &LabeledSet<T>,
    pairs: &[(usize, usize)],
    threads: usize,
) -> Result<AblationTable> {
    cfg.validate()?;
    let specs: Vec<(String, BranchSet)> =
        ABLATION_VARIANTS.iter().map(|v| (v.label.to_string(), v.branches)).collect();
    let jobs: Vec<_> = specs
        .iter()
        .flat_map(|(_, b)| {
            (0..cfg.runs).map(move |r| (model.clone(), TrainConfig { branches: *b, ..cfg.clone() }, r))
        })
        .collect();
    let results = run_jobs(&jobs, train_set, test, threads)?;
    Ok(table(&specs, results, cfg.runs, pairs))
}

/// The full model trained once with the seven-crop proposal and once with
/// the sliding-window grid, under the same run seeds.
pub fn compare_crop<T: Scalar>(
    model: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &LabeledSet<T>,
    test: &LabeledSet<T>,
    pairs: &[(usize, usize)],
    threads: usize,
) -> Result<AblationTable> {
    cfg.validate()?;
    let mut specs = Vec::new();
    let mut jobs = Vec::new();
    for strategy in [CropStrategy::SevenCrop, CropStrategy::Grid] {
        let mut m = model.clone();
        m.crop.strategy = strategy;
        specs.push((format!("{}crop", m.crop.num_anchors()), cfg.branches));
        jobs.extend((0..cfg.runs).map(|r| (m.clone(), cfg.clone(), r)));
    }
    let results = run_jobs(&jobs, train_set, test, threads)?;
    Ok(table(&specs, results, cfg.runs, pairs))
}
