use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use mgml::config::{DataSource, ExperimentConfig};
use mgml::net::{Branch, BranchOutputs};
use mgml::nn::checkpoint::{load_into, write_checkpoint};
use mgml::train::{self, run_seed, threads_from_env, EvalReport};
use mgml::{CropConfig, CropStrategy, Error, MgmlNet, Result};

use crate::Overrides;

/// Loads the config and applies command-line overrides; nothing is written.
fn load_config(path: &Path, o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = o.seed {
        cfg.train.seed = s;
    }
    if let Some(b) = o.branches {
        cfg.train.branches = b;
    }
    if let Some(s) = o.strategy {
        cfg.model.crop.strategy = s;
    }
    if let Some(s) = o.sigma {
        cfg.model.crop.sigma = s;
    }
    if let Some(k) = o.k {
        cfg.model.crop.grid_k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Runtime(format!("writing {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Runtime(format!("creating {}: {e}", dir.display())))
}

fn load_model(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<MgmlNet> {
    let file = File::open(checkpoint).map_err(|e| Error::Config(format!("checkpoint {}: {e}", checkpoint.display())))?;
    let mut net = MgmlNet::new(cfg.model.clone(), 0)?;
    load_into(net.params_mut(), BufReader::new(file)).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("checkpoint {}: {io}", checkpoint.display())),
        other => other,
    })?;
    Ok(net)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "null".into())
}

fn report_text(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{{");
    let _ = writeln!(s, "  \"samples\": {},", r.labels.len());
    let _ = writeln!(s, "  \"oa_ensemble\": {:.4},", r.oa);
    for b in Branch::ALL {
        let _ = writeln!(s, "  \"oa_{}\": {},", b.name(), opt(r.branch_oa[b.index()]));
    }
    let _ = writeln!(s, "  \"num_classes\": {}", r.num_classes);
    let _ = write!(s, "}}");
    s
}

fn confusion_csv(r: &EvalReport) -> String {
    let mut s = String::from("true\\pred");
    for c in 0..r.num_classes {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for (t, row) in r.confusion.iter().enumerate() {
        let _ = write!(s, "{t}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn train(config: &Path, out: &Path, o: &Overrides) -> Result<()> {
    let cfg = load_config(config, o)?;
    let (train_set, test) = cfg.data.load::<f64>()?;
    create_dir(out)?;
    let seed = run_seed(cfg.train.seed, 0);
    let mut net = MgmlNet::new(cfg.model.clone(), seed)?;
    let tc = train::TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let history = train::train(&mut net, &train_set, Some(&test), &tc)?;

    let mut csv = Vec::new();
    history.write_csv(&mut csv)?;
    write_file(&out.join("metrics.csv"), csv)?;
    let mut ckpt = Vec::new();
    write_checkpoint(net.params(), &mut ckpt)?;
    write_file(&out.join("checkpoint.mgc"), ckpt)?;
    write_file(&out.join("config.txt"), cfg.to_string())?;

    let report = history.last_eval().expect("last epoch is evaluated");
    let losses = history.losses();
    let mut summary = report_text(report);
    summary.truncate(summary.len() - 1);
    let _ = writeln!(summary, "  \"run_seed\": {seed},");
    let _ = writeln!(summary, "  \"branches\": \"{}\",", tc.branches);
    let _ = writeln!(summary, "  \"epochs\": {},", tc.epochs);
    let _ = writeln!(summary, "  \"initial_train_loss\": {:.6},", losses[0]);
    let _ = writeln!(summary, "  \"final_train_loss\": {:.6},", losses[losses.len() - 1]);
    let _ = writeln!(summary, "  \"parameters\": {}", net.params().num_scalars());
    summary.push_str("}\n");
    write_file(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn eval(config: &Path, checkpoint: &Path, out: Option<&Path>, o: &Overrides) -> Result<()> {
    let cfg = load_config(config, o)?;
    let net = load_model(&cfg, checkpoint)?;
    let (_, test) = cfg.data.load::<f64>()?;
    let report = train::evaluate(&net, &test, cfg.train.branches)?;
    let text = report_text(&report) + "\n";
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("eval.txt"), &text)?;
        write_file(&dir.join("confusion.csv"), confusion_csv(&report))?;
    }
    print!("{text}");
    Ok(())
}

pub fn ablate(config: &Path, out: &Path, compare_crop: bool, o: &Overrides) -> Result<()> {
    let cfg = load_config(config, o)?;
    if compare_crop {
        let mut grid = cfg.model.crop;
        grid.strategy = CropStrategy::Grid;
        mgml::net::ShapePlan::new(&mgml::ModelConfig {
            crop: grid,
            ..cfg.model.clone()
        })?;
    }
    let (train_set, test) = cfg.data.load::<f64>()?;
    create_dir(out)?;
    let pairs = match &cfg.data.source {
        DataSource::Synthetic { spec, .. } => spec.confusable_pairs(),
        DataSource::Images(_) => Vec::new(),
    };
    let threads = threads_from_env();
    let (table, name) = if compare_crop {
        (train::compare_crop(&cfg.model, &cfg.train, &train_set, &test, &pairs, threads)?, "crop_comparison.csv")
    } else {
        (train::ablate(&cfg.model, &cfg.train, &train_set, &test, &pairs, threads)?, "ablation.csv")
    };
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    write_file(&out.join(name), csv)?;
    print!("{table}");
    Ok(())
}

pub fn inspect_anchors(h: usize, w: usize, sigma: f64, strategy: CropStrategy, k: usize) -> Result<()> {
    let cfg = CropConfig {
        strategy,
        sigma,
        grid_k: k,
    };
    cfg.validate()?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for a in cfg.propose(h, w)? {
        writeln!(lock, "{a}").map_err(|e| Error::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn probs_text(out: &BranchOutputs<f64>) -> String {
    let mut s = String::new();
    let mut row = |name: &str, t: &mgml::Tensor| {
        let vals: Vec<String> = t.data().iter().map(|v| format!("{v:.17e}")).collect();
        let _ = writeln!(s, "{name} {}", vals.join(" "));
    };
    for b in Branch::ALL {
        if let Some(p) = out.prob(b) {
            row(b.name(), p);
        }
    }
    row("sum", &out.p_sum);
    let _ = writeln!(s, "predicted {}", out.predictions()[0]);
    s
}

pub fn dump_features(config: &Path, checkpoint: &Path, sample: usize, out: &Path, o: &Overrides) -> Result<()> {
    let cfg = load_config(config, o)?;
    let net = load_model(&cfg, checkpoint)?;
    let (_, test) = cfg.data.load::<f64>()?;
    if sample >= test.len() {
        return Err(Error::Config(format!(
            "sample {sample} out of range: the test split has {} samples",
            test.len()
        )));
    }
    let x = test.batch(&[sample])?;
    let outputs = net.predict(&x, cfg.train.branches, true)?;
    create_dir(out)?;
    let feats = outputs.features.as_ref().expect("features requested");
    let named = feats
        .main
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("F{i}"), t))
        .chain(feats.fused.iter().enumerate().map(|(i, t)| (format!("G{i}"), t)))
        .chain(feats.fem.iter().enumerate().map(|(i, t)| (format!("v{}", i + 3), t)));
    for (name, t) in named {
        let path = out.join(format!("{name}.mgt"));
        let file = File::create(&path).map_err(|e| Error::Runtime(format!("writing {}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        t.write_mgt1(&mut w)?;
        w.flush()?;
    }
    let mut text = format!("label {}\n", test.labels()[sample]);
    text.push_str(&probs_text(&outputs));
    write_file(&out.join("probabilities.txt"), text)?;
    Ok(())
}

pub fn gen_data(config: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let DataSource::Synthetic { spec, per_class } = &cfg.data.source else {
        return Err(Error::Config("gen-data needs data.source = synthetic".into()));
    };
    let set = mgml::data::generate::<f64>(spec, *per_class)?;
    create_dir(out)?;
    mgml::data::save_image_dir(&set, out).map_err(|e| Error::Runtime(e.to_string()))?;
    let mut manifest = String::new();
    for i in 0..set.len() {
        let class = &set.class_names()[set.labels()[i]];
        let _ = writeln!(manifest, "{class}/{i:05}.ppm\t{class}");
    }
    write_file(&out.join("manifest.tsv"), manifest)?;
    println!("wrote {set} to {}", out.display());
    Ok(())
}
