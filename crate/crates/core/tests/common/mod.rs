//! Oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod ops;

use mgml::autograd::Var;
use mgml::nn::gradcheck::{check, GradCheckReport};
use mgml::tensor::Shape;
use mgml::{Result, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest integer `i` in `0..=limit` with `i <= v`, found by scanning.
fn scan_floor(v: f64, limit: usize) -> Option<usize> {
    (0..=limit).take_while(|&i| i as f64 <= v).last()
}

fn rect(c: [f64; 4], h: usize, w: usize) -> Option<[usize; 4]> {
    let x1 = scan_floor(c[0], w)?;
    let y1 = scan_floor(c[1], h)?;
    let x2 = scan_floor(c[2], w)?;
    let y2 = scan_floor(c[3], h)?;
    (x1 < x2 && y1 < y2).then_some([x1, y1, x2, y2])
}

/// Region-proposal crops evaluated formula by formula; `None` if any crop
/// is empty after flooring.
pub fn seven_crop_oracle(h: usize, w: usize, sigma: f64) -> Option<Vec<[usize; 4]>> {
    let hh = h as f64;
    let ww = w as f64;
    [
        [0.0, 0.0, ww * sigma, hh * sigma],
        [0.0, hh * (1.0 - sigma), ww * sigma, hh],
        [ww * (1.0 - sigma), 0.0, ww, hh * sigma],
        [ww * (1.0 - sigma), hh * (1.0 - sigma), ww, hh],
        [
            ww * (1.0 - sigma) / 2.0,
            hh * (1.0 - sigma) / 2.0,
            ww * (1.0 + sigma) / 2.0,
            hh * (1.0 + sigma) / 2.0,
        ],
        [0.0, hh * (1.0 - sigma) / 2.0, ww, hh * (1.0 + sigma) / 2.0],
        [ww * (1.0 - sigma) / 2.0, 0.0, ww * (1.0 + sigma) / 2.0, hh],
    ]
    .into_iter()
    .map(|c| rect(c, h, w))
    .collect()
}

pub fn grid_oracle(h: usize, w: usize, sigma: f64, k: usize) -> Option<Vec<[usize; 4]>> {
    let hh = h as f64;
    let ww = w as f64;
    let s_h = hh * (1.0 - sigma) / k as f64;
    let s_w = ww * (1.0 - sigma) / k as f64;
    let mut out = Vec::new();
    for m in 0..=k {
        for n in 0..=k {
            let (m, n) = (m as f64, n as f64);
            out.push(rect([m * s_w, n * s_h, m * s_w + ww * sigma, n * s_h + hh * sigma], h, w)?);
        }
    }
    Some(out)
}

fn as_arrays(v: &[mgml::Anchor]) -> Vec<[usize; 4]> {
    v.iter().map(|a| [a.x1, a.y1, a.x2, a.y2]).collect()
}

/// Compares both proposal functions with the oracle over the full grid of
/// sizes and settings. Returns the number of cases and any disagreements.
pub fn anchor_sweep() -> (usize, Vec<String>) {
    let mut cases = 0;
    let mut bad = Vec::new();
    for h in 4..=64 {
        for w in 4..=64 {
            for sigma in [0.3, 0.5, 0.7] {
                cases += 1;
                let got = mgml::anchors::propose_seven(h, w, sigma).ok().map(|v| as_arrays(&v));
                let want = seven_crop_oracle(h, w, sigma);
                if got != want {
                    bad.push(format!("7crop h={h} w={w} sigma={sigma}: {got:?} vs {want:?}"));
                }
                for k in 1..=3 {
                    cases += 1;
                    let got = mgml::anchors::propose_grid(h, w, sigma, k).ok().map(|v| as_arrays(&v));
                    let want = grid_oracle(h, w, sigma, k);
                    if got != want {
                        bad.push(format!("grid h={h} w={w} sigma={sigma} k={k}: {got:?} vs {want:?}"));
                    }
                }
            }
        }
    }
    (cases, bad)
}

pub fn random_tensor(dims: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]).unwrap();
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Gradient check of a scalar-valued trace `build(tape, inputs)` with
/// respect to every element of every input.
pub fn check_graph(
    inputs: &[Tensor],
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
    eps: f64,
    floor: f64,
) -> GradCheckReport {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let root = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(root).unwrap();
    let mut report = GradCheckReport::default();
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[which]).unwrap().to_vec();
        let f = |x: &[f64]| {
            let mut t = Tape::inference();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(i, orig)| {
                    let v = if i == which {
                        Tensor::new(orig.shape(), x.to_vec()).unwrap()
                    } else {
                        orig.clone()
                    };
                    t.constant(v)
                })
                .collect();
            let r = build(&mut t, &vs).unwrap();
            t.value(r).data()[0]
        };
        let idx: Vec<usize> = (0..input.data().len()).collect();
        report.merge(&check(f, input.data(), &analytic, &idx, eps, floor));
    }
    report
}

/// `sum(out * r)` for a fixed random `r`, so every output element carries a
/// distinct weight into the scalar.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let s = tape.shape(out);
    let r = random_tensor([1, s.sample_len(), 1, 1], seed);
    let r = tape.constant(r);
    let zero = tape.constant(Tensor::zeros(Shape::new(1, 1, 1, 1).unwrap()));
    let y = tape.linear(out, r, zero, 1)?;
    Ok(tape.sum(y))
}

/// End-to-end check of the full objective with respect to `per_tensor`
/// sampled entries of every parameter tensor and `input_entries` sampled
/// input pixels.
pub fn model_gradcheck(
    net: &mgml::MgmlNet,
    x: &Tensor,
    labels: &[usize],
    per_tensor: usize,
    input_entries: usize,
    eps: f64,
    floor: f64,
) -> GradCheckReport {
    use mgml::nn::gradcheck::sample_indices;
    use mgml::train::{objective, objective_traced};
    use mgml::BranchSet;

    let lambda = net.config().lambda;
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let trace = net.forward(&mut tape, xv, BranchSet::FULL).unwrap();
    let loss = objective_traced(&mut tape, &trace, labels, &lambda).unwrap();
    let grads = tape.backward(loss).unwrap();

    let value = |net: &mgml::MgmlNet, x: &Tensor| {
        let out = net.predict(x, BranchSet::FULL, false).unwrap();
        objective(&out.logits, labels, &lambda).unwrap()
    };

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = net.params().ids().collect();
    for id in ids {
        let data = net.params().get(id).data().to_vec();
        let analytic = grads.param(id).expect("every parameter is reached").to_vec();
        let idx = sample_indices(data.len(), per_tensor, id.index() as u64);
        let mut probe = net.clone();
        let f = |v: &[f64]| {
            probe.params_mut().get_mut(id).data_mut().copy_from_slice(v);
            value(&probe, x)
        };
        report.merge(&check(f, &data, &analytic, &idx, eps, floor));
    }
    let analytic = grads.wrt(xv).unwrap().to_vec();
    let idx = sample_indices(x.data().len(), input_entries, 99);
    let f = |v: &[f64]| value(net, &Tensor::new(x.shape(), v.to_vec()).unwrap());
    report.merge(&check(f, x.data(), &analytic, &idx, eps, floor));
    report
}
