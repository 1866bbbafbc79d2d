use mgml::data::{generate, split, SceneSpec, SplitSpec};
use mgml::net::BranchSet;
use mgml::ops;
use mgml::train::{evaluate, objective, objective_traced, train, TrainConfig};
use mgml::{Error, LabeledSet, MgmlNet, ModelConfig, Tape};

fn toy(per_class: usize) -> (LabeledSet, LabeledSet) {
    let set = generate(&SceneSpec::default(), per_class).unwrap();
    split(&set, SplitSpec { training_rate: 0.5, seed: 1 }).unwrap()
}

fn short(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        eval_every: 0,
        seed: 5,
        ..TrainConfig::desk()
    }
}

fn param_bits(net: &MgmlNet) -> Vec<u64> {
    net.params().iter().flat_map(|(_, p)| p.tensor.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (tr, _) = toy(2);
    let mut net = MgmlNet::new(ModelConfig::tiny(8), 3).unwrap();
    let before = param_bits(&net);
    let cfg = TrainConfig { base_lr: 0.0, ..short(2) };
    train(&mut net, &tr, None, &cfg).unwrap();
    assert_eq!(param_bits(&net), before);
}

#[test]
fn same_seed_same_curves_and_reports() {
    let (tr, te) = toy(2);
    let run = || {
        let mut net = MgmlNet::new(ModelConfig::tiny(8), 3).unwrap();
        let h = train(&mut net, &tr, Some(&te), &short(3)).unwrap();
        let mut csv = Vec::new();
        h.write_csv(&mut csv).unwrap();
        (h.losses().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), h.last_eval().cloned(), csv, param_bits(&net))
    };
    assert_eq!(run(), run());
}

#[test]
fn unselected_branches_stay_untrained() {
    let (tr, _) = toy(2);
    let mut net = MgmlNet::new(ModelConfig::tiny(8), 3).unwrap();
    let frozen = net.fusion_conv_params();
    let snapshot = |n: &MgmlNet| -> Vec<u64> {
        frozen.iter().flat_map(|&id| n.params().get(id).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
    };
    let before = snapshot(&net);
    let cfg = TrainConfig { branches: BranchSet { ffb: false, fem: true }, ..short(1) };
    train(&mut net, &tr, None, &cfg).unwrap();
    assert_eq!(snapshot(&net), before);
}

#[test]
fn loss_decreases_on_toy_task() {
    let (tr, _) = toy(10);
    let mut net = MgmlNet::new(ModelConfig::tiny(8), 8).unwrap();
    let h = train(&mut net, &tr, None, &short(30)).unwrap();
    let l = h.losses();
    assert!(l[l.len() - 1] < l[0], "{l:?}");
    let first: f64 = l[..5].iter().sum();
    let last: f64 = l[l.len() - 5..].iter().sum();
    assert!(last < first, "{l:?}");
}

#[test]
fn lambda_scaling_scales_loss_and_gradients() {
    let (tr, _) = toy(2);
    let net = MgmlNet::new(ModelConfig::tiny(8), 4).unwrap();
    let idx = [0, 1, 2];
    let x = tr.batch(&idx).unwrap();
    let labels = tr.batch_labels(&idx);
    let lambda = net.config().lambda;
    let grads_for = |lam: [f64; 4]| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let trace = net.forward(&mut tape, xv, BranchSet::FULL).unwrap();
        let loss = objective_traced(&mut tape, &trace, &labels, &lam).unwrap();
        let value = tape.value(loss).data()[0];
        (value, tape.backward(loss).unwrap())
    };
    let c = 2.5;
    let (a, ga) = grads_for(lambda);
    let (b, gb) = grads_for(lambda.map(|l| l * c));
    assert!((b - c * a).abs() < 1e-10, "{a} {b}");
    for ((_, x), (_, y)) in ga.params().zip(gb.params()) {
        for (u, v) in x.iter().zip(y) {
            assert!((v - c * u).abs() <= 1e-10 * (1.0 + u.abs()), "{u} {v}");
        }
    }
}

#[test]
fn main_only_weights_equal_main_cross_entropy() {
    let (tr, _) = toy(2);
    let net = MgmlNet::new(ModelConfig::tiny(8), 4).unwrap();
    let x = tr.batch(&[0, 5]).unwrap();
    let labels = tr.batch_labels(&[0, 5]);
    let out = net.forward_ensemble(&x).unwrap();
    let l = objective(&out.logits, &labels, &[1.0, 0.0, 0.0, 0.0]).unwrap();
    let (ce, _) = ops::softmax_cross_entropy(out.logits[0].as_ref().unwrap(), &labels).unwrap();
    assert!((l - ce).abs() < 1e-12);
}

#[test]
fn uniform_model_scores_class_zero_share() {
    let (_, te) = toy(4);
    let mut net = MgmlNet::new(ModelConfig::tiny(8), 4).unwrap();
    let heads: Vec<_> = net.params().iter().filter(|(_, p)| p.name.contains(".fc")).map(|(id, _)| id).collect();
    assert_eq!(heads.len(), 8);
    for id in heads {
        net.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let r = evaluate(&net, &te, BranchSet::FULL).unwrap();
    assert_eq!(r.oa, 12.5);
    assert!(r.predictions.iter().all(|&p| p == 0));
    assert_eq!(r.branch_oa, [Some(12.5); 4]);
}

#[test]
fn empty_evaluation_set_is_config_error() {
    let net = MgmlNet::new(ModelConfig::tiny(8), 4).unwrap();
    let empty = LabeledSet::new((3, 64, 64), vec![], vec![], vec!["a".into(), "b".into()]).unwrap();
    assert!(matches!(evaluate(&net, &empty, BranchSet::FULL), Err(Error::Config(_))));
}
