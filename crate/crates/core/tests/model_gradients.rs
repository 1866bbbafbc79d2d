mod common;

use mgml::data::{generate, SceneSpec};
use mgml::{MgmlNet, ModelConfig};

#[test]
fn tiny_model_end_to_end() {
    let set: mgml::LabeledSet = generate(&SceneSpec::default(), 1).unwrap();
    let idx = [0, 3];
    let x = set.batch(&idx).unwrap();
    let labels = set.batch_labels(&idx);
    let net = MgmlNet::new(ModelConfig::tiny(8), 42).unwrap();
    let r = common::model_gradcheck(&net, &x, &labels, 6, 32, 1e-5, 1e-6);
    assert!(r.checked > 300);
    assert!(r.passes(1e-5), "{r:?}");
}
