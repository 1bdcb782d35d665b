mod common;

use common::{model_gradcheck, primitive_gradcheck, PRIMITIVES};

#[test]
fn every_primitive_matches_central_differences() {
    for (name, bound) in PRIMITIVES {
        let worst = (0..10).map(|i| primitive_gradcheck(name, i)).fold(0.0, f64::max);
        assert!(worst < bound, "{name}: relative error {worst:e}");
    }
}

#[test]
fn two_layer_two_head_model_matches_central_differences() {
    for i in 0..10 {
        let worst = model_gradcheck(i);
        assert!(worst < 1e-4, "instance {i}: relative error {worst:e}");
    }
}
