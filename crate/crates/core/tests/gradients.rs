use std::time::Instant;

use matgraph::gradcheck::{check_model, check_primitive, PRIMITIVES};
use matgraph::model::LayerKind;

const TOL: f64 = 1e-3;

#[test]
fn primitives_match_finite_differences() {
    let started = Instant::now();
    for name in PRIMITIVES {
        let r = check_primitive(name, 20, 7).unwrap();
        assert!(r.passes(TOL), "{name}: relative error {}", r.max_rel_error);
    }
    assert!(started.elapsed().as_secs() < 60);
}

#[test]
fn model_matches_finite_differences() {
    for kind in LayerKind::ALL {
        let r = check_model(kind, 20, 7).unwrap();
        assert!(r.passes(TOL), "{}: relative error {}", r.name, r.max_rel_error);
    }
}
