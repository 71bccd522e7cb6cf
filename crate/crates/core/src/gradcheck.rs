//! Central finite-difference checks for every tape primitive and for the
//! full model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::{encode_connection, seed_from, FeatureSchema};
use crate::error::Result;
use crate::graph::AssemblyGraph;
use crate::ingest::ConnectionKind;
use crate::model::{GraphInput, LayerKind, Mode, Model, ModelConfig};
use crate::tensor::{Tape, Tensor, Var};

/// Finite-difference step.
pub const STEP: f64 = 1e-6;

/// Largest relative error of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps exact zeros from
/// turning rounding noise into huge ratios.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn project(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let r = tape.leaf(weights.clone());
    let p = tape.mul(out, r)?;
    Ok(tape.sum(p))
}

fn scalar_value(inputs: &[Tensor<f64>], f: &Build, weights: &Tensor<f64>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let s = project(&mut tape, out, weights)?;
    Ok(tape.value(s).data()[0])
}

/// Compares tape gradients of `Σ f(inputs) ⊙ R` (random `R`) against
/// central differences; returns the worst relative error.
pub fn check_fn(inputs: &[Tensor<f64>], f: &Build, rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs: Vec<Tensor<f64>> = inputs.iter().map(|t| t.clone().with_grad()).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let (r, c) = tape.shape(out);
    let weights = Tensor::from_fn(r, c, |_, _| rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 });
    let s = project(&mut tape, out, &weights)?;
    tape.backward(s)?;
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].data().len()]);
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (scalar_value(&plus, f, &weights)? - scalar_value(&minus, f, &weights)?) / (2.0 * STEP);
            worst = worst.max(rel_error(a, numeric));
        }
    }
    Ok(worst)
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Entries bounded away from zero, for functions with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::from_fn(r, c, |_, _| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

type Case = (Vec<Tensor<f64>>, Box<Build>);

fn cases(name: &str, rng: &mut ChaCha8Rng) -> Case {
    let n = rng.random_range(2..6);
    let m = rng.random_range(1..5);
    let k = rng.random_range(1..5);
    match name {
        "matmul" => (
            vec![rand_tensor(rng, n, m), rand_tensor(rng, m, k)],
            Box::new(|t, v| t.matmul(v[0], v[1])),
        ),
        "add" => (
            vec![rand_tensor(rng, n, m), rand_tensor(rng, n, m)],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        "add_bias" => (
            vec![rand_tensor(rng, n, m), rand_tensor(rng, 1, m)],
            Box::new(|t, v| t.add_bias(v[0], v[1])),
        ),
        "mul" => (
            vec![rand_tensor(rng, n, m), rand_tensor(rng, n, m)],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        "scale" => {
            let c = rng.random_range(-2.0..2.0);
            (vec![rand_tensor(rng, n, m)], Box::new(move |t, v| Ok(t.scale(v[0], c))))
        }
        "scale_rows" => {
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            (vec![rand_tensor(rng, n, m)], Box::new(move |t, v| t.scale_rows(v[0], f.clone())))
        }
        "concat_cols" => (
            vec![rand_tensor(rng, n, m), rand_tensor(rng, n, k)],
            Box::new(|t, v| t.concat_cols(&[v[0], v[1]])),
        ),
        "slice_cols" => {
            let cols = m + k;
            let start = rng.random_range(0..cols);
            let end = rng.random_range(start + 1..=cols);
            (vec![rand_tensor(rng, n, cols)], Box::new(move |t, v| t.slice_cols(v[0], start, end)))
        }
        "relu" => (vec![away_from_zero(rng, n, m)], Box::new(|t, v| Ok(t.relu(v[0])))),
        "leaky_relu" => (vec![away_from_zero(rng, n, m)], Box::new(|t, v| Ok(t.leaky_relu(v[0], 0.2)))),
        "prelu" => (
            vec![away_from_zero(rng, n, m), Tensor::scalar(rng.random_range(0.05..0.5))],
            Box::new(|t, v| t.prelu(v[0], v[1])),
        ),
        "sigmoid" => (vec![rand_tensor(rng, n, m)], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        "tanh" => (vec![rand_tensor(rng, n, m)], Box::new(|t, v| Ok(t.tanh(v[0])))),
        "batch_norm_train" => (
            vec![rand_tensor(rng, n, m), rand_tensor(rng, 1, m), rand_tensor(rng, 1, m)],
            Box::new(|t, v| t.batch_norm_train(v[0], v[1], v[2], 1e-5).map(|r| r.0)),
        ),
        "batch_norm_eval" => {
            let mean: Vec<f64> = (0..m).map(|_| rng.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
            (
                vec![rand_tensor(rng, n, m), rand_tensor(rng, 1, m), rand_tensor(rng, 1, m)],
                Box::new(move |t, v| t.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)),
            )
        }
        "softmax_rows" => (vec![rand_tensor(rng, n, m + 1)], Box::new(|t, v| Ok(t.softmax_rows(v[0])))),
        "mean_rows" => (vec![rand_tensor(rng, n, m)], Box::new(|t, v| t.mean_rows(v[0]))),
        "sum" => (vec![rand_tensor(rng, n, m)], Box::new(|t, v| Ok(t.sum(v[0])))),
        "index_select_rows" => {
            let idx: Vec<usize> = (0..rng.random_range(1..8)).map(|_| rng.random_range(0..n)).collect();
            (vec![rand_tensor(rng, n, m)], Box::new(move |t, v| t.index_select_rows(v[0], idx.clone())))
        }
        "scatter_add_rows" => {
            let out = rng.random_range(1..5);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..out)).collect();
            (vec![rand_tensor(rng, n, m)], Box::new(move |t, v| t.scatter_add_rows(v[0], idx.clone(), out)))
        }
        "weighted_cross_entropy" => {
            let c = m + 1;
            let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let weights: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..2.0)).collect();
            let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
            mask[0] = true;
            let probs = Tensor::from_fn(n, c, |_, _| rng.random_range(0.05..1.0));
            (
                vec![probs],
                Box::new(move |t, v| t.weighted_cross_entropy(v[0], &targets, &weights, &mask)),
            )
        }
        "lstm_cell_step" => {
            let d = k;
            (
                vec![
                    rand_tensor(rng, n, d),
                    rand_tensor(rng, n, m),
                    rand_tensor(rng, n, m),
                    rand_tensor(rng, d, 4 * m),
                    rand_tensor(rng, m, 4 * m),
                    rand_tensor(rng, 1, 4 * m),
                ],
                Box::new(|t, v| t.lstm_cell_step(v[0], v[1], v[2], v[3], v[4], v[5]).map(|r| r.0)),
            )
        }
        "lstm_cell_state" => {
            let d = k;
            (
                vec![
                    rand_tensor(rng, n, d),
                    rand_tensor(rng, n, m),
                    rand_tensor(rng, n, m),
                    rand_tensor(rng, d, 4 * m),
                    rand_tensor(rng, m, 4 * m),
                    rand_tensor(rng, 1, 4 * m),
                ],
                Box::new(|t, v| t.lstm_cell_step(v[0], v[1], v[2], v[3], v[4], v[5]).map(|r| r.1)),
            )
        }
        other => panic!("no gradient case for {other}"),
    }
}

/// Every differentiable primitive (the LSTM cell is checked through both
/// of its outputs).
pub const PRIMITIVES: [&str; 23] = [
    "matmul",
    "add",
    "add_bias",
    "mul",
    "scale",
    "scale_rows",
    "concat_cols",
    "slice_cols",
    "relu",
    "leaky_relu",
    "prelu",
    "sigmoid",
    "tanh",
    "batch_norm_train",
    "batch_norm_eval",
    "softmax_rows",
    "mean_rows",
    "sum",
    "index_select_rows",
    "scatter_add_rows",
    "weighted_cross_entropy",
    "lstm_cell_step",
    "lstm_cell_state",
];

pub fn check_primitive(name: &str, instances: usize, seed: u64) -> Result<GradReport> {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[name.as_bytes(), &seed.to_le_bytes(), &(i as u64).to_le_bytes()]));
        let (inputs, f) = cases(name, &mut rng);
        worst = worst.max(check_fn(&inputs, f.as_ref(), &mut rng)?);
    }
    Ok(GradReport {
        name: name.to_string(),
        instances,
        max_rel_error: worst,
    })
}

/// Random 4-node graph: a path plus one extra connection, width 6.
pub fn four_node_graph(rng: &mut ChaCha8Rng) -> AssemblyGraph {
    let schema = FeatureSchema::from_widths([("body_name", 4, true), ("body_physical", 2, true)]).expect("distinct");
    let mut g = AssemblyGraph {
        graph_id: "grad".into(),
        node_ids: (0..4).map(|i| format!("b{i}")).collect(),
        x: (0..24).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        edge_src: Vec::new(),
        edge_dst: Vec::new(),
        edge_attr: Vec::new(),
        y: (0..4).map(|_| rng.random_range(0..3)).collect(),
        target_mask: vec![true; 4],
        material_ids: vec![String::new(); 4],
        schema,
    };
    let extra = if rng.random_bool(0.5) { (0, 2) } else { (1, 3) };
    let kinds = ConnectionKind::ALL;
    for (i, (a, b)) in [(0, 1), (1, 2), (2, 3), extra].into_iter().enumerate() {
        for (s, d) in [(a, b), (b, a)] {
            g.edge_src.push(s);
            g.edge_dst.push(d);
            g.edge_attr.extend(encode_connection(kinds[i % 3]));
        }
    }
    g
}

/// Gradient of the training loss of a `K = 2`, hidden 8 model with respect to
/// every parameter, over `instances` random graphs and initializations.
pub fn check_model(kind: LayerKind, instances: usize, seed: u64) -> Result<GradReport> {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[b"model", kind.name().as_bytes(), &seed.to_le_bytes(), &(i as u64).to_le_bytes()]));
        let g = four_node_graph(&mut rng);
        let config = ModelConfig {
            seed: rng.random(),
            ..model_config_of(&g, kind)
        };
        let model = Model::<f64>::init(config)?;
        let inputs = model.params.tensors().to_vec();
        let input = GraphInput::<f64>::from_graph(&g)?;
        let weights: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..1.5)).collect();
        let perm_seed: u64 = rng.random();
        // train-mode forward reads parameters only through the tape leaves
        let f = move |tape: &mut Tape<f64>, vars: &[Var]| -> Result<Var> {
            let out = model.forward(tape, vars, &input, Mode::Train, perm_seed)?;
            tape.weighted_cross_entropy(out.probs, &input.y, &weights, &input.mask)
        };
        worst = worst.max(check_fn(&inputs, &f, &mut rng)?);
    }
    Ok(GradReport {
        name: format!("model_{}", kind.name()),
        instances,
        max_rel_error: worst,
    })
}

fn model_config_of(g: &AssemblyGraph, kind: LayerKind) -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        hidden: 8,
        layer_kind: kind,
        input_dim: g.width(),
        num_classes: 3,
        seed: 0,
        edge_features: true,
        activation: Default::default(),
    }
}
