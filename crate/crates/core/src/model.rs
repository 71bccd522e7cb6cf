//! Message-passing encoder with jumping-knowledge summation and an MLP head.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{seed_from, EDGE_WIDTH};
use crate::error::{Error, Result};
use crate::graph::AssemblyGraph;
use crate::optim::ParamSet;
use crate::tensor::{Tape, Tensor, Var};
use crate::Scalar;

pub const MAX_LAYERS: usize = 8;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const PRELU_INIT: f64 = 0.25;
/// Hidden layers in the classifier head.
pub const HEAD_DEPTH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    SageMean,
    SageLstm,
    Gconv,
}

impl LayerKind {
    pub const ALL: [LayerKind; 3] = [LayerKind::SageMean, LayerKind::SageLstm, LayerKind::Gconv];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::SageMean => "sage_mean",
            LayerKind::SageLstm => "sage_lstm",
            LayerKind::Gconv => "gconv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sage" | "sage_mean" => Ok(LayerKind::SageMean),
            "sage_lstm" => Ok(LayerKind::SageLstm),
            "gconv" => Ok(LayerKind::Gconv),
            _ => Err(Error::Config(format!("unknown layer kind {s:?}"))),
        }
    }
}

/// Nonlinearity applied after each message-passing layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    #[default]
    LeakyRelu,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub layer_kind: LayerKind,
    pub input_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
    /// Project `concat(h_u, e_uv)` into messages; off means messages are `h_u`.
    #[serde(default = "default_true")]
    pub edge_features: bool,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            num_layers: 7,
            hidden: 256,
            layer_kind: LayerKind::SageMean,
            input_dim,
            num_classes,
            seed: 0,
            edge_features: true,
            activation: Activation::LeakyRelu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_LAYERS).contains(&self.num_layers) {
            return Err(Error::Config(format!("num_layers {} outside 1..={MAX_LAYERS}", self.num_layers)));
        }
        if self.hidden == 0 || self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }
}

/// Node/edge arrays of one graph or a disjoint union of graphs.
#[derive(Debug, Clone)]
pub struct GraphInput<T> {
    pub x: Tensor<T>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub edge_attr: Tensor<T>,
    pub y: Vec<usize>,
    pub mask: Vec<bool>,
    /// First node of each member graph, plus the total node count.
    pub offsets: Vec<usize>,
}

impl<T: Scalar> GraphInput<T> {
    pub fn from_graph(g: &AssemblyGraph) -> Result<Self> {
        Self::from_graphs(&[g])
    }

    /// Disjoint union; node indices of later graphs are shifted.
    pub fn from_graphs(graphs: &[&AssemblyGraph]) -> Result<Self> {
        let width = graphs.first().map_or(0, |g| g.width());
        if let Some(g) = graphs.iter().find(|g| g.width() != width) {
            return Err(Error::Schema(format!(
                "graph {} has width {}, batch has {width}",
                g.graph_id,
                g.width()
            )));
        }
        let mut x = Vec::new();
        let mut edge_attr = Vec::new();
        let (mut src, mut dst, mut y, mut mask) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut offsets = vec![0];
        for g in graphs {
            let base = *offsets.last().unwrap();
            x.extend(g.x.iter().map(|&v| T::lit(v as f64)));
            edge_attr.extend(g.edge_attr.iter().map(|&v| T::lit(v as f64)));
            src.extend(g.edge_src.iter().map(|&s| s + base));
            dst.extend(g.edge_dst.iter().map(|&d| d + base));
            y.extend_from_slice(&g.y);
            mask.extend_from_slice(&g.target_mask);
            offsets.push(base + g.num_nodes());
        }
        let n = *offsets.last().unwrap();
        Ok(Self {
            x: Tensor::new(n, width, x)?,
            edge_attr: Tensor::new(src.len(), EDGE_WIDTH, edge_attr)?,
            src,
            dst,
            y,
            mask,
            offsets,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.x.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes()];
        for &d in &self.dst {
            deg[d] += 1;
        }
        deg
    }
}

/// Running batch-norm statistics of the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnBuffers<T> {
    pub mean: Vec<Vec<T>>,
    pub var: Vec<Vec<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Tape handles produced by a forward pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub probs: Var,
    /// `h^(0)..h^(K)`.
    pub layers: Vec<Var>,
    pub jk: Var,
    /// Batch mean and biased variance per head layer (train mode only).
    pub bn_batch: Vec<(Vec<T>, Vec<T>)>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    pub buffers: BnBuffers<T>,
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| T::lit(rng.random_range(-bound..=bound)))
}

/// Parameter names of layer `k`.
pub fn layer_param(k: usize, name: &str) -> String {
    format!("layers.{k}.{name}")
}

impl<T: Scalar> Model<T> {
    /// Uniform `±1/√fan_in` init from `config.seed`; batch-norm scale 1,
    /// shift 0, PReLU slope 0.25.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, h, c) = (config.input_dim, config.hidden, config.num_classes);
        let mut p = ParamSet::new();
        p.insert("input.weight", uniform(&mut rng, d, h, d));
        p.insert("input.bias", uniform(&mut rng, 1, h, d));
        for k in 0..config.num_layers {
            if config.edge_features {
                p.insert(layer_param(k, "edge_proj"), uniform(&mut rng, h + EDGE_WIDTH, h, h + EDGE_WIDTH));
            }
            if config.layer_kind == LayerKind::SageLstm {
                p.insert(layer_param(k, "lstm.w_ih"), uniform(&mut rng, h, 4 * h, h));
                p.insert(layer_param(k, "lstm.w_hh"), uniform(&mut rng, h, 4 * h, h));
                p.insert(layer_param(k, "lstm.bias"), uniform(&mut rng, 1, 4 * h, h));
            }
            p.insert(layer_param(k, "weight"), uniform(&mut rng, 2 * h, h, 2 * h));
        }
        for l in 0..HEAD_DEPTH {
            p.insert(format!("head.{l}.weight"), uniform(&mut rng, h, h, h));
            p.insert(format!("head.{l}.bias"), uniform(&mut rng, 1, h, h));
            p.insert(format!("head.{l}.bn.gamma"), Tensor::from_fn(1, h, |_, _| T::one()));
            p.insert(format!("head.{l}.bn.beta"), Tensor::zeros(1, h));
            p.insert(format!("head.{l}.prelu"), Tensor::scalar(T::lit(PRELU_INIT)));
        }
        p.insert("head.out.weight", uniform(&mut rng, h, c, h));
        p.insert("head.out.bias", uniform(&mut rng, 1, c, h));
        let buffers = BnBuffers {
            mean: vec![vec![T::zero(); h]; HEAD_DEPTH],
            var: vec![vec![T::one(); h]; HEAD_DEPTH],
        };
        Ok(Self {
            config,
            params: p,
            buffers,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let conv = |v: &Vec<Vec<T>>| v.iter().map(|r| r.iter().map(|&x| U::lit(x.as_f64())).collect()).collect();
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            buffers: BnBuffers {
                mean: conv(&self.buffers.mean),
                var: conv(&self.buffers.var),
            },
        }
    }

    fn var(&self, vars: &[Var], name: &str) -> Var {
        vars[self.params.index_of(name).unwrap_or_else(|| panic!("missing parameter {name}"))]
    }

    fn activate(&self, tape: &mut Tape<T>, z: Var) -> Var {
        match self.config.activation {
            Activation::Relu => tape.relu(z),
            Activation::LeakyRelu => tape.leaky_relu(z, T::lit(LEAKY_SLOPE)),
        }
    }

    /// One message-passing layer `h' = act(concat(h, a)·W)`.
    pub fn layer(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        k: usize,
        h: Var,
        input: &GraphInput<T>,
        edge_attr: Var,
        perm_seed: u64,
    ) -> Result<Var> {
        let n = input.num_nodes();
        let hidden = tape.shape(h).1;
        let agg = if input.num_edges() == 0 {
            tape.leaf(Tensor::zeros(n, hidden))
        } else {
            let hu = tape.index_select_rows(h, input.src.clone())?;
            let msg = if self.config.edge_features {
                let cat = tape.concat_cols(&[hu, edge_attr])?;
                let proj = self.var(vars, &layer_param(k, "edge_proj"));
                tape.matmul(cat, proj)?
            } else {
                hu
            };
            match self.config.layer_kind {
                LayerKind::SageMean => {
                    let deg = input.in_degrees();
                    let sum = tape.scatter_add_rows(msg, input.dst.clone(), n)?;
                    let inv = deg.iter().map(|&d| if d == 0 { T::zero() } else { T::one() / T::lit(d as f64) }).collect();
                    tape.scale_rows(sum, inv)?
                }
                LayerKind::Gconv => {
                    let deg = input.in_degrees();
                    let norm = input
                        .src
                        .iter()
                        .zip(&input.dst)
                        .map(|(&u, &v)| T::one() / T::lit(((deg[u] + 1) * (deg[v] + 1)) as f64).sqrt())
                        .collect();
                    let scaled = tape.scale_rows(msg, norm)?;
                    tape.scatter_add_rows(scaled, input.dst.clone(), n)?
                }
                LayerKind::SageLstm => self.lstm_aggregate(tape, vars, k, msg, input, perm_seed)?,
            }
        };
        let cat = tape.concat_cols(&[h, agg])?;
        let z = tape.matmul(cat, self.var(vars, &layer_param(k, "weight")))?;
        Ok(self.activate(tape, z))
    }

    /// Runs an LSTM over each node's incoming messages in a seeded random
    /// order and returns the final hidden state (zero for isolated nodes).
    fn lstm_aggregate(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        k: usize,
        msg: Var,
        input: &GraphInput<T>,
        perm_seed: u64,
    ) -> Result<Var> {
        let n = input.num_nodes();
        let m = self.config.hidden;
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (e, &v) in input.dst.iter().enumerate() {
            incoming[v].push(e);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[b"lstm", &perm_seed.to_le_bytes(), &(k as u64).to_le_bytes()]));
        for list in &mut incoming {
            list.shuffle(&mut rng);
        }
        let steps = incoming.iter().map(Vec::len).max().unwrap_or(0);
        let w_ih = self.var(vars, &layer_param(k, "lstm.w_ih"));
        let w_hh = self.var(vars, &layer_param(k, "lstm.w_hh"));
        let bias = self.var(vars, &layer_param(k, "lstm.bias"));
        let mut h = tape.leaf(Tensor::zeros(n, m));
        let mut c = tape.leaf(Tensor::zeros(n, m));
        for t in 0..steps {
            let active: Vec<usize> = (0..n).filter(|&v| incoming[v].len() > t).collect();
            let keep: Vec<T> = (0..n).map(|v| if incoming[v].len() > t { T::zero() } else { T::one() }).collect();
            let x_t = tape.index_select_rows(msg, active.iter().map(|&v| incoming[v][t]).collect())?;
            let h_a = tape.index_select_rows(h, active.clone())?;
            let c_a = tape.index_select_rows(c, active.clone())?;
            let (h_new, c_new) = tape.lstm_cell_step(x_t, h_a, c_a, w_ih, w_hh, bias)?;
            let h_back = tape.scatter_add_rows(h_new, active.clone(), n)?;
            let c_back = tape.scatter_add_rows(c_new, active, n)?;
            let h_kept = tape.scale_rows(h, keep.clone())?;
            let c_kept = tape.scale_rows(c, keep)?;
            h = tape.add(h_back, h_kept)?;
            c = tape.add(c_back, c_kept)?;
        }
        Ok(h)
    }

    /// Linear → batch norm → PReLU, twice, then linear → softmax.
    pub fn head(&self, tape: &mut Tape<T>, vars: &[Var], z: Var, mode: Mode) -> Result<(Var, Vec<(Vec<T>, Vec<T>)>)> {
        let eps = T::lit(BN_EPS);
        let mut z = z;
        let mut stats = Vec::new();
        for l in 0..HEAD_DEPTH {
            let lin = tape.matmul(z, self.var(vars, &format!("head.{l}.weight")))?;
            let lin = tape.add_bias(lin, self.var(vars, &format!("head.{l}.bias")))?;
            let gamma = self.var(vars, &format!("head.{l}.bn.gamma"));
            let beta = self.var(vars, &format!("head.{l}.bn.beta"));
            let normed = match mode {
                Mode::Train => {
                    let (out, mean, var) = tape.batch_norm_train(lin, gamma, beta, eps)?;
                    stats.push((mean, var));
                    out
                }
                Mode::Eval => tape.batch_norm_eval(lin, gamma, beta, &self.buffers.mean[l], &self.buffers.var[l], eps)?,
            };
            z = tape.prelu(normed, self.var(vars, &format!("head.{l}.prelu")))?;
        }
        let logits = tape.matmul(z, self.var(vars, "head.out.weight"))?;
        let logits = tape.add_bias(logits, self.var(vars, "head.out.bias"))?;
        Ok((tape.softmax_rows(logits), stats))
    }

    /// Full forward pass; `vars` come from `self.params.attach(tape)`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        input: &GraphInput<T>,
        mode: Mode,
        perm_seed: u64,
    ) -> Result<Forward<T>> {
        if input.x.cols() != self.config.input_dim {
            return Err(Error::Schema(format!(
                "input width {} does not match model input width {}",
                input.x.cols(),
                self.config.input_dim
            )));
        }
        let x = tape.leaf(input.x.clone());
        let edge_attr = tape.leaf(input.edge_attr.clone());
        let h0 = tape.matmul(x, self.var(vars, "input.weight"))?;
        let h0 = tape.add_bias(h0, self.var(vars, "input.bias"))?;
        let mut layers = vec![h0];
        for k in 0..self.config.num_layers {
            let h = self.layer(tape, vars, k, layers[k], input, edge_attr, perm_seed)?;
            layers.push(h);
        }
        let jk = jk_sum(tape, &layers[1..])?;
        let (probs, bn_batch) = self.head(tape, vars, jk, mode)?;
        Ok(Forward {
            probs,
            layers,
            jk,
            bn_batch,
        })
    }

    /// Moves the running statistics toward the batch statistics. Variance
    /// is stored unbiased.
    pub fn update_running_stats(&mut self, batch: &[(Vec<T>, Vec<T>)], n: usize) {
        let mom = T::lit(BN_MOMENTUM);
        let keep = T::one() - mom;
        let correction = if n > 1 { T::lit(n as f64 / (n - 1) as f64) } else { T::one() };
        for (l, (mean, var)) in batch.iter().enumerate() {
            for (r, &m) in self.buffers.mean[l].iter_mut().zip(mean) {
                *r = keep * *r + mom * m;
            }
            for (r, &v) in self.buffers.var[l].iter_mut().zip(var) {
                *r = keep * *r + mom * v * correction;
            }
        }
    }

    /// Eval-mode class probabilities, `|V|×C`.
    pub fn predict(&self, input: &GraphInput<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape);
        let out = self.forward(&mut tape, &vars, input, Mode::Eval, self.config.seed)?;
        Ok(tape.value(out.probs).clone())
    }

    pub fn predict_graph(&self, g: &AssemblyGraph) -> Result<Tensor<T>> {
        self.predict(&GraphInput::from_graph(g)?)
    }
}

/// Elementwise sum of layer outputs.
pub fn jk_sum<T: Scalar>(tape: &mut Tape<T>, layers: &[Var]) -> Result<Var> {
    let (&first, rest) = layers
        .split_first()
        .ok_or_else(|| Error::shape("jk_sum", "no layers"))?;
    rest.iter().try_fold(first, |acc, &h| tape.add(acc, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::toy_graph;
    use crate::ingest::ConnectionKind::*;

    fn config(kind: LayerKind) -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden: 4,
            layer_kind: kind,
            input_dim: 5,
            num_classes: 3,
            seed: 11,
            edge_features: true,
            activation: Activation::LeakyRelu,
        }
    }

    #[test]
    fn output_shape_and_rows_sum_to_one() {
        let g = toy_graph(4, &[(0, 1, Contact), (1, 2, Joint), (2, 3, Hierarchical)]);
        for kind in LayerKind::ALL {
            let m = Model::<f64>::init(config(kind)).unwrap();
            let p = m.predict_graph(&g).unwrap();
            assert_eq!(p.shape(), (4, 3));
            for r in 0..4 {
                let s: f64 = p.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn same_seed_same_params() {
        let a = Model::<f32>::init(config(LayerKind::SageLstm)).unwrap();
        let b = Model::<f32>::init(config(LayerKind::SageLstm)).unwrap();
        assert_eq!(a.params.tensors(), b.params.tensors());
        let mut c = config(LayerKind::SageLstm);
        c.seed = 12;
        assert_ne!(a.params.tensors(), Model::<f32>::init(c).unwrap().params.tensors());
    }

    #[test]
    fn width_mismatch_is_schema_error() {
        let mut c = config(LayerKind::SageMean);
        c.input_dim = 6;
        let m = Model::<f32>::init(c).unwrap();
        let g = toy_graph(3, &[(0, 1, Contact)]);
        assert!(matches!(m.predict_graph(&g), Err(Error::Schema(_))));
    }

    #[test]
    fn config_bounds() {
        let mut c = config(LayerKind::SageMean);
        c.num_layers = 9;
        assert!(Model::<f32>::init(c.clone()).is_err());
        c.num_layers = 0;
        assert!(c.validate().is_err());
        assert_eq!(LayerKind::parse("sage").unwrap(), LayerKind::SageMean);
        assert!(LayerKind::parse("gat").is_err());
    }

    #[test]
    fn zero_head_gives_uniform_rows() {
        let mut m = Model::<f64>::init(config(LayerKind::SageMean)).unwrap();
        for name in ["head.out.weight", "head.out.bias"] {
            m.params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let g = toy_graph(3, &[(0, 1, Contact), (1, 2, Contact)]);
        let p = m.predict_graph(&g).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
    }
}
