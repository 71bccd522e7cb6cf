//! Reference predictors: majority class, linear softmax on node features and
//! linear softmax on the geometry block alone.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{blocks, seed_from};
use crate::error::{Error, Result};
use crate::graph::AssemblyGraph;
use crate::metrics::{micro_f1, MetricsReport, PredictionSet};
use crate::optim::{cosine_lr, OptimizerState, ParamSet};
use crate::tensor::{Tape, Tensor};
use crate::training::{class_weights, target_counts, TrainConfig, TrainData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Majority,
    LinearSoftmax,
    VisualOnly,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Majority, BaselineKind::LinearSoftmax, BaselineKind::VisualOnly];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Majority => "majority",
            BaselineKind::LinearSoftmax => "linear_softmax",
            BaselineKind::VisualOnly => "visual_only",
        }
    }
}

fn truth_and_mask(graphs: &[AssemblyGraph]) -> (Vec<usize>, Vec<bool>) {
    let truth = graphs.iter().flat_map(|g| g.y.iter().copied()).collect();
    let mask = graphs.iter().flat_map(|g| g.target_mask.iter().copied()).collect();
    (truth, mask)
}

/// Predicts training-set class frequencies for every node; the modal class
/// ranks first, ties broken by the smaller index.
#[derive(Debug, Clone, PartialEq)]
pub struct Majority {
    pub frequencies: Vec<f64>,
}

impl Majority {
    pub fn fit(train: &[AssemblyGraph], num_classes: usize) -> Result<Self> {
        let counts = target_counts(train, num_classes);
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::Config("no training targets".into()));
        }
        Ok(Self {
            frequencies: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn modal_class(&self) -> usize {
        PredictionSet::from_rows([self.frequencies.clone()]).argmax()[0]
    }

    pub fn predict(&self, graphs: &[AssemblyGraph]) -> PredictionSet {
        let n: usize = graphs.iter().map(AssemblyGraph::num_nodes).sum();
        PredictionSet::from_rows((0..n).map(|_| self.frequencies.clone()))
    }
}

/// `softmax(x·W + b)` over a fixed subset of node-feature columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmax {
    pub columns: Vec<usize>,
    pub params: ParamSet<f32>,
}

impl LinearSoftmax {
    pub fn init(columns: Vec<usize>, num_classes: usize, seed: u64) -> Result<Self> {
        if columns.is_empty() || num_classes == 0 {
            return Err(Error::Config("linear baseline needs columns and classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (columns.len() as f32).sqrt();
        let mut params = ParamSet::new();
        params.insert("weight", Tensor::from_fn(columns.len(), num_classes, |_, _| rng.random_range(-bound..bound)));
        params.insert("bias", Tensor::zeros(1, num_classes));
        Ok(Self { columns, params })
    }

    fn inputs(&self, graphs: &[&AssemblyGraph]) -> Result<Tensor<f32>> {
        let rows: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let mut data = Vec::with_capacity(rows * self.columns.len());
        for g in graphs {
            if self.columns.iter().any(|&c| c >= g.width()) {
                return Err(Error::Schema(format!("graph {} is narrower than the baseline input", g.graph_id)));
            }
            for i in 0..g.num_nodes() {
                let row = g.row(i);
                data.extend(self.columns.iter().map(|&c| row[c]));
            }
        }
        Tensor::new(rows, self.columns.len(), data)
    }

    fn probs(&self, tape: &mut Tape<f32>, vars: &[crate::tensor::Var], x: Tensor<f32>) -> Result<crate::tensor::Var> {
        let x = tape.leaf(x);
        let z = tape.matmul(x, vars[0])?;
        let z = tape.add_bias(z, vars[1])?;
        Ok(tape.softmax_rows(z))
    }

    pub fn predict(&self, graphs: &[AssemblyGraph]) -> Result<PredictionSet> {
        let refs: Vec<&AssemblyGraph> = graphs.iter().collect();
        let x = self.inputs(&refs)?;
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape);
        let p = self.probs(&mut tape, &vars, x)?;
        Ok(PredictionSet::from_tensor(tape.value(p)))
    }

    fn step(&mut self, opt: &mut OptimizerState<f32>, batch: &[&AssemblyGraph], weights: &[f32], lr: f64) -> Result<()> {
        let x = self.inputs(batch)?;
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape);
        let p = self.probs(&mut tape, &vars, x)?;
        let y: Vec<usize> = batch.iter().flat_map(|g| g.y.iter().copied()).collect();
        let mut total = None;
        let mut start = 0;
        for g in batch {
            let end = start + g.num_nodes();
            let mask: Vec<bool> = (0..y.len())
                .map(|i| i >= start && i < end && g.target_mask[i - start])
                .collect();
            let l = tape.weighted_cross_entropy(p, &y, weights, &mask)?;
            total = Some(match total {
                None => l,
                Some(acc) => tape.add(acc, l)?,
            });
            start = end;
        }
        let total = total.ok_or_else(|| Error::Config("empty batch".into()))?;
        let loss = tape.scale(total, 1.0 / batch.len() as f32);
        tape.backward(loss)?;
        let grads = self.params.collect_grads(&tape, &vars);
        opt.adam_step(&mut self.params, &grads, lr)
    }

    /// Same loop as the graph model: shuffled graph batches, cosine lr, early
    /// stopping on validation micro-F1.
    pub fn train(columns: Vec<usize>, num_classes: usize, cfg: &TrainConfig, data: TrainData, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if data.train.is_empty() {
            return Err(Error::Config("empty training split".into()));
        }
        let mut model = Self::init(columns, num_classes, seed_from(&[b"linear", &seed.to_le_bytes()]))?;
        let mut opt = OptimizerState::new(&model.params, cfg.lr);
        let counts = target_counts(data.train, num_classes);
        let weights: Vec<f32> = class_weights(&counts, cfg.weight_mode).iter().map(|&w| w as f32).collect();
        let val = if data.val.is_empty() { data.train } else { data.val };
        let (val_truth, val_mask) = truth_and_mask(val);
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[b"shuffle-linear", &seed.to_le_bytes()]));
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        let mut best = (model.clone(), f64::NEG_INFINITY);
        let mut stale = 0;
        for epoch in 0..cfg.epochs {
            let lr = cosine_lr(epoch, cfg.epochs, cfg.lr)?;
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&AssemblyGraph> = chunk.iter().map(|&i| &data.train[i]).collect();
                model.step(&mut opt, &batch, &weights, lr)?;
            }
            let f1 = if val_mask.iter().any(|&m| m) {
                micro_f1(&model.predict(val)?.argmax(), &val_truth, &val_mask)?
            } else {
                0.0
            };
            if f1 > best.1 {
                best = (model.clone(), f1);
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
        Ok(best.0)
    }
}

/// Columns used by each baseline; `None` for the majority predictor.
pub fn baseline_columns(kind: BaselineKind, g: &AssemblyGraph) -> Result<Option<Vec<usize>>> {
    Ok(match kind {
        BaselineKind::Majority => None,
        BaselineKind::LinearSoftmax => Some((0..g.width()).collect()),
        BaselineKind::VisualOnly => {
            let b = g
                .schema
                .block(blocks::BODY_GEOMETRY)
                .ok_or_else(|| Error::Schema("no body_geometry block".into()))?;
            Some((b.offset..b.offset + b.width).collect())
        }
    })
}

/// Trains one baseline and scores it on `test`.
pub fn run_baseline(
    kind: BaselineKind,
    num_classes: usize,
    cfg: &TrainConfig,
    data: TrainData,
    test: &[AssemblyGraph],
    seed: u64,
    ks: &[usize],
) -> Result<MetricsReport> {
    let first = data.train.first().ok_or_else(|| Error::Config("empty training split".into()))?;
    let preds = match baseline_columns(kind, first)? {
        None => Majority::fit(data.train, num_classes)?.predict(test),
        Some(cols) => LinearSoftmax::train(cols, num_classes, cfg, data, seed)?.predict(test)?,
    };
    let (truth, mask) = truth_and_mask(test);
    MetricsReport::compute(&preds, &truth, &mask, ks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ConnectionKind::Contact as C;
    use crate::graph::tests::toy_graph;

    #[test]
    fn majority_ties_go_to_smaller_index() {
        let mut g = toy_graph(4, &[(0, 1, C), (1, 2, C), (2, 3, C)]);
        g.y = vec![1, 0, 1, 0];
        let m = Majority::fit(&[g.clone()], 2).unwrap();
        assert_eq!(m.modal_class(), 0);
        g.y = vec![1, 0, 1, 1];
        let m = Majority::fit(&[g], 2).unwrap();
        assert_eq!(m.modal_class(), 1);
        assert_eq!(m.frequencies, vec![0.25, 0.75]);
    }

    #[test]
    fn linear_learns_a_separable_column() {
        let mut g = toy_graph(4, &[(0, 1, C), (1, 2, C), (2, 3, C)]);
        g.y = vec![0, 1, 0, 1];
        let w = g.width();
        for i in 0..4 {
            g.x[i * w] = if g.y[i] == 0 { -1.0 } else { 1.0 };
        }
        let graphs = vec![g; 8];
        let cfg = TrainConfig {
            epochs: 60,
            lr: 0.05,
            ..TrainConfig::default()
        };
        let data = TrainData {
            train: &graphs,
            val: &[],
        };
        let m = LinearSoftmax::train(vec![0], 2, &cfg, data, 3).unwrap();
        let p = m.predict(&graphs[..1]).unwrap();
        assert_eq!(p.argmax(), vec![0, 1, 0, 1]);
    }
}
