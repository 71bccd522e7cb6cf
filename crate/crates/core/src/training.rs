//! Supervised training with class-weighted loss, early stopping, repeated
//! runs and grid search.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::seed_from;
use crate::error::{Error, Result};
use crate::graph::AssemblyGraph;
use crate::metrics::{mean_std, micro_f1, MetricsReport, PredictionSet};
use crate::model::{GraphInput, LayerKind, Mode, Model, ModelConfig};
use crate::optim::{cosine_lr, OptimizerState};
use crate::tensor::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    InverseFrequency,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    /// Graphs per optimizer step.
    pub batch_size: usize,
    pub runs: usize,
    pub lr: f64,
    pub weight_mode: WeightMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            patience: 20,
            batch_size: 8,
            runs: 10,
            lr: 0.001,
            weight_mode: WeightMode::InverseFrequency,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.runs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, runs and batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// `w_c ∝ 1/max(count_c, 1)`, rescaled to mean 1.
pub fn class_weights(counts: &[u64], mode: WeightMode) -> Vec<f64> {
    match mode {
        WeightMode::Uniform => vec![1.0; counts.len()],
        WeightMode::InverseFrequency => {
            // n / Σ_j (c_i / c_j) is the same quantity, exact for equal counts
            let floored: Vec<f64> = counts.iter().map(|&c| c.max(1) as f64).collect();
            let n = floored.len() as f64;
            floored
                .iter()
                .map(|&ci| n / floored.iter().map(|&cj| ci / cj).sum::<f64>())
                .collect()
        }
    }
}

/// Target-node label counts.
pub fn target_counts(graphs: &[AssemblyGraph], num_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; num_classes];
    for g in graphs {
        for (&y, _) in g.y.iter().zip(&g.target_mask).filter(|(_, &m)| m) {
            if y < num_classes {
                counts[y] += 1;
            }
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_micro_f1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_micro_f1: f64,
    pub wall_time_s: f64,
}

impl RunHistory {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "train_loss", "val_micro_f1", "lr"]).expect("in-memory write");
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_micro_f1.to_string(),
                e.lr.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Train/validation graphs for one run.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [AssemblyGraph],
    pub val: &'a [AssemblyGraph],
}

/// Nodes per eval forward pass; graphs are disjoint so chunking does not
/// change the result.
const EVAL_CHUNK: usize = 64;

/// Pooled eval-mode predictions with their labels and target masks.
pub fn predict_graphs(model: &Model<f32>, graphs: &[AssemblyGraph]) -> Result<(PredictionSet, Vec<usize>, Vec<bool>)> {
    let mut ranked = Vec::new();
    let mut truth = Vec::new();
    let mut mask = Vec::new();
    let refs: Vec<&AssemblyGraph> = graphs.iter().collect();
    for chunk in refs.chunks(EVAL_CHUNK) {
        let input = GraphInput::from_graphs(chunk)?;
        let probs = model.predict(&input)?;
        ranked.extend(PredictionSet::from_tensor(&probs).ranked);
        truth.extend(input.y);
        mask.extend(input.mask);
    }
    Ok((PredictionSet { ranked }, truth, mask))
}

pub fn evaluate(model: &Model<f32>, graphs: &[AssemblyGraph], ks: &[usize]) -> Result<MetricsReport> {
    let (preds, truth, mask) = predict_graphs(model, graphs)?;
    MetricsReport::compute(&preds, &truth, &mask, ks)
}

fn val_micro(model: &Model<f32>, graphs: &[AssemblyGraph]) -> Result<f64> {
    let (preds, truth, mask) = predict_graphs(model, graphs)?;
    if !mask.iter().any(|&m| m) {
        return Ok(0.0);
    }
    micro_f1(&preds.argmax(), &truth, &mask)
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step(
    model: &mut Model<f32>,
    opt: &mut OptimizerState<f32>,
    batch: &[&AssemblyGraph],
    weights: &[f32],
    lr: f64,
    perm_seed: u64,
) -> Result<f64> {
    let input = GraphInput::<f32>::from_graphs(batch)?;
    let mut tape = Tape::new();
    let vars = model.params.attach(&mut tape);
    let out = model.forward(&mut tape, &vars, &input, Mode::Train, perm_seed)?;
    let mut total = None;
    for w in input.offsets.windows(2) {
        let mask: Vec<bool> = (0..input.num_nodes())
            .map(|i| i >= w[0] && i < w[1] && input.mask[i])
            .collect();
        let l = tape.weighted_cross_entropy(out.probs, &input.y, weights, &mask)?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let total = total.ok_or_else(|| Error::Config("empty batch".into()))?;
    let loss = tape.scale(total, 1.0 / batch.len() as f32);
    tape.backward(loss)?;
    let grads = model.params.collect_grads(&tape, &vars);
    let value = tape.value(loss).data()[0] as f64;
    opt.adam_step(&mut model.params, &grads, lr)?;
    model.update_running_stats(&out.bn_batch, input.num_nodes());
    Ok(value)
}

/// Trains from `model_config` with its seed replaced by `seed`; returns the
/// parameters of the best validation epoch.
pub fn train(
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    data: TrainData,
    seed: u64,
) -> Result<(Model<f32>, RunHistory)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    let started = Instant::now();
    let mut mc = model_config.clone();
    mc.seed = seed;
    let mut model = Model::<f32>::init(mc)?;
    let mut opt = OptimizerState::new(&model.params, cfg.lr);
    let counts = target_counts(data.train, model.config.num_classes);
    let weights: Vec<f32> = class_weights(&counts, cfg.weight_mode).iter().map(|&w| w as f32).collect();
    // selection falls back to the training graphs when there is no validation split
    let val = if data.val.is_empty() { data.train } else { data.val };
    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[b"shuffle", &seed.to_le_bytes()]));
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut records = Vec::new();
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr)?;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&AssemblyGraph> = chunk.iter().map(|&i| &data.train[i]).collect();
            let perm_seed = seed_from(&[&seed.to_le_bytes(), &(epoch as u64).to_le_bytes(), &(b as u64).to_le_bytes()]);
            loss_sum += train_step(&mut model, &mut opt, &batch, &weights, lr, perm_seed)?;
            batches += 1;
        }
        let val_f1 = val_micro(&model, val)?;
        let train_loss = loss_sum / batches as f64;
        debug!("epoch {epoch} loss {train_loss:.4} val {val_f1:.4} lr {lr:.6}");
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_micro_f1: val_f1,
            lr,
        });
        if val_f1 > best.2 {
            best = (model.clone(), epoch, val_f1);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (model, best_epoch, best_val) = best;
    info!("seed {seed}: best epoch {best_epoch}, val micro-F1 {best_val:.4}");
    Ok((
        model,
        RunHistory {
            epochs: records,
            best_epoch,
            best_val_micro_f1: best_val,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    ))
}

/// Runs `f(0..n)` on up to `jobs` threads; results keep index order.
pub fn parallel_map<R: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every index ran"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub model: Model<f32>,
    pub history: RunHistory,
    pub test: MetricsReport,
}

/// `n` runs with seeds `seed0..seed0+n`, each evaluated on `test`.
pub fn multi_run(
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    data: TrainData,
    test: &[AssemblyGraph],
    seed0: u64,
    ks: &[usize],
    jobs: usize,
) -> Result<Vec<RunResult>> {
    parallel_map(cfg.runs, jobs, |run| {
        let seed = seed0 + run as u64;
        let (model, history) = train(model_config, cfg, data, seed)?;
        let test = evaluate(&model, test, ks)?;
        Ok(RunResult {
            run,
            seed,
            model,
            history,
            test,
        })
    })
    .into_iter()
    .collect()
}

/// Mean and population std of one metric across runs.
pub fn aggregate(runs: &[RunResult], metric: impl Fn(&MetricsReport) -> f64) -> (f64, f64) {
    let values: Vec<f64> = runs.iter().map(|r| metric(&r.test)).collect();
    mean_std(&values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub layers: Vec<usize>,
    pub hidden: Vec<usize>,
    pub kinds: Vec<LayerKind>,
}

impl GridSpace {
    pub fn cells(&self) -> Vec<(usize, usize, LayerKind)> {
        let mut out = Vec::new();
        for &l in &self.layers {
            for &h in &self.hidden {
                for &k in &self.kinds {
                    out.push((l, h, k));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub num_layers: usize,
    pub hidden: usize,
    pub layer_kind: LayerKind,
    pub val_mean: f64,
    pub val_std: f64,
    pub runs: usize,
}

/// Trains every cell and ranks by mean best-validation micro-F1 (stable for
/// ties).
pub fn grid_search(
    space: &GridSpace,
    base: &ModelConfig,
    cfg: &TrainConfig,
    data: TrainData,
    seed0: u64,
    jobs: usize,
) -> Result<Vec<GridRow>> {
    let cells = space.cells();
    if cells.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let jobs_list: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.runs).map(move |r| (c, r))).collect();
    let vals = parallel_map(jobs_list.len(), jobs, |j| {
        let (c, r) = jobs_list[j];
        let (layers, hidden, kind) = cells[c];
        let mc = ModelConfig {
            num_layers: layers,
            hidden,
            layer_kind: kind,
            ..base.clone()
        };
        train(&mc, cfg, data, seed0 + r as u64).map(|(_, h)| h.best_val_micro_f1)
    });
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    let mut rows: Vec<GridRow> = cells
        .iter()
        .enumerate()
        .map(|(c, &(num_layers, hidden, layer_kind))| {
            let (val_mean, val_std) = mean_std(&vals[c * cfg.runs..(c + 1) * cfg.runs]);
            GridRow {
                num_layers,
                hidden,
                layer_kind,
                val_mean,
                val_std,
                runs: cfg.runs,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.val_mean.total_cmp(&a.val_mean));
    Ok(rows)
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment: String,
    pub run: usize,
    pub seed: u64,
    pub split: String,
    pub metric: String,
    pub k: Option<usize>,
    pub value: f64,
}

pub const METRICS_HEADER: [&str; 7] = ["experiment", "run", "seed", "split", "metric", "k", "value"];

/// Flattens a report into CSV rows.
pub fn report_rows(experiment: &str, run: usize, seed: u64, split: &str, r: &MetricsReport) -> Vec<MetricRow> {
    let row = |metric: &str, k: Option<usize>, value: f64| MetricRow {
        experiment: experiment.to_string(),
        run,
        seed,
        split: split.to_string(),
        metric: metric.to_string(),
        k,
        value,
    };
    let mut rows = vec![row("micro_f1", None, r.micro_f1), row("weighted_f1", None, r.weighted_f1)];
    for t in &r.top_k {
        rows.push(row("topk_micro_f1", Some(t.k), t.micro_f1));
        rows.push(row("topk_weighted_f1", Some(t.k), t.weighted_f1));
    }
    rows
}

pub fn write_metrics_csv(out: impl Write, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Config(format!("metrics csv: {e}"));
    w.write_record(METRICS_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.run.to_string(),
            r.seed.to_string(),
            r.split.clone(),
            r.metric.clone(),
            r.k.map(|k| k.to_string()).unwrap_or_default(),
            r.value.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Config(format!("metrics csv: {e}")))?;
    Ok(())
}
