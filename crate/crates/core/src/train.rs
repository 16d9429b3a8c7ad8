//! Datasets of binned event streams, the BPTT training loop and evaluation.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aer::{bin_events, read_stream, scan_dataset, DatasetIndex, EventStream, FrameMode};
use crate::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::{clip_global_norm, learning_rate, Adam};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Event counts, `[T, 2, H, W]`.
    pub frames: Tensor,
    pub label: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Bins labelled streams into `time_steps` count frames.
    pub fn from_streams(
        streams: &[EventStream],
        class_names: Vec<String>,
        time_steps: usize,
    ) -> Result<Self> {
        let samples = streams
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let label = s.label.ok_or_else(|| Error::Data(format!("stream {i} has no label")))?;
                if label >= class_names.len() {
                    return Err(Error::Data(format!("stream {i} label {label} has no class name")));
                }
                let frames = bin_events(s, time_steps, FrameMode::Count)?.frames;
                Ok(Sample { frames, label })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { samples, class_names })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Stacks the selected samples into `[T, N, 2, H, W]` plus labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let first = indices
            .first()
            .map(|&i| &self.samples[i].frames)
            .ok_or_else(|| Error::contract("empty batch"))?;
        let s = first.shape().to_vec();
        let (t, plane) = (s[0], s[1] * s[2] * s[3]);
        let n = indices.len();
        let mut out = Tensor::zeros(&[t, n, s[1], s[2], s[3]]);
        let dst = out.data_mut();
        for (j, &i) in indices.iter().enumerate() {
            let src = self.samples[i].frames.data();
            if src.len() != t * plane {
                return Err(Error::Data(format!("sample {i} has a different frame shape")));
            }
            for k in 0..t {
                dst[(k * n + j) * plane..(k * n + j + 1) * plane]
                    .copy_from_slice(&src[k * plane..(k + 1) * plane]);
            }
        }
        Ok((out, indices.iter().map(|&i| self.samples[i].label).collect()))
    }
}

fn load_index(
    index: &DatasetIndex,
    files: &[(std::path::PathBuf, usize)],
    cfg: &ModelConfig,
) -> Result<Dataset> {
    let streams = files
        .iter()
        .map(|(p, label)| read_stream(p, cfg.input_width, cfg.input_height, Some(*label)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_streams(&streams, index.class_names.clone(), cfg.time_steps)
}

/// Loads `(train, validation)` sets from a dataset root.
///
/// A root with `train/` and `test/` subfolders is used as is. Otherwise the
/// last `val_fraction` of each class's files (in name order) is held out.
pub fn load_split(root: &Path, cfg: &ModelConfig, val_fraction: f64) -> Result<(Dataset, Dataset)> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} does not exist", root.display())));
    }
    let (train_dir, test_dir) = (root.join("train"), root.join("test"));
    if train_dir.is_dir() && test_dir.is_dir() {
        let tr = scan_dataset(&train_dir)?;
        let te = scan_dataset(&test_dir)?;
        if tr.class_names != te.class_names {
            return Err(Error::Data("train and test folders list different classes".into()));
        }
        return Ok((load_index(&tr, &tr.files, cfg)?, load_index(&te, &te.files, cfg)?));
    }
    let index = scan_dataset(root)?;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in 0..index.class_names.len() {
        let files: Vec<_> = index.files.iter().filter(|(_, l)| *l == class).cloned().collect();
        let held = ((files.len() as f64 * val_fraction).round() as usize).min(files.len().saturating_sub(1));
        let cut = files.len() - held;
        train.extend_from_slice(&files[..cut]);
        val.extend_from_slice(&files[cut..]);
    }
    Ok((load_index(&index, &train, cfg)?, load_index(&index, &val, cfg)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    /// `None` when there is no validation set.
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    /// `NaN` for classes with no samples.
    pub per_class: Vec<f64>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

/// Row-wise argmax of `[N, K]` logits, ties to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Result of one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub correct: usize,
    pub grad_norm: f64,
}

fn norm_report(model: &Model) -> String {
    model.store.iter().map(|p| format!("{}={:.4e}", p.name, p.value.l2_norm())).collect::<Vec<_>>().join(", ")
}

/// Forward, cross-entropy, backward over the whole unroll, clip, Adam.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    frames: &Tensor,
    labels: &[usize],
    lr: f64,
    clip: f64,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape, true);
    let trace = model.forward(&mut tape, &bound, frames)?;
    let preds = argmax_rows(tape.value(trace.logits));
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    let loss = tape.softmax_cross_entropy(trace.logits, labels)?;
    let loss_value = tape.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Err(Error::NonFinite { epoch: 0, batch: 0, report: norm_report(model) });
    }
    let grads = tape.backward(loss)?;
    let mut g: Vec<Tensor> = bound
        .vars()
        .iter()
        .zip(model.store.iter())
        .map(|(&v, p)| grads.get_or_zeros(v, p.value.shape()))
        .collect();
    let grad_norm = clip_global_norm(&mut g, clip);
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite { epoch: 0, batch: 0, report: norm_report(model) });
    }
    adam.update(&mut model.store, &g, lr);
    Ok(StepOutcome { loss: loss_value, correct, grad_norm })
}

/// Sample order for `epoch`, a pure function of `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Trains for `tc.epochs` epochs. `on_epoch` runs after each epoch (for
/// checkpoints and logging) and can abort training by returning an error.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    val_set: &Dataset,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &Model) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if train_set.num_classes() > model.config.num_classes() {
        return Err(Error::config(
            "fc_layers",
            format!(
                "last layer has {} outputs but the data has {} classes",
                model.config.num_classes(),
                train_set.num_classes()
            ),
        ));
    }
    let mut adam = Adam::new(&model.store);
    let mut history = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        let lr = learning_rate(tc, epoch);
        let order = epoch_order(train_set.len(), tc.seed, epoch);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let (frames, labels) = train_set.batch(chunk)?;
            let out =
                train_step(model, &mut adam, &frames, &labels, lr, tc.grad_clip).map_err(|e| match e {
                    Error::NonFinite { report, .. } => Error::NonFinite { epoch, batch: b, report },
                    other => other,
                })?;
            loss_sum += out.loss * chunk.len() as f64;
            correct += out.correct;
        }
        let val_acc =
            if val_set.is_empty() { None } else { Some(evaluate(model, val_set, tc.batch_size)?.accuracy) };
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc,
        };
        on_epoch(&metrics, model)?;
        history.push(metrics);
    }
    Ok(history)
}

pub fn evaluate(model: &Model, set: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let k = model.config.num_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut loss_sum = 0.0;
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (frames, labels) = set.batch(chunk)?;
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape, false);
        let trace = model.forward(&mut tape, &bound, &frames)?;
        for (&l, p) in labels.iter().zip(argmax_rows(tape.value(trace.logits))) {
            if l >= k {
                return Err(Error::Data(format!("label {l} exceeds the model's {k} classes")));
            }
            confusion[l][p] += 1;
        }
        let loss = tape.softmax_cross_entropy(trace.logits, &labels)?;
        loss_sum += tape.value(loss).data()[0] * chunk.len() as f64;
    }
    Ok(summarize(confusion, loss_sum / set.len() as f64))
}

pub(crate) fn summarize(confusion: Vec<Vec<usize>>, loss: f64) -> Evaluation {
    let total: usize = confusion.iter().flatten().sum();
    let trace: usize = (0..confusion.len()).map(|i| confusion[i][i]).sum();
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: usize = row.iter().sum();
            if n == 0 {
                f64::NAN
            } else {
                row[i] as f64 / n as f64
            }
        })
        .collect();
    Evaluation { accuracy: trace as f64 / total.max(1) as f64, loss, per_class, confusion }
}

pub const HISTORY_HEADER: &str = "epoch,loss,train_acc,val_acc";

pub fn history_csv(history: &[EpochMetrics]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for m in history {
        let val = m.val_acc.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{}\n", m.epoch, m.loss, m.train_acc, val));
    }
    s
}

pub fn write_history_csv(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(history_csv(history).as_bytes()).map_err(|e| Error::io(path, e))
}
