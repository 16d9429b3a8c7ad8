#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srnn::aer::{bin_events, synth_gesture, FrameMode, SynthParams};
use srnn::param::{Bound, ParamId, ParamStore};
use srnn::{SpikeMode, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Distinct values (spacing >= 0.05) in random order, so that max pools have
/// no near-ties for a finite-difference step to cross.
pub fn distinct(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    let data = idx.into_iter().map(|k| k as f64 * 0.05 - 0.4 + rng.gen_range(0.0..0.01)).collect();
    Tensor::new(shape, data).unwrap()
}

/// `sum(f(inputs) * r)` with a fixed projection `r`, built on a smooth tape.
fn projected(
    inputs: &[Tensor],
    trainable: bool,
    projection: &Tensor,
    f: &dyn Fn(&mut Tape, &[Var]) -> Var,
) -> (Tape, Vec<Var>, Var) {
    let mut tape = Tape::with_spike_mode(SpikeMode::Smooth);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), trainable)).collect();
    let out = f(&mut tape, &vars);
    let r = tape.constant(projection.clone());
    let weighted = tape.mul(out, r).unwrap();
    let loss = tape.sum(weighted).unwrap();
    (tape, vars, loss)
}

/// Worst relative error `||g - fd|| / max(||g||, ||fd||)` over the inputs,
/// comparing tape gradients with central differences at step `h`.
pub fn gradcheck(inputs: &[Tensor], seed: u64, h: f64, f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let shape = {
        let mut tape = Tape::with_spike_mode(SpikeMode::Smooth);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.shape(out).to_vec()
    };
    let mut r = rng(seed ^ 0x5eed);
    let projection = uniform(&mut r, &shape, -1.0, 1.0);
    let (tape, vars, loss) = projected(inputs, true, &projection, f);
    let grads = tape.backward(loss).unwrap();
    let eval = |xs: &[Tensor]| {
        let (tape, _, loss) = projected(xs, false, &projection, f);
        tape.value(loss).data()[0]
    };
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[k].shape());
        let mut numeric = vec![0.0; inputs[k].len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            *slot = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        worst = worst.max(relative_error(analytic.data(), &numeric));
    }
    worst
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// `sum(out * r)` for a projection `r` drawn from `seed`, so that every
/// output entry contributes a distinct weight to the scalar.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.shape(out).to_vec();
    let r = uniform(&mut rng(seed), &shape, -1.0, 1.0);
    let r = tape.constant(r);
    let weighted = tape.mul(out, r).unwrap();
    tape.sum(weighted).unwrap()
}

fn store_loss(store: &ParamStore, f: &dyn Fn(&mut Tape, &Bound) -> Var) -> f64 {
    let mut tape = Tape::with_spike_mode(SpikeMode::Smooth);
    let bound = store.bind(&mut tape, false);
    let loss = f(&mut tape, &bound);
    tape.value(loss).data()[0]
}

fn store_grads(store: &ParamStore, f: &dyn Fn(&mut Tape, &Bound) -> Var) -> Vec<Tensor> {
    let mut tape = Tape::with_spike_mode(SpikeMode::Smooth);
    let bound = store.bind(&mut tape, true);
    let loss = f(&mut tape, &bound);
    let vars = bound.vars().to_vec();
    let grads = tape.backward(loss).unwrap();
    vars.iter().zip(store.iter()).map(|(v, p)| grads.get_or_zeros(*v, p.value.shape())).collect()
}

/// Elementwise central differences for every tensor in the store; returns
/// `(name, relative error)` per tensor.
pub fn store_gradcheck(
    store: &ParamStore,
    h: f64,
    f: &dyn Fn(&mut Tape, &Bound) -> Var,
) -> Vec<(String, f64)> {
    let analytic = store_grads(store, f);
    let mut out = Vec::new();
    for (k, id) in store.ids().enumerate() {
        let mut numeric = vec![0.0; store.get(id).len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut s = store.clone();
            s.get_mut(id).data_mut()[i] += h;
            let up = store_loss(&s, f);
            s.get_mut(id).data_mut()[i] -= 2.0 * h;
            let down = store_loss(&s, f);
            *slot = (up - down) / (2.0 * h);
        }
        let name = store.iter().nth(k).unwrap().name.clone();
        out.push((name, relative_error(analytic[k].data(), &numeric)));
    }
    out
}

/// Directional derivatives along random unit directions, cycling through the
/// store's tensors; returns `(name, analytic, numeric)` per draw.
pub fn directional_check(
    store: &ParamStore,
    draws: usize,
    seed: u64,
    h: f64,
    f: &dyn Fn(&mut Tape, &Bound) -> Var,
) -> Vec<(String, f64, f64)> {
    let analytic = store_grads(store, f);
    let ids: Vec<ParamId> = store.ids().collect();
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    let mut r = rng(seed);
    (0..draws)
        .map(|d| {
            let k = d % ids.len();
            let shape = store.get(ids[k]).shape().to_vec();
            let dir = uniform(&mut r, &shape, -1.0, 1.0);
            let norm = dir.l2_norm();
            let dir = dir.map(|v| v / norm);
            let a: f64 = analytic[k].data().iter().zip(dir.data()).map(|(g, u)| g * u).sum();
            let shifted = |sign: f64| {
                let mut s = store.clone();
                for (p, u) in s.get_mut(ids[k]).data_mut().iter_mut().zip(dir.data()) {
                    *p += sign * h * u;
                }
                store_loss(&s, f)
            };
            let n = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
            (names[k].clone(), a, n)
        })
        .collect()
}

/// Nearest-centroid classification of flattened binary frames: class means
/// from one set of seeds, predictions on a disjoint set.
pub fn centroid_accuracy(classes: usize, per_class: usize, params: &SynthParams, time_steps: usize) -> f64 {
    let frames = |class: usize, seed: u64| {
        let s = synth_gesture(class, seed, params).unwrap();
        bin_events(&s, time_steps, FrameMode::Binary).unwrap().frames.into_data()
    };
    let centroids: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut acc = frames(c, 0);
            for s in 1..per_class as u64 {
                acc.iter_mut().zip(frames(c, s * 101)).for_each(|(a, v)| *a += v);
            }
            acc.into_iter().map(|v| v / per_class as f64).collect()
        })
        .collect();
    let mut correct = 0;
    for c in 0..classes {
        for s in 0..per_class as u64 {
            let x = frames(c, 10_000 + s);
            let dist = |m: &Vec<f64>| m.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best =
                (0..classes).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
            correct += usize::from(best == c);
        }
    }
    correct as f64 / (classes * per_class) as f64
}

/// `per_class` synthetic gestures for each of `classes` classes, with sample
/// seeds starting at `first_seed`.
pub fn synthetic_set(
    classes: usize,
    per_class: usize,
    first_seed: u64,
    time_steps: usize,
) -> srnn::train::Dataset {
    let params = SynthParams::default();
    let streams: Vec<_> = (0..classes * per_class)
        .map(|i| synth_gesture(i % classes, first_seed + i as u64, &params).unwrap())
        .collect();
    let names = (0..classes).map(srnn::aer::synth_class_name).collect();
    srnn::train::Dataset::from_streams(&streams, names, time_steps).unwrap()
}

/// The desk-scale model: 16x16 input pooled to 8x8, 8 hidden channels,
/// a 32-unit spiking layer and `classes` outputs over 10 steps.
pub fn desk_config(classes: usize) -> srnn::config::Config {
    let mut cfg = srnn::config::Config::default();
    for (k, v) in [
        ("input_height", "16"),
        ("input_width", "16"),
        ("pool_factor", "2"),
        ("hidden_channels", "8"),
        ("time_steps", "10"),
        ("batch_size", "16"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.set("fc_layers", &format!("32,{classes}")).unwrap();
    cfg
}
