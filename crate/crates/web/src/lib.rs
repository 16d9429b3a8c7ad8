//! Browser bindings for the static demo page in `www/`.
//!
//! Three operations: the surrogate curve for a chosen sharpness, a LIF
//! membrane trace under constant drive, and hidden spike maps of a small
//! model on a synthetic gesture, with and without spiking attention on the
//! forget gate. The model can be trained a few epochs in the page.

use srnn::aer::{synth_class_name, synth_gesture, SynthParams, ARCHETYPES};
use srnn::cbam::AttentionKind;
use srnn::config::{Attention, Config, ModelConfig};
use srnn::features::sparsity;
use srnn::model::Model;
use srnn::neuron::{lif_step, surrogate_cdf, surrogate_grad, LifState, SurrogateParams, Threshold};
use srnn::optim::Adam;
use srnn::train::{epoch_order, evaluate, train_step, Dataset};
use srnn::{Tape, Tensor};
use wasm_bindgen::prelude::*;

// Errors cross into JS as strings; `String` converts at the wasm boundary,
// which keeps the exports callable from native tests.
fn js_err(e: srnn::Error) -> String {
    e.to_string()
}

/// `points` samples of the spike surrogate over `[-range, range]`, laid out
/// as `[x..., cdf..., grad...]`.
#[wasm_bindgen]
pub fn surrogate_curve(alpha: f64, points: usize, range: f64) -> Vec<f64> {
    let points = points.max(2);
    let xs: Vec<f64> = (0..points).map(|i| -range + 2.0 * range * i as f64 / (points - 1) as f64).collect();
    let mut out = xs.clone();
    out.extend(xs.iter().map(|&x| surrogate_cdf(x, alpha)));
    out.extend(xs.iter().map(|&x| surrogate_grad(x, alpha)));
    out
}

/// Membrane potential after charging and the emitted spike for `steps`
/// steps of constant input, laid out as `[u..., spikes...]`.
#[wasm_bindgen]
pub fn lif_trace(current: f64, tau: f64, v_th: f64, steps: usize) -> Result<Vec<f64>, String> {
    let params = SurrogateParams::new(4.0).map_err(js_err)?;
    let mut tape = Tape::new();
    let mut state = LifState::resting(&mut tape, &[1], tau, Threshold::Fixed(v_th), 0.0).map_err(js_err)?;
    let (mut us, mut spikes) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
    for _ in 0..steps {
        let x = tape.constant(Tensor::scalar(current));
        let u = state.charge(&mut tape, x).map_err(js_err)?;
        us.push(tape.value(u).data()[0]);
        let (s, next) = lif_step(&mut tape, &state, x, params).map_err(js_err)?;
        spikes.push(tape.value(s).data()[0]);
        state = next;
    }
    us.extend(spikes);
    Ok(us)
}

const CLASSES: usize = 4;
const PER_CLASS: usize = 8;

fn demo_config(attention: bool) -> ModelConfig {
    ModelConfig {
        input_height: 16,
        input_width: 16,
        pool_factor: 2,
        hidden_channels: 4,
        fc_layers: vec![16, CLASSES],
        time_steps: 10,
        attention: if attention { Attention::Kind(AttentionKind::Spiking) } else { Attention::None },
        ..ModelConfig::default()
    }
}

struct Learner {
    model: Model,
    adam: Adam,
}

impl Learner {
    fn new(attention: bool, seed: u64) -> Result<Self, String> {
        let model = Model::build(&demo_config(attention), seed).map_err(js_err)?;
        let adam = Adam::new(&model.store);
        Ok(Learner { model, adam })
    }
}

/// Two models with the same seed, one with spiking attention on the forget
/// gate and one without, plus a small synthetic training set.
#[wasm_bindgen]
pub struct GestureDemo {
    with: Learner,
    without: Learner,
    data: Dataset,
    seed: u64,
    epochs: usize,
}

#[wasm_bindgen]
impl GestureDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<GestureDemo, String> {
        let params = SynthParams::default();
        let streams = (0..CLASSES * PER_CLASS)
            .map(|i| synth_gesture(i % CLASSES, seed as u64 + i as u64, &params))
            .collect::<srnn::Result<Vec<_>>>()
            .map_err(js_err)?;
        let names = (0..CLASSES).map(synth_class_name).collect();
        let data = Dataset::from_streams(&streams, names, 10).map_err(js_err)?;
        let seed = seed as u64;
        Ok(GestureDemo {
            with: Learner::new(true, seed)?,
            without: Learner::new(false, seed)?,
            data,
            seed,
            epochs: 0,
        })
    }

    pub fn classes() -> usize {
        CLASSES
    }

    pub fn class_name(class_id: usize) -> String {
        ARCHETYPES.get(class_id).copied().unwrap_or("").to_string()
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// Input frames `[T, 2, 16, 16]` of a fresh gesture.
    pub fn input_frames(&self, class_id: usize, sample_seed: u32) -> Result<Vec<f64>, String> {
        Ok(self.sample(class_id, sample_seed)?.into_data())
    }

    /// Hidden spike maps `[T, 4, 8, 8]` for a fresh gesture.
    pub fn hidden_maps(
        &self,
        class_id: usize,
        sample_seed: u32,
        attention: bool,
    ) -> Result<Vec<f64>, String> {
        let learner = if attention { &self.with } else { &self.without };
        let frames = self.sample(class_id, sample_seed)?;
        let s = frames.shape().to_vec();
        let batch = frames.reshape(&[s[0], 1, s[1], s[2], s[3]]).map_err(js_err)?;
        Ok(learner.model.hidden_maps(&batch).map_err(js_err)?.into_data())
    }

    /// Fraction of zeros in the hidden maps of both models, `[with, without]`.
    pub fn sparsity(&self, class_id: usize, sample_seed: u32) -> Result<Vec<f64>, String> {
        [true, false]
            .into_iter()
            .map(|a| {
                let maps = self.hidden_maps(class_id, sample_seed, a)?;
                Ok(sparsity(&Tensor::new(&[maps.len()], maps).map_err(js_err)?))
            })
            .collect()
    }

    /// One epoch for both models; returns `[loss, accuracy]` for the model
    /// with attention followed by the one without.
    pub fn train_epoch(&mut self, learning_rate: f64) -> Result<Vec<f64>, String> {
        let order = epoch_order(self.data.len(), self.seed, self.epochs);
        let mut out = Vec::with_capacity(4);
        for learner in [&mut self.with, &mut self.without] {
            let mut loss = 0.0;
            for chunk in order.chunks(8) {
                let (frames, labels) = self.data.batch(chunk).map_err(js_err)?;
                let step =
                    train_step(&mut learner.model, &mut learner.adam, &frames, &labels, learning_rate, 5.0)
                        .map_err(js_err)?;
                loss += step.loss * chunk.len() as f64;
            }
            let acc = evaluate(&learner.model, &self.data, 16).map_err(js_err)?.accuracy;
            out.extend([loss / self.data.len() as f64, acc]);
        }
        self.epochs += 1;
        Ok(out)
    }

    /// Config text of the model with attention, as the CLI would write it.
    pub fn config_text(&self) -> String {
        Config { model: self.with.model.config.clone(), ..Config::default() }.to_text()
    }
}

impl GestureDemo {
    fn sample(&self, class_id: usize, sample_seed: u32) -> Result<Tensor, String> {
        let stream = synth_gesture(class_id, sample_seed as u64, &SynthParams::default()).map_err(js_err)?;
        let set = Dataset::from_streams(&[stream], (0..=class_id).map(synth_class_name).collect(), 10)
            .map_err(js_err)?;
        Ok(set.samples.into_iter().next().expect("one sample").frames)
    }
}
