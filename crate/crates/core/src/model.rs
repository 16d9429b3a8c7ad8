//! The full network: input pooling, one spiking ConvLSTM layer whose gates
//! may be modulated by attention, and a spiking fully-connected classifier.

use crate::cbam::{AttentionKind, Cbam, CbamParams};
use crate::config::{Attention, BiasInit, LifMode, ModelConfig, Readout};
use crate::convlstm::{ConvLstmCell, ConvLstmParams, ConvLstmState, GateAttention, Gates};
use crate::error::{Error, Result};
use crate::neuron::{lif_sequence, lif_step, LifState, SurrogateParams, Threshold};
use crate::param::{group_rng, uniform_fan_in, Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Input polarity channels.
pub const IN_CHANNELS: usize = 2;

#[derive(Clone, Debug)]
pub struct SpikingLinear {
    /// `[in, out]`
    pub weight: ParamId,
    /// `[1, out]`
    pub bias: ParamId,
    /// Trainable `[1]` threshold, if enabled.
    pub v_th: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub cell: ConvLstmCell,
    pub attention: GateAttention,
    pub classifier: Vec<SpikingLinear>,
}

/// Everything recorded by one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `[N, K]`
    pub logits: Var,
    /// Hidden spike maps `h_t`, one `[N, Ch, H', W']` per step.
    pub hidden: Vec<Var>,
    pub cells: Vec<Var>,
    pub gates: Vec<Gates>,
}

/// Sums non-overlapping `factor x factor` blocks of `[T, N, C, H, W]`
/// frames. With `binarize`, any block holding at least one event becomes 1;
/// otherwise blocks are averaged.
pub fn pool_frames(frames: &Tensor, factor: usize, binarize: bool) -> Result<Tensor> {
    let s = frames.shape();
    if s.len() != 5 {
        return Err(Error::contract(format!("frames must be [T,N,C,H,W], got {s:?}")));
    }
    if factor == 0 || !s[3].is_multiple_of(factor) || !s[4].is_multiple_of(factor) {
        return Err(Error::contract(format!("pool factor {factor} does not divide {}x{}", s[3], s[4])));
    }
    let (h, w) = (s[3], s[4]);
    let (ph, pw) = (h / factor, w / factor);
    let planes = s[0] * s[1] * s[2];
    let mut out = Tensor::zeros(&[s[0], s[1], s[2], ph, pw]);
    let src = frames.data();
    let dst = out.data_mut();
    for p in 0..planes {
        for y in 0..h {
            for x in 0..w {
                dst[(p * ph + y / factor) * pw + x / factor] += src[(p * h + y) * w + x];
            }
        }
    }
    let area = (factor * factor) as f64;
    for v in dst.iter_mut() {
        *v = if binarize { f64::from(u8::from(*v >= 1.0)) } else { *v / area };
    }
    Ok(out)
}

impl Model {
    /// Deterministic construction from `(config, seed)`. Each parameter group
    /// draws from its own stream.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let surrogate = SurrogateParams::new(config.alpha)?;
        let gain = config.init_gain;
        let mut store = ParamStore::new();
        let params = ConvLstmParams::init(
            &mut store,
            "convlstm",
            IN_CHANNELS,
            config.hidden_channels,
            config.kernel_size,
            gain,
            &mut group_rng(seed, "convlstm"),
        )?;
        let cell = ConvLstmCell {
            params,
            surrogate,
            gate_threshold: config.v_th,
            candidate_threshold: config.v_th,
            raw_hidden: config.raw_hidden,
        };

        let mask = config.effective_mask();
        let mut attention = GateAttention::default();
        if let Attention::Kind(kind) = config.attention {
            let mut module = |flag: bool, gate: &str| -> Result<Option<Cbam>> {
                if !flag {
                    return Ok(None);
                }
                let prefix = format!("cbam.{gate}");
                let params = CbamParams::init(
                    &mut store,
                    &prefix,
                    config.hidden_channels,
                    config.reduction_ratio,
                    gain,
                    &mut group_rng(seed, &prefix),
                )?;
                Ok(Some(Cbam { params, kind, threshold: config.v_th, surrogate }))
            };
            attention.forget = module(mask.f, "f")?;
            attention.input = module(mask.i, "i")?;
            attention.output = module(mask.o, "o")?;
        }

        let (ph, pw) = config.pooled_size();
        let mut width = config.hidden_channels * ph * pw;
        let mut classifier = Vec::with_capacity(config.fc_layers.len());
        for (k, &out) in config.fc_layers.iter().enumerate() {
            let prefix = format!("fc.{k}");
            let mut rng = group_rng(seed, &prefix);
            let weight = store
                .add(format!("{prefix}.weight"), uniform_fan_in(&mut rng, &[width, out], width, gain))?;
            let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[1, out]))?;
            let v_th = if config.v_th_trainable {
                Some(store.add(format!("{prefix}.v_th"), Tensor::scalar(config.v_th))?)
            } else {
                None
            };
            classifier.push(SpikingLinear { weight, bias, v_th, in_features: width, out_features: out });
            width = out;
        }
        let mut model = Model { config: config.clone(), store, cell, attention, classifier };
        if config.bias_init == BiasInit::Threshold {
            model.centre_biases();
        }
        Ok(model)
    }

    /// Sets every bias in front of a spike activation to the threshold. The
    /// channel perceptron's output bias is counted twice (one per pooled
    /// branch), so it takes half. Analog attention keeps zero biases.
    fn centre_biases(&mut self) {
        let v = self.config.v_th;
        let mut set = |id: ParamId, value: f64| {
            let t = self.store.get_mut(id);
            *t = Tensor::full(t.shape(), value);
        };
        set(self.cell.params.bias, v);
        for layer in &self.classifier {
            set(layer.bias, v);
        }
        let modules = [&self.attention.forget, &self.attention.input, &self.attention.output];
        for m in modules.into_iter().flatten() {
            if m.kind == AttentionKind::Spiking {
                set(m.params.b1, v);
                set(m.params.b2, v / 2.0);
                set(m.params.spatial_bias, v);
            }
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    fn check_frames(&self, frames: &Tensor) -> Result<()> {
        let c = &self.config;
        let s = frames.shape();
        let ok = s.len() == 5
            && s[0] == c.time_steps
            && s[2] == IN_CHANNELS
            && s[3] == c.input_height
            && s[4] == c.input_width;
        if !ok {
            return Err(Error::contract(format!(
                "frames {s:?} do not match [T={}, N, {IN_CHANNELS}, {}, {}]",
                c.time_steps, c.input_height, c.input_width
            )));
        }
        Ok(())
    }

    fn lif_layers(&self, tape: &mut Tape, bound: &Bound, n: usize) -> Result<Vec<LifState>> {
        let c = &self.config;
        self.classifier
            .iter()
            .map(|layer| {
                let v_th = match layer.v_th {
                    Some(id) => Threshold::Var(bound[id]),
                    None => Threshold::Fixed(c.v_th),
                };
                LifState::resting(tape, &[n, layer.out_features], c.tau, v_th, c.u_reset)
            })
            .collect()
    }

    fn current(&self, tape: &mut Tape, bound: &Bound, k: usize, input: Var) -> Result<Var> {
        let layer = &self.classifier[k];
        let z = tape.matmul(input, bound[layer.weight])?;
        tape.add(z, bound[layer.bias])
    }

    fn flatten(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let s = tape.shape(h).to_vec();
        tape.reshape(h, &[s[0], s[1..].iter().product()])
    }

    /// Records the forward pass for `[T, N, 2, H, W]` frames on `tape`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, frames: &Tensor) -> Result<Trace> {
        self.check_frames(frames)?;
        let c = &self.config;
        let (t_steps, n) = (frames.shape()[0], frames.shape()[1]);
        let pooled = pool_frames(frames, c.pool_factor, c.frame_mode == crate::aer::FrameMode::Binary)?;
        let steps =
            (0..t_steps).map(|t| Ok(tape.constant(pooled.index_axis0(t)?))).collect::<Result<Vec<_>>>()?;
        let mask = c.effective_mask();
        let attention = mask.any().then_some(&self.attention);
        let surrogate = self.cell.surrogate;
        let last = self.classifier.len() - 1;
        let membrane_readout = c.readout == Readout::Membrane;
        let mut lif = self.lif_layers(tape, bound, n)?;

        let mut hidden = Vec::with_capacity(t_steps);
        let mut cells = Vec::with_capacity(t_steps);
        let mut gates = Vec::with_capacity(t_steps);
        let mut output_spikes = Vec::with_capacity(t_steps);

        match c.lif_mode {
            LifMode::SingleStep => {
                let (ph, pw) = c.pooled_size();
                let mut state = ConvLstmState::zeros(tape, &[n, c.hidden_channels, ph, pw]);
                for &x in &steps {
                    let step = self.cell.step(tape, bound, x, &state, mask, attention)?;
                    state = step.state;
                    hidden.push(step.h);
                    cells.push(step.state.c);
                    gates.push(step.gates);
                    let mut signal = self.flatten(tape, step.h)?;
                    for k in 0..=last {
                        let current = self.current(tape, bound, k, signal)?;
                        if k == last && membrane_readout {
                            lif[k].u = lif[k].charge(tape, current)?;
                        } else {
                            let (s, next) = lif_step(tape, &lif[k], current, surrogate)?;
                            lif[k] = next;
                            signal = s;
                        }
                    }
                    output_spikes.push(signal);
                }
            }
            LifMode::MultiStep => {
                let run = self.cell.unroll(tape, bound, &steps, mask, attention, None)?;
                hidden = run.hidden;
                cells = run.cells;
                gates = run.gates;
                let mut signals =
                    hidden.iter().map(|&h| self.flatten(tape, h)).collect::<Result<Vec<_>>>()?;
                for k in 0..=last {
                    let currents = signals
                        .iter()
                        .map(|&s| self.current(tape, bound, k, s))
                        .collect::<Result<Vec<_>>>()?;
                    if k == last && membrane_readout {
                        for current in currents {
                            lif[k].u = lif[k].charge(tape, current)?;
                        }
                    } else {
                        let (spikes, state) = lif_sequence(tape, &lif[k], &currents, surrogate)?;
                        lif[k] = state;
                        signals = spikes;
                    }
                }
                output_spikes = signals;
            }
        }

        let logits = if membrane_readout {
            lif[last].u
        } else {
            let mut total = output_spikes[0];
            for &s in &output_spikes[1..] {
                total = tape.add(total, s)?;
            }
            total
        };
        Ok(Trace { logits, hidden, cells, gates })
    }

    /// Inference-only logits `[N, K]`.
    pub fn predict(&self, frames: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let trace = self.forward(&mut tape, &bound, frames)?;
        Ok(tape.value(trace.logits).clone())
    }

    /// Hidden spike maps per step, `[T, N, Ch, H', W']`.
    pub fn hidden_maps(&self, frames: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let trace = self.forward(&mut tape, &bound, frames)?;
        let maps: Vec<Tensor> = trace.hidden.iter().map(|&h| tape.value(h).clone()).collect();
        Tensor::stack(&maps)
    }
}
