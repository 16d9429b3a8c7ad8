//! Spiking ConvLSTM cell.
//!
//! All four gates come from one convolution over `[x_t ; h_{t-1}]` that is
//! split channel-wise into forget, input, candidate and output maps:
//!
//! ```text
//! f_t = s1(conv_f) (optionally f_t <- cbam_f(f_t))
//! i_t = s1(conv_i) (optionally attended)
//! g_t = s2(conv_g)
//! o_t = s1(conv_o) (optionally attended)
//! c_t = f_t * c_{t-1} + i_t * g_t
//! h_t = s1(o_t * c_t)     (or o_t * c_t with `raw_hidden`)
//! ```
//!
//! `s1` and `s2` are erf-surrogate spike activations.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::cbam::Cbam;
use crate::error::{Error, Result};
use crate::neuron::{spike, SurrogateParams};
use crate::param::{uniform_fan_in, Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Which gates are modulated by attention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct GateMask {
    pub f: bool,
    pub i: bool,
    pub o: bool,
}

impl GateMask {
    pub const NONE: GateMask = GateMask { f: false, i: false, o: false };
    pub const FORGET: GateMask = GateMask { f: true, i: false, o: false };

    pub fn any(&self) -> bool {
        self.f || self.i || self.o
    }
}

/// Formats as the three-digit `f i o` code, e.g. `100`.
impl fmt::Display for GateMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = |b: bool| if b { '1' } else { '0' };
        write!(f, "{}{}{}", d(self.f), d(self.i), d(self.o))
    }
}

impl FromStr for GateMask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bits: Vec<char> = s.trim().chars().collect();
        match bits.as_slice() {
            [f, i, o] if bits.iter().all(|c| matches!(c, '0' | '1')) => {
                Ok(GateMask { f: *f == '1', i: *i == '1', o: *o == '1' })
            }
            _ => Err(format!("gate mask must be three 0/1 digits (f i o), got `{s}`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvLstmParams {
    /// `[4 * hidden, in + hidden, k, k]`, output channels ordered f, i, g, o.
    pub weight: ParamId,
    /// `[4 * hidden]`
    pub bias: ParamId,
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
}

impl ConvLstmParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        hidden_channels: usize,
        kernel_size: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel_size.is_multiple_of(2) {
            return Err(Error::config("kernel_size", format!("must be odd, got {kernel_size}")));
        }
        if hidden_channels == 0 || in_channels == 0 {
            return Err(Error::config("hidden_channels", "channel counts must be >= 1"));
        }
        let fan_in = (in_channels + hidden_channels) * kernel_size * kernel_size;
        let shape = [4 * hidden_channels, in_channels + hidden_channels, kernel_size, kernel_size];
        Ok(ConvLstmParams {
            weight: store.add(format!("{prefix}.weight"), uniform_fan_in(rng, &shape, fan_in, gain))?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[4 * hidden_channels]))?,
            in_channels,
            hidden_channels,
            kernel_size,
        })
    }
}

/// Attention modules for the gates selected by a [`GateMask`].
#[derive(Clone, Debug, Default)]
pub struct GateAttention {
    pub forget: Option<Cbam>,
    pub input: Option<Cbam>,
    pub output: Option<Cbam>,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvLstmState {
    pub h: Var,
    pub c: Var,
}

impl ConvLstmState {
    pub fn zeros(tape: &mut Tape, shape: &[usize]) -> Self {
        ConvLstmState { h: tape.constant(Tensor::zeros(shape)), c: tape.constant(Tensor::zeros(shape)) }
    }
}

/// Gate maps actually used in the cell update (after attention).
#[derive(Clone, Copy, Debug)]
pub struct Gates {
    pub f: Var,
    pub i: Var,
    pub g: Var,
    pub o: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct Step {
    pub h: Var,
    pub state: ConvLstmState,
    pub gates: Gates,
}

#[derive(Clone, Debug)]
pub struct Unrolled {
    pub hidden: Vec<Var>,
    pub cells: Vec<Var>,
    pub gates: Vec<Gates>,
    pub state: ConvLstmState,
}

#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    pub params: ConvLstmParams,
    pub surrogate: SurrogateParams,
    /// Threshold of `s1` (forget, input, output gates and the hidden map).
    pub gate_threshold: f64,
    /// Threshold of `s2` (candidate map).
    pub candidate_threshold: f64,
    pub raw_hidden: bool,
}

impl ConvLstmCell {
    pub fn hidden_channels(&self) -> usize {
        self.params.hidden_channels
    }

    pub fn step<'a>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        state: &ConvLstmState,
        mask: GateMask,
        attention: Option<&'a GateAttention>,
    ) -> Result<Step> {
        let p = &self.params;
        let xs = tape.shape(x).to_vec();
        let hs = tape.shape(state.h).to_vec();
        if xs.len() != 4 || xs[1] != p.in_channels || xs[0] != hs[0] || xs[2..] != hs[2..] {
            return Err(Error::contract(format!(
                "frame {xs:?} does not match cell input ({} channels) and state {hs:?}",
                p.in_channels
            )));
        }
        let pick = |flag: bool, module: Option<&'a Cbam>, gate: &str| -> Result<Option<&'a Cbam>> {
            match (flag, module) {
                (false, _) => Ok(None),
                (true, Some(m)) => Ok(Some(m)),
                (true, None) => Err(Error::config(
                    "gate_mask",
                    format!("{gate} gate is masked but has no attention module"),
                )),
            }
        };
        let f_att = pick(mask.f, attention.and_then(|a| a.forget.as_ref()), "forget")?;
        let i_att = pick(mask.i, attention.and_then(|a| a.input.as_ref()), "input")?;
        let o_att = pick(mask.o, attention.and_then(|a| a.output.as_ref()), "output")?;

        let stacked = tape.concat(&[x, state.h], 1)?;
        let pad = p.kernel_size / 2;
        let z = tape.conv2d(stacked, bound[p.weight], Some(bound[p.bias]), (pad, pad))?;
        let ch = p.hidden_channels;
        let mut gate = |k: usize, threshold: f64, module: Option<&Cbam>| -> Result<Var> {
            let pre = tape.slice(z, 1, k * ch, ch)?;
            let g = spike(tape, pre, threshold.into(), self.surrogate)?;
            match module {
                Some(m) => m.apply(tape, bound, g),
                None => Ok(g),
            }
        };
        let f = gate(0, self.gate_threshold, f_att)?;
        let i = gate(1, self.gate_threshold, i_att)?;
        let g = gate(2, self.candidate_threshold, None)?;
        let o = gate(3, self.gate_threshold, o_att)?;

        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let exposed = tape.mul(o, c)?;
        let h = if self.raw_hidden {
            exposed
        } else {
            spike(tape, exposed, self.gate_threshold.into(), self.surrogate)?
        };
        Ok(Step { h, state: ConvLstmState { h, c }, gates: Gates { f, i, g, o } })
    }

    /// Steps the cell over `frames` (one `[N, C, H, W]` variable per step).
    pub fn unroll(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        frames: &[Var],
        mask: GateMask,
        attention: Option<&GateAttention>,
        init: Option<ConvLstmState>,
    ) -> Result<Unrolled> {
        let first = *frames.first().ok_or_else(|| Error::contract("unroll needs at least one time step"))?;
        let mut state = match init {
            Some(s) => s,
            None => {
                let xs = tape.shape(first).to_vec();
                if xs.len() != 4 {
                    return Err(Error::contract(format!("frames must be [N,C,H,W], got {xs:?}")));
                }
                ConvLstmState::zeros(tape, &[xs[0], self.params.hidden_channels, xs[2], xs[3]])
            }
        };
        let mut out = Unrolled {
            hidden: Vec::with_capacity(frames.len()),
            cells: Vec::with_capacity(frames.len()),
            gates: Vec::with_capacity(frames.len()),
            state,
        };
        for &x in frames {
            let step = self.step(tape, bound, x, &state, mask, attention)?;
            out.hidden.push(step.h);
            out.cells.push(step.state.c);
            out.gates.push(step.gates);
            state = step.state;
        }
        out.state = state;
        Ok(out)
    }

    /// Unroll over a `[T, N, C, H, W]` sequence; returns `[T, N, hidden, H, W]`.
    pub fn unroll_sequence(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        frames: Var,
        mask: GateMask,
        attention: Option<&GateAttention>,
        init: Option<ConvLstmState>,
    ) -> Result<(Var, ConvLstmState)> {
        let shape = tape.shape(frames).to_vec();
        if shape.len() != 5 {
            return Err(Error::contract(format!("expected [T,N,C,H,W], got {shape:?}")));
        }
        let steps = (0..shape[0])
            .map(|t| {
                let x = tape.slice(frames, 0, t, 1)?;
                tape.reshape(x, &shape[1..])
            })
            .collect::<Result<Vec<_>>>()?;
        let run = self.unroll(tape, bound, &steps, mask, attention, init)?;
        let hs = tape.shape(run.hidden[0]).to_vec();
        let lifted = run
            .hidden
            .iter()
            .map(|&h| tape.reshape(h, &[1].iter().chain(&hs).copied().collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        Ok((tape.concat(&lifted, 0)?, run.state))
    }
}
