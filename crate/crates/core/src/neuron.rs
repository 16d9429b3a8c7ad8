//! Spike activation and leaky integrate-and-fire dynamics.
//!
//! Forward, a neuron fires when its membrane potential reaches threshold
//! (`u - v_th >= 0`). Backward, the Heaviside step is replaced by the
//! derivative of a scaled erf CDF:
//!
//! ```text
//! g(x)  = 1/2 * (1 + erf(alpha * x))
//! g'(x) = alpha / sqrt(pi) * exp(-alpha^2 * x^2)
//! ```

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tape::{SpikeMode, Tape, Var};
use crate::tensor::Tensor;

/// Smoothness of the erf surrogate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateParams {
    pub alpha: f64,
}

impl SurrogateParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::contract(format!("alpha must be positive, got {alpha}")));
        }
        Ok(SurrogateParams { alpha })
    }
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams { alpha: 4.0 }
    }
}

/// The smooth stand-in for the Heaviside step.
pub fn surrogate_cdf(x: f64, alpha: f64) -> f64 {
    0.5 * (1.0 + libm::erf(alpha * x))
}

/// Derivative of [`surrogate_cdf`], used as the spike's backward rule.
pub fn surrogate_grad(x: f64, alpha: f64) -> f64 {
    alpha / PI.sqrt() * (-(alpha * x) * (alpha * x)).exp()
}

/// Firing threshold: a fixed number or a tape variable that broadcasts
/// against the membrane potential (scalar or per-neuron, possibly trainable).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    Var(Var),
}

impl From<f64> for Threshold {
    fn from(v: f64) -> Self {
        Threshold::Fixed(v)
    }
}

/// Binary spikes where `u >= v_th`.
pub fn spike(tape: &mut Tape, u: Var, v_th: Threshold, params: SurrogateParams) -> Result<Var> {
    let centred = match v_th {
        Threshold::Fixed(th) => tape.offset(u, -th)?,
        Threshold::Var(th) => tape.sub(u, th)?,
    };
    tape.spike(centred, params.alpha)
}

/// Membrane state of a LIF population for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LifState {
    pub u: Var,
    pub tau: f64,
    pub v_th: Threshold,
    pub u_reset: f64,
}

impl LifState {
    /// A resting population (`u = u_reset`) of the given shape.
    pub fn resting(
        tape: &mut Tape,
        shape: &[usize],
        tau: f64,
        v_th: Threshold,
        u_reset: f64,
    ) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::contract(format!("tau must be > 0, got {tau}")));
        }
        let u = tape.constant(Tensor::full(shape, u_reset));
        Ok(LifState { u, tau, v_th, u_reset })
    }

    /// Integrate without firing: `u <- u + (I - u) / tau`.
    pub fn charge(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        if tape.shape(input) != tape.shape(self.u) {
            return Err(Error::contract(format!(
                "input current shape {:?} does not match membrane shape {:?}",
                tape.shape(input),
                tape.shape(self.u)
            )));
        }
        let leak = tape.sub(input, self.u)?;
        let delta = tape.scale(leak, 1.0 / self.tau)?;
        tape.add(self.u, delta)
    }
}

/// One Euler step (unit `dt`) of the LIF membrane followed by fire-and-reset.
///
/// Fired neurons are hard-reset to `u_reset`. In Heaviside mode the reset
/// mask is detached from the gradient.
pub fn lif_step(
    tape: &mut Tape,
    state: &LifState,
    input: Var,
    params: SurrogateParams,
) -> Result<(Var, LifState)> {
    let u = state.charge(tape, input)?;
    let spikes = spike(tape, u, state.v_th, params)?;
    let mask = match tape.spike_mode() {
        SpikeMode::Heaviside => tape.detach(spikes)?,
        SpikeMode::Smooth => spikes,
    };
    let keep = tape.scale(mask, -1.0)?;
    let keep = tape.offset(keep, 1.0)?;
    let held = tape.mul(u, keep)?;
    let u = if state.u_reset == 0.0 {
        held
    } else {
        let reset = tape.scale(mask, state.u_reset)?;
        tape.add(held, reset)?
    };
    Ok((spikes, LifState { u, ..*state }))
}

/// Runs [`lif_step`] over the leading time axis of `inputs: [T, ...]`.
pub fn lif_multistep(
    tape: &mut Tape,
    state: &LifState,
    inputs: Var,
    params: SurrogateParams,
) -> Result<(Var, LifState)> {
    let shape = tape.shape(inputs).to_vec();
    if shape.len() < 2 {
        return Err(Error::contract(format!("multi-step input needs a leading time axis, got {shape:?}")));
    }
    let steps = (0..shape[0])
        .map(|t| {
            let x = tape.slice(inputs, 0, t, 1)?;
            tape.reshape(x, &shape[1..])
        })
        .collect::<Result<Vec<_>>>()?;
    let (spikes, state) = lif_sequence(tape, state, &steps, params)?;
    let stacked = spikes
        .iter()
        .map(|&s| tape.reshape(s, &[1].iter().chain(&shape[1..]).copied().collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    Ok((tape.concat(&stacked, 0)?, state))
}

/// Sequence form of [`lif_multistep`] over per-step input variables.
pub fn lif_sequence(
    tape: &mut Tape,
    state: &LifState,
    inputs: &[Var],
    params: SurrogateParams,
) -> Result<(Vec<Var>, LifState)> {
    if inputs.is_empty() {
        return Err(Error::contract("multi-step LIF needs at least one time step"));
    }
    let mut state = *state;
    let mut out = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let (s, next) = lif_step(tape, &state, x, params)?;
        out.push(s);
        state = next;
    }
    Ok((out, state))
}
