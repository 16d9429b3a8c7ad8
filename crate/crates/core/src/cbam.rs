//! Convolutional block attention over a gate map: channel attention from a
//! shared two-layer perceptron on pooled descriptors, then spatial attention
//! from a 7x7 convolution over channel-pooled maps.
//!
//! The spiking kind uses spike activations everywhere, so both masks are
//! binary and the output can only drop entries of a binary input. The
//! analog kind uses a rectifier inside the perceptron and logistic masks.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::neuron::{spike, SurrogateParams};
use crate::param::{uniform_fan_in, Bound, ParamId, ParamStore};
use crate::tape::{PoolMode, Tape, Var};
use crate::tensor::Tensor;

pub const SPATIAL_KERNEL: usize = 7;
pub const DEFAULT_REDUCTION: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    Spiking,
    Analog,
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::Spiking => "spiking",
            AttentionKind::Analog => "analog",
        })
    }
}

impl FromStr for AttentionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spiking" => Ok(AttentionKind::Spiking),
            "analog" => Ok(AttentionKind::Analog),
            other => Err(format!("unknown attention kind `{other}`")),
        }
    }
}

/// Hidden width of the shared perceptron: `max(1, C / r)`.
pub fn reduced_width(channels: usize, reduction_ratio: usize) -> usize {
    (channels / reduction_ratio.max(1)).max(1)
}

#[derive(Clone, Debug)]
pub struct CbamParams {
    /// `[C, C/r]`, applied as `v · w1`.
    pub w1: ParamId,
    pub b1: ParamId,
    /// `[C/r, C]`.
    pub w2: ParamId,
    pub b2: ParamId,
    /// `[1, 2, 7, 7]`.
    pub spatial_kernel: ParamId,
    pub spatial_bias: ParamId,
    pub channels: usize,
    pub reduced: usize,
}

impl CbamParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        reduction_ratio: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::contract("attention needs at least one channel"));
        }
        let reduced = reduced_width(channels, reduction_ratio);
        let k = SPATIAL_KERNEL;
        Ok(CbamParams {
            w1: store
                .add(format!("{prefix}.mlp.w1"), uniform_fan_in(rng, &[channels, reduced], channels, gain))?,
            b1: store.add(format!("{prefix}.mlp.b1"), Tensor::zeros(&[1, reduced]))?,
            w2: store
                .add(format!("{prefix}.mlp.w2"), uniform_fan_in(rng, &[reduced, channels], reduced, gain))?,
            b2: store.add(format!("{prefix}.mlp.b2"), Tensor::zeros(&[1, channels]))?,
            spatial_kernel: store.add(
                format!("{prefix}.spatial.weight"),
                uniform_fan_in(rng, &[1, 2, k, k], 2 * k * k, gain),
            )?,
            spatial_bias: store.add(format!("{prefix}.spatial.bias"), Tensor::zeros(&[1]))?,
            channels,
            reduced,
        })
    }
}

/// Channel and spatial masks produced while attending one map.
#[derive(Clone, Copy, Debug)]
pub struct AttentionMaps {
    /// `[N, C, 1, 1]`
    pub channel: Var,
    /// `[N, 1, H, W]`
    pub spatial: Var,
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct Cbam {
    pub params: CbamParams,
    pub kind: AttentionKind,
    pub threshold: f64,
    pub surrogate: SurrogateParams,
}

impl Cbam {
    fn activate_mask(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self.kind {
            AttentionKind::Spiking => spike(tape, x, self.threshold.into(), self.surrogate),
            AttentionKind::Analog => tape.sigmoid(x),
        }
    }

    fn mlp(&self, tape: &mut Tape, bound: &Bound, v: Var) -> Result<Var> {
        let p = &self.params;
        let z = tape.matmul(v, bound[p.w1])?;
        let z = tape.add(z, bound[p.b1])?;
        let a = match self.kind {
            AttentionKind::Spiking => spike(tape, z, self.threshold.into(), self.surrogate)?,
            AttentionKind::Analog => tape.relu(z)?,
        };
        let out = tape.matmul(a, bound[p.w2])?;
        tape.add(out, bound[p.b2])
    }

    /// `SMLP(avgpool(f)) + SMLP(maxpool(f))`, shaped `[N, C]`.
    pub fn channel_preactivation(&self, tape: &mut Tape, bound: &Bound, f: Var) -> Result<Var> {
        let shape = tape.shape(f).to_vec();
        if shape.len() != 4 || shape[1] != self.params.channels {
            return Err(Error::contract(format!(
                "attention built for {} channels got input {shape:?}",
                self.params.channels
            )));
        }
        let n = shape[0];
        let mut branches = [PoolMode::Avg, PoolMode::Max].into_iter().map(|mode| {
            let pooled = tape.pool_spatial(f, mode)?;
            let v = tape.reshape(pooled, &[n, self.params.channels])?;
            self.mlp(tape, bound, v)
        });
        let avg = branches.next().expect("two branches")?;
        let max = branches.next().expect("two branches")?;
        tape.add(avg, max)
    }

    /// Channel mask `[N, C, 1, 1]`.
    pub fn channel_attention(&self, tape: &mut Tape, bound: &Bound, f: Var) -> Result<Var> {
        let n = tape.shape(f).first().copied().unwrap_or(0);
        let pre = self.channel_preactivation(tape, bound, f)?;
        let mask = self.activate_mask(tape, pre)?;
        tape.reshape(mask, &[n, self.params.channels, 1, 1])
    }

    /// Spatial mask `[N, 1, H, W]`.
    pub fn spatial_attention(&self, tape: &mut Tape, bound: &Bound, f: Var) -> Result<Var> {
        let pooled = tape.pool_channel(f)?;
        let pad = SPATIAL_KERNEL / 2;
        let z = tape.conv2d(
            pooled,
            bound[self.params.spatial_kernel],
            Some(bound[self.params.spatial_bias]),
            (pad, pad),
        )?;
        self.activate_mask(tape, z)
    }

    /// Channel attention, then spatial attention on the channel-refined map.
    pub fn attend(&self, tape: &mut Tape, bound: &Bound, f: Var) -> Result<AttentionMaps> {
        let channel = self.channel_attention(tape, bound, f)?;
        let refined = tape.mul(f, channel)?;
        let spatial = self.spatial_attention(tape, bound, refined)?;
        let output = tape.mul(refined, spatial)?;
        Ok(AttentionMaps { channel, spatial, output })
    }

    pub fn apply(&self, tape: &mut Tape, bound: &Bound, f: Var) -> Result<Var> {
        Ok(self.attend(tape, bound, f)?.output)
    }
}
