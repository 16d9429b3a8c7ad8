//! Flat `key = value` configuration for the model and the training loop.
//!
//! Missing keys take their defaults, unknown keys are rejected, and every
//! error names the offending key.

use std::fmt::Display;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::aer::FrameMode;
use crate::cbam::{AttentionKind, DEFAULT_REDUCTION};
use crate::convlstm::GateMask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attention {
    None,
    Kind(AttentionKind),
}

impl Attention {
    pub fn kind(&self) -> Option<AttentionKind> {
        match self {
            Attention::None => None,
            Attention::Kind(k) => Some(*k),
        }
    }
}

impl std::fmt::Display for Attention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Attention::None => f.write_str("none"),
            Attention::Kind(k) => k.fmt(f),
        }
    }
}

impl FromStr for Attention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Attention::None),
            other => other.parse().map(Attention::Kind),
        }
    }
}

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq)]
        pub enum $name {
            $($variant),+
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self {
                    $($name::$variant => $text),+
                })
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown value `{other}`, expected one of: {}",
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

keyword_enum!(
    /// How the classifier's LIF layers are scheduled against the recurrence.
    LifMode {
        SingleStep => "single_step",
        MultiStep => "multi_step",
    }
);

keyword_enum!(
    /// Initial value of biases feeding spiking units.
    BiasInit {
        Zero => "zero",
        Threshold => "threshold",
    }
);

keyword_enum!(Readout {
    SpikeCount => "spike_count",
    Membrane => "membrane",
});

keyword_enum!(LrSchedule {
    Constant => "constant",
    StepDecay => "step_decay",
    WarmupLinearDecay => "warmup_linear_decay",
});

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub pool_factor: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    pub gate_mask: GateMask,
    pub attention: Attention,
    pub reduction_ratio: usize,
    /// Widths of the classifier layers; the last equals the class count.
    pub fc_layers: Vec<usize>,
    pub time_steps: usize,
    pub tau: f64,
    pub alpha: f64,
    pub v_th: f64,
    pub u_reset: f64,
    pub v_th_trainable: bool,
    pub lif_mode: LifMode,
    pub raw_hidden: bool,
    pub readout: Readout,
    pub frame_mode: FrameMode,
    /// Multiplier on the `1/sqrt(fan_in)` uniform init bound.
    pub init_gain: f64,
    /// `threshold` starts every spiking unit's bias at its firing threshold,
    /// so that initial pre-activations sit where the surrogate is steepest.
    pub bias_init: BiasInit,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_height: 128,
            input_width: 128,
            pool_factor: 4,
            hidden_channels: 16,
            kernel_size: 3,
            gate_mask: GateMask::FORGET,
            attention: Attention::Kind(AttentionKind::Spiking),
            reduction_ratio: DEFAULT_REDUCTION,
            fc_layers: vec![128, 64, 11],
            time_steps: 20,
            tau: 2.0,
            alpha: 4.0,
            v_th: 1.0,
            u_reset: 0.0,
            v_th_trainable: false,
            lif_mode: LifMode::SingleStep,
            raw_hidden: false,
            readout: Readout::SpikeCount,
            frame_mode: FrameMode::Binary,
            init_gain: 1.0,
            bias_init: BiasInit::Threshold,
        }
    }
}

impl ModelConfig {
    pub fn num_classes(&self) -> usize {
        *self.fc_layers.last().unwrap_or(&0)
    }

    /// Spatial size after input pooling.
    pub fn pooled_size(&self) -> (usize, usize) {
        (self.input_height / self.pool_factor, self.input_width / self.pool_factor)
    }

    /// Gate mask actually in effect: no attention means no masked gates.
    pub fn effective_mask(&self) -> GateMask {
        match self.attention {
            Attention::None => GateMask::NONE,
            Attention::Kind(_) => self.gate_mask,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(Error::config(key, "must be >= 1"))
            } else {
                Ok(())
            }
        };
        positive("input_height", self.input_height)?;
        positive("input_width", self.input_width)?;
        positive("pool_factor", self.pool_factor)?;
        positive("hidden_channels", self.hidden_channels)?;
        positive("reduction_ratio", self.reduction_ratio)?;
        positive("time_steps", self.time_steps)?;
        if !self.input_height.is_multiple_of(self.pool_factor)
            || !self.input_width.is_multiple_of(self.pool_factor)
        {
            return Err(Error::config(
                "pool_factor",
                format!(
                    "{} does not divide the {}x{} input",
                    self.pool_factor, self.input_height, self.input_width
                ),
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::config("kernel_size", format!("must be odd, got {}", self.kernel_size)));
        }
        if self.fc_layers.is_empty() || self.fc_layers.contains(&0) {
            return Err(Error::config("fc_layers", "needs at least one layer, all widths >= 1"));
        }
        let finite_positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be a positive number, got {v}")))
            }
        };
        finite_positive("tau", self.tau)?;
        finite_positive("alpha", self.alpha)?;
        finite_positive("init_gain", self.init_gain)?;
        if !self.v_th.is_finite() {
            return Err(Error::config("v_th", "must be finite"));
        }
        if !self.u_reset.is_finite() || self.u_reset >= self.v_th {
            return Err(Error::config("u_reset", "must be finite and below v_th"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub warmup_epochs: usize,
    pub step_size: usize,
    pub step_gamma: f64,
    pub grad_clip: f64,
    /// Per-class fraction held out for validation when the dataset has no
    /// `train`/`test` split of its own.
    pub val_fraction: f64,
    /// Epoch budget of each `ablate` run.
    pub ablate_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            lr_schedule: LrSchedule::Constant,
            checkpoint_every: 0,
            warmup_epochs: 5,
            step_size: 50,
            step_gamma: 0.5,
            grad_clip: 5.0,
            val_fraction: 0.25,
            ablate_epochs: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be a finite number >= 0"));
        }
        if self.lr_schedule == LrSchedule::StepDecay && self.step_size == 0 {
            return Err(Error::config("step_size", "must be >= 1 for step_decay"));
        }
        if !(self.step_gamma > 0.0 && self.step_gamma.is_finite()) {
            return Err(Error::config("step_gamma", "must be positive"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::config("grad_clip", "must be >= 0 (0 disables clipping)"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction", "must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

/// Every recognised key, in canonical order.
pub const KEYS: &[&str] = &[
    "input_height",
    "input_width",
    "pool_factor",
    "hidden_channels",
    "kernel_size",
    "gate_mask",
    "attention",
    "reduction_ratio",
    "fc_layers",
    "time_steps",
    "tau",
    "alpha",
    "v_th",
    "u_reset",
    "v_th_trainable",
    "lif_mode",
    "raw_hidden",
    "readout",
    "frame_mode",
    "init_gain",
    "bias_init",
    "epochs",
    "batch_size",
    "learning_rate",
    "seed",
    "lr_schedule",
    "checkpoint_every",
    "warmup_epochs",
    "step_size",
    "step_gamma",
    "grad_clip",
    "val_fraction",
    "ablate_epochs",
];

impl Config {
    /// Parses config text and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {} is not `key = value`", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one override. Does not re-validate.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "input_height" => m.input_height = parse_value(key, value)?,
            "input_width" => m.input_width = parse_value(key, value)?,
            "pool_factor" => m.pool_factor = parse_value(key, value)?,
            "hidden_channels" => m.hidden_channels = parse_value(key, value)?,
            "kernel_size" => m.kernel_size = parse_value(key, value)?,
            "gate_mask" => m.gate_mask = parse_value(key, value)?,
            "attention" => m.attention = parse_value(key, value)?,
            "reduction_ratio" => m.reduction_ratio = parse_value(key, value)?,
            "fc_layers" => m.fc_layers = parse_list(key, value)?,
            "time_steps" => m.time_steps = parse_value(key, value)?,
            "tau" => m.tau = parse_value(key, value)?,
            "alpha" => m.alpha = parse_value(key, value)?,
            "v_th" => m.v_th = parse_value(key, value)?,
            "u_reset" => m.u_reset = parse_value(key, value)?,
            "v_th_trainable" => m.v_th_trainable = parse_value(key, value)?,
            "lif_mode" => m.lif_mode = parse_value(key, value)?,
            "raw_hidden" => m.raw_hidden = parse_value(key, value)?,
            "readout" => m.readout = parse_value(key, value)?,
            "frame_mode" => m.frame_mode = parse_value(key, value)?,
            "init_gain" => m.init_gain = parse_value(key, value)?,
            "bias_init" => m.bias_init = parse_value(key, value)?,
            "epochs" => t.epochs = parse_value(key, value)?,
            "batch_size" => t.batch_size = parse_value(key, value)?,
            "learning_rate" => t.learning_rate = parse_value(key, value)?,
            "seed" => t.seed = parse_value(key, value)?,
            "lr_schedule" => t.lr_schedule = parse_value(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse_value(key, value)?,
            "warmup_epochs" => t.warmup_epochs = parse_value(key, value)?,
            "step_size" => t.step_size = parse_value(key, value)?,
            "step_gamma" => t.step_gamma = parse_value(key, value)?,
            "grad_clip" => t.grad_clip = parse_value(key, value)?,
            "val_fraction" => t.val_fraction = parse_value(key, value)?,
            "ablate_epochs" => t.ablate_epochs = parse_value(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// `(key, value)` pairs in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.train;
        let fc = m.fc_layers.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        // `{:?}` on f64 is the shortest round-tripping representation.
        let values = [
            m.input_height.to_string(),
            m.input_width.to_string(),
            m.pool_factor.to_string(),
            m.hidden_channels.to_string(),
            m.kernel_size.to_string(),
            m.gate_mask.to_string(),
            m.attention.to_string(),
            m.reduction_ratio.to_string(),
            fc,
            m.time_steps.to_string(),
            format!("{:?}", m.tau),
            format!("{:?}", m.alpha),
            format!("{:?}", m.v_th),
            format!("{:?}", m.u_reset),
            m.v_th_trainable.to_string(),
            m.lif_mode.to_string(),
            m.raw_hidden.to_string(),
            m.readout.to_string(),
            m.frame_mode.to_string(),
            format!("{:?}", m.init_gain),
            m.bias_init.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            format!("{:?}", t.learning_rate),
            t.seed.to_string(),
            t.lr_schedule.to_string(),
            t.checkpoint_every.to_string(),
            t.warmup_epochs.to_string(),
            t.step_size.to_string(),
            format!("{:?}", t.step_gamma),
            format!("{:?}", t.grad_clip),
            format!("{:?}", t.val_fraction),
            t.ablate_epochs.to_string(),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
