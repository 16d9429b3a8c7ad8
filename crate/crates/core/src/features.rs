//! Hidden feature-map export and sparsity statistics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::train::Dataset;

/// `{0, 5, 10, 15, T-1}` restricted to `0..T`.
pub fn default_steps(time_steps: usize) -> Vec<usize> {
    let mut steps: Vec<usize> =
        [0, 5, 10, 15, time_steps.saturating_sub(1)].into_iter().filter(|&s| s < time_steps).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
}

/// Fraction of exactly-zero entries.
pub fn sparsity(t: &Tensor) -> f64 {
    1.0 - t.count_nonzero() as f64 / t.len() as f64
}

/// Binary PGM (`P5`). Maps valued in `{0, 1}` become `{0, 255}`; anything
/// else is min-max scaled.
pub fn pgm(map: &[f64], height: usize, width: usize) -> Vec<u8> {
    let binary = map.iter().all(|&v| v == 0.0 || v == 1.0);
    let (lo, hi) = map.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(map.iter().map(|&v| {
        if binary {
            if v == 1.0 {
                255
            } else {
                0
            }
        } else if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDump {
    /// `(step, fraction of zeros)` over all channels of that step.
    pub sparsity: Vec<(usize, f64)>,
    pub files: Vec<PathBuf>,
}

/// Writes the hidden maps of one sample (`frames: [T, 2, H, W]`) at the
/// requested steps: one PGM per channel and step, `features.csv` with the
/// raw values and `sparsity.csv` with per-step sparsity.
pub fn dump_features(model: &Model, frames: &Tensor, steps: &[usize], out_dir: &Path) -> Result<FeatureDump> {
    let s = frames.shape();
    if s.len() != 4 {
        return Err(Error::contract(format!("expected one sample [T, 2, H, W], got {s:?}")));
    }
    let t_steps = s[0];
    if let Some(&bad) = steps.iter().find(|&&k| k >= t_steps) {
        return Err(Error::contract(format!("step {bad} out of range for T = {t_steps}")));
    }
    let batch = frames.clone().reshape(&[s[0], 1, s[1], s[2], s[3]])?;
    let maps = model.hidden_maps(&batch)?;
    let ms = maps.shape().to_vec();
    let (ch, h, w) = (ms[2], ms[3], ms[4]);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut files = Vec::new();
    let mut values = String::from("step,channel,y,x,value\n");
    let mut summary = String::from("step,sparsity\n");
    let mut report = Vec::with_capacity(steps.len());
    for &k in steps {
        let step_maps = maps.index_axis0(k)?;
        let frac = sparsity(&step_maps);
        report.push((k, frac));
        let _ = writeln!(summary, "{k},{frac}");
        for c in 0..ch {
            let map = &step_maps.data()[c * h * w..(c + 1) * h * w];
            let path = out_dir.join(format!("h_t{k:02}_c{c:02}.pgm"));
            fs::write(&path, pgm(map, h, w)).map_err(|e| Error::io(&path, e))?;
            files.push(path);
            for (i, v) in map.iter().enumerate() {
                let _ = writeln!(values, "{k},{c},{},{},{v}", i / w, i % w);
            }
        }
    }
    for (name, text) in [("features.csv", values), ("sparsity.csv", summary)] {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        files.push(path);
    }
    Ok(FeatureDump { sparsity: report, files })
}

/// Mean fraction of zeros in the hidden maps over every step and sample.
pub fn mean_hidden_sparsity(model: &Model, set: &Dataset, batch_size: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Data("no samples to measure".into()));
    }
    let indices: Vec<usize> = (0..set.len()).collect();
    let (mut zeros, mut total) = (0usize, 0usize);
    for chunk in indices.chunks(batch_size.max(1)) {
        let (frames, _) = set.batch(chunk)?;
        let maps = model.hidden_maps(&frames)?;
        zeros += maps.len() - maps.count_nonzero();
        total += maps.len();
    }
    Ok(zeros as f64 / total as f64)
}
