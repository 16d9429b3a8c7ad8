//! Address-event streams: decoding, frame binning, a synthetic gesture
//! generator and rate coding of dense series.
//!
//! The on-disk `.aer` format is a headerless sequence of 9-byte
//! little-endian records:
//!
//! | bytes | field | type |
//! |-------|-------|------|
//! | 0..4  | `t` (µs) | u32 |
//! | 4..6  | `x` | u16 |
//! | 6..8  | `y` | u16 |
//! | 8     | `p` (0 = OFF, 1 = ON) | u8 |
//!
//! A CSV fallback with header `t,x,y,p` is also accepted.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RECORD_SIZE: usize = 9;
pub const CSV_HEADER: &str = "t,x,y,p";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u32,
    pub x: u16,
    pub y: u16,
    /// 0 = OFF (brightness decrease), 1 = ON.
    pub p: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    pub width: usize,
    pub height: usize,
    pub events: Vec<Event>,
    pub label: Option<usize>,
}

impl EventStream {
    /// Validates bounds, polarity and timestamp order.
    pub fn new(width: usize, height: usize, events: Vec<Event>, label: Option<usize>) -> Result<Self> {
        validate(&events, width, height)?;
        Ok(EventStream { width, height, events, label })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

fn validate(events: &[Event], width: usize, height: usize) -> Result<()> {
    let mut last = 0u32;
    for (index, e) in events.iter().enumerate() {
        if usize::from(e.x) >= width || usize::from(e.y) >= height {
            return Err(Error::Event {
                index,
                message: format!("({}, {}) outside {width}x{height} sensor", e.x, e.y),
            });
        }
        if e.p > 1 {
            return Err(Error::Event { index, message: format!("polarity {} is not 0 or 1", e.p) });
        }
        if e.t < last {
            return Err(Error::Event {
                index,
                message: format!("timestamp {} precedes previous {last}", e.t),
            });
        }
        last = e.t;
    }
    Ok(())
}

pub fn encode_events(events: &[Event]) -> Vec<u8> {
    let mut out = Vec::with_capacity(events.len() * RECORD_SIZE);
    for e in events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p);
    }
    out
}

/// Decodes a binary payload, or CSV if it starts with the `t,x,y,p` header.
pub fn decode_events(bytes: &[u8], width: usize, height: usize) -> Result<EventStream> {
    if bytes.starts_with(CSV_HEADER.as_bytes()) {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
            offset: e.valid_up_to(),
            message: "CSV payload is not valid UTF-8".into(),
        })?;
        return decode_csv(text, width, height);
    }
    if !bytes.len().is_multiple_of(RECORD_SIZE) {
        return Err(Error::Parse {
            offset: bytes.len() - bytes.len() % RECORD_SIZE,
            message: format!("truncated record: {} trailing bytes", bytes.len() % RECORD_SIZE),
        });
    }
    let events = bytes
        .chunks_exact(RECORD_SIZE)
        .map(|r| Event {
            t: u32::from_le_bytes([r[0], r[1], r[2], r[3]]),
            x: u16::from_le_bytes([r[4], r[5]]),
            y: u16::from_le_bytes([r[6], r[7]]),
            p: r[8],
        })
        .collect();
    EventStream::new(width, height, events, None)
}

pub fn encode_csv(events: &[Event]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for e in events {
        s.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.p));
    }
    s
}

pub fn decode_csv(text: &str, width: usize, height: usize) -> Result<EventStream> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Parse { offset: 0, message: format!("missing `{CSV_HEADER}` header") }),
    }
    let mut offset = text.find('\n').map_or(text.len(), |i| i + 1);
    let mut events = Vec::new();
    for line in lines {
        let row = line.trim();
        if !row.is_empty() {
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            let bad = |what: &str| Error::Parse { offset, message: format!("{what} in row `{row}`") };
            if fields.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            events.push(Event {
                t: fields[0].parse().map_err(|_| bad("bad timestamp"))?,
                x: fields[1].parse().map_err(|_| bad("bad x"))?,
                y: fields[2].parse().map_err(|_| bad("bad y"))?,
                p: fields[3].parse().map_err(|_| bad("bad polarity"))?,
            });
        }
        offset += line.len() + 1;
    }
    EventStream::new(width, height, events, None)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FrameMode {
    Count,
    #[default]
    Binary,
}

impl fmt::Display for FrameMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameMode::Count => "count",
            FrameMode::Binary => "binary",
        })
    }
}

impl FromStr for FrameMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "count" => Ok(FrameMode::Count),
            "binary" => Ok(FrameMode::Binary),
            other => Err(format!("unknown frame mode `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    /// `[T, 2, H, W]`, channel 0 = OFF, channel 1 = ON.
    pub frames: Tensor,
    pub label: Option<usize>,
}

/// Index of the time window holding `t` when `[t_min, t_max]` is split into
/// `windows` equal parts, the last one closed on the right.
pub fn window_of(t: u32, t_min: u32, t_max: u32, windows: usize) -> usize {
    let span = u64::from(t_max - t_min);
    if span == 0 {
        return 0;
    }
    let w = u64::from(t - t_min) * windows as u64 / span;
    (w as usize).min(windows - 1)
}

pub fn bin_events(stream: &EventStream, time_steps: usize, mode: FrameMode) -> Result<FrameSequence> {
    if time_steps == 0 {
        return Err(Error::contract("binning needs at least one time step"));
    }
    let (h, w) = (stream.height, stream.width);
    let mut frames = Tensor::zeros(&[time_steps, 2, h, w]);
    if let (Some(first), Some(last)) = (stream.events.first(), stream.events.last()) {
        let data = frames.data_mut();
        for e in &stream.events {
            let k = window_of(e.t, first.t, last.t, time_steps);
            let idx = ((k * 2 + usize::from(e.p)) * h + usize::from(e.y)) * w + usize::from(e.x);
            data[idx] += 1.0;
        }
        if mode == FrameMode::Binary {
            data.iter_mut().for_each(|v| *v = v.min(1.0));
        }
    }
    Ok(FrameSequence { frames, label: stream.label })
}

/// Motion archetypes of the synthetic gesture set, in class-id order.
pub const ARCHETYPES: [&str; 8] = [
    "sweep_left",
    "sweep_right",
    "sweep_up",
    "sweep_down",
    "rotate_cw",
    "rotate_ccw",
    "ring_expand",
    "ring_contract",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    pub duration_us: u32,
    /// Probability that a pixel emits a spurious event during one tick.
    pub noise_prob: f64,
    /// Probability that a genuine edge event is dropped.
    pub dropout: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { width: 16, height: 16, duration_us: 200_000, noise_prob: 0.002, dropout: 0.05 }
    }
}

/// Per-sample geometry drawn from the seed.
struct Shape {
    thickness: f64,
    angle0: f64,
    cx: f64,
    cy: f64,
    length: f64,
}

fn covered(class_id: usize, s: f64, x: f64, y: f64, w: f64, h: f64, g: &Shape) -> bool {
    let half = g.thickness / 2.0;
    match class_id {
        // Bars enter fully outside one edge and leave past the opposite one.
        0 | 1 => {
            let travel = w + 2.0 * g.thickness;
            let pos = if class_id == 0 { w + g.thickness - s * travel } else { -g.thickness + s * travel };
            (x - pos).abs() < half
        }
        2 | 3 => {
            let travel = h + 2.0 * g.thickness;
            let pos = if class_id == 2 { h + g.thickness - s * travel } else { -g.thickness + s * travel };
            (y - pos).abs() < half
        }
        4 | 5 => {
            let turn = if class_id == 4 { PI } else { -PI };
            let a = g.angle0 + s * turn;
            let (dx, dy) = (x - g.cx, y - g.cy);
            let along = dx * a.cos() + dy * a.sin();
            let across = -dx * a.sin() + dy * a.cos();
            across.abs() < half && along.abs() < g.length / 2.0
        }
        6 | 7 => {
            let r_max = g.length / 2.0;
            let r_min = 0.5;
            let r = if class_id == 6 { r_min + s * (r_max - r_min) } else { r_max - s * (r_max - r_min) };
            let d = ((x - g.cx).powi(2) + (y - g.cy).powi(2)).sqrt();
            (d - r).abs() < half
        }
        _ => unreachable!(),
    }
}

/// Deterministic synthetic gesture for `(class_id, seed)`.
///
/// The moving shape is rasterised at regular ticks; pixels it newly covers
/// emit ON events (leading edge), pixels it uncovers emit OFF events
/// (trailing edge). Noise events are sprinkled uniformly.
pub fn synth_gesture(class_id: usize, seed: u64, params: &SynthParams) -> Result<EventStream> {
    if class_id >= ARCHETYPES.len() {
        return Err(Error::contract(format!(
            "unknown gesture class {class_id}, only {} archetypes exist",
            ARCHETYPES.len()
        )));
    }
    let (wn, hn) = (params.width, params.height);
    if wn == 0 || hn == 0 || wn > usize::from(u16::MAX) || hn > usize::from(u16::MAX) {
        return Err(Error::contract(format!("unsupported sensor size {wn}x{hn}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class_id as u64);
    if params.duration_us == 0 {
        return EventStream::new(wn, hn, Vec::new(), Some(class_id));
    }
    let (w, h) = (wn as f64, hn as f64);
    let scale = w.min(h) / 16.0;
    let geom = Shape {
        thickness: rng.gen_range(2.0..3.5) * scale,
        angle0: rng.gen_range(0.0..PI),
        cx: w / 2.0 + rng.gen_range(-1.0..1.0) * scale,
        cy: h / 2.0 + rng.gen_range(-1.0..1.0) * scale,
        length: w.min(h) * rng.gen_range(0.7..0.9),
    };
    let ticks = 2 * wn.max(hn);
    let tick_time = |k: usize| (u64::from(params.duration_us) * k as u64 / ticks as u64) as u32;

    let occupancy = |k: usize| -> Vec<bool> {
        let s = k as f64 / (ticks - 1) as f64;
        (0..hn * wn)
            .map(|i| covered(class_id, s, (i % wn) as f64 + 0.5, (i / wn) as f64 + 0.5, w, h, &geom))
            .collect()
    };
    let mut events = Vec::new();
    let mut prev = occupancy(0);
    for k in 0..ticks {
        let t = tick_time(k);
        let next_t = tick_time(k + 1);
        let now = occupancy(k);
        let mut tick_events = Vec::new();
        for (i, (&was, &is)) in prev.iter().zip(&now).enumerate() {
            if was != is && !rng.gen_bool(params.dropout) {
                tick_events.push(Event { t, x: (i % wn) as u16, y: (i / wn) as u16, p: u8::from(is) });
            }
        }
        if params.noise_prob > 0.0 {
            for i in 0..wn * hn {
                if rng.gen_bool(params.noise_prob) {
                    let tn = if next_t > t { rng.gen_range(t..next_t) } else { t };
                    tick_events.push(Event {
                        t: tn,
                        x: (i % wn) as u16,
                        y: (i / wn) as u16,
                        p: rng.gen_range(0..2),
                    });
                }
            }
        }
        tick_events.sort_by_key(|e| e.t);
        events.extend(tick_events);
        prev = now;
    }
    EventStream::new(wn, hn, events, Some(class_id))
}

/// Bernoulli spike trains with per-element firing probability equal to the
/// value. `series` is `[T, D]` with entries in `[0, 1]`.
pub fn rate_encode(series: &Tensor, seed: u64) -> Result<Tensor> {
    if series.rank() != 2 {
        return Err(Error::contract(format!("rate coding expects [T, D], got {:?}", series.shape())));
    }
    if let Some(bad) = series.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::contract(format!("rate-coded value {bad} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = series.data().iter().map(|&p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 }).collect();
    Tensor::new(series.shape(), data)
}

/// Class folders under a dataset root, in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub class_names: Vec<String>,
    /// `(path, class index)`, sorted by class then file name.
    pub files: Vec<(PathBuf, usize)>,
}

pub fn scan_dataset(root: &Path) -> Result<DatasetIndex> {
    let read = |p: &Path| fs::read_dir(p).map_err(|e| Error::io(p, e));
    let mut class_dirs: Vec<PathBuf> =
        read(root)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    class_dirs.sort();
    let mut index = DatasetIndex { class_names: Vec::new(), files: Vec::new() };
    for dir in class_dirs {
        let mut files: Vec<PathBuf> = read(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "aer" || x == "csv"))
            .collect();
        if files.is_empty() {
            continue;
        }
        files.sort();
        let label = index.class_names.len();
        index.class_names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        index.files.extend(files.into_iter().map(|f| (f, label)));
    }
    if index.files.is_empty() {
        return Err(Error::Data(format!("no .aer or .csv samples under {}", root.display())));
    }
    Ok(index)
}

pub fn read_stream(path: &Path, width: usize, height: usize, label: Option<usize>) -> Result<EventStream> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut stream =
        decode_events(&bytes, width, height).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    stream.label = label;
    Ok(stream)
}

/// Class folder name for synthetic class `id`; the numeric prefix keeps
/// lexicographic order equal to class-id order.
pub fn synth_class_name(id: usize) -> String {
    format!("{id:02}_{}", ARCHETYPES[id])
}

/// Writes `samples` synthetic streams, assigned to classes round-robin, as
/// `<root>/<class>/<id>.aer`. Returns the written paths.
pub fn write_synthetic_dataset(
    root: &Path,
    classes: usize,
    samples: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<Vec<PathBuf>> {
    if classes == 0 || classes > ARCHETYPES.len() {
        return Err(Error::contract(format!(
            "class count must be in 1..={}, got {classes}",
            ARCHETYPES.len()
        )));
    }
    let mut written = Vec::with_capacity(samples);
    for class in 0..classes {
        let dir = root.join(synth_class_name(class));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for i in 0..samples {
        let class = i % classes;
        let stream = synth_gesture(class, seed.wrapping_add(i as u64), params)?;
        let path = root.join(synth_class_name(class)).join(format!("{:04}.aer", i / classes));
        fs::write(&path, encode_events(&stream.events)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
