//! Seeded moving-blob videos with a label-preserving domain shift.
//!
//! Every class is a motion direction: a Gaussian blob travels across a
//! toroidal frame along `θ_c = 2πc/K`. Appearance (blob colour, background
//! tint, start position, speed jitter) is drawn independently of the class,
//! so the label is recoverable only from motion. The target domain applies
//! an intensity remap, extra pixel noise, a start-position bias, a static
//! background texture and per-frame temporal jitter; none of them change the
//! direction of travel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftLevel {
    None,
    Mild,
    Severe,
}

/// Target-domain transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    pub intensity_scale: f64,
    pub intensity_offset: f64,
    pub noise_sigma: f64,
    /// Pixels added to both start coordinates.
    pub translation_bias: f64,
    pub texture_swap: bool,
    /// Each frame samples time `t + j`, `j` uniform in `[−jitter, jitter]`.
    pub temporal_jitter: usize,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec::preset(ShiftLevel::None)
    }
}

impl ShiftSpec {
    pub fn preset(level: ShiftLevel) -> Self {
        match level {
            ShiftLevel::None => ShiftSpec {
                intensity_scale: 1.0,
                intensity_offset: 0.0,
                noise_sigma: 0.0,
                translation_bias: 0.0,
                texture_swap: false,
                temporal_jitter: 0,
            },
            ShiftLevel::Mild => ShiftSpec {
                intensity_scale: 0.9,
                noise_sigma: 0.02,
                ..ShiftSpec::preset(ShiftLevel::None)
            },
            ShiftLevel::Severe => ShiftSpec {
                intensity_scale: 0.6,
                intensity_offset: 0.1,
                noise_sigma: 0.08,
                translation_bias: 2.0,
                texture_swap: true,
                temporal_jitter: 1,
            },
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == ShiftSpec::preset(ShiftLevel::None)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.intensity_scale > 0.0
            && self.intensity_scale <= 2.0
            && (-1.0..=1.0).contains(&self.intensity_offset)
            && (0.0..=1.0).contains(&self.noise_sigma)
            && self.translation_bias.abs() <= 64.0
            && self.temporal_jitter <= 4;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("shift spec out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub frame_size: usize,
    pub channels: usize,
    pub frames: usize,
    /// Pixels per frame along the class direction.
    pub speed: f64,
    /// Relative per-sample speed jitter.
    pub speed_jitter: f64,
    pub blob_sigma: f64,
    /// Pixel noise present in both domains.
    pub base_noise: f64,
    pub shift_level: ShiftLevel,
    /// Overrides the preset when set.
    pub shift: Option<ShiftSpec>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 6,
            train_per_class: 120,
            test_per_class: 60,
            frame_size: 16,
            channels: 3,
            frames: 8,
            speed: 1.25,
            speed_jitter: 0.1,
            blob_sigma: 1.5,
            base_noise: 0.01,
            shift_level: ShiftLevel::Severe,
            shift: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn shift_spec(&self) -> ShiftSpec {
        self.shift.unwrap_or_else(|| ShiftSpec::preset(self.shift_level))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.frames < 2 || self.frame_size < 4 || self.channels == 0 {
            return Err(Error::config("synth: need >= 2 classes, >= 2 frames, frame_size >= 4"));
        }
        if !(self.speed > 0.0) || !(0.0..0.5).contains(&self.speed_jitter) || !(self.blob_sigma > 0.0) {
            return Err(Error::config("synth: speed, speed_jitter or blob_sigma out of range"));
        }
        if !(0.0..=1.0).contains(&self.base_noise) {
            return Err(Error::config("synth: base_noise out of range"));
        }
        self.shift_spec().validate()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_size * self.frame_size * self.channels
    }

    pub fn video_len(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub fn per_class(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_class,
            Split::Test => self.test_per_class,
        }
    }

    /// Unit direction of travel for `class`.
    pub fn direction(&self, class: usize) -> (f64, f64) {
        let theta = 2.0 * std::f64::consts::PI * class as f64 / self.num_classes as f64;
        (theta.cos(), theta.sin())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        crate::digest::sha256_hex(&json)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    /// `T × H × W × C`, row-major, values in `[0, 1]`.
    pub frames: Vec<f32>,
    pub label: usize,
    pub domain: Domain,
    pub id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub domain: Domain,
    pub split: Split,
    pub num_classes: usize,
    pub samples: Vec<VideoSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn videos(&self, idx: &[usize]) -> Vec<&[f32]> {
        idx.iter().map(|&i| self.samples[i].frames.as_slice()).collect()
    }
}

/// Swapped-in backgrounds keep the sample's tint and add a grating of this
/// amplitude on top.
const TEXTURE_AMPLITUDE: f64 = 0.05;

fn stream_id(domain: Domain, split: Split) -> u64 {
    let d = match domain {
        Domain::Source => 0,
        Domain::Target => 1,
    };
    let s = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    streams::DATA + 2 * d + s
}

fn wrap(x: f64, size: f64) -> f64 {
    x.rem_euclid(size)
}

/// Shortest signed offset on a ring of circumference `size`.
fn ring_delta(a: f64, b: f64, size: f64) -> f64 {
    let d = (a - b).rem_euclid(size);
    if d > size / 2.0 {
        d - size
    } else {
        d
    }
}

/// Grating parameters shared by every textured video of a dataset.
#[derive(Debug, Clone, Copy)]
struct Grating {
    freq: f64,
    phase: f64,
    orient: f64,
}

impl Grating {
    fn draw(rng: &mut SeededRng) -> Self {
        Grating {
            freq: rng.uniform_range(0.6, 1.2),
            phase: rng.uniform_range(0.0, 2.0 * std::f64::consts::PI),
            orient: rng.uniform_range(0.0, std::f64::consts::PI),
        }
    }
}

fn render_sample(cfg: &SynthConfig, shift: Option<&ShiftSpec>, grating: Grating, label: usize, rng: &mut SeededRng) -> Vec<f32> {
    let fs = cfg.frame_size;
    let size = fs as f64;
    let ch = cfg.channels;
    let (dx, dy) = cfg.direction(label);
    let speed = cfg.speed * (1.0 + cfg.speed_jitter * (2.0 * rng.uniform() - 1.0));
    let bias = shift.map_or(0.0, |s| s.translation_bias);
    let x0 = size / 2.0 + 2.0 * rng.normal() + bias;
    let y0 = size / 2.0 + 2.0 * rng.normal() + bias;
    let color: Vec<f64> = (0..ch).map(|_| rng.uniform_range(0.6, 1.0)).collect();
    let tint: Vec<f64> = (0..ch).map(|_| rng.uniform_range(0.05, 0.15)).collect();

    let mut background = vec![0.0; fs * fs * ch];
    let textured = shift.is_some_and(|s| s.texture_swap);
    let Grating { freq, phase, orient } = grating;
    for y in 0..fs {
        for x in 0..fs {
            for c in 0..ch {
                let mut v = tint[c];
                if textured {
                    let u = x as f64 * orient.cos() + y as f64 * orient.sin();
                    v += TEXTURE_AMPLITUDE * (freq * u + phase).sin();
                }
                background[(y * fs + x) * ch + c] = v;
            }
        }
    }

    let jitter = shift.map_or(0, |s| s.temporal_jitter) as i64;
    let inv_two_var = 1.0 / (2.0 * cfg.blob_sigma * cfg.blob_sigma);
    let mut out = Vec::with_capacity(cfg.video_len());
    for t in 0..cfg.frames {
        let j = if jitter > 0 {
            rng.below((2 * jitter + 1) as usize) as i64 - jitter
        } else {
            0
        };
        let time = t as f64 + j as f64;
        let cx = wrap(x0 + dx * speed * time, size);
        let cy = wrap(y0 + dy * speed * time, size);
        for y in 0..fs {
            let ddy = ring_delta(y as f64, cy, size);
            for x in 0..fs {
                let ddx = ring_delta(x as f64, cx, size);
                let blob = (-(ddx * ddx + ddy * ddy) * inv_two_var).exp();
                for c in 0..ch {
                    let base = background[(y * fs + x) * ch + c];
                    let mut v = base * (1.0 - blob) + color[c] * blob;
                    v += cfg.base_noise * rng.normal();
                    if let Some(s) = shift {
                        v = s.intensity_scale * v + s.intensity_offset + s.noise_sigma * rng.normal();
                    }
                    out.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
    }
    out
}

/// Generates one (domain, split); deterministic in `(seed, domain, split)`.
/// Target labels are generated and stored but the trainer only reads them
/// for evaluation and the supervised upper bound.
pub fn generate_split(cfg: &SynthConfig, domain: Domain, split: Split) -> Result<Dataset> {
    cfg.validate()?;
    let shift = cfg.shift_spec();
    let apply = (domain == Domain::Target && !shift.is_identity()).then_some(&shift);
    let n = cfg.num_classes * cfg.per_class(split);
    let stream = stream_id(domain, split);
    // The swapped-in background is one environment for the whole domain.
    let grating = Grating::draw(&mut SeededRng::stream(cfg.seed, streams::DATA + 4));
    let samples = (0..n)
        .map(|i| {
            let label = i % cfg.num_classes;
            // One stream per sample keeps generation order-independent.
            let mut rng = SeededRng::stream(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream, i as u64);
            VideoSample {
                frames: render_sample(cfg, apply, grating, label, &mut rng),
                label,
                domain,
                id: i,
            }
        })
        .collect();
    Ok(Dataset {
        domain,
        split,
        num_classes: cfg.num_classes,
        samples,
    })
}

/// Direction of travel estimated from the frames: background removed with a
/// per-pixel temporal median, a 3×3 blur, blob centre by circular centroid, then the
/// nearest class direction to the summed frame-to-frame displacement.
pub fn motion_template_class(cfg: &SynthConfig, frames: &[f32]) -> usize {
    let fs = cfg.frame_size;
    let size = fs as f64;
    let ch = cfg.channels;
    let t_count = cfg.frames;
    let pix = fs * fs;
    let lum = |t: usize, p: usize| -> f64 {
        (0..ch).map(|c| frames[t * pix * ch + p * ch + c] as f64).sum::<f64>() / ch as f64
    };
    let mut median = vec![0.0; pix];
    for (p, m) in median.iter_mut().enumerate() {
        let mut vals: Vec<f64> = (0..t_count).map(|t| lum(t, p)).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        *m = vals[t_count / 2];
    }
    let tau = 2.0 * std::f64::consts::PI / size;
    let centers: Vec<(f64, f64)> = (0..t_count)
        .map(|t| {
            let raw: Vec<f64> = (0..pix).map(|p| lum(t, p) - median[p]).collect();
            // 3×3 toroidal box blur suppresses isolated noise peaks.
            let diffs: Vec<f64> = (0..pix)
                .map(|p| {
                    let (x, y) = (p % fs, p / fs);
                    let mut acc = 0.0;
                    for oy in [fs - 1, 0, 1] {
                        for ox in [fs - 1, 0, 1] {
                            acc += raw[((y + oy) % fs) * fs + (x + ox) % fs];
                        }
                    }
                    (acc / 9.0).max(0.0)
                })
                .collect();
            let peak = diffs.iter().copied().fold(0.0, f64::max);
            let (mut sx, mut cx, mut sy, mut cy) = (0.0, 0.0, 0.0, 0.0);
            for (p, &d) in diffs.iter().enumerate() {
                let w = (d - 0.5 * peak).max(0.0);
                let (x, y) = ((p % fs) as f64, (p / fs) as f64);
                sx += w * (tau * x).sin();
                cx += w * (tau * x).cos();
                sy += w * (tau * y).sin();
                cy += w * (tau * y).cos();
            }
            (sx.atan2(cx) / tau, sy.atan2(cy) / tau)
        })
        .collect();
    let (mut mx, mut my) = (0.0, 0.0);
    for w in centers.windows(2) {
        mx += ring_delta(w[1].0, w[0].0, size);
        my += ring_delta(w[1].1, w[0].1, size);
    }
    (0..cfg.num_classes)
        .map(|c| {
            let (dx, dy) = cfg.direction(c);
            (c, dx * mx + dy * my)
        })
        .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
        .map(|(c, _)| c)
        .expect("at least two classes")
}
