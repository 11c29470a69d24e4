//! Spatio-temporal video transformer: a per-frame spatial encoder, a
//! cross-frame temporal encoder, a linear classifier and a fixed random
//! projection head.

pub mod checkpoint;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, SeededRng};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorResult};

pub use params::{trainable_in, FreezeMask, ParamStore, Phase};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub frame_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub frames_per_video: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub spatial_layers: usize,
    pub temporal_layers: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
    pub projection_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frame_size: 16,
            patch_size: 4,
            channels: 3,
            frames_per_video: 8,
            embed_dim: 64,
            heads: 4,
            spatial_layers: 2,
            temporal_layers: 2,
            mlp_ratio: 2.0,
            num_classes: 6,
            projection_dim: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.patch_size == 0 || self.frame_size % self.patch_size != 0 {
            return fail(format!(
                "frame_size {} not divisible by patch_size {}",
                self.frame_size, self.patch_size
            ));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return fail(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads));
        }
        if self.channels == 0 || self.frames_per_video == 0 || self.num_classes < 2 {
            return fail("channels, frames_per_video must be positive and num_classes >= 2".into());
        }
        if self.projection_dim == 0 || !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return fail("projection_dim and mlp_ratio must be positive".into());
        }
        Ok(())
    }

    pub fn patches_per_frame(&self) -> usize {
        let side = self.frame_size / self.patch_size;
        side * side
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn frame_len(&self) -> usize {
        self.frame_size * self.frame_size * self.channels
    }

    pub fn video_len(&self) -> usize {
        self.frame_len() * self.frames_per_video
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }
}

/// Per-batch forward outputs; rows are videos.
#[derive(Debug, Clone)]
pub struct VideoFeatures<T: Scalar> {
    /// `[V, T, d]` final spatial class-token states.
    pub frame_features: Tensor<T>,
    /// `[V, d]`
    pub video_feature: Tensor<T>,
    /// `[V, K]`
    pub logits: Tensor<T>,
    /// `[V, d_p]`
    pub projection: Tensor<T>,
    /// `[V, T]` last-layer temporal attention from the class token, head
    /// averaged and renormalized.
    pub attention: Vec<Vec<T>>,
}

/// `x·W + b` over the last axis of a rank-2 or rank-3 input.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> TensorResult<Tensor<T>> {
    let shape = x.shape().to_vec();
    let width = *shape.last().unwrap_or(&0);
    let rows = x.numel() / width.max(1);
    let out_dim = w.shape()[1];
    let flat = x.reshape(&[rows, width])?.matmul(w)?;
    let y = flat.add(&broadcast_rows(b, rows)?)?;
    let mut out_shape = shape;
    *out_shape.last_mut().expect("rank >= 1") = out_dim;
    y.reshape(&out_shape)
}

/// Repeats a vector (any shape, flattened) as `rows` identical rows via
/// `ones[rows,1] · v[1,n]`.
pub fn broadcast_rows<T: Scalar>(v: &Tensor<T>, rows: usize) -> TensorResult<Tensor<T>> {
    let n = v.numel();
    Tensor::ones(&[rows, 1]).matmul(&v.reshape(&[1, n])?)
}

#[derive(Debug, Clone)]
pub struct VideoTransformer<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> VideoTransformer<T> {
    /// Fresh weights from `seed`. The projection head uses its own stream so
    /// it can be redrawn at the start of adaptation without touching anything
    /// else.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::stream(seed, streams::MODEL_INIT);
        let mut params = ParamStore::new();
        let d = config.embed_dim;
        let tn = |rng: &mut SeededRng, n: usize| rng.truncated_normal::<T>(n, INIT_STD);
        let zeros = |n: usize| vec![T::zero(); n];

        let p = config.patch_len();
        params.insert("spatial.patch_proj.weight", &[p, d], tn(&mut rng, p * d))?;
        params.insert("spatial.patch_proj.bias", &[d], zeros(d))?;
        params.insert("spatial.cls_token", &[1, d], tn(&mut rng, d))?;
        let n_sp = config.patches_per_frame() + 1;
        params.insert("spatial.pos_embed", &[n_sp, d], tn(&mut rng, n_sp * d))?;
        for l in 0..config.spatial_layers {
            insert_block(&mut params, &mut rng, &format!("spatial.blocks.{l}"), &config)?;
        }
        insert_norm(&mut params, "spatial.norm", d)?;

        params.insert("temporal.cls_token", &[1, d], tn(&mut rng, d))?;
        let n_t = config.frames_per_video + 1;
        params.insert("temporal.pos_embed", &[n_t, d], tn(&mut rng, n_t * d))?;
        for l in 0..config.temporal_layers {
            insert_block(&mut params, &mut rng, &format!("temporal.blocks.{l}"), &config)?;
        }
        insert_norm(&mut params, "temporal.norm", d)?;

        let k = config.num_classes;
        params.insert("classifier.weight", &[d, k], tn(&mut rng, d * k))?;
        params.insert("classifier.bias", &[k], zeros(k))?;

        let dp = config.projection_dim;
        params.insert("projection.fc1.weight", &[d, dp], zeros(d * dp))?;
        params.insert("projection.fc1.bias", &[dp], zeros(dp))?;
        params.insert("projection.fc2.weight", &[dp, dp], zeros(dp * dp))?;
        params.insert("projection.fc2.bias", &[dp], zeros(dp))?;

        let mut model = VideoTransformer { config, params };
        model.reseed_projection(seed)?;
        Ok(model)
    }

    /// Draws the fixed projection head from its dedicated stream. Weights use
    /// fan-in scaling so the head neither vanishes nor saturates.
    pub fn reseed_projection(&mut self, seed: u64) -> Result<()> {
        let mut rng = SeededRng::stream(seed, streams::PROJECTION_HEAD);
        let (d, dp) = (self.config.embed_dim, self.config.projection_dim);
        let w1 = rng.normal_vec::<T>(d * dp, 1.0 / (d as f64).sqrt());
        let w2 = rng.normal_vec::<T>(dp * dp, 1.0 / (dp as f64).sqrt());
        self.params.get("projection.fc1.weight").set_data(w1)?;
        self.params.get("projection.fc1.bias").set_data(vec![T::zero(); dp])?;
        self.params.get("projection.fc2.weight").set_data(w2)?;
        self.params.get("projection.fc2.bias").set_data(vec![T::zero(); dp])?;
        Ok(())
    }

    pub fn apply_phase(&mut self, phase: Phase) -> Result<FreezeMask> {
        let mask = self.params.build_freeze_mask(phase);
        self.params.apply_mask(&mask)?;
        Ok(mask)
    }

    /// Flattens `frames` (`[F, H, W, C]` row-major) into `[F, N, P]` patch
    /// vectors ordered patch-row-major, then (y, x, c) inside each patch.
    pub fn patch_matrix(&self, frames: &[f32], num_frames: usize) -> Result<Tensor<T>> {
        let c = &self.config;
        if frames.len() != num_frames * c.frame_len() {
            return Err(Error::config(format!(
                "expected {} values for {num_frames} frames of {}x{}x{}, got {}",
                num_frames * c.frame_len(),
                c.frame_size,
                c.frame_size,
                c.channels,
                frames.len()
            )));
        }
        let (fs, ps, ch) = (c.frame_size, c.patch_size, c.channels);
        let side = fs / ps;
        let mut out = Vec::with_capacity(frames.len());
        for f in 0..num_frames {
            let frame = &frames[f * c.frame_len()..(f + 1) * c.frame_len()];
            for pr in 0..side {
                for pc in 0..side {
                    for y in 0..ps {
                        let row = (pr * ps + y) * fs;
                        for x in 0..ps {
                            let base = (row + pc * ps + x) * ch;
                            out.extend(frame[base..base + ch].iter().map(|&v| T::lit(v as f64)));
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_vec(&[num_frames, c.patches_per_frame(), c.patch_len()], out)?)
    }

    /// Patch embeddings with spatial positional encodings for the patch
    /// positions: `[F, N, d]`.
    pub fn patchify(&self, frames: &[f32], num_frames: usize) -> Result<Tensor<T>> {
        let patches = self.patch_matrix(frames, num_frames)?;
        let p = &self.params;
        let emb = linear(&patches, p.get("spatial.patch_proj.weight"), p.get("spatial.patch_proj.bias"))?;
        let n = self.config.patches_per_frame();
        let d = self.config.embed_dim;
        let pos = p.get("spatial.pos_embed").slice(0, 1, n + 1)?;
        let pos = broadcast_rows(&pos, num_frames)?.reshape(&[num_frames, n, d])?;
        Ok(emb.add(&pos)?)
    }

    /// Encodes every frame independently; returns `[F, d]` class-token states.
    pub fn spatial_forward(&self, frames: &[f32], num_frames: usize) -> Result<Tensor<T>> {
        let d = self.config.embed_dim;
        let p = &self.params;
        let tokens = self.patchify(frames, num_frames)?;
        let cls = p
            .get("spatial.cls_token")
            .add(&p.get("spatial.pos_embed").slice(0, 0, 1)?)?;
        let cls = broadcast_rows(&cls, num_frames)?.reshape(&[num_frames, 1, d])?;
        let mut x = Tensor::concat(&[cls, tokens], 1)?;
        for l in 0..self.config.spatial_layers {
            x = self.block(&format!("spatial.blocks.{l}"), &x, false)?.0;
        }
        let cls_out = x.slice(1, 0, 1)?.reshape(&[num_frames, d])?;
        Ok(cls_out.layer_norm(p.get("spatial.norm.gain"), p.get("spatial.norm.bias"), T::lit(LN_EPS))?)
    }

    /// Aggregates `[V, T, d]` frame features into `[V, d]` video features and
    /// the last-layer class-token attention over frames.
    pub fn temporal_forward(&self, frame_features: &Tensor<T>) -> Result<(Tensor<T>, Vec<Vec<T>>)> {
        let c = &self.config;
        let (d, t) = (c.embed_dim, c.frames_per_video);
        let shape = frame_features.shape();
        if shape.len() != 3 || shape[1] != t || shape[2] != d {
            return Err(Error::config(format!(
                "temporal input must be [V, {t}, {d}], got {shape:?}"
            )));
        }
        let v = shape[0];
        let p = &self.params;
        let cls = broadcast_rows(p.get("temporal.cls_token"), v)?.reshape(&[v, 1, d])?;
        let x = Tensor::concat(&[cls, frame_features.clone()], 1)?;
        let pos = broadcast_rows(p.get("temporal.pos_embed"), v)?.reshape(&[v, t + 1, d])?;
        let mut x = x.add(&pos)?;
        let mut attention = vec![vec![T::zero(); t]; v];
        for l in 0..c.temporal_layers {
            let last = l + 1 == c.temporal_layers;
            let (y, probs) = self.block(&format!("temporal.blocks.{l}"), &x, last)?;
            if let Some(probs) = probs {
                attention = probs;
            }
            x = y;
        }
        let cls_out = x.slice(1, 0, 1)?.reshape(&[v, d])?;
        let feat = cls_out.layer_norm(p.get("temporal.norm.gain"), p.get("temporal.norm.bias"), T::lit(LN_EPS))?;
        Ok((feat, attention))
    }

    /// `[V, d] → [V, K]`
    pub fn classify(&self, video_feature: &Tensor<T>) -> Result<Tensor<T>> {
        let p = &self.params;
        Ok(linear(video_feature, p.get("classifier.weight"), p.get("classifier.bias"))?)
    }

    /// `[V, d] → [V, d_p]` through the fixed head: linear, GELU, linear.
    pub fn project(&self, video_feature: &Tensor<T>) -> Result<Tensor<T>> {
        let p = &self.params;
        let h = linear(video_feature, p.get("projection.fc1.weight"), p.get("projection.fc1.bias"))?.gelu()?;
        Ok(linear(&h, p.get("projection.fc2.weight"), p.get("projection.fc2.bias"))?)
    }

    /// Spatial encoder over `videos` (each `T·H·W·C` values), reshaped to
    /// `[V, T, d]`.
    pub fn encode_frames(&self, videos: &[&[f32]]) -> Result<Tensor<T>> {
        let c = &self.config;
        let mut flat = Vec::with_capacity(videos.len() * c.video_len());
        for v in videos {
            if v.len() != c.video_len() {
                return Err(Error::config(format!(
                    "video has {} values, expected {}",
                    v.len(),
                    c.video_len()
                )));
            }
            flat.extend_from_slice(v);
        }
        let n = videos.len() * c.frames_per_video;
        let feats = self.spatial_forward(&flat, n)?;
        Ok(feats.reshape(&[videos.len(), c.frames_per_video, c.embed_dim])?)
    }

    /// Temporal encoder, classifier and projection on precomputed frame features.
    pub fn forward_from_frames(&self, frame_features: &Tensor<T>) -> Result<VideoFeatures<T>> {
        let (video_feature, attention) = self.temporal_forward(frame_features)?;
        let logits = self.classify(&video_feature)?;
        let projection = self.project(&video_feature)?;
        Ok(VideoFeatures {
            frame_features: frame_features.clone(),
            video_feature,
            logits,
            projection,
            attention,
        })
    }

    pub fn forward(&self, videos: &[&[f32]]) -> Result<VideoFeatures<T>> {
        let frames = self.encode_frames(videos)?;
        self.forward_from_frames(&frames)
    }

    /// Pre-norm transformer block. With `want_attention`, also returns the
    /// head-averaged attention of token 0 over tokens `1..`, renormalized.
    fn block(&self, prefix: &str, x: &Tensor<T>, want_attention: bool) -> Result<(Tensor<T>, Option<Vec<Vec<T>>>)> {
        let p = &self.params;
        let g = |s: &str| p.get(&format!("{prefix}.{s}"));
        let eps = T::lit(LN_EPS);
        let h = x.layer_norm(g("ln1.gain"), g("ln1.bias"), eps)?;
        let (attn, probs) = self.attention(prefix, &h, want_attention)?;
        let x = x.add(&attn)?;
        let h = x.layer_norm(g("ln2.gain"), g("ln2.bias"), eps)?;
        let h = linear(&h, g("mlp.fc1.weight"), g("mlp.fc1.bias"))?.gelu()?;
        let h = linear(&h, g("mlp.fc2.weight"), g("mlp.fc2.bias"))?;
        Ok((x.add(&h)?, probs))
    }

    fn attention(&self, prefix: &str, h: &Tensor<T>, want_attention: bool) -> Result<(Tensor<T>, Option<Vec<Vec<T>>>)> {
        let p = &self.params;
        let g = |s: &str| p.get(&format!("{prefix}.attn.{s}"));
        let (d, heads) = (self.config.embed_dim, self.config.heads);
        let dh = d / heads;
        let (s, len) = (h.shape()[0], h.shape()[1]);
        let qkv = linear(h, g("qkv.weight"), g("qkv.bias"))?;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut avg = want_attention.then(|| vec![vec![T::zero(); len - 1]; s]);
        for head in 0..heads {
            let q = qkv.slice(2, head * dh, (head + 1) * dh)?;
            let k = qkv.slice(2, d + head * dh, d + (head + 1) * dh)?;
            let v = qkv.slice(2, 2 * d + head * dh, 2 * d + (head + 1) * dh)?;
            let probs = q.matmul(&k.transpose()?)?.scale(scale)?.softmax()?;
            if let Some(avg) = avg.as_mut() {
                let data = probs.data();
                for (seq, row) in avg.iter_mut().enumerate() {
                    let base = seq * len * len;
                    for (j, a) in row.iter_mut().enumerate() {
                        *a = *a + data[base + 1 + j];
                    }
                }
            }
            outs.push(probs.matmul(&v)?);
        }
        let mixed = Tensor::concat(&outs, 2)?;
        let out = linear(&mixed, g("out.weight"), g("out.bias"))?;
        let avg = avg.map(|rows| {
            rows.into_iter()
                .map(|row| {
                    let total: T = row.iter().copied().sum();
                    row.into_iter().map(|a| a / total).collect()
                })
                .collect()
        });
        Ok((out, avg))
    }
}

fn insert_norm<T: Scalar>(params: &mut ParamStore<T>, prefix: &str, d: usize) -> Result<()> {
    params.insert(format!("{prefix}.gain"), &[d], vec![T::one(); d])?;
    params.insert(format!("{prefix}.bias"), &[d], vec![T::zero(); d])?;
    Ok(())
}

/// Block matrices stay frozen through source-only training, so they are drawn
/// at fan-in scale: at `INIT_STD` the frozen attention is near uniform and the
/// value path shrinks the input signal to almost nothing.
fn block_std(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

fn insert_block<T: Scalar>(params: &mut ParamStore<T>, rng: &mut SeededRng, prefix: &str, c: &ModelConfig) -> Result<()> {
    let d = c.embed_dim;
    let hidden = c.mlp_hidden();
    let mut w = |params: &mut ParamStore<T>, name: &str, r: usize, cols: usize| -> Result<()> {
        params.insert(format!("{prefix}.{name}.weight"), &[r, cols], rng.truncated_normal(r * cols, block_std(r)))?;
        params.insert(format!("{prefix}.{name}.bias"), &[cols], vec![T::zero(); cols])?;
        Ok(())
    };
    insert_norm(params, &format!("{prefix}.ln1"), d)?;
    w(params, "attn.qkv", d, 3 * d)?;
    w(params, "attn.out", d, d)?;
    insert_norm(params, &format!("{prefix}.ln2"), d)?;
    w(params, "mlp.fc1", d, hidden)?;
    w(params, "mlp.fc2", hidden, d)?;
    Ok(())
}
