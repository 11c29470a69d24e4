use serde::{Deserialize, Serialize};

use crate::align::pseudo_label;
use crate::data::Dataset;
use crate::error::Result;
use crate::model::VideoTransformer;
use crate::scalar::Scalar;
use crate::tensor::{no_grad, Tensor};

/// Videos per chunk when encoding a whole split.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

impl EvalResult {
    pub fn from_predictions(predicted: &[usize], truth: &[usize], classes: usize) -> Self {
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&p, &t) in predicted.iter().zip(truth) {
            confusion[t][p] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[c] as f64 / n as f64
                }
            })
            .collect();
        EvalResult {
            accuracy: if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 },
            per_class,
            confusion,
        }
    }
}

/// Spatial features `[N, T, d]` for a whole split, without a graph.
pub fn encode_split<T: Scalar>(model: &VideoTransformer<T>, data: &Dataset) -> Result<FrameCache<T>> {
    no_grad(|| {
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut rows = Vec::with_capacity(data.len());
        for chunk in idx.chunks(EVAL_CHUNK) {
            let feats = model.encode_frames(&data.videos(chunk))?;
            let per = feats.numel() / chunk.len();
            let d = feats.data();
            rows.extend(d.chunks(per).map(|c| c.to_vec()));
        }
        Ok(FrameCache {
            frames: model.config.frames_per_video,
            dim: model.config.embed_dim,
            rows,
        })
    })
}

/// Precomputed spatial features, valid while the spatial encoder is frozen.
#[derive(Debug, Clone)]
pub struct FrameCache<T: Scalar> {
    pub frames: usize,
    pub dim: usize,
    pub rows: Vec<Vec<T>>,
}

impl<T: Scalar> FrameCache<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(idx.len() * self.frames * self.dim);
        for &i in idx {
            data.extend_from_slice(&self.rows[i]);
        }
        Ok(Tensor::from_vec(&[idx.len(), self.frames, self.dim], data)?)
    }
}

/// Predicted labels and confidences for every cached video.
pub fn predict_cached<T: Scalar>(model: &VideoTransformer<T>, cache: &FrameCache<T>) -> Result<(Vec<usize>, Vec<T>)> {
    no_grad(|| {
        let idx: Vec<usize> = (0..cache.len()).collect();
        let mut labels = Vec::with_capacity(cache.len());
        let mut conf = Vec::with_capacity(cache.len());
        for chunk in idx.chunks(EVAL_CHUNK * 4) {
            let (feat, _) = model.temporal_forward(&cache.batch(chunk)?)?;
            let (l, c) = pseudo_label(&model.classify(&feat)?);
            labels.extend(l);
            conf.extend(c);
        }
        Ok((labels, conf))
    })
}

pub fn evaluate_cached<T: Scalar>(model: &VideoTransformer<T>, cache: &FrameCache<T>, truth: &[usize]) -> Result<EvalResult> {
    let (pred, _) = predict_cached(model, cache)?;
    Ok(EvalResult::from_predictions(&pred, truth, model.config.num_classes))
}

/// Top-1 accuracy, per-class accuracy and confusion matrix on a dataset.
pub fn evaluate<T: Scalar>(model: &VideoTransformer<T>, data: &Dataset) -> Result<EvalResult> {
    let cache = encode_split(model, data)?;
    evaluate_cached(model, &cache, &data.labels())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_rows_sum_to_class_counts() {
        let truth = [0, 0, 1, 2, 2, 2];
        let pred = [0, 1, 1, 2, 0, 2];
        let r = EvalResult::from_predictions(&pred, &truth, 3);
        let sums: Vec<usize> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(sums, vec![2, 1, 3]);
        assert!((r.accuracy - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.per_class, vec![0.5, 1.0, 2.0 / 3.0]);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let truth = [0, 1, 2, 1];
        assert_eq!(EvalResult::from_predictions(&truth, &truth, 3).accuracy, 1.0);
    }
}
