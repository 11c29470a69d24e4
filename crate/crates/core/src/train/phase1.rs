use std::collections::BTreeMap;

use super::config::{Method, Phase1Config};
use super::eval::{evaluate, EvalResult};
use super::record::EpochRecord;
use super::DomainData;
use crate::align::pseudo_label;
use crate::data::batch_iterator;
use crate::error::{Error, Result, TensorError};
use crate::loss::cross_entropy;
use crate::model::{Phase, VideoTransformer};
use crate::optim::{cosine_lr, Sgd, SgdConfig};
use crate::rng::streams;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub records: Vec<EpochRecord>,
    /// Hashes of every parameter frozen during the phase, before and after.
    pub frozen_before: BTreeMap<String, String>,
    pub frozen_after: BTreeMap<String, String>,
    pub source_test: Option<EvalResult>,
    pub target_test: Option<EvalResult>,
}

impl PhaseOutcome {
    pub fn frozen_unchanged(&self) -> bool {
        self.frozen_before == self.frozen_after
    }
}

pub fn frozen_hashes<T: Scalar>(model: &VideoTransformer<T>) -> BTreeMap<String, String> {
    model
        .params
        .names()
        .filter(|n| model.params.is_frozen(n))
        .map(|n| (n.to_string(), model.params.hash_of(n)))
        .collect()
}

pub(crate) fn numeric(phase: u8, epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { op }) => Error::Numeric(format!(
            "phase {phase} epoch {epoch} batch {batch}: non-finite value in {op}"
        )),
        other => other,
    }
}

fn should_eval(every: usize, epoch: usize, epochs: usize) -> bool {
    epoch + 1 == epochs || (every > 0 && (epoch + 1) % every == 0)
}

/// Source-only partial fine-tuning with cross-entropy.
pub fn phase1_train<T: Scalar>(
    model: &mut VideoTransformer<T>,
    data: &DomainData,
    cfg: &Phase1Config,
    seed: u64,
) -> Result<PhaseOutcome> {
    cfg.validate()?;
    model.apply_phase(Phase::SourceOnly)?;
    let frozen_before = frozen_hashes(model);
    let mut opt = Sgd::new(SgdConfig {
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    });
    let source = &data.source_train;
    let labels = source.labels();
    let mut records = Vec::with_capacity(cfg.epochs);
    let (mut source_test, mut target_test) = (None, None);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr, epoch, cfg.epochs)?;
        let batches = batch_iterator(source.len(), cfg.batch_size, seed, streams::PHASE1_SHUFFLE, epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, idx) in batches.iter().enumerate() {
            let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut step = || -> Result<f64> {
                model.params.zero_grad();
                let frames = model.encode_frames(&source.videos(idx))?;
                let (feat, _) = model.temporal_forward(&frames)?;
                let logits = model.classify(&feat)?;
                let (pred, _) = pseudo_label(&logits);
                correct += pred.iter().zip(&ys).filter(|(p, y)| p == y).count();
                let ce = cross_entropy(&logits, &ys)?;
                ce.backward()?;
                opt.step(model.params.trainable(), lr)?;
                Ok(ce.item().as_f64())
            };
            loss_sum += step().map_err(|e| numeric(1, epoch, b, e))?;
        }
        let mut rec = EpochRecord::new(epoch, 1, Method::SourceOnly, seed);
        rec.losses.insert("ce".into(), loss_sum / batches.len() as f64);
        rec.source_train_acc = Some(correct as f64 / source.len() as f64);
        if should_eval(cfg.eval_every, epoch, cfg.epochs) {
            let s = evaluate(model, &data.source_test)?;
            let t = evaluate(model, &data.target_test)?;
            rec.source_test_acc = Some(s.accuracy);
            rec.target_test_acc = Some(t.accuracy);
            source_test = Some(s);
            target_test = Some(t);
        }
        log::debug!("phase 1 epoch {epoch}: {:?}", rec);
        records.push(rec);
    }
    model.params.zero_grad();
    Ok(PhaseOutcome {
        records,
        frozen_after: frozen_hashes(model),
        frozen_before,
        source_test,
        target_test,
    })
}
