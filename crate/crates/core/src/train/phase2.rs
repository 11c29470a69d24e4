//! Adaptation with a frozen spatial encoder: source cross-entropy plus one
//! alignment objective, with cached spatial features.

use super::config::{LabelMode, Method, Phase2Config, PseudoRefresh};
use super::eval::{encode_split, evaluate_cached, predict_cached, FrameCache};
use super::phase1::{frozen_hashes, numeric, PhaseOutcome};
use super::record::EpochRecord;
use super::DomainData;
use crate::align::{build_pairs, cross_correlation, ib_loss, pseudo_label, total_loss, FeatureQueue, PairIndex};
use crate::baselines::{
    adversarial_losses, grl_ramp, infonce_cross_domain_loss, mcd_step, mmd_loss, target_pseudo_ce,
    vicreg_cross_domain_loss, DomainClassifier, McdStep,
};
use crate::data::batch_iterator;
use crate::error::Result;
use crate::loss::cross_entropy;
use crate::model::{linear, ParamStore, Phase, VideoTransformer};
use crate::optim::{cosine_lr, Sgd, SgdConfig};
use crate::rng::{streams, SeededRng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Excluded targets carry this label so they never match a source.
const NO_LABEL: usize = usize::MAX;

struct Caches<T: Scalar> {
    source_train: FrameCache<T>,
    target_train: FrameCache<T>,
    source_test: FrameCache<T>,
    target_test: FrameCache<T>,
}

/// Auxiliary heads some baselines train alongside the model.
enum AuxHeads<T: Scalar> {
    None,
    Domain(DomainClassifier<T>),
    SecondClassifier(ParamStore<T>),
}

impl<T: Scalar> AuxHeads<T> {
    fn params(&self) -> Vec<(&str, &Tensor<T>)> {
        match self {
            AuxHeads::None => Vec::new(),
            AuxHeads::Domain(d) => d.params.iter().collect(),
            AuxHeads::SecondClassifier(p) => p.iter().collect(),
        }
    }
}

fn build_aux<T: Scalar>(model: &VideoTransformer<T>, cfg: &Phase2Config, seed: u64) -> Result<AuxHeads<T>> {
    let mut rng = SeededRng::stream(seed, streams::BASELINE_HEADS);
    let d = model.config.embed_dim;
    Ok(match cfg.method {
        Method::Adversarial => AuxHeads::Domain(DomainClassifier::new(d, cfg.domain_hidden, &mut rng)?),
        Method::Mcd => {
            // The second head starts as a perturbed copy of the trained one.
            let mut p = ParamStore::new();
            for name in ["classifier.weight", "classifier.bias"] {
                let src = model.params.get(name);
                let noise: Vec<T> = rng.normal_vec(src.numel(), 0.02);
                let data = src.data().iter().zip(noise).map(|(&a, b)| a + b).collect();
                p.insert(format!("mcd.{name}"), src.shape(), data)?;
            }
            AuxHeads::SecondClassifier(p)
        }
        _ => AuxHeads::None,
    })
}

struct StepTerms {
    ce: f64,
    align: Option<f64>,
    target_ce: Option<f64>,
    pairs: Option<usize>,
}

/// Labels the alignment term uses for the whole target train split this epoch.
fn epoch_target_labels<T: Scalar>(
    model: &VideoTransformer<T>,
    caches: &Caches<T>,
    truth: &[usize],
    cfg: &Phase2Config,
    seed: u64,
    epoch: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let n = truth.len();
    Ok(match cfg.label_mode {
        LabelMode::GroundTruth => (truth.to_vec(), vec![1.0; n]),
        LabelMode::Random => {
            let mut rng = SeededRng::stream(seed ^ (epoch as u64).wrapping_mul(0x5851_F42D_4C95_7F2D), streams::RANDOM_LABELS);
            ((0..n).map(|_| rng.below(model.config.num_classes)).collect(), vec![1.0; n])
        }
        LabelMode::Pseudo => {
            let (labels, conf) = predict_cached(model, &caches.target_train)?;
            (labels, conf.into_iter().map(|c| c.as_f64()).collect())
        }
    })
}

fn accuracy(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

/// Runs adaptation in place. `source_only` is a no-op control that only
/// evaluates. The projection head is redrawn from `seed` before any other
/// method starts.
pub fn phase2_train<T: Scalar>(
    model: &mut VideoTransformer<T>,
    data: &DomainData,
    cfg: &Phase2Config,
    seed: u64,
) -> Result<PhaseOutcome> {
    cfg.validate()?;
    model.apply_phase(Phase::Adaptation)?;
    if cfg.method != Method::SourceOnly {
        model.reseed_projection(seed)?;
    }
    let frozen_before = frozen_hashes(model);
    let caches = Caches {
        source_train: encode_split(model, &data.source_train)?,
        target_train: encode_split(model, &data.target_train)?,
        source_test: encode_split(model, &data.source_test)?,
        target_test: encode_split(model, &data.target_test)?,
    };
    let source_labels = data.source_train.labels();
    let target_truth = data.target_train.labels();
    let (source_test_truth, target_test_truth) = (data.source_test.labels(), data.target_test.labels());

    let eval = |model: &VideoTransformer<T>, rec: &mut EpochRecord| -> Result<_> {
        let st = evaluate_cached(model, &caches.source_train, &source_labels)?;
        let s = evaluate_cached(model, &caches.source_test, &source_test_truth)?;
        let t = evaluate_cached(model, &caches.target_test, &target_test_truth)?;
        rec.source_train_acc = Some(st.accuracy);
        rec.source_test_acc = Some(s.accuracy);
        rec.target_test_acc = Some(t.accuracy);
        Ok((s, t))
    };

    if cfg.method == Method::SourceOnly {
        let mut rec = EpochRecord::new(cfg.epochs, 2, Method::SourceOnly, seed);
        let (s, t) = eval(model, &mut rec)?;
        return Ok(PhaseOutcome {
            records: vec![rec],
            frozen_after: frozen_hashes(model),
            frozen_before,
            source_test: Some(s),
            target_test: Some(t),
        });
    }

    let aux = build_aux(model, cfg, seed)?;
    let mut opt = Sgd::new(SgdConfig {
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    });
    let capacity = cfg.queue_capacity.min(data.source_train.len());
    let mut queue = FeatureQueue::<T>::new(capacity, model.config.projection_dim);
    let mut pair_rng = SeededRng::stream(seed, streams::PAIR_SUBSAMPLE);
    let steps_per_epoch = data.source_train.len().div_ceil(cfg.batch_size_per_domain);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut records = Vec::with_capacity(cfg.epochs);
    let (mut source_test, mut target_test) = (None, None);

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr, epoch, cfg.epochs)?;
        let (epoch_labels, epoch_conf) = epoch_target_labels(model, &caches, &target_truth, cfg, seed, epoch)?;
        let source_batches = batch_iterator(data.source_train.len(), cfg.batch_size_per_domain, seed, streams::PHASE2_SHUFFLE, epoch);
        let target_batches = batch_iterator(
            data.target_train.len(),
            cfg.batch_size_per_domain,
            seed ^ 0x7461_7267_6574,
            streams::PHASE2_SHUFFLE,
            epoch,
        );
        queue.evict_stale(epoch, cfg.queue_max_age);

        let mut rec = EpochRecord::new(epoch, 2, cfg.method, seed);
        rec.pseudo_label_acc = Some(accuracy(&epoch_labels, &target_truth));
        let (mut ce_sum, mut align_sum, mut tce_sum) = (0.0, 0.0, 0.0);
        let (mut align_steps, mut tce_steps, mut pair_sum, mut zero_pair_steps) = (0usize, 0usize, 0usize, 0usize);

        for (b, s_idx) in source_batches.iter().enumerate() {
            let t_idx = &target_batches[b % target_batches.len()];
            let step_no = epoch * steps_per_epoch + b;
            let ys: Vec<usize> = s_idx.iter().map(|&i| source_labels[i]).collect();
            let s_frames = caches.source_train.batch(s_idx)?;
            let t_frames = caches.target_train.batch(t_idx)?;
            let mut step = || -> Result<StepTerms> {
                model.params.zero_grad();
                for (_, p) in aux.params() {
                    p.zero_grad();
                }
                if cfg.method == Method::Mcd {
                    return mcd_iteration(model, &aux, cfg, &s_frames, &t_frames, &ys, t_idx, &epoch_labels, &mut opt, lr);
                }
                let out_s = model.forward_from_frames(&s_frames)?;
                let out_t = model.forward_from_frames(&t_frames)?;
                let ce = cross_entropy(&out_s.logits, &ys)?;
                let mut terms = StepTerms { ce: ce.item().as_f64(), align: None, target_ce: None, pairs: None };

                let (batch_labels, batch_conf): (Vec<usize>, Vec<f64>) = match (cfg.label_mode, cfg.pseudo_refresh) {
                    (LabelMode::Pseudo, PseudoRefresh::Batch) => {
                        let (l, c) = pseudo_label(&out_t.logits.detach());
                        (l, c.into_iter().map(|v| v.as_f64()).collect())
                    }
                    _ => (t_idx.iter().map(|&i| epoch_labels[i]).collect(), t_idx.iter().map(|&i| epoch_conf[i]).collect()),
                };
                let pair_labels: Vec<usize> = batch_labels
                    .iter()
                    .zip(&batch_conf)
                    .map(|(&l, &c)| if c >= cfg.confidence_threshold { l } else { NO_LABEL })
                    .collect();

                let align: Option<Tensor<T>> = match cfg.method {
                    Method::Udavt | Method::Vicreg => {
                        let queue_labels = if cfg.use_queue { queue.labels() } else { Vec::new() };
                        let mut pairs: PairIndex = build_pairs(&ys, &queue_labels, &pair_labels);
                        pairs.subsample(cfg.pair_cap, &mut pair_rng);
                        terms.pairs = Some(pairs.len());
                        let zs = pairs.source_rows(&out_s.projection, &queue)?;
                        let zt = pairs.target_rows(&out_t.projection)?;
                        if cfg.method == Method::Udavt {
                            match cross_correlation(&zs, &zt)? {
                                Some(cc) => Some(ib_loss(&cc, cfg.lambda)?),
                                None => None,
                            }
                        } else {
                            vicreg_cross_domain_loss(&zs, &zt, cfg.vicreg.into())?
                        }
                    }
                    Method::Infonce => {
                        let kept: Vec<usize> = (0..pair_labels.len()).filter(|&i| pair_labels[i] != NO_LABEL).collect();
                        if kept.is_empty() {
                            None
                        } else {
                            let zt = crate::align::gather_rows(&out_t.projection, &kept.iter().map(|&i| Some(i)).collect::<Vec<_>>())?;
                            let tl: Vec<usize> = kept.iter().map(|&i| pair_labels[i]).collect();
                            Some(infonce_cross_domain_loss(&out_s.projection, &ys, &zt, &tl, cfg.infonce_temperature)?)
                        }
                    }
                    Method::Mmd => Some(mmd_loss(&out_s.video_feature, &out_t.video_feature)?),
                    Method::Adversarial => {
                        let AuxHeads::Domain(head) = &aux else { unreachable!("adversarial head") };
                        let feats = Tensor::concat(&[out_s.video_feature.clone(), out_t.video_feature.clone()], 0)?;
                        let flags: Vec<bool> = (0..feats.shape()[0]).map(|i| i < ys.len()).collect();
                        let grl = grl_ramp(step_no as f64 / total_steps.max(1) as f64);
                        Some(adversarial_losses(&feats, &flags, grl, head)?.domain_classifier_loss)
                    }
                    Method::Mcd | Method::SourceOnly => unreachable!("handled above"),
                };
                let weight = match cfg.method {
                    Method::Udavt | Method::Infonce | Method::Vicreg => cfg.alpha,
                    _ => cfg.baseline_weight,
                };
                if let Some(a) = &align {
                    terms.align = Some(a.item().as_f64());
                }
                let mut loss = total_loss(&ce, align.as_ref(), weight)?;
                if cfg.method.is_baseline() || cfg.udavt_target_ce {
                    let kept: Vec<usize> = (0..pair_labels.len()).filter(|&i| pair_labels[i] != NO_LABEL).collect();
                    if !kept.is_empty() {
                        let logits = crate::align::gather_rows(&out_t.logits, &kept.iter().map(|&i| Some(i)).collect::<Vec<_>>())?;
                        let labels: Vec<usize> = kept.iter().map(|&i| pair_labels[i]).collect();
                        let tce = target_pseudo_ce(&logits, &labels, cfg.target_ce_weight)?;
                        terms.target_ce = Some(tce.item().as_f64());
                        loss = loss.add(&tce)?;
                    }
                }
                loss.backward()?;
                let params: Vec<(&str, &Tensor<T>)> = model.params.trainable().chain(aux.params()).collect();
                opt.step(params, lr)?;
                if cfg.use_queue && matches!(cfg.method, Method::Udavt | Method::Vicreg) {
                    queue.push(&out_s.projection.detach(), &ys, epoch);
                }
                Ok(terms)
            };
            let terms = step().map_err(|e| numeric(2, epoch, b, e))?;
            ce_sum += terms.ce;
            if let Some(a) = terms.align {
                align_sum += a;
                align_steps += 1;
            }
            if let Some(t) = terms.target_ce {
                tce_sum += t;
                tce_steps += 1;
            }
            if let Some(p) = terms.pairs {
                pair_sum += p;
                if p < 2 {
                    zero_pair_steps += 1;
                }
            }
        }
        let steps = source_batches.len();
        rec.losses.insert("ce".into(), ce_sum / steps as f64);
        if align_steps > 0 {
            rec.losses.insert("align".into(), align_sum / align_steps as f64);
        }
        if tce_steps > 0 {
            rec.losses.insert("target_ce".into(), tce_sum / tce_steps as f64);
        }
        if matches!(cfg.method, Method::Udavt | Method::Vicreg) {
            rec.mean_pair_count = Some(pair_sum as f64 / steps as f64);
            rec.queue_fill = Some(queue.len());
            let frac = zero_pair_steps as f64 / steps as f64;
            rec.zero_pair_fraction = Some(frac);
            if frac > 0.5 {
                rec.warnings.push(format!("no usable pairs in {:.0}% of steps", frac * 100.0));
            }
        }
        if epoch + 1 == cfg.epochs || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) {
            let (s, t) = eval(model, &mut rec)?;
            source_test = Some(s);
            target_test = Some(t);
        }
        log::debug!("phase 2 epoch {epoch}: {:?}", rec);
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

#[allow(clippy::too_many_arguments)]
fn mcd_iteration<T: Scalar>(
    model: &VideoTransformer<T>,
    aux: &AuxHeads<T>,
    cfg: &Phase2Config,
    s_frames: &Tensor<T>,
    t_frames: &Tensor<T>,
    ys: &[usize],
    t_idx: &[usize],
    epoch_labels: &[usize],
    opt: &mut Sgd<T>,
    lr: f64,
) -> Result<StepTerms> {
    let AuxHeads::SecondClassifier(c2) = aux else { unreachable!("mcd head") };
    let features = || -> Result<(Tensor<T>, Tensor<T>)> {
        let (fs, _) = model.temporal_forward(s_frames)?;
        let (ft, _) = model.temporal_forward(t_frames)?;
        Ok((fs, ft))
    };
    let heads = |f: &Tensor<T>| -> Result<(Tensor<T>, Tensor<T>)> {
        let l1 = model.classify(f)?;
        let l2 = linear(f, c2.get("mcd.classifier.weight"), c2.get("mcd.classifier.bias"))?;
        Ok((l1, l2))
    };
    let pseudo: Vec<usize> = t_idx.iter().map(|&i| epoch_labels[i]).collect();
    let encoder: Vec<(&str, &Tensor<T>)> = model.params.trainable().filter(|(n, _)| n.starts_with("temporal.")).collect();
    let mut classifiers: Vec<(&str, &Tensor<T>)> = model.params.trainable().filter(|(n, _)| n.starts_with("classifier.")).collect();
    classifiers.extend(c2.iter());
    let step = McdStep {
        features: &features,
        heads: &heads,
        encoder,
        classifiers,
        source_labels: ys,
        pseudo: Some((&pseudo, cfg.target_ce_weight)),
    };
    let report = mcd_step(&step, opt, lr)?;
    Ok(StepTerms {
        ce: report.source_ce,
        align: Some(report.discrepancy_min),
        target_ce: None,
        pairs: None,
    })
}
