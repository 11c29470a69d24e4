use crate::error::{Result, TensorError};
use crate::loss::cross_entropy;
use crate::optim::Sgd;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Elementwise `|x|` with derivative `sign(x)` (0 at 0).
pub fn abs<T: Scalar>(x: &Tensor<T>) -> std::result::Result<Tensor<T>, TensorError> {
    let xs = x.to_vec();
    let out = xs.iter().map(|v| v.abs()).collect();
    Tensor::from_op("abs", x.shape().to_vec(), out, vec![x.clone()], move |g| {
        let gx = g
            .iter()
            .zip(&xs)
            .map(|(&gv, &v)| {
                if v > T::zero() {
                    gv
                } else if v < T::zero() {
                    -gv
                } else {
                    T::zero()
                }
            })
            .collect();
        vec![Some(gx)]
    })
}

/// Mean over rows of the L1 distance between the two softmax outputs.
pub fn mcd_discrepancy<T: Scalar>(logits1: &Tensor<T>, logits2: &Tensor<T>) -> std::result::Result<Tensor<T>, TensorError> {
    let rows = logits1.shape()[0];
    abs(&logits1.softmax()?.sub(&logits2.softmax()?)?)?
        .sum_all()?
        .scale(T::lit(1.0 / rows as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McdReport {
    pub source_ce: f64,
    pub discrepancy_max: f64,
    pub discrepancy_min: f64,
}

/// The pieces one MCD iteration needs from its caller.
pub struct McdStep<'a, T: Scalar> {
    /// Fresh forward of the encoder: `(source features, target features)`.
    pub features: &'a dyn Fn() -> Result<(Tensor<T>, Tensor<T>)>,
    /// Both classifier heads on a feature batch.
    pub heads: &'a dyn Fn(&Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)>,
    pub encoder: Vec<(&'a str, &'a Tensor<T>)>,
    pub classifiers: Vec<(&'a str, &'a Tensor<T>)>,
    pub source_labels: &'a [usize],
    /// Target pseudo-labels and the weight of their cross-entropy in step A.
    pub pseudo: Option<(&'a [usize], f64)>,
}

fn zero_all<T: Scalar>(sets: &[&[(&str, &Tensor<T>)]]) {
    for set in sets {
        for (_, t) in set.iter() {
            t.zero_grad();
        }
    }
}

/// A: encoder + both heads on source CE. B: heads only, source CE minus
/// target discrepancy. C: encoder only, target discrepancy.
pub fn mcd_step<T: Scalar>(step: &McdStep<'_, T>, opt: &mut Sgd<T>, lr: f64) -> Result<McdReport> {
    let all: Vec<(&str, &Tensor<T>)> = step.encoder.iter().chain(&step.classifiers).copied().collect();
    let sets = [step.encoder.as_slice(), step.classifiers.as_slice()];

    zero_all(&sets);
    let (fs, ft) = (step.features)()?;
    let (s1, s2) = (step.heads)(&fs)?;
    let mut loss = cross_entropy(&s1, step.source_labels)?.add(&cross_entropy(&s2, step.source_labels)?)?;
    let source_ce = loss.item().as_f64() / 2.0;
    if let Some((pseudo, w)) = step.pseudo {
        let (t1, t2) = (step.heads)(&ft)?;
        let tce = cross_entropy(&t1, pseudo)?.add(&cross_entropy(&t2, pseudo)?)?;
        loss = loss.add(&tce.scale(T::lit(w))?)?;
    }
    loss.backward()?;
    opt.step(all.iter().copied(), lr)?;

    zero_all(&sets);
    let (fs, ft) = (step.features)()?;
    let (fs, ft) = (fs.detach(), ft.detach());
    let (s1, s2) = (step.heads)(&fs)?;
    let (t1, t2) = (step.heads)(&ft)?;
    let disc = mcd_discrepancy(&t1, &t2)?;
    let discrepancy_max = disc.item().as_f64();
    let loss = cross_entropy(&s1, step.source_labels)?
        .add(&cross_entropy(&s2, step.source_labels)?)?
        .sub(&disc)?;
    loss.backward()?;
    opt.step(step.classifiers.iter().copied(), lr)?;

    zero_all(&sets);
    let (_, ft) = (step.features)()?;
    let (t1, t2) = (step.heads)(&ft)?;
    let disc = mcd_discrepancy(&t1, &t2)?;
    let discrepancy_min = disc.item().as_f64();
    disc.backward()?;
    opt.step(step.encoder.iter().copied(), lr)?;
    zero_all(&sets);

    Ok(McdReport {
        source_ce,
        discrepancy_max,
        discrepancy_min,
    })
}
