use crate::error::Result;
use crate::loss::cross_entropy;
use crate::model::{linear, ParamStore};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Identity forward; backward multiplies the upstream gradient by `−scale`.
pub fn grad_reverse<T: Scalar>(x: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    let s = T::lit(-scale);
    Ok(Tensor::from_op("grad_reverse", x.shape().to_vec(), x.to_vec(), vec![x.clone()], move |g| {
        vec![Some(g.iter().map(|&v| v * s).collect())]
    })?)
}

/// `2 / (1 + exp(−10p)) − 1` for training progress `p ∈ [0, 1]`.
pub fn grl_ramp(progress: f64) -> f64 {
    2.0 / (1.0 + (-10.0 * progress.clamp(0.0, 1.0)).exp()) - 1.0
}

/// Two-layer MLP predicting source (class 1) vs target (class 0).
#[derive(Debug, Clone)]
pub struct DomainClassifier<T: Scalar> {
    pub params: ParamStore<T>,
}

impl<T: Scalar> DomainClassifier<T> {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        let mut params = ParamStore::new();
        params.insert(
            "domain.fc1.weight",
            &[input_dim, hidden],
            rng.normal_vec(input_dim * hidden, 1.0 / (input_dim as f64).sqrt()),
        )?;
        params.insert("domain.fc1.bias", &[hidden], vec![T::zero(); hidden])?;
        params.insert(
            "domain.fc2.weight",
            &[hidden, 2],
            rng.normal_vec(hidden * 2, 1.0 / (hidden as f64).sqrt()),
        )?;
        params.insert("domain.fc2.bias", &[2], vec![T::zero(); 2])?;
        Ok(DomainClassifier { params })
    }

    /// All weights zero: every prediction is 50/50.
    pub fn zeroed(input_dim: usize, hidden: usize) -> Result<Self> {
        let mut params = ParamStore::new();
        params.insert("domain.fc1.weight", &[input_dim, hidden], vec![T::zero(); input_dim * hidden])?;
        params.insert("domain.fc1.bias", &[hidden], vec![T::zero(); hidden])?;
        params.insert("domain.fc2.weight", &[hidden, 2], vec![T::zero(); hidden * 2])?;
        params.insert("domain.fc2.bias", &[2], vec![T::zero(); 2])?;
        Ok(DomainClassifier { params })
    }

    pub fn logits(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let p = &self.params;
        let h = linear(features, p.get("domain.fc1.weight"), p.get("domain.fc1.bias"))?.relu()?;
        Ok(linear(&h, p.get("domain.fc2.weight"), p.get("domain.fc2.bias"))?)
    }
}

#[derive(Debug, Clone)]
pub struct AdversarialLoss<T: Scalar> {
    /// Domain cross-entropy on reversed features. Backpropagating it trains
    /// the classifier and pushes the encoder the opposite way.
    pub domain_classifier_loss: Tensor<T>,
    /// What the encoder effectively minimizes: `−grl_scale ·` the domain loss.
    pub feature_loss: f64,
}

/// `domain_flags[i]` is true for source rows.
pub fn adversarial_losses<T: Scalar>(
    features: &Tensor<T>,
    domain_flags: &[bool],
    grl_scale: f64,
    head: &DomainClassifier<T>,
) -> Result<AdversarialLoss<T>> {
    let reversed = grad_reverse(features, grl_scale)?;
    let labels: Vec<usize> = domain_flags.iter().map(|&s| usize::from(s)).collect();
    let loss = cross_entropy(&head.logits(&reversed)?, &labels)?;
    let value = loss.item().as_f64();
    Ok(AdversarialLoss {
        domain_classifier_loss: loss,
        feature_loss: -grl_scale * value,
    })
}
