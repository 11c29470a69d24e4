use crate::align::recip_clamped;
use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Divides each row by its Euclidean norm.
pub fn l2_normalize_rows<T: Scalar>(z: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (n, d) = (z.shape()[0], z.shape()[1]);
    let norms = z.square()?.sum_axis(1)?.sqrt()?.reshape(&[n, 1])?;
    let inv = recip_clamped(&norms, T::lit(1e-12))?.matmul(&Tensor::ones(&[1, d]))?;
    z.mul(&inv)
}

/// `−Σ_anchors mean_{p ∈ P(a)} log softmax(sim(a, ·)/τ)[p]` over anchors
/// with at least one positive, divided by their count.
///
/// Candidates of an anchor are exactly the instances of the other domain;
/// positives are the candidates whose label equals the anchor's.
fn directional<T: Scalar>(
    sim: &Tensor<T>,
    anchor_labels: &[usize],
    candidate_labels: &[usize],
) -> Result<(Option<Tensor<T>>, usize), TensorError> {
    let (a, c) = (anchor_labels.len(), candidate_labels.len());
    let mut weights = vec![T::zero(); a * c];
    let mut anchors = 0;
    for (i, &la) in anchor_labels.iter().enumerate() {
        let positives = candidate_labels.iter().filter(|&&lc| lc == la).count();
        if positives == 0 {
            continue;
        }
        anchors += 1;
        let w = T::lit(-1.0 / positives as f64);
        for (j, &lc) in candidate_labels.iter().enumerate() {
            if lc == la {
                weights[i * c + j] = w;
            }
        }
    }
    if anchors == 0 {
        return Ok((None, 0));
    }
    let logp = sim.softmax()?.log()?;
    let term = logp.mul(&Tensor::from_vec(&[a, c], weights)?)?.sum_all()?;
    Ok((Some(term), anchors))
}

pub fn infonce_cross_domain_loss<T: Scalar>(
    z_source: &Tensor<T>,
    labels: &[usize],
    z_target: &Tensor<T>,
    pseudo_labels: &[usize],
    temperature: f64,
) -> Result<Tensor<T>, TensorError> {
    if !(temperature > 0.0) {
        return Err(TensorError::Invalid {
            op: "infonce",
            msg: format!("temperature must be positive, got {temperature}"),
        });
    }
    if z_source.shape()[0] != labels.len() || z_target.shape()[0] != pseudo_labels.len() {
        return Err(TensorError::ShapeMismatch {
            op: "infonce",
            lhs: z_source.shape().to_vec(),
            rhs: z_target.shape().to_vec(),
        });
    }
    let s = l2_normalize_rows(z_source)?;
    let t = l2_normalize_rows(z_target)?;
    let sim = s.matmul(&t.transpose()?)?.scale(T::lit(1.0 / temperature))?;
    let (from_source, n_s) = directional(&sim, labels, pseudo_labels)?;
    let (from_target, n_t) = directional(&sim.transpose()?, pseudo_labels, labels)?;
    let anchors = n_s + n_t;
    let total = match (from_source, from_target) {
        (Some(a), Some(b)) => a.add(&b)?,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => return Ok(Tensor::scalar(T::zero())),
    };
    total.scale(T::lit(1.0 / anchors as f64))
}
