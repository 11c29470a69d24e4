use crate::error::TensorError;
use crate::model::broadcast_rows;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Added to the variance before the square root in the hinge.
const VAR_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VicRegWeights {
    pub invariance: f64,
    pub variance: f64,
    pub covariance: f64,
}

impl Default for VicRegWeights {
    fn default() -> Self {
        VicRegWeights {
            invariance: 25.0,
            variance: 25.0,
            covariance: 1.0,
        }
    }
}

fn centered<T: Scalar>(z: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let mean = z.mean_axis(0)?;
    z.sub(&broadcast_rows(&mean, z.shape()[0])?)
}

/// `(Σ_j relu(1 − std_j), Σ_{i≠j} cov_ij² / d)` for one side.
fn variance_covariance<T: Scalar>(z: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    let (b, d) = (z.shape()[0], z.shape()[1]);
    let c = centered(z)?;
    let unbias = T::lit(1.0 / (b - 1) as f64);
    let var = c.square()?.sum_axis(0)?.scale(unbias)?;
    let std = var.add_scalar(T::lit(VAR_EPS))?.sqrt()?;
    let hinge = std.scale(-T::one())?.add_scalar(T::one())?.relu()?.sum_all()?;
    let cov = c.transpose()?.matmul(&c)?.scale(unbias)?;
    let mut off = vec![T::one(); d * d];
    for i in 0..d {
        off[i * d + i] = T::zero();
    }
    let cov_term = cov
        .mul(&Tensor::from_vec(&[d, d], off)?)?
        .square()?
        .sum_all()?
        .scale(T::lit(1.0 / d as f64))?;
    Ok((hinge, cov_term))
}

/// VICReg over paired rows: element-mean squared difference, per-side
/// standard-deviation hinge and per-side off-diagonal covariance penalty.
/// Returns `None` for fewer than two rows.
pub fn vicreg_cross_domain_loss<T: Scalar>(
    source_rows: &Tensor<T>,
    target_rows: &Tensor<T>,
    w: VicRegWeights,
) -> Result<Option<Tensor<T>>, TensorError> {
    if source_rows.shape() != target_rows.shape() || source_rows.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "vicreg",
            lhs: source_rows.shape().to_vec(),
            rhs: target_rows.shape().to_vec(),
        });
    }
    if source_rows.shape()[0] < 2 {
        return Ok(None);
    }
    let inv = source_rows.sub(target_rows)?.square()?.mean_all()?;
    let (var_s, cov_s) = variance_covariance(source_rows)?;
    let (var_t, cov_t) = variance_covariance(target_rows)?;
    let loss = inv
        .scale(T::lit(w.invariance))?
        .add(&var_s.add(&var_t)?.scale(T::lit(w.variance))?)?
        .add(&cov_s.add(&cov_t)?.scale(T::lit(w.covariance))?)?;
    Ok(Some(loss))
}
