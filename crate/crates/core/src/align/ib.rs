use crate::error::TensorError;
use crate::model::broadcast_rows;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Smallest denominator allowed when normalizing correlations.
pub const DENOM_FLOOR: f64 = 1e-12;

/// Normalized `d_p × d_p` cross-correlation over `pair_count` pair rows.
#[derive(Debug, Clone)]
pub struct CrossCorrelation<T: Scalar> {
    pub matrix: Tensor<T>,
    pub pair_count: usize,
}

/// `1 / max(x, floor)`; the clamped region has zero derivative.
pub fn recip_clamped<T: Scalar>(x: &Tensor<T>, floor: T) -> Result<Tensor<T>, TensorError> {
    let xs = x.to_vec();
    let out: Vec<T> = xs.iter().map(|&v| T::one() / v.max(floor)).collect();
    Tensor::from_op("recip_clamped", x.shape().to_vec(), out, vec![x.clone()], move |g| {
        let gx = g
            .iter()
            .zip(&xs)
            .map(|(&gv, &v)| if v > floor { -gv / (v * v) } else { T::zero() })
            .collect();
        vec![Some(gx)]
    })
}

fn center<T: Scalar>(z: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let rows = z.shape()[0];
    let mean = z.mean_axis(0)?;
    z.sub(&broadcast_rows(&mean, rows)?.reshape(z.shape())?)
}

/// Mean-centers each feature column of both sides over the pair rows, then
/// `C_ij = Σ_b s_bi t_bj / (‖s_·i‖ ‖t_·j‖)` with the denominator floored at
/// [`DENOM_FLOOR`]. Returns `None` for fewer than two rows.
pub fn cross_correlation<T: Scalar>(
    source_rows: &Tensor<T>,
    target_rows: &Tensor<T>,
) -> Result<Option<CrossCorrelation<T>>, TensorError> {
    if source_rows.shape() != target_rows.shape() || source_rows.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "cross_correlation",
            lhs: source_rows.shape().to_vec(),
            rhs: target_rows.shape().to_vec(),
        });
    }
    let (b, d) = (source_rows.shape()[0], source_rows.shape()[1]);
    if b < 2 {
        return Ok(None);
    }
    let s = center(source_rows)?;
    let t = center(target_rows)?;
    let num = s.transpose()?.matmul(&t)?;
    let s_norm = s.square()?.sum_axis(0)?.sqrt()?.reshape(&[d, 1])?;
    let t_norm = t.square()?.sum_axis(0)?.sqrt()?.reshape(&[1, d])?;
    let inv = recip_clamped(&s_norm.matmul(&t_norm)?, T::lit(DENOM_FLOOR))?;
    Ok(Some(CrossCorrelation {
        matrix: num.mul(&inv)?,
        pair_count: b,
    }))
}

/// `Σ_i (1 − C_ii)² + λ Σ_i Σ_{j≠i} C_ij²`
pub fn ib_loss<T: Scalar>(cc: &CrossCorrelation<T>, lambda: f64) -> Result<Tensor<T>, TensorError> {
    if !(lambda >= 0.0) {
        return Err(TensorError::Invalid {
            op: "ib_loss",
            msg: format!("lambda must be non-negative, got {lambda}"),
        });
    }
    let d = cc.matrix.shape()[0];
    let mut eye = vec![T::zero(); d * d];
    let mut off = vec![T::one(); d * d];
    for i in 0..d {
        eye[i * d + i] = T::one();
        off[i * d + i] = T::zero();
    }
    let eye = Tensor::from_vec(&[d, d], eye)?;
    let off = Tensor::from_vec(&[d, d], off)?;
    let on_diag = eye.sub(&cc.matrix.mul(&eye)?)?.square()?.sum_all()?;
    let off_diag = cc.matrix.mul(&off)?.square()?.sum_all()?;
    on_diag.add(&off_diag.scale(T::lit(lambda))?)
}

/// `ce + α·ib`; a skipped alignment term contributes nothing.
pub fn total_loss<T: Scalar>(ce: &Tensor<T>, ib: Option<&Tensor<T>>, alpha: f64) -> Result<Tensor<T>, TensorError> {
    if !(alpha >= 0.0) {
        return Err(TensorError::Invalid {
            op: "total_loss",
            msg: format!("alpha must be non-negative, got {alpha}"),
        });
    }
    match ib {
        Some(ib) if alpha > 0.0 => ce.add(&ib.scale(T::lit(alpha))?),
        _ => Ok(ce.clone()),
    }
}
