use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::exp;
use crate::align::recip_clamped;

/// Bandwidths as multiples of the median pairwise squared distance.
pub const BANDWIDTH_MULTIPLIERS: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

/// Pairwise squared Euclidean distances between the rows of `z`.
fn squared_distances<T: Scalar>(z: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let n = z.shape()[0];
    let gram = z.matmul(&z.transpose()?)?;
    let sq = z.square()?.sum_axis(1)?;
    let col = sq.reshape(&[n, 1])?.matmul(&Tensor::ones(&[1, n]))?;
    let row = Tensor::ones(&[n, 1]).matmul(&sq.reshape(&[1, n])?)?;
    col.add(&row)?.sub(&gram.scale(T::lit(2.0))?)
}

/// Weights selecting the median of the strict upper triangle of the
/// `total × total` matrix `d`: one entry at 1, or the two middle entries at ½.
fn median_selector(d: &[f64], total: usize) -> (f64, Vec<f64>) {
    let mut upper: Vec<(f64, usize)> = Vec::with_capacity(total * (total.saturating_sub(1)) / 2);
    for i in 0..total {
        for j in i + 1..total {
            upper.push((d[i * total + j], i * total + j));
        }
    }
    let mut sel = vec![0.0; total * total];
    if upper.is_empty() {
        return (0.0, sel);
    }
    upper.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = upper.len();
    let picks: &[(f64, usize)] = if n % 2 == 1 { &upper[n / 2..n / 2 + 1] } else { &upper[n / 2 - 1..n / 2 + 1] };
    let w = 1.0 / picks.len() as f64;
    for &(_, k) in picks {
        sel[k] = w;
    }
    (picks.iter().map(|p| p.0).sum::<f64>() * w, sel)
}

/// Biased multi-kernel RBF MMD² between source and target rows.
///
/// Kernels are `exp(−‖x−y‖² / (m·med))` for `m` in
/// [`BANDWIDTH_MULTIPLIERS`], summed; `med` is the median squared distance
/// over distinct pairs of the joint batch (1 if all vanish), differentiated
/// through like every other entry.
pub fn mmd_loss<T: Scalar>(source: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (n, m) = (source.shape()[0], target.shape()[0]);
    if n == 0 || m == 0 || source.shape()[1..] != target.shape()[1..] {
        return Err(TensorError::ShapeMismatch {
            op: "mmd_loss",
            lhs: source.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let joint = Tensor::concat(&[source.clone(), target.clone()], 0)?;
    let total = n + m;
    let dist = squared_distances(&joint)?;
    let (med, sel) = {
        let d: Vec<f64> = dist.data().iter().map(|v| v.as_f64()).collect();
        median_selector(&d, total)
    };
    // Reciprocal bandwidth as a [total, total] tensor; it stays on the
    // gradient path unless every distance vanishes.
    let inv_med = if med > 0.0 {
        let sel = Tensor::from_vec(&[total, total], sel.into_iter().map(T::lit).collect())?;
        let m = recip_clamped(&dist.mul(&sel)?.sum_all()?.reshape(&[1, 1])?, T::lit(1e-12))?;
        Tensor::ones(&[total, 1]).matmul(&m)?.matmul(&Tensor::ones(&[1, total]))?
    } else {
        Tensor::ones(&[total, total])
    };
    let mut weights = vec![T::zero(); total * total];
    let (wxx, wyy, wxy) = (
        1.0 / (n * n) as f64,
        1.0 / (m * m) as f64,
        -1.0 / (n * m) as f64,
    );
    for i in 0..total {
        for j in 0..total {
            let w = match (i < n, j < n) {
                (true, true) => wxx,
                (false, false) => wyy,
                _ => wxy,
            };
            weights[i * total + j] = T::lit(w);
        }
    }
    let weights = Tensor::from_vec(&[total, total], weights)?;
    let mut kernel: Option<Tensor<T>> = None;
    for mult in BANDWIDTH_MULTIPLIERS {
        let k = exp(&dist.mul(&inv_med)?.scale(T::lit(-1.0 / mult))?)?;
        kernel = Some(match kernel {
            Some(acc) => acc.add(&k)?,
            None => k,
        });
    }
    kernel.expect("at least one bandwidth").mul(&weights)?.sum_all()
}
