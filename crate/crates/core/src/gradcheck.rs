//! Central finite differences, the oracle every analytic gradient is checked
//! against.

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate of `x`.
///
/// `f` receives constant tensors, so nothing here touches the autodiff path.
pub fn finite_difference_grad<T, F>(f: F, x: &Tensor<T>, step: f64) -> Result<Vec<T>, TensorError>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>, TensorError>,
{
    if !(step > 0.0) {
        return Err(TensorError::Invalid {
            op: "finite_difference_grad",
            msg: format!("step must be positive, got {step}"),
        });
    }
    let h = T::lit(step);
    let base = x.to_vec();
    let shape = x.shape().to_vec();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] = plus[i] + h;
        let mut minus = base.clone();
        minus[i] = minus[i] - h;
        let fp = f(&Tensor::from_vec(&shape, plus)?)?.item();
        let fm = f(&Tensor::from_vec(&shape, minus)?)?.item();
        out.push((fp - fm) / (h + h));
    }
    Ok(out)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn relative_error<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error on different lengths");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x.as_f64() - y.as_f64()));
    let scale = norm(&mut a.iter().map(|x| x.as_f64())).max(norm(&mut b.iter().map(|x| x.as_f64())));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Analytic gradient of `f` at `x`, via one backward sweep on a fresh leaf.
pub fn analytic_grad<T, F>(f: F, x: &Tensor<T>) -> Result<Vec<T>, TensorError>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>, TensorError>,
{
    let leaf = Tensor::param(x.shape(), x.to_vec())?;
    f(&leaf)?.backward()?;
    Ok(leaf.grad().unwrap_or_else(|| vec![T::zero(); leaf.numel()]))
}
