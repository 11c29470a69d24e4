//! Kernel set: matmul, transpose, add, sub, mul, scale, reductions, relu,
//! gelu, softmax, log, square, sqrt, layer-norm, concat, slice, reshape.

use super::{check_finite, numel, Tensor, TensorResult};
use crate::error::TensorError;
use crate::scalar::Scalar;

fn mismatch<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid { op, msg: msg.into() }
}

/// `c[m,n] += a[m,k] · b[k,n]`
fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm_acc(m, k, n, (a, k as isize, 1), (b, n as isize, 1), (c, n as isize, 1));
}

/// `c[m,k] += g[m,n] · b[k,n]ᵀ`
fn gemm_nt_acc<T: Scalar>(g: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm_acc(m, n, k, (g, n as isize, 1), (b, 1, n as isize), (c, k as isize, 1));
}

/// `c[k,n] += a[m,k]ᵀ · g[m,n]`
fn gemm_tn_acc<T: Scalar>(a: &[T], g: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm_acc(k, m, n, (a, 1, k as isize), (g, n as isize, 1), (c, n as isize, 1));
}

/// Splits `shape` around `axis` into (outer, extent, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn gelu_scalar<T: Scalar>(x: T) -> (T, T) {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let c = T::lit(0.044715);
    let half = T::lit(0.5);
    let u = k * (x + c * x * x * x);
    let th = u.tanh();
    let y = half * x * (T::one() + th);
    let du = k * (T::one() + T::lit(3.0) * c * x * x);
    let dy = half * (T::one() + th) + half * x * (T::one() - th * th) * du;
    (y, dy)
}

impl<T: Scalar> Tensor<T> {
    /// Matrix product. Supported forms: `[m,k]·[k,n]`, `[s,m,k]·[k,n]` (shared
    /// right operand) and `[s,m,k]·[s,k,n]` (batched).
    pub fn matmul(&self, other: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let (a_shape, b_shape) = (self.shape(), other.shape());
        let (batch, m, k, n, shared_b) = match (a_shape.len(), b_shape.len()) {
            (2, 2) if a_shape[1] == b_shape[0] => (1, a_shape[0], a_shape[1], b_shape[1], true),
            (3, 2) if a_shape[2] == b_shape[0] => {
                (1, a_shape[0] * a_shape[1], a_shape[2], b_shape[1], true)
            }
            (3, 3) if a_shape[0] == b_shape[0] && a_shape[2] == b_shape[1] => {
                (a_shape[0], a_shape[1], a_shape[2], b_shape[2], false)
            }
            _ => return Err(mismatch("matmul", self, other)),
        };
        let out_shape = match (a_shape.len(), b_shape.len()) {
            (2, 2) => vec![m, n],
            (3, 2) => vec![a_shape[0], a_shape[1], n],
            _ => vec![batch, m, n],
        };
        let mut out = vec![T::zero(); batch * m * n];
        {
            let a = self.data();
            let b = other.data();
            for s in 0..batch {
                let b_off = if shared_b { 0 } else { s * k * n };
                gemm_acc(
                    &a[s * m * k..(s + 1) * m * k],
                    &b[b_off..b_off + k * n],
                    &mut out[s * m * n..(s + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let (lhs, rhs) = (self.clone(), other.clone());
        Tensor::from_op("matmul", out_shape, out, vec![self.clone(), other.clone()], move |g| {
            let ga = lhs.requires_grad().then(|| {
                let b = rhs.data();
                let mut ga = vec![T::zero(); batch * m * k];
                for s in 0..batch {
                    let b_off = if shared_b { 0 } else { s * k * n };
                    gemm_nt_acc(
                        &g[s * m * n..(s + 1) * m * n],
                        &b[b_off..b_off + k * n],
                        &mut ga[s * m * k..(s + 1) * m * k],
                        m,
                        k,
                        n,
                    );
                }
                ga
            });
            let gb = rhs.requires_grad().then(|| {
                let a = lhs.data();
                let mut gb = vec![T::zero(); if shared_b { k * n } else { batch * k * n }];
                for s in 0..batch {
                    let b_off = if shared_b { 0 } else { s * k * n };
                    gemm_tn_acc(
                        &a[s * m * k..(s + 1) * m * k],
                        &g[s * m * n..(s + 1) * m * n],
                        &mut gb[b_off..b_off + k * n],
                        m,
                        k,
                        n,
                    );
                }
                gb
            });
            vec![ga, gb]
        })
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&self) -> TensorResult<Tensor<T>> {
        let shape = self.shape();
        let (batch, r, c) = match shape.len() {
            2 => (1, shape[0], shape[1]),
            3 => (shape[0], shape[1], shape[2]),
            _ => return Err(invalid("transpose", format!("rank {} unsupported", shape.len()))),
        };
        let permute = move |src: &[T]| {
            let mut dst = vec![T::zero(); src.len()];
            for s in 0..batch {
                let off = s * r * c;
                for i in 0..r {
                    for j in 0..c {
                        dst[off + j * r + i] = src[off + i * c + j];
                    }
                }
            }
            dst
        };
        let out = permute(&self.data());
        let mut out_shape = shape.to_vec();
        let len = out_shape.len();
        out_shape.swap(len - 1, len - 2);
        Tensor::from_op("transpose", out_shape, out, vec![self.clone()], move |g| {
            // The inverse permutation swaps r and c.
            let mut dst = vec![T::zero(); g.len()];
            for s in 0..batch {
                let off = s * r * c;
                for j in 0..c {
                    for i in 0..r {
                        dst[off + i * c + j] = g[off + j * r + i];
                    }
                }
            }
            vec![Some(dst)]
        })
    }

    fn zip_same(
        &self,
        other: &Tensor<T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> TensorResult<Vec<T>> {
        if self.shape() != other.shape() {
            return Err(mismatch(op, self, other));
        }
        let a = self.data();
        let b = other.data();
        Ok(a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&self, other: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let out = self.zip_same(other, "add", |x, y| x + y)?;
        Tensor::from_op("add", self.shape().to_vec(), out, vec![self.clone(), other.clone()], |g| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        })
    }

    pub fn sub(&self, other: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let out = self.zip_same(other, "sub", |x, y| x - y)?;
        Tensor::from_op("sub", self.shape().to_vec(), out, vec![self.clone(), other.clone()], |g| {
            vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]
        })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let out = self.zip_same(other, "mul", |x, y| x * y)?;
        let (lhs, rhs) = (self.clone(), other.clone());
        Tensor::from_op("mul", self.shape().to_vec(), out, vec![self.clone(), other.clone()], move |g| {
            let ga = lhs.requires_grad().then(|| {
                g.iter().zip(rhs.data().iter()).map(|(&gv, &b)| gv * b).collect()
            });
            let gb = rhs.requires_grad().then(|| {
                g.iter().zip(lhs.data().iter()).map(|(&gv, &a)| gv * a).collect()
            });
            vec![ga, gb]
        })
    }

    /// Multiplies every entry by a constant.
    pub fn scale(&self, c: T) -> TensorResult<Tensor<T>> {
        let out = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op("scale", self.shape().to_vec(), out, vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|&v| v * c).collect())]
        })
    }

    /// Adds a constant to every entry.
    pub fn add_scalar(&self, c: T) -> TensorResult<Tensor<T>> {
        let out = self.data().iter().map(|&x| x + c).collect();
        Tensor::from_op("add_scalar", self.shape().to_vec(), out, vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        })
    }

    /// Sum over one axis; the axis is removed from the shape.
    pub fn sum_axis(&self, axis: usize) -> TensorResult<Tensor<T>> {
        if axis >= self.rank() {
            return Err(invalid("sum_axis", format!("axis {axis} out of range for {:?}", self.shape())));
        }
        let (outer, extent, inner) = axis_split(self.shape(), axis);
        let mut out = vec![T::zero(); outer * inner];
        {
            let d = self.data();
            for o in 0..outer {
                for e in 0..extent {
                    let src = &d[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                    let dst = &mut out[o * inner..(o + 1) * inner];
                    dst.iter_mut().zip(src).for_each(|(a, &b)| *a = *a + b);
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Tensor::from_op("sum_axis", shape, out, vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); outer * extent * inner];
            for o in 0..outer {
                for e in 0..extent {
                    gx[(o * extent + e) * inner..(o * extent + e + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        })
    }

    pub fn mean_axis(&self, axis: usize) -> TensorResult<Tensor<T>> {
        let extent = *self
            .shape()
            .get(axis)
            .ok_or_else(|| invalid("mean_axis", format!("axis {axis} out of range")))?;
        if extent == 0 {
            return Err(invalid("mean_axis", "empty axis"));
        }
        self.sum_axis(axis)?.scale(T::one() / T::lit(extent as f64))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum_all(&self) -> TensorResult<Tensor<T>> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op("sum_all", vec![], vec![total], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean_all(&self) -> TensorResult<Tensor<T>> {
        let n = self.numel();
        if n == 0 {
            return Err(invalid("mean_all", "empty tensor"));
        }
        self.sum_all()?.scale(T::one() / T::lit(n as f64))
    }

    pub fn relu(&self) -> TensorResult<Tensor<T>> {
        let out = self.data().iter().map(|&x| x.max(T::zero())).collect();
        let x = self.clone();
        Tensor::from_op("relu", self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let gx = g
                .iter()
                .zip(x.data().iter())
                .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                .collect();
            vec![Some(gx)]
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> TensorResult<Tensor<T>> {
        let (out, deriv): (Vec<T>, Vec<T>) = self.data().iter().map(|&x| gelu_scalar(x)).unzip();
        Tensor::from_op("gelu", self.shape().to_vec(), out, vec![self.clone()], move |g| {
            vec![Some(g.iter().zip(&deriv).map(|(&gv, &d)| gv * d).collect())]
        })
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&self) -> TensorResult<Tensor<T>> {
        let width = *self.shape().last().ok_or_else(|| invalid("softmax", "rank-0 input"))?;
        if width == 0 {
            return Err(invalid("softmax", "empty last axis"));
        }
        let mut out = self.to_vec();
        for row in out.chunks_mut(width) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let y = out.clone();
        Tensor::from_op("softmax", self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); g.len()];
            for ((gr, yr), dst) in g.chunks(width).zip(y.chunks(width)).zip(gx.chunks_mut(width)) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for ((d, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                    *d = yv * (gv - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Natural log; non-positive inputs yield a non-finite error.
    pub fn log(&self) -> TensorResult<Tensor<T>> {
        let out = self.data().iter().map(|&x| x.ln()).collect::<Vec<_>>();
        check_finite("log", &out)?;
        let x = self.clone();
        Tensor::from_op("log", self.shape().to_vec(), out, vec![self.clone()], move |g| {
            vec![Some(g.iter().zip(x.data().iter()).map(|(&gv, &xv)| gv / xv).collect())]
        })
    }

    pub fn square(&self) -> TensorResult<Tensor<T>> {
        let out = self.data().iter().map(|&x| x * x).collect();
        let x = self.clone();
        Tensor::from_op("square", self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let two = T::lit(2.0);
            vec![Some(g.iter().zip(x.data().iter()).map(|(&gv, &xv)| two * xv * gv).collect())]
        })
    }

    /// Square root; the derivative at 0 is infinite and reported as non-finite.
    pub fn sqrt(&self) -> TensorResult<Tensor<T>> {
        if self.data().iter().any(|&x| x < T::zero()) {
            return Err(TensorError::NonFinite { op: "sqrt" });
        }
        let out: Vec<T> = self.data().iter().map(|&x| x.sqrt()).collect();
        let y = out.clone();
        Tensor::from_op("sqrt", self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let half = T::lit(0.5);
            // At a zero root only a zero upstream gradient stays finite.
            let gx = g
                .iter()
                .zip(&y)
                .map(|(&gv, &yv)| if gv == T::zero() { T::zero() } else { gv * half / yv })
                .collect();
            vec![Some(gx)]
        })
    }

    /// Layer normalization over the last axis with learnable gain and bias
    /// (both of shape `[width]`).
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>, eps: T) -> TensorResult<Tensor<T>> {
        let width = *self.shape().last().ok_or_else(|| invalid("layer_norm", "rank-0 input"))?;
        if gain.shape() != [width] {
            return Err(mismatch("layer_norm", self, gain));
        }
        if bias.shape() != [width] {
            return Err(mismatch("layer_norm", self, bias));
        }
        let rows = self.numel() / width.max(1);
        let wn = T::lit(width as f64);
        let mut xhat = vec![T::zero(); self.numel()];
        let mut inv_std = vec![T::zero(); rows];
        {
            let x = self.data();
            for r in 0..rows {
                let row = &x[r * width..(r + 1) * width];
                let mean = row.iter().copied().sum::<T>() / wn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / wn;
                let is = T::one() / (var + eps).sqrt();
                inv_std[r] = is;
                for (h, &v) in xhat[r * width..(r + 1) * width].iter_mut().zip(row) {
                    *h = (v - mean) * is;
                }
            }
        }
        let out = {
            let gd = gain.data();
            let bd = bias.data();
            xhat.iter()
                .enumerate()
                .map(|(i, &h)| h * gd[i % width] + bd[i % width])
                .collect()
        };
        let (x_t, g_t, b_t) = (self.clone(), gain.clone(), bias.clone());
        Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            move |g| {
                let gd = g_t.data();
                let gx = x_t.requires_grad().then(|| {
                    let mut gx = vec![T::zero(); g.len()];
                    for r in 0..rows {
                        let span = r * width..(r + 1) * width;
                        let gr = &g[span.clone()];
                        let hr = &xhat[span.clone()];
                        let dh: Vec<T> = gr.iter().enumerate().map(|(j, &v)| v * gd[j]).collect();
                        let mean_dh = dh.iter().copied().sum::<T>() / wn;
                        let mean_dh_h = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() / wn;
                        for (j, dst) in gx[span].iter_mut().enumerate() {
                            *dst = inv_std[r] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    gx
                });
                let ggain = g_t.requires_grad().then(|| {
                    let mut acc = vec![T::zero(); width];
                    for (i, (&gv, &h)) in g.iter().zip(&xhat).enumerate() {
                        acc[i % width] = acc[i % width] + gv * h;
                    }
                    acc
                });
                let gbias = b_t.requires_grad().then(|| {
                    let mut acc = vec![T::zero(); width];
                    for (i, &gv) in g.iter().enumerate() {
                        acc[i % width] = acc[i % width] + gv;
                    }
                    acc
                });
                vec![gx, ggain, gbias]
            },
        )
    }

    /// Concatenates tensors of equal rank along `axis`.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> TensorResult<Tensor<T>> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        if axis >= first.rank() {
            return Err(invalid("concat", format!("axis {axis} out of range for {:?}", first.shape())));
        }
        for p in &parts[1..] {
            let ok = p.rank() == first.rank()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(mismatch("concat", first, p));
            }
        }
        let (outer, _, inner) = axis_split(first.shape(), axis);
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (d, &e) in datas.iter().zip(&extents) {
                out.extend_from_slice(&d[o * e * inner..(o + 1) * e * inner]);
            }
        }
        drop(datas);
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let needs: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
        Tensor::from_op("concat", shape, out, parts.to_vec(), move |g| {
            let mut grads: Vec<Option<Vec<T>>> = needs
                .iter()
                .zip(&extents)
                .map(|(&n, &e)| n.then(|| Vec::with_capacity(outer * e * inner)))
                .collect();
            let mut cursor = 0;
            for _ in 0..outer {
                for (slot, &e) in grads.iter_mut().zip(&extents) {
                    let len = e * inner;
                    if let Some(v) = slot {
                        v.extend_from_slice(&g[cursor..cursor + len]);
                    }
                    cursor += len;
                }
            }
            grads
        })
    }

    /// The half-open range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> TensorResult<Tensor<T>> {
        if axis >= self.rank() || start > end || end > self.shape()[axis] {
            return Err(invalid(
                "slice",
                format!("range {start}..{end} on axis {axis} of {:?}", self.shape()),
            ));
        }
        let (outer, extent, inner) = axis_split(self.shape(), axis);
        let width = end - start;
        let mut out = Vec::with_capacity(outer * width * inner);
        {
            let d = self.data();
            for o in 0..outer {
                out.extend_from_slice(&d[(o * extent + start) * inner..(o * extent + end) * inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = width;
        Tensor::from_op("slice", shape, out, vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); outer * extent * inner];
            for o in 0..outer {
                gx[(o * extent + start) * inner..(o * extent + end) * inner]
                    .copy_from_slice(&g[o * width * inner..(o + 1) * width * inner]);
            }
            vec![Some(gx)]
        })
    }

    /// Reinterprets the contiguous data with a new shape of equal size.
    pub fn reshape(&self, shape: &[usize]) -> TensorResult<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Tensor::from_op("reshape", shape.to_vec(), self.to_vec(), vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        })
    }
}
