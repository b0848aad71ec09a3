//! Forward definitions of every differentiable op.
//!
//! Broadcasting is limited to trailing-dimension alignment: the smaller
//! operand's shape must be a suffix of the larger one's (a scalar is a suffix
//! of everything). In row-major order that makes element `i` of the output
//! read element `i % n` of the smaller operand.

use super::tensor::{numel, Op, Tensor};
use crate::error::{Error, Result};

pub(crate) fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if is_suffix(b.shape(), a.shape()) {
        Ok(a.shape().to_vec())
    } else if is_suffix(a.shape(), b.shape()) {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}

fn zip_with(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let shape = broadcast(op, a, b)?;
    let (da, db) = (a.data(), b.data());
    let (na, nb) = (da.len(), db.len());
    let out = (0..numel(&shape))
        .map(|i| f(da[i % na], db[i % nb]))
        .collect();
    Ok((shape, out))
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Vec<f64> {
    a.data().iter().map(|&x| f(x)).collect()
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = zip_with("add", self, other, |x, y| x + y)?;
        Ok(Tensor::from_op(
            shape,
            data,
            Op::Add(self.clone(), other.clone()),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = zip_with("sub", self, other, |x, y| x - y)?;
        Ok(Tensor::from_op(
            shape,
            data,
            Op::Sub(self.clone(), other.clone()),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = zip_with("mul", self, other, |x, y| x * y)?;
        Ok(Tensor::from_op(
            shape,
            data,
            Op::Mul(self.clone(), other.clone()),
        ))
    }

    /// IEEE division: a zero denominator yields `inf` or `NaN`.
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = zip_with("div", self, other, |x, y| x / y)?;
        Ok(Tensor::from_op(
            shape,
            data,
            Op::Div(self.clone(), other.clone()),
        ))
    }

    /// Division that rejects any exactly-zero denominator.
    pub fn div_checked(&self, other: &Tensor) -> Result<Tensor> {
        if other.data().contains(&0.0) {
            return Err(Error::DivisionByZero("div"));
        }
        self.div(other)
    }

    pub fn neg(&self) -> Tensor {
        Tensor::from_op(
            self.shape().to_vec(),
            map(self, |x| -x),
            Op::Neg(self.clone()),
        )
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor::from_op(
            self.shape().to_vec(),
            map(self, |x| x * factor),
            Op::Scale(self.clone(), factor),
        )
    }

    pub fn square(&self) -> Tensor {
        Tensor::from_op(
            self.shape().to_vec(),
            map(self, |x| x * x),
            Op::Square(self.clone()),
        )
    }

    pub fn sqrt(&self) -> Tensor {
        Tensor::from_op(
            self.shape().to_vec(),
            map(self, f64::sqrt),
            Op::Sqrt(self.clone()),
        )
    }

    pub fn exp(&self) -> Tensor {
        Tensor::from_op(
            self.shape().to_vec(),
            map(self, f64::exp),
            Op::Exp(self.clone()),
        )
    }

    pub fn log(&self) -> Tensor {
        Tensor::from_op(
            self.shape().to_vec(),
            map(self, f64::ln),
            Op::Log(self.clone()),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        Tensor::from_op(
            self.shape().to_vec(),
            map(self, sigmoid_scalar),
            Op::Sigmoid(self.clone()),
        )
    }

    pub fn relu(&self) -> Tensor {
        Tensor::from_op(
            self.shape().to_vec(),
            map(self, |x| x.max(0.0)),
            Op::Relu(self.clone()),
        )
    }

    pub fn softplus(&self) -> Tensor {
        Tensor::from_op(
            self.shape().to_vec(),
            map(self, softplus_scalar),
            Op::Softplus(self.clone()),
        )
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(&self.data(), &other.data(), m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            Op::MatMul(self.clone(), other.clone()),
        ))
    }

    /// Left-multiplies every `[n_in, C]` node block of `x` by `mixer`:
    /// `mixer [n_out, n_in]`, `x [..., n_in, C]` -> `[..., n_out, C]`.
    pub fn mix_nodes(mixer: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (sm, sx) = (mixer.shape(), x.shape());
        if sm.len() != 2 || sx.len() < 2 || sx[sx.len() - 2] != sm[1] {
            return Err(Error::Shape {
                op: "mix_nodes",
                left: sm.to_vec(),
                right: sx.to_vec(),
            });
        }
        let (n_out, n_in, c) = (sm[0], sm[1], sx[sx.len() - 1]);
        let groups = x.numel() / (n_in * c);
        let (m, xd) = (mixer.data(), x.data());
        let mut out = vec![0.0; groups * n_out * c];
        for g in 0..groups {
            let xb = &xd[g * n_in * c..(g + 1) * n_in * c];
            let ob = &mut out[g * n_out * c..(g + 1) * n_out * c];
            for i in 0..n_out {
                let orow = &mut ob[i * c..(i + 1) * c];
                for j in 0..n_in {
                    let w = m[i * n_in + j];
                    if w == 0.0 {
                        continue;
                    }
                    for (o, &v) in orow.iter_mut().zip(&xb[j * c..(j + 1) * c]) {
                        *o += w * v;
                    }
                }
            }
        }
        drop((m, xd));
        let mut shape = sx.to_vec();
        let len = shape.len();
        shape[len - 2] = n_out;
        Ok(Tensor::from_op(
            shape,
            out,
            Op::MixNodes(mixer.clone(), x.clone()),
        ))
    }

    /// Per-node temporal convolution with odd kernel extent, stride 1 and
    /// zero padding `(K - 1) / 2`: `x [B, T, N, C]`, `kernel [K, C, C']`
    /// -> `[B, T, N, C']`, so `T` is preserved.
    pub fn temporal_conv(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
        let (sx, sk) = (x.shape(), kernel.shape());
        if sx.len() != 4 || sk.len() != 3 || sk[0] % 2 == 0 || sx[3] != sk[1] {
            return Err(Error::Shape {
                op: "temporal_conv",
                left: sx.to_vec(),
                right: sk.to_vec(),
            });
        }
        let (b, t, n, c) = (sx[0], sx[1], sx[2], sx[3]);
        let (k, c_out) = (sk[0], sk[2]);
        let pad = (k - 1) / 2;
        let (xd, wd) = (x.data(), kernel.data());
        let mut out = vec![0.0; b * t * n * c_out];
        for bi in 0..b {
            for ti in 0..t {
                for tau in 0..k {
                    let src = ti + tau;
                    if src < pad || src - pad >= t {
                        continue;
                    }
                    let s = src - pad;
                    let w = &wd[tau * c * c_out..(tau + 1) * c * c_out];
                    for ni in 0..n {
                        let xrow = &xd[((bi * t + s) * n + ni) * c..][..c];
                        let orow = &mut out[((bi * t + ti) * n + ni) * c_out..][..c_out];
                        for (ci, &xv) in xrow.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            for (o, &wv) in orow.iter_mut().zip(&w[ci * c_out..(ci + 1) * c_out]) {
                                *o += xv * wv;
                            }
                        }
                    }
                }
            }
        }
        drop((xd, wd));
        Ok(Tensor::from_op(
            vec![b, t, n, c_out],
            out,
            Op::TemporalConv(x.clone(), kernel.clone()),
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(Vec::new(), vec![s], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(Vec::new(), vec![s / n], Op::Mean(self.clone()))
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let (shape, out) = reduce_axis("sum_axis", self, axis)?;
        Ok(Tensor::from_op(shape, out, Op::SumAxis(self.clone(), axis)))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let (shape, mut out) = reduce_axis("mean_axis", self, axis)?;
        let len = self.shape()[axis] as f64;
        out.iter_mut().for_each(|v| *v /= len);
        Ok(Tensor::from_op(
            shape,
            out,
            Op::MeanAxis(self.clone(), axis),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::Empty("concat input"))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::Rank {
                op: "concat",
                expected: "axis within rank",
                got: first.shape().to_vec(),
            });
        }
        for p in parts {
            let ok = p.shape().len() == rank
                && (0..rank).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
            if !ok {
                return Err(Error::Shape {
                    op: "concat",
                    left: first.shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let total_axis: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut out = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape()[axis] * inner;
                out.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total_axis;
        Ok(Tensor::from_op(
            shape,
            out,
            Op::Concat(parts.to_vec(), axis),
        ))
    }

    /// Stabilised log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let c = *self.shape().last().ok_or(Error::Rank {
            op: "log_softmax",
            expected: "rank >= 1",
            got: Vec::new(),
        })?;
        let data = self.data();
        let mut out = vec![0.0; data.len()];
        for (row, orow) in data.chunks(c).zip(out.chunks_mut(c)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            for (o, &x) in orow.iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        drop(data);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::LogSoftmax(self.clone()),
        ))
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `(outer, len, inner)` view of a tensor around `axis`.
pub(crate) fn axis_view(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduce_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if axis >= t.shape().len() {
        return Err(Error::Rank {
            op,
            expected: "axis within rank",
            got: t.shape().to_vec(),
        });
    }
    let (outer, len, inner) = axis_view(t.shape(), axis);
    let data = t.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let src = &data[(o * len + l) * inner..][..inner];
            for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *acc += v;
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape.remove(axis);
    Ok((shape, out))
}
