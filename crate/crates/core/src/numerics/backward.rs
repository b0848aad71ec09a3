//! Vector-Jacobian products for every op in [`Op`].

use super::ops::{axis_view, matmul_raw, sigmoid_scalar};
use super::tensor::{Op, Tensor};

/// Sum a full-size gradient down to the (suffix) shape of a broadcast operand.
fn unbroadcast(g: &[f64], target_len: usize) -> Vec<f64> {
    if g.len() == target_len {
        return g.to_vec();
    }
    let mut out = vec![0.0; target_len];
    for (i, &v) in g.iter().enumerate() {
        out[i % target_len] += v;
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn elementwise(g: &[f64], x: &Tensor, f: impl Fn(f64) -> f64) -> Vec<f64> {
    g.iter()
        .zip(x.data().iter())
        .map(|(&g, &x)| g * f(x))
        .collect()
}

/// Calls `emit(input, grad_of_input)` for each input of `op`, given the
/// gradient `g` of the op output `out`.
pub(crate) fn propagate(op: &Op, out: &Tensor, g: &[f64], emit: &mut dyn FnMut(&Tensor, Vec<f64>)) {
    match op {
        Op::Add(a, b) => {
            emit(a, unbroadcast(g, a.numel()));
            emit(b, unbroadcast(g, b.numel()));
        }
        Op::Sub(a, b) => {
            emit(a, unbroadcast(g, a.numel()));
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            emit(b, unbroadcast(&neg, b.numel()));
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (a.data().clone(), b.data().clone());
            let (na, nb) = (ad.len(), bd.len());
            let ga: Vec<f64> = g.iter().enumerate().map(|(i, &v)| v * bd[i % nb]).collect();
            let gb: Vec<f64> = g.iter().enumerate().map(|(i, &v)| v * ad[i % na]).collect();
            emit(a, unbroadcast(&ga, na));
            emit(b, unbroadcast(&gb, nb));
        }
        Op::Div(a, b) => {
            let (ad, bd) = (a.data().clone(), b.data().clone());
            let (na, nb) = (ad.len(), bd.len());
            let ga: Vec<f64> = g.iter().enumerate().map(|(i, &v)| v / bd[i % nb]).collect();
            let gb: Vec<f64> = g
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let y = bd[i % nb];
                    -v * ad[i % na] / (y * y)
                })
                .collect();
            emit(a, unbroadcast(&ga, na));
            emit(b, unbroadcast(&gb, nb));
        }
        Op::Neg(a) => emit(a, g.iter().map(|v| -v).collect()),
        Op::Scale(a, c) => emit(a, g.iter().map(|v| v * c).collect()),
        Op::Square(a) => emit(a, elementwise(g, a, |x| 2.0 * x)),
        Op::Sqrt(a) => {
            let y = out.data();
            emit(
                a,
                g.iter()
                    .zip(y.iter())
                    .map(|(&g, &y)| g / (2.0 * y))
                    .collect(),
            );
        }
        Op::Exp(a) => {
            let y = out.data();
            emit(a, g.iter().zip(y.iter()).map(|(&g, &y)| g * y).collect());
        }
        Op::Log(a) => emit(a, elementwise(g, a, |x| 1.0 / x)),
        Op::Sigmoid(a) => {
            let y = out.data();
            emit(
                a,
                g.iter()
                    .zip(y.iter())
                    .map(|(&g, &y)| g * y * (1.0 - y))
                    .collect(),
            );
        }
        Op::Relu(a) => emit(a, elementwise(g, a, |x| if x > 0.0 { 1.0 } else { 0.0 })),
        Op::Softplus(a) => emit(a, elementwise(g, a, sigmoid_scalar)),
        Op::MatMul(a, b) => {
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let bt = transpose(&b.data(), k, n);
            let at = transpose(&a.data(), m, k);
            emit(a, matmul_raw(g, &bt, m, n, k));
            emit(b, matmul_raw(&at, g, k, m, n));
        }
        Op::MixNodes(mixer, x) => {
            let (n_out, n_in) = (mixer.shape()[0], mixer.shape()[1]);
            let c = *x.shape().last().unwrap();
            let groups = x.numel() / (n_in * c);
            let (md, xd) = (mixer.data(), x.data());
            let mut gm = vec![0.0; n_out * n_in];
            let mut gx = vec![0.0; xd.len()];
            for grp in 0..groups {
                let xb = &xd[grp * n_in * c..][..n_in * c];
                let gb = &g[grp * n_out * c..][..n_out * c];
                let gxb = &mut gx[grp * n_in * c..][..n_in * c];
                for i in 0..n_out {
                    let grow = &gb[i * c..(i + 1) * c];
                    for j in 0..n_in {
                        let xrow = &xb[j * c..(j + 1) * c];
                        gm[i * n_in + j] += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                        let w = md[i * n_in + j];
                        for (gxv, &gv) in gxb[j * c..(j + 1) * c].iter_mut().zip(grow) {
                            *gxv += w * gv;
                        }
                    }
                }
            }
            drop((md, xd));
            emit(mixer, gm);
            emit(x, gx);
        }
        Op::TemporalConv(x, kernel) => {
            let (b, t, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
            let (k, c_out) = (kernel.shape()[0], kernel.shape()[2]);
            let pad = (k - 1) / 2;
            let (xd, wd) = (x.data(), kernel.data());
            let mut gx = vec![0.0; xd.len()];
            let mut gw = vec![0.0; wd.len()];
            for bi in 0..b {
                for ti in 0..t {
                    for tau in 0..k {
                        let src = ti + tau;
                        if src < pad || src - pad >= t {
                            continue;
                        }
                        let s = src - pad;
                        let w = &wd[tau * c * c_out..(tau + 1) * c * c_out];
                        let gwt = &mut gw[tau * c * c_out..(tau + 1) * c * c_out];
                        for ni in 0..n {
                            let grow = &g[((bi * t + ti) * n + ni) * c_out..][..c_out];
                            let xoff = ((bi * t + s) * n + ni) * c;
                            for ci in 0..c {
                                let wrow = &w[ci * c_out..(ci + 1) * c_out];
                                gx[xoff + ci] +=
                                    grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                                let xv = xd[xoff + ci];
                                for (gwv, &gv) in
                                    gwt[ci * c_out..(ci + 1) * c_out].iter_mut().zip(grow)
                                {
                                    *gwv += xv * gv;
                                }
                            }
                        }
                    }
                }
            }
            drop((xd, wd));
            emit(x, gx);
            emit(kernel, gw);
        }
        Op::Sum(a) => emit(a, vec![g[0]; a.numel()]),
        Op::Mean(a) => emit(a, vec![g[0] / a.numel() as f64; a.numel()]),
        Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
            let (outer, len, inner) = axis_view(a.shape(), *axis);
            let factor = match op {
                Op::MeanAxis(..) => 1.0 / len as f64,
                _ => 1.0,
            };
            let mut ga = vec![0.0; a.numel()];
            for o in 0..outer {
                for l in 0..len {
                    let dst = &mut ga[(o * len + l) * inner..][..inner];
                    for (d, &v) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                        *d = v * factor;
                    }
                }
            }
            emit(a, ga);
        }
        Op::Reshape(a) => emit(a, g.to_vec()),
        Op::Concat(parts, axis) => {
            let first = &parts[0];
            let outer: usize = first.shape()[..*axis].iter().product();
            let inner: usize = first.shape()[axis + 1..].iter().product();
            let total: usize = parts.iter().map(|p| p.shape()[*axis]).sum();
            let mut offset = 0;
            for p in parts {
                let block = p.shape()[*axis] * inner;
                let mut gp = Vec::with_capacity(p.numel());
                for o in 0..outer {
                    gp.extend_from_slice(&g[o * total * inner + offset..][..block]);
                }
                offset += block;
                emit(p, gp);
            }
        }
        Op::LogSoftmax(a) => {
            let c = *a.shape().last().unwrap();
            let y = out.data();
            let mut ga = vec![0.0; g.len()];
            for ((grow, yrow), garow) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                let total: f64 = grow.iter().sum();
                for ((d, &gv), &yv) in garow.iter_mut().zip(grow).zip(yrow) {
                    *d = gv - yv.exp() * total;
                }
            }
            drop(y);
            emit(a, ga);
        }
    }
}
