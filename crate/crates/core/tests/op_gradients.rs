//! Reverse-mode gradients of every op against central finite differences.
//!
//! Each case builds a scalar `sum(op(inputs) * R)` with a fixed random `R`
//! so that every output element contributes with a distinct weight.

use gtsgn::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn values(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Compares analytic and numeric gradients for every input of `f`.
fn check<F>(inputs: &[(Vec<usize>, Vec<f64>)], seed: u64, f: F)
where
    F: Fn(&[Tensor]) -> Tensor,
{
    let weights = |out: &Tensor| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        Tensor::from_vec(out.shape(), values(&mut rng, out.numel(), -1.0, 1.0)).unwrap()
    };
    let eval = |data: &[Vec<f64>]| -> f64 {
        let ts: Vec<Tensor> = inputs
            .iter()
            .zip(data)
            .map(|((s, _), d)| Tensor::from_vec(s, d.clone()).unwrap())
            .collect();
        let out = f(&ts);
        out.mul(&weights(&out)).unwrap().sum().item()
    };

    let params: Vec<Tensor> = inputs
        .iter()
        .map(|(s, d)| Tensor::param(s, d.clone()).unwrap())
        .collect();
    let out = f(&params);
    out.mul(&weights(&out)).unwrap().sum().backward().unwrap();

    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    for (k, p) in params.iter().enumerate() {
        let g = p.grad().expect("input received no gradient");
        for i in 0..base[k].len() {
            let mut plus = base.clone();
            plus[k][i] += H;
            let mut minus = base.clone();
            minus[k][i] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let err = (g[i] - numeric).abs() / g[i].abs().max(numeric.abs()).max(1.0);
            assert!(
                err < 1e-6,
                "input {k} element {i}: analytic {} numeric {numeric}",
                g[i]
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn broadcast_arithmetic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = (vec![2, 3, 4], values(&mut rng, 24, -2.0, 2.0));
        let b = (vec![4], values(&mut rng, 4, 0.5, 2.0));
        check(&[a.clone(), b.clone()], seed, |t| t[0].add(&t[1]).unwrap());
        check(&[a.clone(), b.clone()], seed, |t| t[1].sub(&t[0]).unwrap());
        check(&[a.clone(), b.clone()], seed, |t| t[0].mul(&t[1]).unwrap());
        check(&[a, b], seed, |t| t[0].div(&t[1]).unwrap());
    }

    #[test]
    fn elementwise(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (vec![3, 5], values(&mut rng, 15, -3.0, 3.0));
        let pos = (vec![3, 5], values(&mut rng, 15, 0.2, 3.0));
        check(std::slice::from_ref(&x), seed, |t| t[0].exp());
        check(std::slice::from_ref(&x), seed, |t| t[0].sigmoid());
        check(std::slice::from_ref(&x), seed, |t| t[0].softplus());
        check(std::slice::from_ref(&x), seed, |t| t[0].square().neg().scale(0.3));
        check(std::slice::from_ref(&pos), seed, |t| t[0].log());
        check(&[pos], seed, |t| t[0].sqrt());
        // Away from the kink ReLU is differentiable.
        let off_kink: Vec<f64> = x.1.iter().map(|v| if v.abs() < 0.01 { 0.5 } else { *v }).collect();
        check(&[(x.0, off_kink)], seed, |t| t[0].relu());
    }

    #[test]
    fn matmul_and_node_mixing(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = (vec![3, 4], values(&mut rng, 12, -1.0, 1.0));
        let b = (vec![4, 2], values(&mut rng, 8, -1.0, 1.0));
        check(&[a, b], seed, |t| t[0].matmul(&t[1]).unwrap());
        let mixer = (vec![5, 4], values(&mut rng, 20, -1.0, 1.0));
        let x = (vec![2, 3, 4, 3], values(&mut rng, 72, -1.0, 1.0));
        check(&[mixer, x], seed, |t| Tensor::mix_nodes(&t[0], &t[1]).unwrap());
    }

    #[test]
    fn temporal_convolution(seed in any::<u64>(), k in prop::sample::select(vec![1usize, 3, 5])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (vec![2, 3, 4, 2], values(&mut rng, 48, -1.0, 1.0));
        let kernel = (vec![k, 2, 3], values(&mut rng, k * 6, -1.0, 1.0));
        check(&[x, kernel], seed, |t| Tensor::temporal_conv(&t[0], &t[1]).unwrap());
    }

    #[test]
    fn reductions_and_reshaping(seed in any::<u64>(), axis in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (vec![2, 3, 4], values(&mut rng, 24, -1.0, 1.0));
        let y = (vec![2, 3, 4], values(&mut rng, 24, -1.0, 1.0));
        check(std::slice::from_ref(&x), seed, |t| t[0].sum_axis(axis).unwrap());
        check(std::slice::from_ref(&x), seed, |t| t[0].mean_axis(axis).unwrap());
        check(std::slice::from_ref(&x), seed, |t| t[0].mean());
        check(std::slice::from_ref(&x), seed, |t| t[0].reshape(&[6, 4]).unwrap().exp());
        check(&[x, y], seed, |t| Tensor::concat(&[t[0].clone(), t[1].square()], axis).unwrap());
    }

    #[test]
    fn log_softmax_rows(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (vec![4, 6], values(&mut rng, 24, -5.0, 5.0));
        check(&[x], seed, |t| t[0].log_softmax().unwrap());
    }
}

#[test]
fn shared_inputs_accumulate() {
    // x used three times: d/dx (x*x + exp(x)) = 2x + exp(x).
    check(&[(vec![3], vec![-0.4, 0.1, 1.3])], 9, |t| {
        t[0].mul(&t[0]).unwrap().add(&t[0].exp()).unwrap()
    });
}
