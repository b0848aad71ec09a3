//! A first-order Chebyshev filter with tied coefficients (`theta1 = -theta0`,
//! `lambda_max = 2`) is the renormalization-free GCN operator
//! `I + D^-1/2 A D^-1/2`. This example evaluates both on the face graph.
//!
//! ```text
//! cargo run --example chebyshev_collapse
//! ```

use gtsgn::graph::{
    chebyshev_filter, normalize_adjacency, predefined_adjacency, GmGraph, DEFAULT_EDGES,
};
use gtsgn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gtsgn::Result<()> {
    let graph = GmGraph::default();
    println!(
        "face graph: {} nodes, {} edges",
        graph.num_nodes,
        DEFAULT_EDGES.len()
    );
    println!("degrees: {:?}", graph.degrees());

    let a = predefined_adjacency();
    let n = graph.num_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::from_vec(
        &[n, 2],
        (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;

    let theta0 = 0.8;
    let cheb = chebyshev_filter(&x, &a, &[theta0, -theta0], 2.0)?;
    let operator = graph.operator_tensor();
    let gcn = operator.matmul(&x)?.scale(theta0);

    let worst = cheb
        .to_vec()
        .iter()
        .zip(gcn.to_vec())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max);
    println!("max |Chebyshev - GCN| = {worst:.2e}");

    let norm = normalize_adjacency(&a)?.to_vec();
    println!(
        "\nI + D^-1/2 A D^-1/2, row 6 (nose tip): {:?}",
        norm[6 * n..7 * n]
            .iter()
            .map(|v| (v * 1e3).round() / 1e3)
            .collect::<Vec<_>>()
    );
    Ok(())
}
