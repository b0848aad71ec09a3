//! The spatial graph over the 14 landmark nodes and its normalized operator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NUM_NODES;
use crate::numerics::Tensor;

/// Undirected edges of the default 14-node graph: region chains plus the
/// brow/nose/mouth bridges.
pub const DEFAULT_EDGES: [(usize, usize); 15] = [
    // left brow
    (0, 1),
    (1, 2),
    // right brow
    (3, 4),
    (4, 5),
    // nose
    (6, 7),
    (7, 8),
    (8, 9),
    // mouth ring
    (10, 11),
    (11, 12),
    (12, 13),
    (13, 10),
    // bridges
    (2, 3),
    (2, 6),
    (3, 6),
    (8, 11),
];

/// Fixed adjacency `A` and operator `L = I + D^{-1/2} A D^{-1/2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmGraph {
    pub num_nodes: usize,
    pub adjacency: Vec<f64>,
    pub operator: Vec<f64>,
}

impl GmGraph {
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = vec![0.0; num_nodes * num_nodes];
        for &(i, j) in edges {
            if i >= num_nodes || j >= num_nodes || i == j {
                return Err(Error::InvalidParameter(format!("bad edge ({i}, {j})")));
            }
            a[i * num_nodes + j] = 1.0;
            a[j * num_nodes + i] = 1.0;
        }
        Self::from_adjacency(num_nodes, a)
    }

    pub fn from_adjacency(num_nodes: usize, adjacency: Vec<f64>) -> Result<Self> {
        let operator = normalized_operator(num_nodes, &adjacency)?;
        Ok(GmGraph {
            num_nodes,
            adjacency,
            operator,
        })
    }

    pub fn operator_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.num_nodes, self.num_nodes], self.operator.clone())
            .expect("square operator")
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.adjacency
            .chunks(self.num_nodes)
            .map(|row| row.iter().sum())
            .collect()
    }
}

impl Default for GmGraph {
    fn default() -> Self {
        GmGraph::from_edges(NUM_NODES, &DEFAULT_EDGES).expect("default edge list is valid")
    }
}

pub fn predefined_adjacency() -> Tensor {
    let g = GmGraph::default();
    Tensor::from_vec(&[NUM_NODES, NUM_NODES], g.adjacency).expect("square")
}

fn check_square(a: &Tensor) -> Result<usize> {
    match a.shape() {
        [n, m] if n == m => Ok(*n),
        other => Err(Error::Rank {
            op: "adjacency",
            expected: "a square matrix",
            got: other.to_vec(),
        }),
    }
}

/// `D^{-1/2} A D^{-1/2}`; zero-degree nodes get a zero row and column.
fn sym_normalized(n: usize, a: &[f64]) -> Result<Vec<f64>> {
    for i in 0..n {
        for j in 0..n {
            let v = a[i * n + j];
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "adjacency entry ({i}, {j}) = {v} is not a non-negative number"
                )));
            }
            if v != a[j * n + i] {
                return Err(Error::InvalidParameter(format!(
                    "adjacency is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let inv_sqrt: Vec<f64> = a
        .chunks(n)
        .map(|row| {
            let d: f64 = row.iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv_sqrt[i] * a[i * n + j] * inv_sqrt[j];
        }
    }
    Ok(out)
}

fn normalized_operator(n: usize, a: &[f64]) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::Shape {
            op: "normalize_adjacency",
            left: vec![n, n],
            right: vec![a.len()],
        });
    }
    let mut l = sym_normalized(n, a)?;
    for i in 0..n {
        l[i * n + i] += 1.0;
    }
    Ok(l)
}

/// `L = I + D^{-1/2} A D^{-1/2}` for a symmetric non-negative `A`.
pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    let n = check_square(a)?;
    let l = normalized_operator(n, &a.data())?;
    Tensor::from_vec(&[n, n], l)
}

/// Reference spectral filter `sum_r theta_r C_r(L_hat) X` with Chebyshev
/// polynomials `C_0 = I`, `C_1 = L_hat`, `C_r = 2 L_hat C_{r-1} - C_{r-2}` and
/// `L_hat = 2 (I - D^{-1/2} A D^{-1/2}) / lambda_max - I`.
///
/// `thetas` holds one scalar coefficient per order `0..=R`. This is the
/// full-order form the network's first-order layer is derived from; it is
/// used for verification, not training.
pub fn chebyshev_filter(
    x: &Tensor,
    adjacency: &Tensor,
    thetas: &[f64],
    lambda_max: f64,
) -> Result<Tensor> {
    let n = check_square(adjacency)?;
    if x.shape().len() != 2 || x.shape()[0] != n {
        return Err(Error::Shape {
            op: "chebyshev_filter",
            left: adjacency.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    if thetas.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one Chebyshev coefficient".into(),
        ));
    }
    if !(lambda_max > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda_max must be > 0, got {lambda_max}"
        )));
    }
    let c = x.shape()[1];
    let norm = sym_normalized(n, &adjacency.data())?;
    // L_hat = 2 (I - norm) / lambda_max - I
    let mut l_hat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let lap = if i == j { 1.0 } else { 0.0 } - norm[i * n + j];
            l_hat[i * n + j] = 2.0 * lap / lambda_max - if i == j { 1.0 } else { 0.0 };
        }
    }
    let apply = |m: &[f64], v: &[f64]| {
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            for j in 0..n {
                let w = m[i * n + j];
                for k in 0..c {
                    out[i * c + k] += w * v[j * c + k];
                }
            }
        }
        out
    };

    // Recurrence on the filtered signals T_r = C_r(L_hat) X.
    let x0 = x.to_vec();
    let mut y: Vec<f64> = x0.iter().map(|v| thetas[0] * v).collect();
    let mut prev = x0.clone();
    let mut cur = apply(&l_hat, &x0);
    for (r, &theta) in thetas.iter().enumerate().skip(1) {
        if r > 1 {
            let next: Vec<f64> = apply(&l_hat, &cur)
                .iter()
                .zip(&prev)
                .map(|(a, b)| 2.0 * a - b)
                .collect();
            prev = std::mem::replace(&mut cur, next);
        }
        for (yv, tv) in y.iter_mut().zip(&cur) {
            *yv += theta * tv;
        }
    }
    Tensor::from_vec(&[n, c], y)
}
