//! Graph convolution with a learnable adjacency, temporal convolution, batch
//! normalization and their composition into a spatial-then-temporal block.
//!
//! Activations are laid out `[batch, frame, node, channel]`.

use std::cell::RefCell;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Temporal extent of the frame-mixing kernel: onset, apex and offset.
pub const TEMPORAL_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: Tensor) -> Tensor {
        match self {
            Activation::Relu => x.relu(),
            Activation::Identity => x,
        }
    }
}

pub(crate) fn uniform_init<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::param(shape, data).expect("shape matches")
}

/// `Y = act((L + A_L) X theta + b)`, the same weights and `A_L` for every frame.
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub theta: Tensor,
    pub bias: Tensor,
    /// Learnable adjacency added to the fixed operator; `None` disables it.
    pub lam: Option<Tensor>,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        c_in: usize,
        c_out: usize,
        num_nodes: usize,
        use_lam: bool,
        activation: Activation,
    ) -> Self {
        GcnLayer {
            theta: uniform_init(rng, &[c_in, c_out], c_in),
            bias: uniform_init(rng, &[c_out], c_in),
            lam: use_lam.then(|| {
                Tensor::param(&[num_nodes, num_nodes], vec![0.0; num_nodes * num_nodes])
                    .expect("square")
            }),
            activation,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.theta.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.theta.shape()[1]
    }

    /// `x` is `[..., N, C_in]`; any leading dims are treated as independent
    /// frames. `operator` is the fixed `L`.
    pub fn forward(&self, x: &Tensor, operator: &Tensor) -> Result<Tensor> {
        let mixer = match &self.lam {
            Some(lam) => operator.add(lam)?,
            None => operator.clone(),
        };
        let mixed = Tensor::mix_nodes(&mixer, x)?;
        let c_in = self.in_channels();
        let rows = mixed.numel() / c_in;
        let flat = mixed.reshape(&[rows, c_in])?;
        let y = flat.matmul(&self.theta)?.add(&self.bias)?;
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = self.out_channels();
        Ok(self.activation.apply(y.reshape(&shape)?))
    }
}

/// Per-node convolution across the three frames, zero padding 1, stride 1.
#[derive(Debug, Clone)]
pub struct TcnLayer {
    /// `[3, C, C']`.
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl TcnLayer {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, c_in: usize, c_out: usize) -> Self {
        let fan_in = TEMPORAL_KERNEL * c_in;
        TcnLayer {
            kernel: uniform_init(rng, &[TEMPORAL_KERNEL, c_in, c_out], fan_in),
            bias: uniform_init(rng, &[c_out], fan_in),
        }
    }

    pub fn forward(&self, y: &Tensor) -> Result<Tensor> {
        if y.shape().len() != 4 || y.shape()[1] != TEMPORAL_KERNEL {
            return Err(Error::Rank {
                op: "tcn",
                expected: "[batch, 3, nodes, channels]",
                got: y.shape().to_vec(),
            });
        }
        Tensor::temporal_conv(y, &self.kernel)?.add(&self.bias)
    }
}

/// Graph convolution on each frame followed by temporal convolution.
#[derive(Debug, Clone)]
pub struct SsModule {
    pub gcn: GcnLayer,
    pub tcn: TcnLayer,
}

impl SsModule {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        c_in: usize,
        c_out: usize,
        num_nodes: usize,
        use_lam: bool,
        activation: Activation,
    ) -> Self {
        SsModule {
            gcn: GcnLayer::new(rng, c_in, c_out, num_nodes, use_lam, activation),
            tcn: TcnLayer::new(rng, c_out, c_out),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.gcn.out_channels()
    }

    /// `[B, 3, N, C_in] -> [B, 3, N, C_out]`.
    pub fn forward(&self, x: &Tensor, operator: &Tensor) -> Result<Tensor> {
        let spatial = self.gcn.forward(x, operator)?;
        self.tcn.forward(&spatial)
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![
            (format!("{prefix}.gcn.theta"), self.gcn.theta.clone()),
            (format!("{prefix}.gcn.bias"), self.gcn.bias.clone()),
        ];
        if let Some(lam) = &self.gcn.lam {
            out.push((format!("{prefix}.gcn.lam"), lam.clone()));
        }
        out.push((format!("{prefix}.tcn.kernel"), self.tcn.kernel.clone()));
        out.push((format!("{prefix}.tcn.bias"), self.tcn.bias.clone()));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-channel batch normalization over every leading position.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub momentum: f64,
    pub eps: f64,
    running: RefCell<RunningStats>,
}

impl BatchNorm {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm {
            gamma: Tensor::param(&[channels], vec![1.0; channels]).expect("shape"),
            beta: Tensor::param(&[channels], vec![0.0; channels]).expect("shape"),
            momentum,
            eps,
            running: RefCell::new(RunningStats {
                mean: vec![0.0; channels],
                var: vec![1.0; channels],
            }),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn running_stats(&self) -> RunningStats {
        self.running.borrow().clone()
    }

    pub fn set_running_stats(&self, stats: RunningStats) -> Result<()> {
        if stats.mean.len() != self.channels() || stats.var.len() != self.channels() {
            return Err(Error::Checkpoint(format!(
                "batch-norm statistics have {} channels, expected {}",
                stats.mean.len(),
                self.channels()
            )));
        }
        *self.running.borrow_mut() = stats;
        Ok(())
    }

    /// Training mode normalizes with the biased batch variance and folds the
    /// unbiased one into the running estimate; eval mode uses running stats.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = self.channels();
        if x.shape().last() != Some(&c) {
            return Err(Error::Shape {
                op: "batch_norm",
                left: x.shape().to_vec(),
                right: vec![c],
            });
        }
        let rows = x.numel() / c;
        if rows == 0 {
            return Err(Error::Empty("batch"));
        }
        let flat = x.reshape(&[rows, c])?;
        let normalized = match mode {
            Mode::Train => {
                let mean = flat.mean_axis(0)?;
                let centered = flat.sub(&mean)?;
                let var = centered.square().mean_axis(0)?;
                {
                    let mut running = self.running.borrow_mut();
                    let unbias = if rows > 1 {
                        rows as f64 / (rows as f64 - 1.0)
                    } else {
                        1.0
                    };
                    let m = self.momentum;
                    for (r, &v) in running.mean.iter_mut().zip(mean.data().iter()) {
                        *r = (1.0 - m) * *r + m * v;
                    }
                    for (r, &v) in running.var.iter_mut().zip(var.data().iter()) {
                        *r = (1.0 - m) * *r + m * v * unbias;
                    }
                }
                let denom = var.add(&Tensor::scalar(self.eps))?.sqrt();
                centered.div(&denom)?
            }
            Mode::Eval => {
                let stats = self.running.borrow();
                let mean = Tensor::from_vec(&[c], stats.mean.clone())?;
                let denom: Vec<f64> = stats.var.iter().map(|v| (v + self.eps).sqrt()).collect();
                flat.sub(&mean)?.div(&Tensor::from_vec(&[c], denom)?)?
            }
        };
        normalized
            .mul(&self.gamma)?
            .add(&self.beta)?
            .reshape(x.shape())
    }
}
