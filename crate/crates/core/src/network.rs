//! Single-stream (SS-GN) and two-stream (GTS-GN) networks with AU heads.
//!
//! Layer numbering is 1-based. In a two-stream network fused at layer `f`,
//! each stream runs SS modules `1..f` on its own input, the stream outputs
//! are added, and the shared trunk runs modules `f..=L`. A single-stream
//! network is the trunk alone. AU heads sit on the trunk layers (the
//! "constrained" layers) selected by the loss mode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FeatureKind, NUM_FRAMES};
use crate::graph::GmGraph;
use crate::layers::{uniform_init, Activation, BatchNorm, Mode, SsModule};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Ssgn,
    Gtsgn,
}

/// Input of the single-stream network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFeature {
    /// `(x, y)`.
    A,
    /// `(x, y, D, alpha)`.
    B,
}

/// Input of the second (high-order) stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondStream {
    DistanceAngle,
    FullTypeB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Cross-entropy only; no AU heads.
    Me,
    /// Plain AU loss: one layer if `au_layer` is set, else the unweighted
    /// sum over all constrained layers.
    Au,
    /// Adaptive AU loss over all constrained layers.
    Aau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: Architecture,
    pub fusion_layer: usize,
    pub layer_widths: Vec<usize>,
    pub num_classes: usize,
    pub au_vocab_size: usize,
    pub feature: InputFeature,
    pub second_stream: SecondStream,
    pub loss: LossMode,
    pub au_layer: Option<usize>,
    pub beta: f64,
    pub use_lam: bool,
    pub activation: Activation,
    /// Linear motion amplification applied to apex/offset before features.
    pub amplification: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: Architecture::Gtsgn,
            fusion_layer: 1,
            layer_widths: vec![64, 64, 128, 128],
            num_classes: 6,
            au_vocab_size: 25,
            feature: InputFeature::A,
            second_stream: SecondStream::DistanceAngle,
            loss: LossMode::Aau,
            au_layer: None,
            beta: 1.0,
            use_lam: true,
            activation: Activation::Relu,
            amplification: 3.0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn num_layers(&self) -> usize {
        self.layer_widths.len()
    }

    /// First trunk layer (1-based).
    pub fn trunk_start(&self) -> usize {
        match self.mode {
            Architecture::Ssgn => 1,
            Architecture::Gtsgn => self.fusion_layer,
        }
    }

    /// Layers whose features the AU losses may constrain: the trunk.
    pub fn constrained_layers(&self) -> Vec<usize> {
        (self.trunk_start()..=self.num_layers()).collect()
    }

    /// Layers that carry an AU head under the configured loss.
    pub fn head_layers(&self) -> Vec<usize> {
        match self.loss {
            LossMode::Me => Vec::new(),
            LossMode::Aau => self.constrained_layers(),
            LossMode::Au => match self.au_layer {
                Some(l) => vec![l],
                None => self.constrained_layers(),
            },
        }
    }

    pub fn stream_a_features(&self) -> FeatureKind {
        match (self.mode, self.feature) {
            (Architecture::Ssgn, InputFeature::B) => FeatureKind::TypeB,
            _ => FeatureKind::TypeA,
        }
    }

    pub fn stream_b_features(&self) -> Option<FeatureKind> {
        match (self.mode, self.second_stream) {
            (Architecture::Ssgn, _) => None,
            (Architecture::Gtsgn, SecondStream::DistanceAngle) => Some(FeatureKind::DistanceAngle),
            (Architecture::Gtsgn, SecondStream::FullTypeB) => Some(FeatureKind::TypeB),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let l = self.num_layers();
        if l == 0 || self.layer_widths.contains(&0) {
            return bad("layer_widths must be non-empty and positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            ));
        }
        if self.mode == Architecture::Gtsgn && !(1..=l).contains(&self.fusion_layer) {
            return bad(format!(
                "fusion_layer must be in 1..={l}, got {}",
                self.fusion_layer
            ));
        }
        if self.mode == Architecture::Gtsgn && self.fusion_layer == 1 {
            let (a, b) = (self.stream_a_features(), self.stream_b_features().unwrap());
            if a.channels() != b.channels() {
                return bad(format!(
                    "fusing at layer 1 adds the raw inputs, but the streams have {} and {} channels",
                    a.channels(),
                    b.channels()
                ));
            }
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad(format!(
                "beta must be a finite value >= 0, got {}",
                self.beta
            ));
        }
        if !(self.amplification >= 1.0) || !self.amplification.is_finite() {
            return bad(format!(
                "amplification must be >= 1, got {}",
                self.amplification
            ));
        }
        if self.loss != LossMode::Me && self.au_vocab_size == 0 {
            return bad("AU losses need au_vocab_size >= 1".into());
        }
        let constrained = self.constrained_layers();
        match self.loss {
            LossMode::Aau if constrained.len() < 2 => {
                return bad(format!(
                    "the adaptive AU loss needs at least 2 constrained layers, got {}; \
                     with one layer it degenerates to the plain AU loss",
                    constrained.len()
                ))
            }
            LossMode::Au => {
                if let Some(layer) = self.au_layer {
                    if !constrained.contains(&layer) {
                        return bad(format!(
                            "au_layer {layer} is not a constrained layer (expected one of {constrained:?})"
                        ));
                    }
                }
            }
            _ => {}
        }
        if self.au_layer.is_some() && self.loss != LossMode::Au {
            return bad("au_layer only applies to loss = \"au\"".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn new<R: rand::Rng + ?Sized>(rng: &mut R, c_in: usize, c_out: usize) -> Self {
        Linear {
            weight: uniform_init(rng, &[c_in, c_out], c_in),
            bias: uniform_init(rng, &[c_out], c_in),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct AuHead {
    pub layer: usize,
    pub linear: Linear,
}

#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    graph: GmGraph,
    operator: Tensor,
    pub bn_a: BatchNorm,
    pub bn_b: Option<BatchNorm>,
    pub stream_a: Vec<SsModule>,
    pub stream_b: Vec<SsModule>,
    pub trunk: Vec<SsModule>,
    pub au_heads: Vec<AuHead>,
    pub fc: Linear,
    /// Raw AAU weights `W_r`, one per constrained layer.
    pub aau_weights: Option<Tensor>,
}

/// Everything a forward pass produces. Batched: logits are `[B, c]`.
#[derive(Debug)]
pub struct ForwardOutput {
    pub me_logits: Tensor,
    /// `(layer, [B, K])` for every AU head.
    pub au_logits: Vec<(usize, Tensor)>,
    /// `(name, [B, 3, N, C])` for every SS module output.
    pub hidden: Vec<(String, Tensor)>,
    /// `(layer, [B, C])`: node-pooled trunk outputs.
    pub pooled: Vec<(usize, Tensor)>,
    /// Trunk input after the two streams are added (the single stream's
    /// normalized input for SS-GN).
    pub fused: Tensor,
}

/// Mean over frames and nodes: `[B, T, N, C] -> [B, C]` (or `[T, N, C] -> [C]`).
pub fn pool_nodes(h: &Tensor) -> Result<Tensor> {
    match *h.shape() {
        [b, t, n, c] => h.reshape(&[b, t * n, c])?.mean_axis(1),
        [t, n, c] => h.reshape(&[t * n, c])?.mean_axis(0),
        _ => Err(Error::Rank {
            op: "pool_nodes",
            expected: "[B, T, N, C] or [T, N, C]",
            got: h.shape().to_vec(),
        }),
    }
}

impl Model {
    /// Deterministic under `seed`. Weights and biases are uniform in
    /// `+-1/sqrt(fan_in)`, learnable adjacencies start at zero, AAU weights at
    /// one and batch-norm affines at identity.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Model> {
        Self::build_with_graph(config, GmGraph::default(), seed)
    }

    pub fn build_with_graph(config: &ModelConfig, graph: GmGraph, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = graph.num_nodes;
        let (mom, eps) = (config.bn_momentum, config.bn_eps);
        let a_dim = config.stream_a_features().channels();
        let b_dim = config.stream_b_features().map(FeatureKind::channels);

        let pre = config.trunk_start() - 1;
        let widths = &config.layer_widths;
        let make_stream = |rng: &mut ChaCha8Rng, c_in: usize| {
            let mut c = c_in;
            (0..pre)
                .map(|i| {
                    let m = SsModule::new(rng, c, widths[i], n, config.use_lam, config.activation);
                    c = widths[i];
                    m
                })
                .collect::<Vec<_>>()
        };
        let stream_a = make_stream(&mut rng, a_dim);
        let stream_b = match b_dim {
            Some(d) => make_stream(&mut rng, d),
            None => Vec::new(),
        };
        let mut c = if pre == 0 { a_dim } else { widths[pre - 1] };
        let trunk = (pre..widths.len())
            .map(|i| {
                let m = SsModule::new(&mut rng, c, widths[i], n, config.use_lam, config.activation);
                c = widths[i];
                m
            })
            .collect();
        let au_heads = config
            .head_layers()
            .into_iter()
            .map(|layer| AuHead {
                layer,
                linear: Linear::new(&mut rng, widths[layer - 1], config.au_vocab_size),
            })
            .collect();
        let fc = Linear::new(&mut rng, *widths.last().unwrap(), config.num_classes);
        let aau_weights = (config.loss == LossMode::Aau).then(|| {
            let nl = config.constrained_layers().len();
            Tensor::param(&[nl], vec![1.0; nl]).expect("shape")
        });

        Ok(Model {
            operator: graph.operator_tensor(),
            graph,
            bn_a: BatchNorm::new(a_dim, mom, eps),
            bn_b: b_dim.map(|d| BatchNorm::new(d, mom, eps)),
            stream_a,
            stream_b,
            trunk,
            au_heads,
            fc,
            aau_weights,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &GmGraph {
        &self.graph
    }

    /// `stream_a`: `[B, 3, N, C_a]`; `stream_b` is required for GTS-GN.
    pub fn forward(
        &self,
        stream_a: &Tensor,
        stream_b: Option<&Tensor>,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let check = |t: &Tensor, c: usize| -> Result<()> {
            match *t.shape() {
                [_, f, nodes, ch]
                    if f == NUM_FRAMES && nodes == self.graph.num_nodes && ch == c =>
                {
                    Ok(())
                }
                _ => Err(Error::Rank {
                    op: "forward",
                    expected: "[batch, 3, nodes, channels] matching the configured features",
                    got: t.shape().to_vec(),
                }),
            }
        };
        check(stream_a, self.bn_a.channels())?;
        let mut hidden = Vec::new();

        let mut a = self.bn_a.forward(stream_a, mode)?;
        for (i, m) in self.stream_a.iter().enumerate() {
            a = m.forward(&a, &self.operator)?;
            hidden.push((format!("stream_a.layer{}", i + 1), a.clone()));
        }
        let fused = match &self.bn_b {
            Some(bn_b) => {
                let xb = stream_b.ok_or_else(|| {
                    Error::InvalidParameter(
                        "the two-stream network needs the second stream input".into(),
                    )
                })?;
                check(xb, bn_b.channels())?;
                if xb.shape()[0] != stream_a.shape()[0] {
                    return Err(Error::Shape {
                        op: "forward",
                        left: stream_a.shape().to_vec(),
                        right: xb.shape().to_vec(),
                    });
                }
                let mut b = bn_b.forward(xb, mode)?;
                for (i, m) in self.stream_b.iter().enumerate() {
                    b = m.forward(&b, &self.operator)?;
                    hidden.push((format!("stream_b.layer{}", i + 1), b.clone()));
                }
                a.add(&b)?
            }
            None => a,
        };

        let mut h = fused.clone();
        let mut pooled = Vec::new();
        let mut au_logits = Vec::new();
        let first = self.config.trunk_start();
        for (i, m) in self.trunk.iter().enumerate() {
            let layer = first + i;
            h = m.forward(&h, &self.operator)?;
            hidden.push((format!("layer{layer}"), h.clone()));
            let p = pool_nodes(&h)?;
            if let Some(head) = self.au_heads.iter().find(|hd| hd.layer == layer) {
                au_logits.push((layer, head.linear.forward(&p)?));
            }
            pooled.push((layer, p));
        }
        let last = &pooled.last().expect("at least one trunk layer").1;
        let me_logits = self.fc.forward(last)?;
        Ok(ForwardOutput {
            me_logits,
            au_logits,
            hidden,
            pooled,
            fused,
        })
    }

    /// Every learnable tensor, in a fixed order.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("bn_a.gamma".to_string(), self.bn_a.gamma.clone()),
            ("bn_a.beta".to_string(), self.bn_a.beta.clone()),
        ];
        if let Some(bn) = &self.bn_b {
            out.push(("bn_b.gamma".into(), bn.gamma.clone()));
            out.push(("bn_b.beta".into(), bn.beta.clone()));
        }
        for (i, m) in self.stream_a.iter().enumerate() {
            out.extend(m.named_parameters(&format!("stream_a.layer{}", i + 1)));
        }
        for (i, m) in self.stream_b.iter().enumerate() {
            out.extend(m.named_parameters(&format!("stream_b.layer{}", i + 1)));
        }
        let first = self.config.trunk_start();
        for (i, m) in self.trunk.iter().enumerate() {
            out.extend(m.named_parameters(&format!("trunk.layer{}", first + i)));
        }
        for h in &self.au_heads {
            out.push((
                format!("au_head.layer{}.weight", h.layer),
                h.linear.weight.clone(),
            ));
            out.push((
                format!("au_head.layer{}.bias", h.layer),
                h.linear.bias.clone(),
            ));
        }
        out.push(("fc.weight".into(), self.fc.weight.clone()));
        out.push(("fc.bias".into(), self.fc.bias.clone()));
        if let Some(w) = &self.aau_weights {
            out.push(("aau.weights".into(), w.clone()));
        }
        out
    }

    /// `(name, layer, A_L)` for every learnable adjacency.
    pub fn learnable_adjacencies(&self) -> Vec<(String, Tensor)> {
        self.named_parameters()
            .into_iter()
            .filter(|(name, _)| name.ends_with(".gcn.lam"))
            .collect()
    }

    pub fn batch_norms(&self) -> Vec<(&'static str, &BatchNorm)> {
        let mut out = vec![("bn_a", &self.bn_a)];
        if let Some(bn) = &self.bn_b {
            out.push(("bn_b", bn));
        }
        out
    }

    pub fn zero_grad(&self) {
        for (_, p) in self.named_parameters() {
            p.zero_grad();
        }
    }

    /// Normalized AAU weights `W_r^2 / sum W^2`, when the model has them.
    pub fn normalized_aau_weights(&self) -> Option<Result<Vec<f64>>> {
        self.aau_weights
            .as_ref()
            .map(|w| crate::losses::normalized_weights(&w.data()))
    }
}

/// Total number of learnable scalars.
pub fn count_parameters(model: &Model) -> usize {
    model
        .named_parameters()
        .iter()
        .map(|(_, t)| t.numel())
        .sum()
}

/// `(name, shape, count)` per parameter tensor.
pub fn parameter_table(model: &Model) -> Vec<(String, Vec<usize>, usize)> {
    model
        .named_parameters()
        .into_iter()
        .map(|(name, t)| (name, t.shape().to_vec(), t.numel()))
        .collect()
}
