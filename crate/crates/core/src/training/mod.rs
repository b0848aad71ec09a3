//! Training loop, evaluation, leave-one-subject-out protocol, synthetic data
//! and the finite-difference gradient check.

mod export;
mod gradcheck;
mod loso;
mod metrics;
mod synth;

pub use export::{
    lam_file_name, top_k_edges, write_aau_weights, write_hidden, write_lam, write_loss_trace,
    write_metrics, write_predictions, RunArtifacts,
};
pub use gradcheck::{gradcheck, GradcheckEntry, GradcheckReport, GRADCHECK_STEP};
pub use loso::{
    cross_validate, holdout_split, loso_split, run_loso, train_and_test, FoldResult, LosoFold,
    LosoReport,
};
pub use metrics::{ClassStats, Metrics};
pub use synth::{canonical_face, synth_dataset, ClassPattern, SynthSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    amplify_motion, build_node_features, jitter_with_rng, normalize_coordinates, NodeFeatures,
    Sample, NUM_FRAMES, NUM_NODES,
};
use crate::layers::Mode;
use crate::losses::{aau_loss, au_loss, me_loss, total_loss, unweighted_multilayer_loss};
use crate::network::{ForwardOutput, LossMode, Model, ModelConfig};
use crate::numerics::{Adam, AdamState, Tensor};

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Landmark jitter on the raw coordinates, redrawn every epoch.
    pub augmentation: bool,
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lr: 1e-3,
            epochs: 300,
            batch_size: 16,
            augmentation: false,
            jitter_sigma: 0.5,
            seed: 0,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "jitter_sigma must be >= 0, got {}",
                self.jitter_sigma
            )));
        }
        Ok(())
    }
}

/// Network-ready inputs of one sample.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub stream_a: NodeFeatures,
    pub stream_b: Option<NodeFeatures>,
}

/// select -> (jitter) -> normalize -> amplify -> node features.
pub fn prepare_sample(
    sample: &Sample,
    cfg: &ModelConfig,
    jitter: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<Prepared> {
    let mut t = sample.frames.selected()?;
    if let Some((sigma, rng)) = jitter {
        t = jitter_with_rng(&t, sigma, rng)?;
    }
    let t = amplify_motion(&normalize_coordinates(&t)?, cfg.amplification)?;
    Ok(Prepared {
        stream_a: build_node_features(&t, cfg.stream_a_features())?,
        stream_b: cfg
            .stream_b_features()
            .map(|kind| build_node_features(&t, kind))
            .transpose()?,
    })
}

pub fn prepare_all(samples: &[Sample], cfg: &ModelConfig) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            prepare_sample(s, cfg, None).map_err(|e| match e {
                Error::DegenerateFace(d) => Error::InvalidParameter(format!(
                    "sample {}: degenerate face (inter-brow distance {d})",
                    s.id
                )),
                other => other,
            })
        })
        .collect()
}

fn stack(parts: &[&NodeFeatures]) -> Tensor {
    let c = parts[0].channels();
    let mut data = Vec::with_capacity(parts.len() * NUM_FRAMES * NUM_NODES * c);
    for p in parts {
        data.extend_from_slice(&p.values);
    }
    Tensor::from_vec(&[parts.len(), NUM_FRAMES, NUM_NODES, c], data).expect("consistent layout")
}

/// Batched `[B, 3, 14, C]` inputs for the given prepared samples.
pub fn batch_inputs(prepared: &[&Prepared]) -> (Tensor, Option<Tensor>) {
    let a: Vec<&NodeFeatures> = prepared.iter().map(|p| &p.stream_a).collect();
    let b: Option<Vec<&NodeFeatures>> = prepared.iter().map(|p| p.stream_b.as_ref()).collect();
    (stack(&a), b.map(|b| stack(&b)))
}

/// The three parts of the training objective for one batch.
#[derive(Debug)]
pub struct Objective {
    pub total: Tensor,
    pub me: Tensor,
    /// The (weighted) AU term before multiplication by beta; `None` for `loss = me`.
    pub aux: Option<Tensor>,
}

pub fn objective(
    model: &Model,
    out: &ForwardOutput,
    labels: &[usize],
    au: &[Vec<u8>],
) -> Result<Objective> {
    let cfg = model.config();
    let me = me_loss(&out.me_logits, labels)?;
    let aux = match cfg.loss {
        LossMode::Me => None,
        LossMode::Au | LossMode::Aau => {
            let layer_losses = out
                .au_logits
                .iter()
                .map(|(_, logits)| au_loss(logits, au))
                .collect::<Result<Vec<_>>>()?;
            Some(match (cfg.loss, &model.aau_weights) {
                (LossMode::Aau, Some(w)) => aau_loss(&layer_losses, w)?,
                _ => unweighted_multilayer_loss(&layer_losses)?,
            })
        }
    };
    let total = match &aux {
        Some(a) => total_loss(&me, a, cfg.beta)?,
        None => me.clone(),
    };
    Ok(Objective { total, me, aux })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub me: f64,
    pub aux: f64,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub loss_trace: Vec<EpochLoss>,
    pub optimizer_state: AdamState,
}

fn first_non_finite(model: &Model, out: Option<&ForwardOutput>) -> String {
    let bad = |t: &Tensor| t.data().iter().any(|v| !v.is_finite());
    for (name, p) in model.named_parameters() {
        if bad(&p) {
            return format!("parameter {name}");
        }
        if let Some(g) = p.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return format!("gradient of {name}");
            }
        }
    }
    if let Some(out) = out {
        for (name, h) in &out.hidden {
            if bad(h) {
                return format!("activation {name}");
            }
        }
        for (layer, l) in &out.au_logits {
            if bad(l) {
                return format!("AU logits of layer {layer}");
            }
        }
        if bad(&out.me_logits) {
            return "ME logits".into();
        }
    }
    "loss (all tensors finite)".into()
}

fn check_aau_weights(model: &Model, epoch: usize) -> Result<()> {
    if let Some(w) = model.normalized_aau_weights() {
        let w = w?;
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || w.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::NonFinite(format!(
                "normalized AAU weights {w:?} are not a distribution after epoch {epoch}"
            )));
        }
    }
    Ok(())
}

fn check_labels(model: &Model, samples: &[Sample]) -> Result<()> {
    let cfg = model.config();
    for s in samples {
        if s.me_label >= cfg.num_classes {
            return Err(Error::InvalidParameter(format!(
                "sample {} has label {} but the model has {} classes",
                s.id, s.me_label, cfg.num_classes
            )));
        }
        if cfg.loss != LossMode::Me && s.au_labels.len() != cfg.au_vocab_size {
            return Err(Error::InvalidParameter(format!(
                "sample {} has {} AU labels but au_vocab_size is {}",
                s.id,
                s.au_labels.len(),
                cfg.au_vocab_size
            )));
        }
    }
    Ok(())
}

/// Adam on the total objective. The shuffle order, jitter and therefore the
/// whole run are determined by `hyper.seed`.
pub fn fit(model: &Model, samples: &[Sample], hyper: &Hyper) -> Result<FitReport> {
    fit_with_state(model, samples, hyper, None)
}

pub fn fit_with_state(
    model: &Model,
    samples: &[Sample],
    hyper: &Hyper,
    state: Option<AdamState>,
) -> Result<FitReport> {
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    hyper.validate()?;
    check_labels(model, samples)?;
    let cfg = model.config().clone();
    let params = model.named_parameters();
    let mut adam = Adam::new(hyper.lr);
    if let Some(s) = state {
        adam.set_state(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let fixed = if hyper.augmentation {
        None
    } else {
        Some(prepare_all(samples, &cfg)?)
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(hyper.epochs);

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let jittered;
        let prepared = match &fixed {
            Some(p) => p,
            None => {
                jittered = samples
                    .iter()
                    .map(|s| prepare_sample(s, &cfg, Some((hyper.jitter_sigma, &mut rng))))
                    .collect::<Result<Vec<_>>>()?;
                &jittered
            }
        };
        let (mut sum_total, mut sum_me, mut sum_aux) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| samples[i].me_label).collect();
            let au: Vec<Vec<u8>> = chunk
                .iter()
                .map(|&i| samples[i].au_labels.clone())
                .collect();
            let (xa, xb) = batch_inputs(&batch);
            let out = model.forward(&xa, xb.as_ref(), Mode::Train)?;
            let obj = objective(model, &out, &labels, &au)?;
            let total = obj.total.item();
            if !total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss became {total} in epoch {epoch}; first non-finite tensor: {}",
                    first_non_finite(model, Some(&out))
                )));
            }
            model.zero_grad();
            obj.total.backward()?;
            adam.step(&params)?;
            let w = chunk.len() as f64;
            sum_total += total * w;
            sum_me += obj.me.item() * w;
            sum_aux += obj.aux.as_ref().map_or(0.0, |a| a.item()) * w;
        }
        if params
            .iter()
            .any(|(_, p)| p.data().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite(format!(
                "after epoch {epoch}: first non-finite tensor: {}",
                first_non_finite(model, None)
            )));
        }
        check_aau_weights(model, epoch)?;
        let n = samples.len() as f64;
        trace.push(EpochLoss {
            epoch,
            total: sum_total / n,
            me: sum_me / n,
            aux: sum_aux / n,
        });
    }
    model.zero_grad();
    Ok(FitReport {
        loss_trace: trace,
        optimizer_state: adam.state().clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub subject_id: String,
    pub true_label: usize,
    pub predicted: usize,
    pub probabilities: Vec<f64>,
}

/// Node-pooled trunk features of one sample, for external embedding plots.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenRecord {
    pub sample_id: String,
    pub true_label: usize,
    /// `(layer, features)`.
    pub layers: Vec<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub predictions: Vec<Prediction>,
    pub hidden: Vec<HiddenRecord>,
    pub metrics: Metrics,
}

fn argmax(v: &[f64]) -> usize {
    // First maximum wins on ties.
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode predictions. Labels outside the model's classes are allowed
/// for prediction-only use but make metric computation fail.
pub fn predict(model: &Model, samples: &[Sample]) -> Result<(Vec<Prediction>, Vec<HiddenRecord>)> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let cfg = model.config();
    let prepared = prepare_all(samples, cfg)?;
    let mut predictions = Vec::with_capacity(samples.len());
    let mut hidden = Vec::with_capacity(samples.len());
    let c = cfg.num_classes;
    for (idx, chunk) in prepared.chunks(64).enumerate() {
        let refs: Vec<&Prepared> = chunk.iter().collect();
        let (xa, xb) = batch_inputs(&refs);
        let out = model.forward(&xa, xb.as_ref(), Mode::Eval)?;
        let logp = out.me_logits.log_softmax()?.to_vec();
        let pooled: Vec<(usize, Vec<f64>)> =
            out.pooled.iter().map(|(l, t)| (*l, t.to_vec())).collect();
        for j in 0..chunk.len() {
            let s = &samples[idx * 64 + j];
            let probs: Vec<f64> = logp[j * c..(j + 1) * c].iter().map(|v| v.exp()).collect();
            predictions.push(Prediction {
                sample_id: s.id.clone(),
                subject_id: s.subject_id.clone(),
                true_label: s.me_label,
                predicted: argmax(&logp[j * c..(j + 1) * c]),
                probabilities: probs,
            });
            hidden.push(HiddenRecord {
                sample_id: s.id.clone(),
                true_label: s.me_label,
                layers: pooled
                    .iter()
                    .map(|(l, v)| {
                        let w = v.len() / chunk.len();
                        (*l, v[j * w..(j + 1) * w].to_vec())
                    })
                    .collect(),
            });
        }
    }
    Ok((predictions, hidden))
}

pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<Evaluation> {
    let (predictions, hidden) = predict(model, samples)?;
    let truth: Vec<usize> = predictions.iter().map(|p| p.true_label).collect();
    let pred: Vec<usize> = predictions.iter().map(|p| p.predicted).collect();
    let metrics = Metrics::from_labels(&truth, &pred, model.config().num_classes)?;
    Ok(Evaluation {
        predictions,
        hidden,
        metrics,
    })
}
