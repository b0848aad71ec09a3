use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{evaluate, fit, EpochLoss, HiddenRecord, Hyper, Metrics, Prediction};
use crate::error::{Error, Result};
use crate::geometry::Sample;
use crate::network::{Model, ModelConfig};

/// One cross-validation fold as sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LosoFold {
    pub held_out_subject: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn subjects(samples: &[Sample]) -> BTreeSet<&str> {
    samples.iter().map(|s| s.subject_id.as_str()).collect()
}

fn split_by(samples: &[Sample], held_out: &BTreeSet<&str>, name: String) -> LosoFold {
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..samples.len()).partition(|&i| held_out.contains(samples[i].subject_id.as_str()));
    LosoFold {
        held_out_subject: name,
        train,
        test,
    }
}

/// One fold per subject, in sorted subject order.
pub fn loso_split(samples: &[Sample]) -> Result<Vec<LosoFold>> {
    let subs = subjects(samples);
    if subs.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            subs.len()
        )));
    }
    Ok(subs
        .iter()
        .map(|&s| split_by(samples, &BTreeSet::from([s]), s.to_string()))
        .collect())
}

/// Subject-disjoint split: the last `ceil(fraction * subjects)` subjects in
/// sorted order are held out (at least one, and at least one is kept).
pub fn holdout_split(samples: &[Sample], fraction: f64) -> Result<LosoFold> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "holdout fraction must be in (0, 1), got {fraction}"
        )));
    }
    let subs: Vec<&str> = subjects(samples).into_iter().collect();
    if subs.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "a subject-disjoint holdout needs at least 2 subjects, found {}",
            subs.len()
        )));
    }
    let k = ((fraction * subs.len() as f64).ceil() as usize).clamp(1, subs.len() - 1);
    let held: BTreeSet<&str> = subs[subs.len() - k..].iter().copied().collect();
    let name = held.iter().copied().collect::<Vec<_>>().join("+");
    Ok(split_by(samples, &held, name))
}

/// Runs `task` once per fold on up to `jobs` threads. Results come back in
/// fold order regardless of scheduling; the first error wins.
pub fn cross_validate<T, F>(folds: &[LosoFold], jobs: usize, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &LosoFold) -> Result<T> + Sync,
{
    let jobs = jobs.clamp(1, folds.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..folds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= folds.len() {
                    break;
                }
                let r = task(i, &folds[i]);
                slots.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("threads joined")
        .into_iter()
        .map(|r| r.expect("every fold ran"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub held_out_subject: String,
    pub metrics: Metrics,
    pub predictions: Vec<Prediction>,
    pub hidden: Vec<HiddenRecord>,
    /// Normalized AAU weights of the trained model, one per constrained layer.
    pub aau_weights: Option<Vec<f64>>,
    /// `(parameter name, row-major A_L)` for every learnable adjacency.
    pub lams: Vec<(String, Vec<f64>)>,
    pub loss_trace: Vec<EpochLoss>,
}

#[derive(Debug, Clone)]
pub struct LosoReport {
    pub pooled: Metrics,
    pub folds: Vec<FoldResult>,
    pub constrained_layers: Vec<usize>,
}

/// Trains and tests one model on a fold; the model seed is
/// `hyper.seed + fold index`.
pub fn train_and_test(
    samples: &[Sample],
    fold: &LosoFold,
    fold_index: usize,
    cfg: &ModelConfig,
    hyper: &Hyper,
) -> Result<FoldResult> {
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let (train, test) = (pick(&fold.train), pick(&fold.test));
    let model = Model::build(cfg, hyper.seed.wrapping_add(fold_index as u64))?;
    let report = fit(&model, &train, hyper)?;
    let eval = evaluate(&model, &test)?;
    Ok(FoldResult {
        held_out_subject: fold.held_out_subject.clone(),
        metrics: eval.metrics,
        predictions: eval.predictions,
        hidden: eval.hidden,
        aau_weights: model.normalized_aau_weights().transpose()?,
        lams: model
            .learnable_adjacencies()
            .into_iter()
            .map(|(n, t)| (n, t.to_vec()))
            .collect(),
        loss_trace: report.loss_trace,
    })
}

/// Leave-one-subject-out: a fresh model per fold, confusion matrices pooled.
pub fn run_loso(
    samples: &[Sample],
    cfg: &ModelConfig,
    hyper: &Hyper,
    jobs: usize,
) -> Result<LosoReport> {
    cfg.validate()?;
    hyper.validate()?;
    let folds = loso_split(samples)?;
    let results = cross_validate(&folds, jobs, |i, fold| {
        train_and_test(samples, fold, i, cfg, hyper)
    })?;
    let pooled = Metrics::pooled(&results.iter().map(|r| &r.metrics).collect::<Vec<_>>())?;
    Ok(LosoReport {
        pooled,
        folds: results,
        constrained_layers: cfg.constrained_layers(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{KeyTriplet, LandmarkFrame, NUM_NODES};

    fn sample(id: usize, subject: &str, label: usize) -> Sample {
        let f = LandmarkFrame::new((0..NUM_NODES).map(|i| [i as f64, (i * i) as f64]).collect())
            .unwrap();
        Sample {
            id: format!("x{id}"),
            subject_id: subject.into(),
            me_label: label,
            au_labels: vec![],
            frames: KeyTriplet::new(f.clone(), f.clone(), f).unwrap(),
        }
    }

    fn dataset() -> Vec<Sample> {
        let subs = ["b", "a", "c", "a", "c", "c", "b"];
        subs.iter()
            .enumerate()
            .map(|(i, s)| sample(i, s, i % 2))
            .collect()
    }

    #[test]
    fn one_fold_per_subject_partitioning_the_data() {
        let d = dataset();
        let folds = loso_split(&d).unwrap();
        assert_eq!(folds.len(), 3);
        let mut seen = vec![0; d.len()];
        for f in &folds {
            for &i in &f.test {
                seen[i] += 1;
                assert_eq!(d[i].subject_id, f.held_out_subject);
            }
            assert!(f
                .train
                .iter()
                .all(|&i| d[i].subject_id != f.held_out_subject));
            assert_eq!(f.train.len() + f.test.len(), d.len());
        }
        assert!(seen.iter().all(|&n| n == 1));
        assert!(loso_split(&d[..1]).is_err());
    }

    #[test]
    fn holdout_is_subject_disjoint() {
        let d = dataset();
        let h = holdout_split(&d, 0.25).unwrap();
        assert_eq!(h.held_out_subject, "c");
        assert_eq!(h.test, vec![2, 4, 5]);
    }

    #[test]
    fn cross_validate_keeps_fold_order() {
        let d = dataset();
        let folds = loso_split(&d).unwrap();
        for jobs in [1, 2, 8] {
            let names =
                cross_validate(&folds, jobs, |_, f| Ok(f.held_out_subject.clone())).unwrap();
            assert_eq!(names, vec!["a", "b", "c"]);
        }
    }

    #[test]
    fn constant_predictor_scores_the_class_frequency() {
        let d = dataset();
        let folds = loso_split(&d).unwrap();
        let per_fold = cross_validate(&folds, 2, |_, f| {
            let truth: Vec<usize> = f.test.iter().map(|&i| d[i].me_label).collect();
            Metrics::from_labels(&truth, &vec![1; truth.len()], 2)
        })
        .unwrap();
        let pooled = Metrics::pooled(&per_fold.iter().collect::<Vec<_>>()).unwrap();
        let freq = d.iter().filter(|s| s.me_label == 1).count() as f64 / d.len() as f64;
        assert!((pooled.accuracy - freq).abs() < 1e-15);
    }
}
