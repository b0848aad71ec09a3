//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line, even when all pass.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gtsgn::config::RunConfig;
use gtsgn::geometry::NUM_NODES;
use gtsgn::graph::{chebyshev_filter, GmGraph};
use gtsgn::layers::{Activation, GcnLayer, Mode, SsModule, TcnLayer};
use gtsgn::losses::{aau_loss, me_loss, normalized_weights, total_loss};
use gtsgn::network::{count_parameters, Architecture, LossMode, Model, ModelConfig};
use gtsgn::training::{
    evaluate, fit, gradcheck, loso_split, run_loso, synth_dataset, write_predictions, Hyper,
    RunArtifacts, SynthSpec,
};
use gtsgn::{Error, Tensor};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn micro() -> ModelConfig {
    RunConfig::micro().model
}

/// Hyperparameters of the learning smoke test, chosen after checking
/// convergence on several synthetic seeds.
fn smoke_hyper() -> Hyper {
    Hyper {
        lr: 3e-3,
        epochs: 500,
        batch_size: 8,
        ..Hyper::default()
    }
}

fn parameter_count() -> Check {
    let cfg = ModelConfig {
        mode: Architecture::Ssgn,
        ..ModelConfig::default()
    };
    let total = count_parameters(&Model::build(&cfg, 0).map_err(|e| e.to_string())?);
    ensure(
        (155_000..=172_000).contains(&total),
        format!("count {total} outside [155000, 172000]"),
    )?;
    Ok(format!("SS-GN type A, c = 6: {total} parameters"))
}

/// `(I + D^-1/2 A D^-1/2) X`, written out independently of the library.
fn first_order_closed_form(n: usize, a: &[f64], x: &[f64], c: usize, theta0: f64) -> Vec<f64> {
    let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i * n + j]).sum()).collect();
    let mut y = vec![0.0; n * c];
    for i in 0..n {
        for k in 0..c {
            let mut acc = x[i * c + k];
            for j in 0..n {
                if deg[i] > 0.0 && deg[j] > 0.0 {
                    acc += a[i * n + j] / (deg[i].sqrt() * deg[j].sqrt()) * x[j * c + k];
                }
            }
            y[i * c + k] = theta0 * acc;
        }
    }
    y
}

fn chebyshev_collapse() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(3..=20);
        let c = rng.gen_range(1..=4);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                if rng.gen_bool(0.3) {
                    let w = rng.gen_range(0.1..2.0);
                    a[i * n + j] = w;
                    a[j * n + i] = w;
                }
            }
        }
        let x: Vec<f64> = (0..n * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let theta0 = rng.gen_range(-2.0..2.0);
        let adj = Tensor::from_vec(&[n, n], a.clone()).unwrap();
        let xt = Tensor::from_vec(&[n, c], x.clone()).unwrap();
        let y = chebyshev_filter(&xt, &adj, &[theta0, -theta0], 2.0).map_err(|e| e.to_string())?;
        let expected = first_order_closed_form(n, &a, &x, c, theta0);
        for (u, v) in y.to_vec().iter().zip(&expected) {
            worst = worst.max((u - v).abs());
        }
    }
    ensure(worst <= 1e-10, format!("max deviation {worst:e}"))?;
    Ok(format!("20 random graphs, max deviation {worst:.1e}"))
}

fn gradient_suite() -> Check {
    let ss = ModelConfig {
        mode: Architecture::Ssgn,
        ..micro()
    };
    let gts = micro();
    let spec = SynthSpec {
        num_classes: 3,
        au_vocab_size: 4,
        ..SynthSpec::default()
    };
    let data = synth_dataset(&spec).unwrap();
    let mut summary = Vec::new();
    for (label, cfg) in [("SS-GN", ss), ("GTS-GN(2)", gts)] {
        ensure(cfg.beta == 1.0, "beta must be 1")?;
        let model = Model::build(&cfg, 0).map_err(|e| e.to_string())?;
        let report = gradcheck(&model, &data[..4], 1e-4).map_err(|e| e.to_string())?;
        let names: Vec<&str> = report.entries.iter().map(|e| e.name.as_str()).collect();
        ensure(
            names.iter().any(|n| n.ends_with(".gcn.lam")),
            "no A_L in sweep",
        )?;
        ensure(names.contains(&"aau.weights"), "no W_r in sweep")?;
        ensure(
            report.entries.len() == model.named_parameters().len(),
            "not every tensor checked",
        )?;
        let worst = report.worst().unwrap();
        ensure(
            report.passed,
            format!(
                "{label}: {} rel err {:e} (unresolved {})",
                worst.name, worst.max_rel_err, worst.unresolved
            ),
        )?;
        summary.push(format!("{label} worst {:.1e}", worst.max_rel_err));
    }
    Ok(summary.join(", "))
}

fn aau_algebra() -> Check {
    let w: Vec<f64> = vec![0.3, -1.7, 2.2, 0.05];
    let n = normalized_weights(&w).unwrap();
    let s: f64 = n.iter().sum();
    ensure(
        (s - 1.0).abs() <= 1e-12 && n.iter().all(|&v| v >= 0.0),
        format!("sum {s}"),
    )?;

    let losses: Vec<Tensor> = [0.9, 0.4, 1.3, 0.2]
        .iter()
        .map(|&v| Tensor::scalar(v))
        .collect();
    let base = aau_loss(&losses, &Tensor::from_vec(&[4], w.clone()).unwrap())
        .unwrap()
        .item();
    let scaled = aau_loss(
        &losses,
        &Tensor::from_vec(&[4], w.iter().map(|v| 7.0 * v).collect()).unwrap(),
    )
    .unwrap()
    .item();
    ensure(
        (base - scaled).abs() <= 4.0 * f64::EPSILON * base,
        format!("{base} vs {scaled}"),
    )?;

    let v = aau_loss(
        &[Tensor::scalar(1.0), Tensor::scalar(2.0)],
        &Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap(),
    )
    .unwrap()
    .item();
    ensure((v - 1.64).abs() <= 1e-15, format!("W=(3,4) gave {v}"))?;

    let logits = Tensor::from_vec(&[2, 3], vec![0.2, -1.0, 0.5, 1.5, 0.0, -0.3]).unwrap();
    let l_me = me_loss(&logits, &[2, 0]).unwrap();
    let t = total_loss(&l_me, &Tensor::scalar(0.77), 0.0).unwrap();
    ensure(
        t.item().to_bits() == l_me.item().to_bits(),
        "beta = 0 is not bit-exact",
    )?;

    let degenerate = ModelConfig {
        fusion_layer: 4,
        loss: LossMode::Aau,
        ..ModelConfig::default()
    };
    match Model::build(&degenerate, 0) {
        Err(Error::Config(msg)) => ensure(msg.contains("degenerates"), msg)?,
        other => {
            return Err(format!(
                "AAU with one constrained layer accepted: {:?}",
                other.map(|_| ())
            ))
        }
    }
    Ok("normalization, scale invariance, 1.64, beta = 0, N_L = 1 rejection".into())
}

fn lam_neutrality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let op = GmGraph::default().operator_tensor();
    for trial in 0..10 {
        let with = GcnLayer::new(&mut rng, 3, 5, NUM_NODES, true, Activation::Relu);
        let without = GcnLayer {
            lam: None,
            ..with.clone()
        };
        let x = random_tensor(&mut rng, &[2, 3, NUM_NODES, 3]);
        let a = with.forward(&x, &op).unwrap().to_vec();
        let b = without.forward(&x, &op).unwrap().to_vec();
        let same = a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits());
        ensure(same, format!("trial {trial} differs"))?;
    }
    Ok("10 random inputs bit-identical".into())
}

fn structural_invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // TCN stacks of any depth keep the three frames.
    let mut h = random_tensor(&mut rng, &[2, 3, NUM_NODES, 4]);
    for depth in 1..=6 {
        h = TcnLayer::new(&mut rng, 4, 4).forward(&h).unwrap();
        ensure(
            h.shape() == [2, 3, NUM_NODES, 4],
            format!("depth {depth}: {:?}", h.shape()),
        )?;
    }
    // Every fusion point builds and keeps the layer dimensions end to end.
    for f in 1..=4 {
        let cfg = ModelConfig {
            fusion_layer: f,
            loss: if f == 4 { LossMode::Au } else { LossMode::Aau },
            ..ModelConfig::default()
        };
        let model = Model::build(&cfg, 1).map_err(|e| e.to_string())?;
        let xa = random_tensor(&mut rng, &[2, 3, NUM_NODES, 2]);
        let xb = random_tensor(&mut rng, &[2, 3, NUM_NODES, 2]);
        let out = model.forward(&xa, Some(&xb), Mode::Eval).unwrap();
        let widths: Vec<usize> = out
            .hidden
            .iter()
            .filter(|(n, _)| n.starts_with("layer"))
            .map(|(_, t)| t.shape()[3])
            .collect();
        let expected_trunk = [64, 64, 128, 128][f - 1..].to_vec();
        ensure(
            widths == expected_trunk,
            format!("fusion {f}: trunk widths {widths:?}"),
        )?;
        let last = &out.hidden.last().unwrap().1;
        ensure(
            last.shape() == [2, 3, NUM_NODES, 128],
            format!("fusion {f}: {:?}", last.shape()),
        )?;
        ensure(
            out.me_logits.shape() == [2, 6],
            format!("fusion {f}: logits {:?}", out.me_logits.shape()),
        )?;
        ensure(
            out.au_logits.len() == 5 - f,
            format!("fusion {f}: {} AU heads", out.au_logits.len()),
        )?;
    }
    // Identity configuration: no edges, theta = I, zero biases, centre-tap TCN.
    let c = 3;
    let eye = |n: usize| {
        Tensor::from_vec(
            &[n, n],
            (0..n * n)
                .map(|i| f64::from(u8::from(i % (n + 1) == 0)))
                .collect(),
        )
        .unwrap()
    };
    let mut kernel = vec![0.0; 3 * c * c];
    kernel[c * c..2 * c * c].copy_from_slice(&eye(c).to_vec());
    let module = SsModule {
        gcn: GcnLayer {
            theta: eye(c),
            bias: Tensor::zeros(&[c]),
            lam: Some(Tensor::zeros(&[NUM_NODES, NUM_NODES])),
            activation: Activation::Identity,
        },
        tcn: TcnLayer {
            kernel: Tensor::from_vec(&[3, c, c], kernel).unwrap(),
            bias: Tensor::zeros(&[c]),
        },
    };
    let empty = GmGraph::from_edges(NUM_NODES, &[])
        .unwrap()
        .operator_tensor();
    let x = random_tensor(&mut rng, &[2, 3, NUM_NODES, c]);
    let y = module.forward(&x, &empty).unwrap();
    ensure(
        y.to_vec() == x.to_vec(),
        "identity SS module changed its input",
    )?;
    Ok("TCN depth 1-6, fusion 1-4 shapes, identity SS module".into())
}

fn learning_smoke_test() -> Check {
    let data = synth_dataset(&SynthSpec::default()).unwrap();
    ensure(data.len() == 40, format!("{} samples", data.len()))?;
    let hyper = smoke_hyper();
    let aau = micro();
    ensure(
        aau.loss == LossMode::Aau,
        "micro config must use the AAU loss",
    )?;
    let model = Model::build(&aau, hyper.seed).unwrap();
    fit(&model, &data, &hyper).map_err(|e| e.to_string())?;
    let train_acc = evaluate(&model, &data).unwrap().metrics.accuracy;
    ensure(
        train_acc == 1.0,
        format!("train accuracy {train_acc} after {} epochs", hyper.epochs),
    )?;

    let with = run_loso(&data, &aau, &hyper, 4)
        .map_err(|e| e.to_string())?
        .pooled
        .accuracy;
    let no_aau = ModelConfig {
        loss: LossMode::Me,
        ..aau
    };
    let without = run_loso(&data, &no_aau, &hyper, 4)
        .map_err(|e| e.to_string())?
        .pooled
        .accuracy;
    let msg = format!("train 1.0; LOSO with AAU {with:.3}, without {without:.3}");
    ensure(with >= 0.9, format!("LOSO accuracy too low: {msg}"))?;
    ensure(with >= without - 0.05, format!("AAU hurts: {msg}"))?;
    Ok(msg)
}

/// Accuracy and macro F1 straight from the exported CSV text.
fn score_csv(text: &str) -> (f64, f64) {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let (ti, pi) = (
        header.iter().position(|h| *h == "true").unwrap(),
        header.iter().position(|h| *h == "predicted").unwrap(),
    );
    let pairs: Vec<(usize, usize)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[ti].parse().unwrap(), f[pi].parse().unwrap())
        })
        .collect();
    let correct = pairs.iter().filter(|(t, p)| t == p).count();
    let mut classes: Vec<usize> = pairs.iter().flat_map(|&(t, p)| [t, p]).collect();
    classes.sort_unstable();
    classes.dedup();
    let f1s: Vec<f64> = classes
        .iter()
        .map(|&k| {
            let tp = pairs.iter().filter(|&&(t, p)| t == k && p == k).count() as f64;
            let fp = pairs.iter().filter(|&&(t, p)| t != k && p == k).count() as f64;
            let fneg = pairs.iter().filter(|&&(t, p)| t == k && p != k).count() as f64;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fneg)
            }
        })
        .collect();
    (
        correct as f64 / pairs.len() as f64,
        f1s.iter().sum::<f64>() / f1s.len() as f64,
    )
}

fn harness_integrity() -> Check {
    let data = synth_dataset(&SynthSpec {
        num_subjects: 5,
        samples_per_subject: 7,
        noise_sigma: 2.0,
        ..SynthSpec::default()
    })
    .unwrap();
    // Exhaustive partition scan.
    let folds = loso_split(&data).unwrap();
    let mut hits = vec![0usize; data.len()];
    for f in &folds {
        for i in 0..data.len() {
            let in_test = f.test.contains(&i);
            let in_train = f.train.contains(&i);
            ensure(
                in_test != in_train,
                format!("sample {i} in both or neither"),
            )?;
            ensure(
                in_test == (data[i].subject_id == f.held_out_subject),
                "test set is not the held-out subject",
            )?;
            hits[i] += usize::from(in_test);
        }
    }
    ensure(
        hits.iter().all(|&h| h == 1),
        "samples not tested exactly once",
    )?;

    // A short, deliberately imperfect run so the scorer sees errors.
    let cfg = micro();
    let hyper = Hyper {
        lr: 3e-3,
        epochs: 3,
        batch_size: 8,
        seed: 4,
        ..Hyper::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let report = run_loso(&data, &cfg, &hyper, 1 + run).map_err(|e| e.to_string())?;
        let sub = dir.path().join(format!("run{run}"));
        RunArtifacts::from_loso(&report, NUM_NODES)
            .write_all(&sub)
            .unwrap();
        let preds = report
            .folds
            .iter()
            .flat_map(|f| f.predictions.clone())
            .collect::<Vec<_>>();
        write_predictions(&sub.join("check.csv"), &preds).unwrap();
        let text = std::fs::read_to_string(sub.join("predictions.csv")).unwrap();
        let (acc, f1) = score_csv(&text);
        ensure(
            (acc - report.pooled.accuracy).abs() < 1e-12 && (f1 - report.pooled.f1).abs() < 1e-12,
            format!(
                "scorer ({acc}, {f1}) vs library ({}, {})",
                report.pooled.accuracy, report.pooled.f1
            ),
        )?;
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&sub)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        outputs.push(files);
    }
    ensure(
        outputs[0] == outputs[1],
        "same-seed runs (1 vs 2 jobs) produced different artifacts",
    )?;
    Ok(format!(
        "{} folds partition {} samples; scorer agrees; {} artifacts byte-identical",
        folds.len(),
        data.len(),
        outputs[0].len()
    ))
}

fn unnormalized_weight_collapse() -> Check {
    // L'' = sum_r W_r L_r with L_r from AU losses on a fixed example.
    let logits = [
        vec![0.3, -0.8, 1.1, 0.0],
        vec![-0.2, 0.4, 0.9, -1.5],
        vec![1.2, 0.1, -0.6, 0.3],
    ];
    let targets = vec![vec![1u8, 0, 1, 0]];
    let layer_losses: Vec<Tensor> = logits
        .iter()
        .map(|l| {
            gtsgn::losses::au_loss(&Tensor::from_vec(&[1, 4], l.clone()).unwrap(), &targets)
                .unwrap()
        })
        .collect();
    let w = Tensor::param(&[3], vec![1.0; 3]).unwrap();
    let stacked = Tensor::concat(
        &layer_losses
            .iter()
            .map(|l| l.reshape(&[1]).unwrap())
            .collect::<Vec<_>>(),
        0,
    )
    .unwrap();
    let unnormalized = w.mul(&stacked).unwrap().sum();
    unnormalized.backward().unwrap();
    let g = w.grad().unwrap();
    let before = w.to_vec();
    for (r, l) in layer_losses.iter().enumerate() {
        ensure(l.item() >= 0.0, "negative layer loss")?;
        ensure(
            (g[r] - l.item()).abs() <= 1e-15,
            format!("dL''/dW_{r} = {} but L_{r} = {}", g[r], l.item()),
        )?;
    }
    let after: Vec<f64> = before.iter().zip(&g).map(|(w, g)| w - 0.1 * g).collect();
    ensure(
        after.iter().zip(&before).all(|(a, b)| a < b),
        "a gradient step did not shrink every W_r",
    )?;
    Ok(format!(
        "grad = L_r = {:?}; every W_r shrinks under descent",
        layer_losses
            .iter()
            .map(|l| (l.item() * 1e4).round() / 1e4)
            .collect::<Vec<_>>()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("parameter count", parameter_count),
        ("Chebyshev collapse", chebyshev_collapse),
        ("gradient suite", gradient_suite),
        ("AAU algebra", aau_algebra),
        ("LAM neutrality", lam_neutrality),
        ("structural invariants", structural_invariants),
        ("learning smoke test", learning_smoke_test),
        ("harness integrity", harness_integrity),
        ("unnormalized weight collapse", unnormalized_weight_collapse),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({secs:.1}s) {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({secs:.1}s) {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
