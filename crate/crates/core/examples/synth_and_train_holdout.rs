//! Generate a synthetic dataset, train the small two-stream network on three
//! subjects and test on the fourth, then round-trip the model through a
//! checkpoint.
//!
//! ```text
//! cargo run --release --example synth_and_train_holdout
//! ```

use gtsgn::checkpoint::{load_model, save_model};
use gtsgn::config::RunConfig;
use gtsgn::network::Model;
use gtsgn::training::{evaluate, fit, holdout_split, synth_dataset};

fn main() -> gtsgn::Result<()> {
    let cfg = RunConfig::load(std::path::Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/configs/micro.toml"
    )))?;
    cfg.validate()?;
    let data = synth_dataset(&cfg.synth)?;
    let fold = holdout_split(&data, cfg.run.holdout_fraction)?;
    let train: Vec<_> = fold.train.iter().map(|&i| data[i].clone()).collect();
    let test: Vec<_> = fold.test.iter().map(|&i| data[i].clone()).collect();
    println!(
        "{} training samples, {} test samples (subject {})",
        train.len(),
        test.len(),
        fold.held_out_subject
    );

    let model = Model::build(&cfg.model, cfg.train.seed)?;
    let report = fit(&model, &train, &cfg.train)?;
    for e in report
        .loss_trace
        .iter()
        .step_by(100)
        .chain(report.loss_trace.last())
    {
        println!(
            "epoch {:>4}: total {:.5}  ME {:.5}  AU {:.5}",
            e.epoch, e.total, e.me, e.aux
        );
    }
    if let Some(w) = model.normalized_aau_weights() {
        println!(
            "adaptive layer weights: {:?}",
            w?.iter()
                .map(|v| (v * 1e3).round() / 1e3)
                .collect::<Vec<_>>()
        );
    }

    let held_out = evaluate(&model, &test)?;
    println!(
        "held-out accuracy {:.3}, macro-F1 {:.3}",
        held_out.metrics.accuracy, held_out.metrics.f1
    );
    println!("confusion (rows = truth): {:?}", held_out.metrics.confusion);

    let dir = tempfile_dir();
    let path = dir.join("checkpoint.json");
    save_model(&model, Some(&report.optimizer_state), &path)?;
    let restored = load_model(&path)?;
    let again = evaluate(&restored, &test)?;
    println!(
        "restored checkpoint accuracy {:.3} ({})",
        again.metrics.accuracy,
        path.display()
    );
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("gtsgn-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}
