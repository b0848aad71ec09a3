//! Leave-one-subject-out evaluation with parallel folds, comparing the
//! adaptive AU loss with expression-only training, and writing every
//! artifact (predictions, metrics, layer weights, adjacencies, hidden
//! features, loss traces) to a directory.
//!
//! ```text
//! cargo run --release --example loso_evaluation [OUT_DIR]
//! ```

use gtsgn::config::RunConfig;
use gtsgn::geometry::NUM_NODES;
use gtsgn::network::{LossMode, ModelConfig};
use gtsgn::training::{run_loso, synth_dataset, RunArtifacts};

fn main() -> gtsgn::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "runs/loso-example".into());
    let cfg = RunConfig::load(std::path::Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/configs/micro.toml"
    )))?;
    let data = synth_dataset(&cfg.synth)?;

    for loss in [LossMode::Aau, LossMode::Me] {
        let model = ModelConfig {
            loss,
            ..cfg.model.clone()
        };
        let report = run_loso(&data, &model, &cfg.train, cfg.run.jobs)?;
        println!("{loss:?}:");
        for f in &report.folds {
            println!(
                "  held out {}: accuracy {:.3}",
                f.held_out_subject, f.metrics.accuracy
            );
        }
        println!(
            "  pooled accuracy {:.3}, macro-F1 {:.3}",
            report.pooled.accuracy, report.pooled.f1
        );
        if loss == LossMode::Aau {
            let dir = std::path::Path::new(&out);
            RunArtifacts::from_loso(&report, NUM_NODES).write_all(dir)?;
            println!("  artifacts written to {}", dir.display());
        }
    }
    Ok(())
}
