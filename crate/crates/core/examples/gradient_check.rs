//! Finite-difference check of every parameter gradient (learnable
//! adjacencies and adaptive loss weights included) on the small network.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use gtsgn::config::RunConfig;
use gtsgn::network::{Architecture, Model, ModelConfig};
use gtsgn::training::{gradcheck, synth_dataset, SynthSpec};

fn main() -> gtsgn::Result<()> {
    let micro = RunConfig::micro();
    let data = synth_dataset(&SynthSpec {
        num_classes: micro.model.num_classes,
        au_vocab_size: micro.model.au_vocab_size,
        ..SynthSpec::default()
    })?;
    for mode in [Architecture::Ssgn, Architecture::Gtsgn] {
        let cfg = ModelConfig {
            mode,
            ..micro.model.clone()
        };
        let model = Model::build(&cfg, 0)?;
        let report = gradcheck(&model, &data[..4], 1e-4)?;
        println!("{mode:?}:");
        for e in &report.entries {
            println!(
                "  {:<30} {:>5}  rel {:.2e}  abs {:.2e}",
                e.name, e.numel, e.max_rel_err, e.max_abs_err
            );
        }
        let worst = report.worst().expect("entries");
        println!(
            "  -> {} (worst {} at {:.2e})\n",
            if report.passed { "PASS" } else { "FAIL" },
            worst.name,
            worst.max_rel_err
        );
    }
    Ok(())
}
