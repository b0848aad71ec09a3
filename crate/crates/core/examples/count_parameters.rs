//! Parameter counts of the single- and two-stream networks at every fusion
//! point, with the per-tensor table of the default single-stream model.
//!
//! ```text
//! cargo run --example count_parameters
//! ```

use gtsgn::network::{
    count_parameters, parameter_table, Architecture, LossMode, Model, ModelConfig,
};

fn main() -> gtsgn::Result<()> {
    let ssgn = ModelConfig {
        mode: Architecture::Ssgn,
        ..ModelConfig::default()
    };
    let model = Model::build(&ssgn, 0)?;
    for (name, shape, count) in parameter_table(&model) {
        println!("{name:<28} {:<14} {count:>8}", format!("{shape:?}"));
    }
    println!("SS-GN total: {}\n", count_parameters(&model));

    for fusion in 1..=4 {
        let cfg = ModelConfig {
            fusion_layer: fusion,
            // The adaptive loss needs two constrained layers.
            loss: if fusion == 4 {
                LossMode::Au
            } else {
                LossMode::Aau
            },
            ..ModelConfig::default()
        };
        let model = Model::build(&cfg, 0)?;
        println!(
            "GTS-GN fused at layer {fusion}: {:>7} parameters, AU heads on layers {:?}",
            count_parameters(&model),
            cfg.head_layers()
        );
    }
    Ok(())
}
