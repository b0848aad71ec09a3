//! Train the small network and list the strongest learned adjacency
//! corrections per layer. The adjacencies start at zero, so every nonzero
//! entry was learned.
//!
//! ```text
//! cargo run --release --example inspect_lam
//! ```

use gtsgn::config::RunConfig;
use gtsgn::network::Model;
use gtsgn::training::{fit, synth_dataset, top_k_edges, Hyper};

/// Left and right as seen in the image.
const NODE_NAMES: [&str; 14] = [
    "L brow out",
    "L brow mid",
    "L brow in",
    "R brow in",
    "R brow mid",
    "R brow out",
    "nose tip",
    "nostril L",
    "nose base",
    "nostril R",
    "mouth L",
    "lip top",
    "mouth R",
    "lip bottom",
];

fn main() -> gtsgn::Result<()> {
    let cfg = RunConfig::micro();
    let data = synth_dataset(&cfg.synth)?;
    let model = Model::build(&cfg.model, 0)?;
    let hyper = Hyper {
        lr: 3e-3,
        epochs: 200,
        batch_size: 8,
        ..Hyper::default()
    };
    fit(&model, &data, &hyper)?;

    let n = model.graph().num_nodes;
    for (name, lam) in model.learnable_adjacencies() {
        let values = lam.to_vec();
        let mass: f64 = values.iter().map(|v| v.abs()).sum();
        println!("{name} (total |A_L| {mass:.3}):");
        for (i, j, v) in top_k_edges(&values, n, 3) {
            println!("  {:<10} <- {:<10} {v:+.4}", NODE_NAMES[i], NODE_NAMES[j]);
        }
    }
    Ok(())
}
