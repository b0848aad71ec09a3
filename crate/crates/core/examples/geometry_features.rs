//! From 68-point landmarks to the per-node features the networks consume:
//! selection of the 14 graph nodes, coordinate normalization, motion
//! amplification and the neighbor distance/angle features.
//!
//! ```text
//! cargo run --example geometry_features
//! ```

use gtsgn::geometry::{
    amplify_motion, build_node_features, compute_geometry_features, neighbor_of,
    normalize_coordinates, FeatureKind, NUM_NODES, SELECTED_LANDMARKS,
};
use gtsgn::training::{synth_dataset, SynthSpec};

fn main() -> gtsgn::Result<()> {
    let sample = synth_dataset(&SynthSpec::default())?.remove(0);
    println!(
        "sample {} (subject {}, class {}, AUs {:?})",
        sample.id, sample.subject_id, sample.me_label, sample.au_labels
    );

    let selected = sample.frames.selected()?;
    let normalized = normalize_coordinates(&selected)?;
    let amplified = amplify_motion(&normalized, 3.0)?;

    println!("\nnode  landmark  apex (normalized)      apex (amplified x3)");
    let rows = SELECTED_LANDMARKS
        .iter()
        .zip(normalized.apex.points())
        .zip(amplified.apex.points());
    for (i, ((landmark, n), a)) in rows.enumerate() {
        println!(
            "{i:>4}  {landmark:>8}  ({:+.3}, {:+.3})       ({:+.3}, {:+.3})",
            n[0], n[1], a[0], a[1]
        );
    }

    let (dist, angle) = compute_geometry_features(&amplified.apex)?;
    println!("\nnode -> neighbor   D (squared distance)   alpha (rad)");
    for i in 0..NUM_NODES {
        println!(
            "{i:>4} -> {:>2}        {:>12.4}          {:+.4}",
            neighbor_of(i),
            dist[i],
            angle[i]
        );
    }

    for kind in [
        FeatureKind::TypeA,
        FeatureKind::TypeB,
        FeatureKind::DistanceAngle,
    ] {
        let f = build_node_features(&amplified, kind)?;
        println!("{kind:?}: tensor shape {:?}", f.shape());
    }
    Ok(())
}
