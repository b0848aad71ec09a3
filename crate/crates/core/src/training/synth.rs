//! Synthetic landmark episodes with a known class -> motion -> AU structure.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    KeyTriplet, LandmarkFrame, Point, Sample, FULL_LANDMARKS, REGIONS, SELECTED_LANDMARKS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_subjects: usize,
    pub samples_per_subject: usize,
    pub num_classes: usize,
    pub au_vocab_size: usize,
    /// Std of the Gaussian noise added to every coordinate of every frame.
    pub noise_sigma: f64,
    /// Apex displacement length of a moving landmark at intensity 1, in
    /// template pixels (the template's inner brows are 30 px apart).
    pub motion_magnitude: f64,
    /// Per-sample intensity is uniform in `[min, max]`.
    pub intensity_range: (f64, f64),
    /// Per-subject scale is uniform in `1 +- scale_jitter`.
    pub scale_jitter: f64,
    /// Per-subject translation is uniform in `+-translation` on each axis.
    pub translation: f64,
    /// Std of the per-subject, per-landmark face-shape perturbation.
    pub shape_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_subjects: 4,
            samples_per_subject: 10,
            num_classes: 3,
            au_vocab_size: 4,
            noise_sigma: 0.1,
            motion_magnitude: 3.0,
            intensity_range: (0.7, 1.0),
            scale_jitter: 0.15,
            translation: 15.0,
            shape_sigma: 1.0,
            seed: 0,
        }
    }
}

/// How one class moves and which AUs it activates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPattern {
    /// Indices into the 68-point layout.
    pub moving_landmarks: Vec<usize>,
    /// Unit displacement direction.
    pub direction: Point,
    pub aus: Vec<usize>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.num_classes == 0 || self.au_vocab_size == 0 {
            return bad("num_classes and au_vocab_size must be >= 1");
        }
        if self.num_subjects == 0 || self.samples_per_subject == 0 {
            return bad("num_subjects and samples_per_subject must be >= 1");
        }
        let (lo, hi) = self.intensity_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("intensity_range must satisfy 0 < min <= max");
        }
        if !(self.scale_jitter >= 0.0 && self.scale_jitter < 0.5) {
            return bad("scale_jitter must be in [0, 0.5)");
        }
        for v in [
            self.noise_sigma,
            self.translation,
            self.shape_sigma,
            self.motion_magnitude,
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(
                    "noise, translation, shape and motion magnitudes must be finite and >= 0",
                );
            }
        }
        Ok(())
    }

    /// Class `j` moves the nodes of region `j mod 4` (plus a second region
    /// for `j >= 4`) along direction `2 pi j / c + pi / 7`, and activates
    /// AUs `2j mod K` and `2j + 1 mod K`.
    pub fn patterns(&self) -> Vec<ClassPattern> {
        let c = self.num_classes;
        let k = self.au_vocab_size;
        (0..c)
            .map(|j| {
                let mut nodes: Vec<usize> = REGIONS[j % 4].to_vec();
                if j >= 4 {
                    nodes.extend_from_slice(REGIONS[(j + 1 + j / 4) % 4]);
                }
                nodes.sort_unstable();
                nodes.dedup();
                let angle = 2.0 * PI * j as f64 / c as f64 + PI / 7.0;
                let mut aus = vec![(2 * j) % k, (2 * j + 1) % k];
                aus.sort_unstable();
                aus.dedup();
                ClassPattern {
                    moving_landmarks: nodes.iter().map(|&n| SELECTED_LANDMARKS[n]).collect(),
                    direction: [angle.cos(), angle.sin()],
                    aus,
                }
            })
            .collect()
    }
}

/// A frontal neutral face in the 68-point layout, roughly 160 x 150 px.
pub fn canonical_face() -> Vec<Point> {
    let mut p: Vec<Point> = Vec::with_capacity(FULL_LANDMARKS);
    // jaw 0..=16: lower half of an ellipse from ear to ear
    for i in 0..17 {
        let t = PI * i as f64 / 16.0;
        p.push([100.0 - 80.0 * t.cos(), 80.0 + 110.0 * t.sin()]);
    }
    // brows 17..=21 and 22..=26: shallow arcs whose outer ends sit lower
    for (start, outer) in [(35.0, 0.0), (115.0, 4.0)] {
        for i in 0..5 {
            let x = start + 12.5 * i as f64;
            let u = (i as f64 - 2.0) / 2.0;
            let outerness = 1.0 - (i as f64 - outer).abs() / 4.0;
            p.push([x, 52.0 + 5.0 * u * u + 6.0 * outerness]);
        }
    }
    // nose bridge 27..=30
    for i in 0..4 {
        p.push([100.0, 75.0 + 15.0 * i as f64]);
    }
    // nostrils 31..=35
    for i in 0..5 {
        let u = (i as f64 - 2.0) / 2.0;
        p.push([100.0 + 15.0 * u, 130.0 - 4.0 * (1.0 - u * u)]);
    }
    // eyes 36..=41 and 42..=47: hexagons
    for cx in [65.0, 135.0] {
        for i in 0..6 {
            let t = PI * i as f64 / 3.0;
            p.push([cx - 14.0 * t.cos(), 85.0 - 6.0 * t.sin()]);
        }
    }
    // outer lip 48..=59 and inner lip 60..=67: ellipses starting at the left corner
    for (n, rx, ry) in [(12usize, 30.0, 12.0), (8, 22.0, 5.0)] {
        for i in 0..n {
            let t = 2.0 * PI * i as f64 / n as f64;
            p.push([100.0 - rx * t.cos(), 160.0 - ry * t.sin()]);
        }
    }
    debug_assert_eq!(p.len(), FULL_LANDMARKS);
    p
}

fn frame(points: Vec<Point>) -> LandmarkFrame {
    LandmarkFrame::new(points).expect("synthetic points are finite")
}

/// Deterministic under `spec.seed`. Subject `s` is `s01`, `s02`, ...; labels
/// cycle through the classes with a per-subject offset.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let patterns = spec.patterns();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shape_noise =
        Normal::new(0.0, spec.shape_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let base = canonical_face();
    let mut out = Vec::with_capacity(spec.num_subjects * spec.samples_per_subject);

    for s in 0..spec.num_subjects {
        let scale = 1.0 + spec.scale_jitter * rng.gen_range(-1.0..=1.0);
        let shift = [
            spec.translation * rng.gen_range(-1.0..=1.0),
            spec.translation * rng.gen_range(-1.0..=1.0),
        ];
        let template: Vec<Point> = base
            .iter()
            .map(|p| {
                let (dx, dy) = if spec.shape_sigma > 0.0 {
                    (shape_noise.sample(&mut rng), shape_noise.sample(&mut rng))
                } else {
                    (0.0, 0.0)
                };
                [
                    scale * (p[0] + dx) + shift[0],
                    scale * (p[1] + dy) + shift[1],
                ]
            })
            .collect();

        for k in 0..spec.samples_per_subject {
            let label = (k + s) % spec.num_classes;
            let pat = &patterns[label];
            let (lo, hi) = spec.intensity_range;
            let intensity = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
            let mut disp = vec![[0.0, 0.0]; FULL_LANDMARKS];
            let step = scale * spec.motion_magnitude * intensity;
            for &l in &pat.moving_landmarks {
                disp[l] = [step * pat.direction[0], step * pat.direction[1]];
            }
            let noisy = |factor: f64, rng: &mut ChaCha8Rng| -> Vec<Point> {
                template
                    .iter()
                    .zip(&disp)
                    .map(|(t, d)| {
                        let (nx, ny) = if spec.noise_sigma > 0.0 {
                            (noise.sample(rng), noise.sample(rng))
                        } else {
                            (0.0, 0.0)
                        };
                        [t[0] + factor * d[0] + nx, t[1] + factor * d[1] + ny]
                    })
                    .collect()
            };
            let onset = noisy(0.0, &mut rng);
            let apex = noisy(1.0, &mut rng);
            let offset = noisy(0.3, &mut rng);
            let mut au = vec![0u8; spec.au_vocab_size];
            for &a in &pat.aus {
                au[a] = 1;
            }
            out.push(Sample {
                id: format!("s{:02}_{:03}", s + 1, k),
                subject_id: format!("s{:02}", s + 1),
                me_label: label,
                au_labels: au,
                frames: KeyTriplet::new(frame(onset), frame(apex), frame(offset))?,
            });
        }
    }
    Ok(out)
}
