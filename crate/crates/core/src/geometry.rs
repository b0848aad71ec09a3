//! Landmark geometry: 14-node selection, normalization, motion amplification,
//! jitter augmentation and per-node features.
//!
//! Canonical node order (source index in the 68-point scheme in brackets):
//!
//! | nodes | region      | landmarks            |
//! |-------|-------------|----------------------|
//! | 0-2   | left brow   | 17, 19, 21           |
//! | 3-5   | right brow  | 22, 24, 26           |
//! | 6-9   | nose        | 30 (tip), 31, 33, 35 |
//! | 10-13 | mouth       | 48, 51, 54, 57       |

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const FULL_LANDMARKS: usize = 68;
pub const NUM_NODES: usize = 14;
pub const NUM_FRAMES: usize = 3;

pub const SELECTED_LANDMARKS: [usize; NUM_NODES] =
    [17, 19, 21, 22, 24, 26, 30, 31, 33, 35, 48, 51, 54, 57];

/// Node chains per facial region, left to right.
pub const REGIONS: [&[usize]; 4] = [&[0, 1, 2], &[3, 4, 5], &[6, 7, 8, 9], &[10, 11, 12, 13]];

pub const NOSE_TIP_NODE: usize = 6;
pub const INNER_BROW_NODES: (usize, usize) = (2, 3);

pub type Point = [f64; 2];

/// One frame of landmarks: either the full 68-point annotation or the
/// 14 selected nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct LandmarkFrame {
    points: Vec<Point>,
}

impl TryFrom<Vec<Point>> for LandmarkFrame {
    type Error = Error;

    fn try_from(points: Vec<Point>) -> Result<Self> {
        LandmarkFrame::new(points)
    }
}

impl From<LandmarkFrame> for Vec<Point> {
    fn from(frame: LandmarkFrame) -> Self {
        frame.points
    }
}

impl LandmarkFrame {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != FULL_LANDMARKS && points.len() != NUM_NODES {
            return Err(Error::InvalidParameter(format!(
                "a frame needs {FULL_LANDMARKS} or {NUM_NODES} points, got {}",
                points.len()
            )));
        }
        if let Some(i) = points
            .iter()
            .position(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::InvalidParameter(format!("point {i} is not finite")));
        }
        Ok(LandmarkFrame { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_selected(&self) -> bool {
        self.points.len() == NUM_NODES
    }

    fn map(&self, f: impl Fn(usize, Point) -> Point) -> LandmarkFrame {
        LandmarkFrame {
            points: self
                .points
                .iter()
                .enumerate()
                .map(|(i, &p)| f(i, p))
                .collect(),
        }
    }
}

/// Onset, apex and offset frames of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyTriplet {
    pub onset: LandmarkFrame,
    pub apex: LandmarkFrame,
    pub offset: LandmarkFrame,
}

impl KeyTriplet {
    pub fn new(onset: LandmarkFrame, apex: LandmarkFrame, offset: LandmarkFrame) -> Result<Self> {
        if onset.len() != apex.len() || onset.len() != offset.len() {
            return Err(Error::InvalidParameter(
                "onset, apex and offset frames differ in point count".into(),
            ));
        }
        Ok(KeyTriplet {
            onset,
            apex,
            offset,
        })
    }

    pub fn frames(&self) -> [&LandmarkFrame; NUM_FRAMES] {
        [&self.onset, &self.apex, &self.offset]
    }

    fn map_frames(&self, f: impl Fn(&LandmarkFrame) -> LandmarkFrame) -> KeyTriplet {
        KeyTriplet {
            onset: f(&self.onset),
            apex: f(&self.apex),
            offset: f(&self.offset),
        }
    }

    /// Reduces every frame to the 14 graph nodes; already-selected frames pass through.
    pub fn selected(&self) -> Result<KeyTriplet> {
        if self.onset.is_selected() {
            return Ok(self.clone());
        }
        Ok(KeyTriplet {
            onset: select_landmarks(&self.onset)?,
            apex: select_landmarks(&self.apex)?,
            offset: select_landmarks(&self.offset)?,
        })
    }

    fn require_selected(&self, op: &str) -> Result<()> {
        if self.onset.is_selected() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "{op} needs 14-node frames"
            )))
        }
    }
}

/// One labelled episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub subject_id: String,
    pub me_label: usize,
    pub au_labels: Vec<u8>,
    pub frames: KeyTriplet,
}

pub fn select_landmarks(frame: &LandmarkFrame) -> Result<LandmarkFrame> {
    if frame.len() != FULL_LANDMARKS {
        return Err(Error::InvalidParameter(format!(
            "landmark selection needs {FULL_LANDMARKS} points, got {}",
            frame.len()
        )));
    }
    Ok(LandmarkFrame {
        points: SELECTED_LANDMARKS
            .iter()
            .map(|&i| frame.points[i])
            .collect(),
    })
}

/// Translates the onset nose tip to the origin and divides by the onset
/// inter-brow distance. The same transform is applied to all three frames.
pub fn normalize_coordinates(t: &KeyTriplet) -> Result<KeyTriplet> {
    t.require_selected("normalization")?;
    let origin = t.onset.points[NOSE_TIP_NODE];
    let (l, r) = INNER_BROW_NODES;
    let (pl, pr) = (t.onset.points[l], t.onset.points[r]);
    let scale = (pl[0] - pr[0]).hypot(pl[1] - pr[1]);
    if scale < 1e-9 {
        return Err(Error::DegenerateFace(scale));
    }
    Ok(t.map_frames(|f| f.map(|_, p| [(p[0] - origin[0]) / scale, (p[1] - origin[1]) / scale])))
}

/// Linear stand-in for video motion magnification: apex and offset
/// displacements from onset are multiplied by `k`.
pub fn amplify_motion(t: &KeyTriplet, k: f64) -> Result<KeyTriplet> {
    if !(k >= 1.0) || !k.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "amplification factor must be >= 1, got {k}"
        )));
    }
    if k == 1.0 {
        // o + (p - o) is not always bit-identical to p.
        return Ok(t.clone());
    }
    let onset = &t.onset.points;
    let amplify = |f: &LandmarkFrame| {
        f.map(|i, p| {
            let o = onset[i];
            [o[0] + k * (p[0] - o[0]), o[1] + k * (p[1] - o[1])]
        })
    };
    Ok(KeyTriplet {
        onset: t.onset.clone(),
        apex: amplify(&t.apex),
        offset: amplify(&t.offset),
    })
}

/// i.i.d. `N(0, sigma^2)` noise on every coordinate of every frame.
pub fn jitter_augment(t: &KeyTriplet, sigma: f64, seed: u64) -> Result<KeyTriplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    jitter_with_rng(t, sigma, &mut rng)
}

pub fn jitter_with_rng<R: rand::Rng + ?Sized>(
    t: &KeyTriplet,
    sigma: f64,
    rng: &mut R,
) -> Result<KeyTriplet> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "jitter sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(t.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    let mut jitter = |f: &LandmarkFrame| LandmarkFrame {
        points: f
            .points
            .iter()
            .map(|p| [p[0] + normal.sample(rng), p[1] + normal.sample(rng)])
            .collect(),
    };
    Ok(KeyTriplet {
        onset: jitter(&t.onset),
        apex: jitter(&t.apex),
        offset: jitter(&t.offset),
    })
}

/// Neighbor used for the distance/angle features of each node: the next
/// node along its region chain, wrapping from the last node to the first.
pub fn neighbor_of(node: usize) -> usize {
    for region in REGIONS {
        if let Some(pos) = region.iter().position(|&n| n == node) {
            return region[(pos + 1) % region.len()];
        }
    }
    panic!("node {node} is outside the 14-node graph");
}

/// Squared distance and angle between two nodes, `D = |n_i - n_j|^2` and
/// `alpha = atan2(y_i - y_j, x_i - x_j)` folded into `(-pi, pi]`.
/// Coincident points give `(0, 0)`.
pub fn distance_angle(ni: Point, nj: Point) -> (f64, f64) {
    let dx = ni[0] - nj[0];
    let dy = ni[1] - nj[1];
    if dx == 0.0 && dy == 0.0 {
        log::debug!("coincident landmarks at {ni:?}; distance and angle set to 0");
        return (0.0, 0.0);
    }
    let mut alpha = dy.atan2(dx);
    if alpha <= -PI {
        alpha = PI;
    }
    (dx * dx + dy * dy, alpha)
}

/// Per-node `(D, alpha)` for one 14-node frame.
pub fn compute_geometry_features(frame: &LandmarkFrame) -> Result<(Vec<f64>, Vec<f64>)> {
    if !frame.is_selected() {
        return Err(Error::InvalidParameter(
            "geometry features need 14-node frames".into(),
        ));
    }
    Ok((0..NUM_NODES)
        .map(|i| distance_angle(frame.points[i], frame.points[neighbor_of(i)]))
        .unzip())
}

/// Channel layout of a node feature tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// `(x, y)`.
    TypeA,
    /// `(x, y, D, alpha)`.
    TypeB,
    /// `(D, alpha)`: the high-order half of Type B.
    DistanceAngle,
}

impl FeatureKind {
    pub fn channels(self) -> usize {
        match self {
            FeatureKind::TypeA | FeatureKind::DistanceAngle => 2,
            FeatureKind::TypeB => 4,
        }
    }
}

/// Node features of one episode, laid out `[frame, node, channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

impl NodeFeatures {
    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    pub fn shape(&self) -> [usize; 3] {
        [NUM_FRAMES, NUM_NODES, self.channels()]
    }

    pub fn get(&self, frame: usize, node: usize, channel: usize) -> f64 {
        self.values[(frame * NUM_NODES + node) * self.channels() + channel]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&self.shape(), self.values.clone()).expect("layout is consistent")
    }
}

pub fn build_node_features(t: &KeyTriplet, kind: FeatureKind) -> Result<NodeFeatures> {
    t.require_selected("node features")?;
    let mut values = Vec::with_capacity(NUM_FRAMES * NUM_NODES * kind.channels());
    for frame in t.frames() {
        let (d, alpha) = compute_geometry_features(frame)?;
        for (i, p) in frame.points.iter().enumerate() {
            match kind {
                FeatureKind::TypeA => values.extend_from_slice(p),
                FeatureKind::TypeB => values.extend_from_slice(&[p[0], p[1], d[i], alpha[i]]),
                FeatureKind::DistanceAngle => values.extend_from_slice(&[d[i], alpha[i]]),
            }
        }
    }
    Ok(NodeFeatures { kind, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> LandmarkFrame {
        LandmarkFrame::new(
            (0..n)
                .map(|_| [rng.gen_range(0.0..200.0), rng.gen_range(0.0..200.0)])
                .collect(),
        )
        .unwrap()
    }

    fn random_triplet(seed: u64) -> KeyTriplet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        KeyTriplet::new(
            random_frame(&mut rng, NUM_NODES),
            random_frame(&mut rng, NUM_NODES),
            random_frame(&mut rng, NUM_NODES),
        )
        .unwrap()
    }

    #[test]
    fn selection_maps_indices() {
        let mut pts = vec![[0.0, 0.0]; FULL_LANDMARKS];
        pts[17] = [10.0, 20.0];
        let sel = select_landmarks(&LandmarkFrame::new(pts).unwrap()).unwrap();
        assert_eq!(sel.points()[0], [10.0, 20.0]);
        assert!(sel.points()[1..].iter().all(|p| *p == [0.0, 0.0]));
    }

    #[test]
    fn selection_matches_direct_lookup() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frame = random_frame(&mut rng, FULL_LANDMARKS);
        let sel = select_landmarks(&frame).unwrap();
        let expected = [17, 19, 21, 22, 24, 26, 30, 31, 33, 35, 48, 51, 54, 57];
        for (node, &src) in expected.iter().enumerate() {
            assert_eq!(sel.points()[node], frame.points()[src]);
        }
    }

    #[test]
    fn frame_validation() {
        assert!(LandmarkFrame::new(vec![[0.0, 0.0]; 10]).is_err());
        let mut pts = vec![[0.0, 0.0]; 14];
        pts[3][1] = f64::NAN;
        assert!(LandmarkFrame::new(pts).is_err());
    }

    #[test]
    fn normalization_construction() {
        let mut pts = vec![[100.0, 100.0]; NUM_NODES];
        pts[2] = [75.0, 50.0];
        pts[3] = [125.0, 50.0];
        pts[6] = [100.0, 100.0];
        pts[0] = [150.0, 200.0];
        let f = LandmarkFrame::new(pts).unwrap();
        let t = KeyTriplet::new(f.clone(), f.clone(), f).unwrap();
        let n = normalize_coordinates(&t).unwrap();
        assert_eq!(n.onset.points()[6], [0.0, 0.0]);
        assert_eq!(n.onset.points()[0], [1.0, 2.0]);
        assert_eq!(n.onset, n.apex);
        assert_eq!(n.apex, n.offset);
    }

    #[test]
    fn degenerate_face_rejected() {
        let f = LandmarkFrame::new(vec![[3.0, 3.0]; NUM_NODES]).unwrap();
        let t = KeyTriplet::new(f.clone(), f.clone(), f).unwrap();
        assert!(matches!(
            normalize_coordinates(&t),
            Err(Error::DegenerateFace(_))
        ));
    }

    #[test]
    fn amplification_examples() {
        let t = random_triplet(3);
        assert_eq!(amplify_motion(&t, 1.0).unwrap(), t);
        assert!(amplify_motion(&t, 0.5).is_err());

        let mut on = vec![[0.0, 0.0]; NUM_NODES];
        let mut ap = on.clone();
        on[0] = [0.0, 0.0];
        ap[0] = [1.0, 0.0];
        let t = KeyTriplet::new(
            LandmarkFrame::new(on.clone()).unwrap(),
            LandmarkFrame::new(ap).unwrap(),
            LandmarkFrame::new(on).unwrap(),
        )
        .unwrap();
        assert_eq!(
            amplify_motion(&t, 3.0).unwrap().apex.points()[0],
            [3.0, 0.0]
        );
    }

    #[test]
    fn geometry_feature_examples() {
        let (d, a) = distance_angle([0.0, 0.0], [1.0, 1.0]);
        assert_eq!(d, 2.0);
        assert!((a + 3.0 * PI / 4.0).abs() < 1e-15);
        assert_eq!(distance_angle([1.0, 0.0], [0.0, 0.0]), (1.0, 0.0));
        assert_eq!(distance_angle([2.0, 2.0], [2.0, 2.0]), (0.0, 0.0));
        // (-1, -0.0) would give -pi from atan2; the range is (-pi, pi].
        let (_, a) = distance_angle([-1.0, -0.0], [0.0, 0.0]);
        assert_eq!(a, PI);
    }

    #[test]
    fn neighbor_map_wraps_within_regions() {
        let expected = [1, 2, 0, 4, 5, 3, 7, 8, 9, 6, 11, 12, 13, 10];
        for (i, &j) in expected.iter().enumerate() {
            assert_eq!(neighbor_of(i), j);
        }
    }

    #[test]
    fn geometry_features_match_scalar_recomputation() {
        let t = random_triplet(11);
        let (d, a) = compute_geometry_features(&t.apex).unwrap();
        let p = t.apex.points();
        let expected_j = [1, 2, 0, 4, 5, 3, 7, 8, 9, 6, 11, 12, 13, 10];
        for i in 0..NUM_NODES {
            let j = expected_j[i];
            let dx = p[i][0] - p[j][0];
            let dy = p[i][1] - p[j][1];
            assert!((d[i] - (dx * dx + dy * dy)).abs() < 1e-9);
            assert!((a[i] - dy.atan2(dx)).abs() < 1e-15);
            assert!(a[i] > -PI && a[i] <= PI);
        }
    }

    #[test]
    fn node_feature_layouts() {
        let t = normalize_coordinates(&random_triplet(5)).unwrap();
        let a = build_node_features(&t, FeatureKind::TypeA).unwrap();
        assert_eq!(a.shape(), [3, 14, 2]);
        assert_eq!(a.get(0, 0, 0), t.onset.points()[0][0]);
        assert_eq!(a.get(0, 0, 1), t.onset.points()[0][1]);
        let b = build_node_features(&t, FeatureKind::TypeB).unwrap();
        assert_eq!(b.channels(), 4);
        let da = build_node_features(&t, FeatureKind::DistanceAngle).unwrap();
        for (f, frame) in t.frames().iter().enumerate() {
            let (d, al) = compute_geometry_features(frame).unwrap();
            for n in 0..NUM_NODES {
                assert_eq!(b.get(f, n, 0), a.get(f, n, 0));
                assert_eq!(b.get(f, n, 1), a.get(f, n, 1));
                assert_eq!(b.get(f, n, 2), d[n]);
                assert_eq!(b.get(f, n, 3), al[n]);
                assert_eq!(da.get(f, n, 0), d[n]);
                assert_eq!(da.get(f, n, 1), al[n]);
            }
        }
    }

    #[test]
    fn jitter_identity_and_determinism() {
        let t = random_triplet(9);
        assert_eq!(jitter_augment(&t, 0.0, 1).unwrap(), t);
        assert_eq!(
            jitter_augment(&t, 0.5, 42).unwrap(),
            jitter_augment(&t, 0.5, 42).unwrap()
        );
        assert!(jitter_augment(&t, -1.0, 1).is_err());
    }

    #[test]
    fn jitter_empirical_std() {
        let sigma = 0.7;
        let zero = LandmarkFrame::new(vec![[0.0, 0.0]; NUM_NODES]).unwrap();
        let t = KeyTriplet::new(zero.clone(), zero.clone(), zero).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut draws = Vec::new();
        // 84 coordinates per triplet; 1200 triplets is just over 1e5 draws.
        for _ in 0..1200 {
            let j = jitter_with_rng(&t, sigma, &mut rng).unwrap();
            for f in j.frames() {
                for p in f.points() {
                    draws.extend_from_slice(p);
                }
            }
        }
        assert!(draws.len() >= 100_000);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let std = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - sigma).abs() / sigma < 0.02, "std {std}");
    }

    proptest! {
        #[test]
        fn selection_ignores_unselected_points(seed in 0u64..1000, noise in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frame = random_frame(&mut rng, FULL_LANDMARKS);
            let mut pts = frame.points().to_vec();
            for (i, p) in pts.iter_mut().enumerate() {
                if !SELECTED_LANDMARKS.contains(&i) {
                    p[0] += noise;
                    p[1] -= noise;
                }
            }
            pts[..17].reverse();
            let other = LandmarkFrame::new(pts).unwrap();
            prop_assert_eq!(select_landmarks(&frame).unwrap(), select_landmarks(&other).unwrap());
        }

        #[test]
        fn normalization_idempotent_and_translation_invariant(
            seed in 0u64..1000, tx in -500.0f64..500.0, ty in -500.0f64..500.0,
        ) {
            let t = random_triplet(seed);
            let once = normalize_coordinates(&t).unwrap();
            let twice = normalize_coordinates(&once).unwrap();
            let shifted = t.map_frames(|f| f.map(|_, p| [p[0] + tx, p[1] + ty]));
            let shifted = normalize_coordinates(&shifted).unwrap();
            for ((a, b), c) in once.frames().iter().zip(twice.frames()).zip(shifted.frames()) {
                for ((p, q), r) in a.points().iter().zip(b.points()).zip(c.points()) {
                    prop_assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
                    prop_assert!((p[0] - r[0]).abs() < 1e-9 && (p[1] - r[1]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn amplification_composes_and_scales_norms(seed in 0u64..1000, a in 1.0f64..4.0, b in 1.0f64..4.0) {
            let t = random_triplet(seed);
            let ab = amplify_motion(&amplify_motion(&t, a).unwrap(), b).unwrap();
            let direct = amplify_motion(&t, a * b).unwrap();
            let on = t.onset.points();
            for (f_ab, (f_d, f_0)) in [&ab.apex, &ab.offset].iter().zip([(&direct.apex, &t.apex), (&direct.offset, &t.offset)]) {
                for i in 0..NUM_NODES {
                    let p = f_ab.points()[i];
                    let q = f_d.points()[i];
                    prop_assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
                    let orig = f_0.points()[i];
                    let n0 = (orig[0] - on[i][0]).hypot(orig[1] - on[i][1]);
                    let n1 = (q[0] - on[i][0]).hypot(q[1] - on[i][1]);
                    prop_assert!((n1 - a * b * n0).abs() <= 1e-9 * (1.0 + n1));
                }
            }
            prop_assert_eq!(&ab.onset, &t.onset);
        }

        #[test]
        fn type_b_restricts_to_type_a(seed in 0u64..1000) {
            let t = normalize_coordinates(&random_triplet(seed)).unwrap();
            let a = build_node_features(&t, FeatureKind::TypeA).unwrap();
            let b = build_node_features(&t, FeatureKind::TypeB).unwrap();
            for f in 0..3 { for n in 0..NUM_NODES { for c in 0..2 {
                prop_assert_eq!(a.get(f, n, c), b.get(f, n, c));
            }}}
            for f in 0..3 { for n in 0..NUM_NODES {
                prop_assert!(b.get(f, n, 2) >= 0.0);
                prop_assert!(b.get(f, n, 3) > -PI && b.get(f, n, 3) <= PI);
            }}
        }
    }
}
