use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SignerSpec;
use crate::error::{param, Result};
use crate::posekit::skeleton::*;
use crate::posekit::{Pose, PoseSequence};

/// Body proportions in canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyShape {
    pub canvas: usize,
    pub body_scale: f64,
    pub width_factor: f64,
}

impl BodyShape {
    pub fn for_signer(spec: &SignerSpec, canvas: usize) -> Self {
        BodyShape {
            canvas,
            body_scale: spec.body_scale,
            width_factor: spec.width_factor(),
        }
    }

    pub fn standard(canvas: usize) -> Self {
        BodyShape {
            canvas,
            body_scale: 1.0,
            width_factor: 1.0,
        }
    }

    /// Pixels per unit of the 64-pixel reference layout, including body scale.
    pub fn unit(&self) -> f64 {
        self.canvas as f64 / 64.0 * self.body_scale
    }
}

/// Degrees of freedom perturbed by the motion model, with their ranges.
#[derive(Debug, Clone, Copy)]
struct Articulation {
    root: [f64; 2],
    lean: f64,
    head: f64,
    // left arm, then right arm: upper, fore (relative), hand (relative)
    arms: [[f64; 3]; 2],
}

const CHANNELS: usize = 10;
const RANGES: [f64; CHANNELS] = [3.0, 2.0, 0.10, 0.25, 0.9, 1.0, 0.5, 0.9, 1.0, 0.5];
const REST_ARM: [f64; 3] = [75.0, 215.0, 225.0];

impl Articulation {
    fn from_offsets(o: &[f64; CHANNELS], unit: f64) -> Self {
        Articulation {
            root: [o[0] * unit, o[1] * unit],
            lean: o[2],
            head: o[3],
            arms: [[o[4], o[5], o[6]], [o[7], o[8], o[9]]],
        }
    }
}

fn dir(angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c, s]
}

fn rot(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn scale(v: [f64; 2], s: f64) -> [f64; 2] {
    [v[0] * s, v[1] * s]
}

fn forward_kinematics(body: &BodyShape, art: &Articulation) -> Pose {
    let u = body.unit();
    let w = body.width_factor;
    let size = body.canvas as f64;
    let mut kp = [[0.0; 2]; NUM_KEYPOINTS];
    let chest = [(size - 1.0) / 2.0 + art.root[0], 38.0 * size / 64.0 + art.root[1]];
    kp[CHEST] = chest;
    kp[NECK] = add(chest, scale(rot([0.0, -12.0], art.lean), u));
    let head = art.lean + art.head;
    kp[NOSE] = add(kp[NECK], scale(rot([0.0, -9.0], head), u));
    kp[LEFT_EYE] = add(kp[NOSE], scale(rot([2.8, -1.8], head), u));
    kp[RIGHT_EYE] = add(kp[NOSE], scale(rot([-2.8, -1.8], head), u));
    kp[LEFT_EAR] = add(kp[NOSE], scale(rot([5.6, 0.5], head), u));
    kp[RIGHT_EAR] = add(kp[NOSE], scale(rot([-5.6, 0.5], head), u));
    kp[LEFT_HIP] = add(chest, scale(rot([5.5 * w, 17.0], art.lean), u));
    kp[RIGHT_HIP] = add(chest, scale(rot([-5.5 * w, 17.0], art.lean), u));
    let lengths = [10.5, 9.5, 3.0];
    for (side, (shoulder, elbow, wrist, hand, sign)) in [
        (LEFT_SHOULDER, LEFT_ELBOW, LEFT_WRIST, LEFT_HAND, 1.0),
        (RIGHT_SHOULDER, RIGHT_ELBOW, RIGHT_WRIST, RIGHT_HAND, -1.0),
    ]
    .into_iter()
    .enumerate()
    {
        kp[shoulder] = add(kp[NECK], scale(rot([sign * 9.5 * w, 2.5], art.lean), u));
        let mirror = |deg: f64| {
            let a = deg.to_radians();
            if sign > 0.0 {
                a
            } else {
                std::f64::consts::PI - a
            }
        };
        let d = art.arms[side];
        // offsets are mirrored for the right arm so both arms share a range
        let upper = mirror(REST_ARM[0]) + sign * d[0];
        let fore = mirror(REST_ARM[1]) + sign * (d[0] + d[1]);
        let palm = mirror(REST_ARM[2]) + sign * (d[0] + d[1] + d[2]);
        kp[elbow] = add(kp[shoulder], scale(dir(upper), lengths[0] * u));
        kp[wrist] = add(kp[elbow], scale(dir(fore), lengths[1] * u));
        kp[hand] = add(kp[wrist], scale(dir(palm), lengths[2] * u));
    }
    let canvas = (body.canvas, body.canvas);
    Pose::clipped(kp.to_vec(), vec![true; NUM_KEYPOINTS], canvas).expect("clipped poses are valid")
}

/// Unperturbed pose of a body.
pub fn rest_pose(body: &BodyShape) -> Pose {
    forward_kinematics(
        body,
        &Articulation {
            root: [0.0; 2],
            lean: 0.0,
            head: 0.0,
            arms: [[0.0; 3]; 2],
        },
    )
}

/// Lengths of every limb in [`LIMBS`] order.
pub fn limb_lengths(pose: &Pose) -> Vec<f64> {
    LIMBS
        .iter()
        .map(|&(a, b)| {
            let (p, q) = (pose.keypoints[a], pose.keypoints[b]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
        })
        .collect()
}

/// Smooth articulated motion: every degree of freedom follows a mean-reverting
/// random walk passed through a one-pole low-pass filter, squashed by `tanh`
/// into its range and scaled by `amplitude`. Bone lengths are preserved by
/// forward kinematics.
pub fn sample_pose_sequence<R: Rng + ?Sized>(
    rng: &mut R,
    frames: usize,
    amplitude: f64,
    body: &BodyShape,
) -> Result<PoseSequence> {
    if frames == 0 {
        return Err(param("a pose sequence needs at least one frame"));
    }
    if !(amplitude >= 0.0) {
        return Err(param("motion amplitude must be non-negative"));
    }
    const RHO: f64 = 0.85;
    const SMOOTH: f64 = 0.6;
    let mut walk: [f64; CHANNELS] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let mut filtered = walk;
    let innovation = (1.0 - RHO * RHO).sqrt();
    let mut poses = Vec::with_capacity(frames);
    for t in 0..frames {
        if t > 0 {
            for c in 0..CHANNELS {
                let n: f64 = StandardNormal.sample(rng);
                walk[c] = RHO * walk[c] + innovation * n;
                filtered[c] = SMOOTH * filtered[c] + (1.0 - SMOOTH) * walk[c];
            }
        }
        let offsets: [f64; CHANNELS] = std::array::from_fn(|c| amplitude * RANGES[c] * filtered[c].tanh());
        poses.push(forward_kinematics(body, &Articulation::from_offsets(&offsets, body.unit())));
    }
    PoseSequence::new(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_amplitude_is_the_rest_pose() {
        let body = BodyShape::standard(64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seq = sample_pose_sequence(&mut rng, 5, 0.0, &body).unwrap();
        let rest = rest_pose(&body);
        assert!(seq.frames().iter().all(|p| *p == rest));
    }

    #[test]
    fn single_frame_sequence() {
        let body = BodyShape::standard(64);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let seq = sample_pose_sequence(&mut rng, 1, 1.0, &body).unwrap();
        assert_eq!(seq.len(), 1);
        assert_ne!(seq.frames()[0], rest_pose(&body));
        assert!(sample_pose_sequence(&mut rng, 0, 1.0, &body).is_err());
    }

    #[test]
    fn limb_lengths_hold_on_every_frame() {
        for seed in 0..8 {
            let body = BodyShape {
                canvas: 64,
                body_scale: 0.95 + 0.01 * seed as f64,
                width_factor: 1.1,
            };
            let rest = limb_lengths(&rest_pose(&body));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seq = sample_pose_sequence(&mut rng, 40, 1.0, &body).unwrap();
            for pose in seq.frames() {
                for (l, r) in limb_lengths(pose).iter().zip(&rest) {
                    assert!((l - r).abs() <= 0.05 * r, "limb length {l} vs rest {r}");
                }
            }
        }
    }

    #[test]
    fn rest_pose_is_fully_visible_and_symmetric() {
        let pose = rest_pose(&BodyShape::standard(64));
        assert!(pose.visibility.iter().all(|&v| v));
        let perm = flip_permutation();
        for i in 0..NUM_KEYPOINTS {
            let (a, b) = (pose.keypoints[i], pose.keypoints[perm[i]]);
            assert!((a[0] + b[0] - 63.0).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn motion_is_smooth() {
        let body = BodyShape::standard(64);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seq = sample_pose_sequence(&mut rng, 60, 1.0, &body).unwrap();
        let max_step = seq
            .frames()
            .windows(2)
            .flat_map(|w| {
                w[0].keypoints
                    .iter()
                    .zip(&w[1].keypoints)
                    .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
                    .collect::<Vec<_>>()
            })
            .fold(0.0f64, f64::max);
        assert!(max_step < 12.0, "largest per-frame jump {max_step}");
    }
}
