//! Fixed 17-joint upper-body topology used by every renderer and model.

/// Number of keypoints in the topology.
pub const NUM_KEYPOINTS: usize = 17;

pub const NOSE: usize = 0;
pub const LEFT_EYE: usize = 1;
pub const RIGHT_EYE: usize = 2;
pub const LEFT_EAR: usize = 3;
pub const RIGHT_EAR: usize = 4;
pub const NECK: usize = 5;
pub const CHEST: usize = 6;
pub const LEFT_HIP: usize = 7;
pub const RIGHT_HIP: usize = 8;
pub const LEFT_SHOULDER: usize = 9;
pub const LEFT_ELBOW: usize = 10;
pub const LEFT_WRIST: usize = 11;
pub const RIGHT_SHOULDER: usize = 12;
pub const RIGHT_ELBOW: usize = 13;
pub const RIGHT_WRIST: usize = 14;
pub const LEFT_HAND: usize = 15;
pub const RIGHT_HAND: usize = 16;

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "neck",
    "chest",
    "left_hip",
    "right_hip",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_hand",
    "right_hand",
];

/// Limbs as `(from, to)` keypoint index pairs.
pub const LIMBS: [(usize, usize); 17] = [
    (NOSE, LEFT_EYE),
    (NOSE, RIGHT_EYE),
    (LEFT_EYE, LEFT_EAR),
    (RIGHT_EYE, RIGHT_EAR),
    (NOSE, NECK),
    (NECK, CHEST),
    (CHEST, LEFT_HIP),
    (CHEST, RIGHT_HIP),
    (LEFT_HIP, RIGHT_HIP),
    (NECK, LEFT_SHOULDER),
    (LEFT_SHOULDER, LEFT_ELBOW),
    (LEFT_ELBOW, LEFT_WRIST),
    (LEFT_WRIST, LEFT_HAND),
    (NECK, RIGHT_SHOULDER),
    (RIGHT_SHOULDER, RIGHT_ELBOW),
    (RIGHT_ELBOW, RIGHT_WRIST),
    (RIGHT_WRIST, RIGHT_HAND),
];

/// Left/right keypoint pairs exchanged by a horizontal flip.
pub const FLIP_PAIRS: [(usize, usize); 7] = [
    (LEFT_EYE, RIGHT_EYE),
    (LEFT_EAR, RIGHT_EAR),
    (LEFT_HIP, RIGHT_HIP),
    (LEFT_SHOULDER, RIGHT_SHOULDER),
    (LEFT_ELBOW, RIGHT_ELBOW),
    (LEFT_WRIST, RIGHT_WRIST),
    (LEFT_HAND, RIGHT_HAND),
];

/// Keypoint index each keypoint maps to under a horizontal flip.
pub fn flip_permutation() -> [usize; NUM_KEYPOINTS] {
    let mut perm: [usize; NUM_KEYPOINTS] = std::array::from_fn(|i| i);
    for &(a, b) in &FLIP_PAIRS {
        perm[a] = b;
        perm[b] = a;
    }
    perm
}

/// Limb index each limb maps to under a horizontal flip.
pub fn limb_flip_permutation() -> [usize; LIMBS.len()] {
    let perm = flip_permutation();
    std::array::from_fn(|i| {
        let (a, b) = LIMBS[i];
        let (fa, fb) = (perm[a], perm[b]);
        LIMBS
            .iter()
            .position(|&(x, y)| (x, y) == (fa, fb) || (x, y) == (fb, fa))
            .expect("limb list is closed under flipping")
    })
}

/// Evaluation regions, one per row of the pose-estimation report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Region {
    Head,
    RightHand,
    LeftHand,
    Clothes,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Head, Region::RightHand, Region::LeftHand, Region::Clothes];

    pub fn joints(self) -> &'static [usize] {
        match self {
            Region::Head => &[NOSE, LEFT_EYE, RIGHT_EYE, LEFT_EAR, RIGHT_EAR],
            Region::RightHand => &[RIGHT_WRIST, RIGHT_HAND],
            Region::LeftHand => &[LEFT_WRIST, LEFT_HAND],
            Region::Clothes => &[
                NECK,
                CHEST,
                LEFT_HIP,
                RIGHT_HIP,
                LEFT_SHOULDER,
                LEFT_ELBOW,
                RIGHT_SHOULDER,
                RIGHT_ELBOW,
            ],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Region::Head => "Head",
            Region::RightHand => "R-Hand",
            Region::LeftHand => "L-Hand",
            Region::Clothes => "Clothes",
        }
    }
}

/// Keypoints belonging to the head part.
pub const HEAD_KEYPOINTS: [usize; 5] = [NOSE, LEFT_EYE, RIGHT_EYE, LEFT_EAR, RIGHT_EAR];

/// Fingertip-cluster keypoints around which hand masks are drawn.
pub const HAND_KEYPOINTS: [usize; 2] = [LEFT_HAND, RIGHT_HAND];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_is_an_involution() {
        let perm = flip_permutation();
        for i in 0..NUM_KEYPOINTS {
            assert_eq!(perm[perm[i]], i);
        }
        let limbs = limb_flip_permutation();
        for i in 0..LIMBS.len() {
            assert_eq!(limbs[limbs[i]], i);
        }
    }

    #[test]
    fn regions_cover_every_joint_once() {
        let mut seen = [0; NUM_KEYPOINTS];
        for r in Region::ALL {
            for &j in r.joints() {
                seen[j] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1), "{seen:?}");
    }
}
