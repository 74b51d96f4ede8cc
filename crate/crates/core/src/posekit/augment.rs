use ndarray::{Array2, Array3};
use rand::Rng;

use super::{inside, Pose};
use crate::error::Result;
use crate::imageops::Mask;
use crate::posekit::skeleton::flip_permutation;
use crate::synthdata::FrameRecord;

/// Ranges for random geometric augmentation. Rotation is in degrees, shift
/// in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub max_rotation_deg: f64,
    pub max_shift_px: f64,
    pub scale_range: (f64, f64),
    pub flip_prob: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            max_rotation_deg: 0.0,
            max_shift_px: 0.0,
            scale_range: (1.0, 1.0),
            flip_prob: 0.0,
        }
    }
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            max_rotation_deg: 15.0,
            max_shift_px: 4.0,
            scale_range: (0.9, 1.1),
            flip_prob: 0.5,
        }
    }
}

/// Similarity transform about the canvas center, optionally followed by a
/// horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricTransform {
    pub angle_rad: f64,
    pub scale: f64,
    pub shift: [f64; 2],
    pub flip: bool,
    pub canvas: (usize, usize),
}

impl GeometricTransform {
    pub fn identity(canvas: (usize, usize)) -> Self {
        GeometricTransform {
            angle_rad: 0.0,
            scale: 1.0,
            shift: [0.0, 0.0],
            flip: false,
            canvas,
        }
    }

    pub fn sample<R: Rng + ?Sized>(params: &AugmentParams, canvas: (usize, usize), rng: &mut R) -> Self {
        let mut uniform = |lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let angle = uniform(-params.max_rotation_deg, params.max_rotation_deg).to_radians();
        let sx = uniform(-params.max_shift_px, params.max_shift_px);
        let sy = uniform(-params.max_shift_px, params.max_shift_px);
        let scale = uniform(params.scale_range.0, params.scale_range.1);
        let flip = params.flip_prob > 0.0 && rng.gen_bool(params.flip_prob.min(1.0));
        GeometricTransform {
            angle_rad: angle,
            scale,
            shift: [sx, sy],
            flip,
            canvas,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.angle_rad == 0.0 && self.scale == 1.0 && self.shift == [0.0, 0.0] && !self.flip
    }

    fn center(&self) -> [f64; 2] {
        [(self.canvas.0 as f64 - 1.0) / 2.0, (self.canvas.1 as f64 - 1.0) / 2.0]
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let c = self.center();
        let (s, co) = self.angle_rad.sin_cos();
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        let mut x = c[0] + self.scale * (co * dx - s * dy) + self.shift[0];
        let y = c[1] + self.scale * (s * dx + co * dy) + self.shift[1];
        if self.flip {
            x = self.canvas.0 as f64 - 1.0 - x;
        }
        [x, y]
    }

    pub fn invert(&self, q: [f64; 2]) -> [f64; 2] {
        let c = self.center();
        let mut x = q[0];
        if self.flip {
            x = self.canvas.0 as f64 - 1.0 - x;
        }
        let (dx, dy) = (x - c[0] - self.shift[0], q[1] - c[1] - self.shift[1]);
        let (s, co) = self.angle_rad.sin_cos();
        [
            c[0] + (co * dx + s * dy) / self.scale,
            c[1] + (-s * dx + co * dy) / self.scale,
        ]
    }

    /// Moves every keypoint; those leaving the canvas turn invisible, and a
    /// flip exchanges left/right indices.
    pub fn apply_pose(&self, pose: &Pose) -> Result<Pose> {
        if self.is_identity() {
            return Ok(pose.clone());
        }
        let mut kps: Vec<[f64; 2]> = pose.keypoints.iter().map(|&p| self.apply(p)).collect();
        let mut vis = pose.visibility.clone();
        for (kp, v) in kps.iter().zip(vis.iter_mut()) {
            if !inside(*kp, pose.canvas) {
                *v = false;
            }
        }
        if self.flip && pose.len() == super::NUM_KEYPOINTS {
            let perm = flip_permutation();
            let (old_k, old_v) = (kps.clone(), vis.clone());
            for i in 0..kps.len() {
                kps[perm[i]] = old_k[i];
                vis[perm[i]] = old_v[i];
            }
        }
        Pose::new(kps, vis, pose.canvas)
    }
}

/// Bilinear inverse warp; samples outside the source read as zero.
pub fn warp_image(img: &Array3<f32>, t: &GeometricTransform) -> Array3<f32> {
    if t.is_identity() {
        return img.clone();
    }
    let (h, w, c) = img.dim();
    let mut out = Array3::<f32>::zeros((h, w, c));
    let fetch = |r: i64, col: i64, ch: usize| -> f32 {
        if r < 0 || col < 0 || r >= h as i64 || col >= w as i64 {
            0.0
        } else {
            img[[r as usize, col as usize, ch]]
        }
    };
    for row in 0..h {
        for col in 0..w {
            let src = t.invert([col as f64, row as f64]);
            let (x0, y0) = (src[0].floor(), src[1].floor());
            let (fx, fy) = ((src[0] - x0) as f32, (src[1] - y0) as f32);
            let (x0, y0) = (x0 as i64, y0 as i64);
            for ch in 0..c {
                let v = fetch(y0, x0, ch) * (1.0 - fx) * (1.0 - fy)
                    + fetch(y0, x0 + 1, ch) * fx * (1.0 - fy)
                    + fetch(y0 + 1, x0, ch) * (1.0 - fx) * fy
                    + fetch(y0 + 1, x0 + 1, ch) * fx * fy;
                out[[row, col, ch]] = v;
            }
        }
    }
    out
}

/// Nearest-neighbour inverse warp for binary masks.
pub fn warp_mask(mask: &Mask, t: &GeometricTransform) -> Mask {
    if t.is_identity() {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h, w), |(row, col)| {
        let src = t.invert([col as f64, row as f64]);
        let (x, y) = (src[0].round(), src[1].round());
        x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h && mask[[y as usize, x as usize]]
    })
}

/// Applies one random geometric transform identically to the image, pose and
/// part masks of a frame.
pub fn augment<R: Rng + ?Sized>(frame: &FrameRecord, params: &AugmentParams, rng: &mut R) -> Result<FrameRecord> {
    let t = GeometricTransform::sample(params, frame.pose.canvas, rng);
    if t.is_identity() {
        return Ok(frame.clone());
    }
    Ok(FrameRecord {
        image: warp_image(&frame.image, &t),
        pose: t.apply_pose(&frame.pose)?,
        mask_head: warp_mask(&frame.mask_head, &t),
        mask_hand: warp_mask(&frame.mask_hand, &t),
        mask_torso: warp_mask(&frame.mask_torso, &t),
        attributes: frame.attributes,
        signer_id: frame.signer_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posekit::skeleton::{LEFT_HAND, RIGHT_HAND};
    use crate::posekit::NUM_KEYPOINTS;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inverse_undoes_forward() {
        let t = GeometricTransform {
            angle_rad: 0.3,
            scale: 1.07,
            shift: [2.0, -1.5],
            flip: true,
            canvas: (64, 48),
        };
        let p = [13.25, 40.5];
        let q = t.invert(t.apply(p));
        assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
    }

    #[test]
    fn flip_reflects_and_swaps_sides() {
        let mut kps = vec![[5.0, 5.0]; NUM_KEYPOINTS];
        kps[LEFT_HAND] = [10.0, 20.0];
        kps[RIGHT_HAND] = [50.0, 21.0];
        let pose = Pose::new(kps, vec![true; NUM_KEYPOINTS], (64, 64)).unwrap();
        let t = GeometricTransform {
            flip: true,
            ..GeometricTransform::identity((64, 64))
        };
        let out = t.apply_pose(&pose).unwrap();
        assert_eq!(out.keypoints[RIGHT_HAND], [63.0 - 10.0, 20.0]);
        assert_eq!(out.keypoints[LEFT_HAND], [63.0 - 50.0, 21.0]);
        assert_eq!(out.keypoints[0], [58.0, 5.0]);
    }

    #[test]
    fn rotation_fixes_the_center() {
        let t = GeometricTransform {
            angle_rad: std::f64::consts::FRAC_PI_2,
            ..GeometricTransform::identity((65, 65))
        };
        let c = t.apply([32.0, 32.0]);
        assert!((c[0] - 32.0).abs() < 1e-12 && (c[1] - 32.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_canvas_keypoints_become_invisible() {
        let pose = Pose::new(vec![[62.0, 10.0]], vec![true], (64, 64)).unwrap();
        let t = GeometricTransform {
            shift: [5.0, 0.0],
            ..GeometricTransform::identity((64, 64))
        };
        assert_eq!(t.apply_pose(&pose).unwrap().visibility, vec![false]);
    }

    #[test]
    fn identity_sampling_never_moves_anything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = GeometricTransform::sample(&AugmentParams::identity(), (32, 32), &mut rng);
        assert!(t.is_identity());
    }
}
