use ndarray::Array3;

use super::motion::BodyShape;
use super::{Ethnicity, FrameRecord, Gender, SignerSpec};
use crate::error::{shape, Result};
use crate::imageops::{quantize, Mask};
use crate::posekit::raster::{dist_to_segment, subpixel_center};
use crate::posekit::skeleton::*;
use crate::posekit::{Pose, SUPERSAMPLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Head,
    Body,
}

#[derive(Debug, Clone)]
enum Shape {
    Capsule { a: [f64; 2], b: [f64; 2], r: f64 },
    /// Ellipse in a frame rotated by `angle`, optionally keeping only points
    /// whose local y lies in `[y_min, y_max]`.
    Ellipse {
        c: [f64; 2],
        rx: f64,
        ry: f64,
        angle: f64,
        y_min: f64,
        y_max: f64,
    },
    /// Convex polygon, counter-clockwise or clockwise.
    Polygon(Vec<[f64; 2]>),
}

impl Shape {
    fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Shape::Capsule { a, b, r } => dist_to_segment(p, *a, *b) <= *r,
            Shape::Ellipse {
                c,
                rx,
                ry,
                angle,
                y_min,
                y_max,
            } => {
                let (s, co) = angle.sin_cos();
                let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
                let lx = co * dx + s * dy;
                let ly = -s * dx + co * dy;
                ly >= *y_min && ly <= *y_max && (lx / rx).powi(2) + (ly / ry).powi(2) <= 1.0
            }
            Shape::Polygon(pts) => {
                let n = pts.len();
                let mut sign = 0.0f64;
                for i in 0..n {
                    let (a, b) = (pts[i], pts[(i + 1) % n]);
                    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                    if cross != 0.0 {
                        if sign == 0.0 {
                            sign = cross.signum();
                        } else if cross.signum() != sign {
                            return false;
                        }
                    }
                }
                true
            }
        }
    }

    fn bounds(&self) -> [f64; 4] {
        match self {
            Shape::Capsule { a, b, r } => [a[0].min(b[0]) - r, a[1].min(b[1]) - r, a[0].max(b[0]) + r, a[1].max(b[1]) + r],
            Shape::Ellipse { c, rx, ry, .. } => {
                let m = rx.max(*ry);
                [c[0] - m, c[1] - m, c[0] + m, c[1] + m]
            }
            Shape::Polygon(pts) => pts.iter().fold(
                [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
                |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
            ),
        }
    }
}

struct Primitive {
    shape: Shape,
    bounds: [f64; 4],
    color: [f32; 3],
    part: Part,
    skin: bool,
}

fn prim(shape: Shape, color: [f32; 3], part: Part, skin: bool) -> Primitive {
    let bounds = shape.bounds();
    Primitive {
        shape,
        bounds,
        color,
        part,
        skin,
    }
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

fn offset(p: [f64; 2], angle: f64, local: [f64; 2], u: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [p[0] + u * (c * local[0] - s * local[1]), p[1] + u * (s * local[0] + c * local[1])]
}

/// Scene primitives in back-to-front order.
fn build_scene(spec: &SignerSpec, pose: &Pose) -> Vec<Primitive> {
    let body = BodyShape::for_signer(spec, pose.width());
    let u = body.unit();
    let w = body.width_factor;
    let kp = &pose.keypoints;
    let skin = spec.skin_rgb();
    let cloth = spec.clothing_color;
    let hair = spec.hair_rgb();
    let mut scene = Vec::new();

    let head_angle = {
        let (l, r) = (kp[LEFT_EYE], kp[RIGHT_EYE]);
        (l[1] - r[1]).atan2(l[0] - r[0])
    };
    let nose = kp[NOSE];

    if spec.labels.gender == Gender::A {
        scene.push(prim(
            Shape::Ellipse {
                c: offset(nose, head_angle, [0.0, -0.5], u),
                rx: 7.2 * u,
                ry: 8.6 * u,
                angle: head_angle,
                y_min: f64::NEG_INFINITY,
                y_max: 6.0 * u,
            },
            hair,
            Part::Head,
            false,
        ));
    }

    // torso
    let (ls, rs) = (kp[LEFT_SHOULDER], kp[RIGHT_SHOULDER]);
    let (lh, rh) = (kp[LEFT_HIP], kp[RIGHT_HIP]);
    scene.push(prim(
        Shape::Polygon(vec![
            [rs[0], rs[1] - 1.2 * u],
            [ls[0], ls[1] - 1.2 * u],
            [lh[0] + 1.0 * u * w, lh[1] + 1.0 * u],
            [rh[0] - 1.0 * u * w, rh[1] + 1.0 * u],
        ]),
        cloth,
        Part::Body,
        false,
    ));
    scene.push(prim(Shape::Capsule { a: rs, b: ls, r: 2.2 * u }, cloth, Part::Body, false));
    scene.push(prim(Shape::Capsule { a: rh, b: lh, r: 1.2 * u }, cloth, Part::Body, false));
    scene.push(prim(
        Shape::Capsule {
            a: kp[NECK],
            b: lerp(kp[NECK], nose, 0.45),
            r: 2.3 * u,
        },
        skin,
        Part::Body,
        true,
    ));

    // head
    for ear in [LEFT_EAR, RIGHT_EAR] {
        scene.push(prim(Shape::Capsule { a: kp[ear], b: kp[ear], r: 1.3 * u }, skin, Part::Head, true));
    }
    let face = |rx: f64, ry: f64, y_min: f64, y_max: f64| Shape::Ellipse {
        c: nose,
        rx: rx * u,
        ry: ry * u,
        angle: head_angle,
        y_min: y_min * u,
        y_max: y_max * u,
    };
    scene.push(prim(face(5.6, 6.6, f64::NEG_INFINITY, f64::INFINITY), skin, Part::Head, true));
    match spec.labels.gender {
        Gender::A => scene.push(prim(face(5.7, 6.7, f64::NEG_INFINITY, -3.2), hair, Part::Head, false)),
        Gender::B => scene.push(prim(face(6.1, 7.1, f64::NEG_INFINITY, -2.6), hair, Part::Head, false)),
    }
    let eye_color = [0.10, 0.10, 0.16];
    match spec.labels.ethnicity {
        Ethnicity::E1 => {
            for eye in [LEFT_EYE, RIGHT_EYE] {
                scene.push(prim(Shape::Capsule { a: kp[eye], b: kp[eye], r: 0.9 * u }, eye_color, Part::Head, false));
            }
        }
        Ethnicity::E2 => {
            for eye in [LEFT_EYE, RIGHT_EYE] {
                let a = offset(kp[eye], head_angle, [-1.0, 0.0], u);
                let b = offset(kp[eye], head_angle, [1.0, 0.0], u);
                scene.push(prim(Shape::Capsule { a, b, r: 0.55 * u }, eye_color, Part::Head, false));
                let a = offset(kp[eye], head_angle, [-1.1, -1.6], u);
                let b = offset(kp[eye], head_angle, [1.1, -1.8], u);
                scene.push(prim(Shape::Capsule { a, b, r: 0.45 * u }, hair, Part::Head, false));
            }
        }
    }
    scene.push(prim(
        Shape::Capsule {
            a: offset(nose, head_angle, [-1.4, 3.2], u),
            b: offset(nose, head_angle, [1.4, 3.2], u),
            r: 0.5 * u,
        },
        [0.66, 0.24, 0.24],
        Part::Head,
        false,
    ));

    // arms, in front of everything else
    for (shoulder, elbow, wrist, hand) in [
        (LEFT_SHOULDER, LEFT_ELBOW, LEFT_WRIST, LEFT_HAND),
        (RIGHT_SHOULDER, RIGHT_ELBOW, RIGHT_WRIST, RIGHT_HAND),
    ] {
        scene.push(prim(Shape::Capsule { a: kp[shoulder], b: kp[elbow], r: 2.2 * u }, skin, Part::Body, true));
        scene.push(prim(
            Shape::Capsule {
                a: kp[shoulder],
                b: lerp(kp[shoulder], kp[elbow], 0.45),
                r: 2.6 * u,
            },
            cloth,
            Part::Body,
            false,
        ));
        scene.push(prim(Shape::Capsule { a: kp[elbow], b: kp[wrist], r: 1.9 * u }, skin, Part::Body, true));
        scene.push(prim(Shape::Capsule { a: kp[wrist], b: kp[hand], r: 1.7 * u }, skin, Part::Body, true));
        scene.push(prim(Shape::Capsule { a: kp[hand], b: kp[hand], r: 2.3 * u }, skin, Part::Body, true));
    }
    scene
}

/// Radius of the hand mask disk, in reference-layout units.
const HAND_MASK_RADIUS: f64 = 4.2;

/// Frame plus the skin-coverage mask from the same geometry.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub record: FrameRecord,
    pub skin: Mask,
}

fn rasterize(spec: &SignerSpec, pose: &Pose, signer_id: &str) -> Result<RenderedFrame> {
    pose.validate()?;
    if pose.len() != NUM_KEYPOINTS {
        return Err(shape(format!("expected {NUM_KEYPOINTS} keypoints, got {}", pose.len())));
    }
    let (w, h) = pose.canvas;
    let scene = build_scene(spec, pose);
    let mut image = Array3::<f32>::zeros((h, w, 3));
    let mut fg = Mask::from_elem((h, w), false);
    let mut head = Mask::from_elem((h, w), false);
    let mut skin = Mask::from_elem((h, w), false);
    let n_sub = (SUPERSAMPLE * SUPERSAMPLE) as f32;
    for row in 0..h {
        for col in 0..w {
            let (px, py) = (col as f64, row as f64);
            let candidates: Vec<&Primitive> = scene
                .iter()
                .filter(|p| p.bounds[0] <= px + 0.5 && p.bounds[2] >= px - 0.5 && p.bounds[1] <= py + 0.5 && p.bounds[3] >= py - 0.5)
                .collect();
            if candidates.is_empty() {
                continue;
            }
            let mut acc = [0.0f32; 3];
            let (mut n_head, mut n_body) = (0u32, 0u32);
            let mut any_skin = false;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let p = [px + subpixel_center(sx), py + subpixel_center(sy)];
                    if let Some(top) = candidates.iter().rev().find(|prim| prim.shape.contains(p)) {
                        for c in 0..3 {
                            acc[c] += top.color[c];
                        }
                        match top.part {
                            Part::Head => n_head += 1,
                            Part::Body => n_body += 1,
                        }
                        any_skin |= top.skin;
                    }
                }
            }
            if n_head + n_body == 0 {
                continue;
            }
            for c in 0..3 {
                image[[row, col, c]] = acc[c] / n_sub;
            }
            fg[[row, col]] = true;
            head[[row, col]] = n_head >= n_body;
            skin[[row, col]] = any_skin;
        }
    }
    let image = quantize(&image);
    // quantization may zero out faint coverage; the mask follows the image
    for ((row, col), f) in fg.indexed_iter_mut() {
        if *f && (0..3).all(|c| image[[row, col, c]] == 0.0) {
            *f = false;
        }
    }

    let unit = BodyShape::for_signer(spec, w).unit();
    let radius = HAND_MASK_RADIUS * unit;
    let mut hand = Mask::from_elem((h, w), false);
    for &j in &HAND_KEYPOINTS {
        let c = pose.keypoints[j];
        for ((row, col), m) in hand.indexed_iter_mut() {
            let d2 = (col as f64 - c[0]).powi(2) + (row as f64 - c[1]).powi(2);
            if d2 <= radius * radius {
                *m = true;
            }
        }
    }
    let mut mask_hand = fg.clone();
    mask_hand.zip_mut_with(&hand, |a, &b| *a &= b);
    let mut mask_head = fg.clone();
    ndarray::Zip::from(&mut mask_head)
        .and(&head)
        .and(&mask_hand)
        .for_each(|m, &is_head, &is_hand| *m = *m && is_head && !is_hand);
    let mut mask_torso = fg.clone();
    ndarray::Zip::from(&mut mask_torso)
        .and(&mask_head)
        .and(&mask_hand)
        .for_each(|m, &a, &b| *m = *m && !a && !b);
    skin.zip_mut_with(&fg, |s, &f| *s &= f);

    Ok(RenderedFrame {
        record: FrameRecord {
            image,
            pose: pose.clone(),
            mask_head,
            mask_hand,
            mask_torso,
            attributes: spec.labels,
            signer_id: signer_id.to_string(),
        },
        skin,
    })
}

/// Renders the articulated figure of `spec` in `pose` on a black background,
/// with part masks taken from the same geometry. Output is quantized to 8 bits.
pub fn render_frame(spec: &SignerSpec, pose: &Pose, signer_id: &str) -> Result<FrameRecord> {
    Ok(rasterize(spec, pose, signer_id)?.record)
}

/// Pixels where any skin-colored primitive is visible.
pub fn skin_region(spec: &SignerSpec, pose: &Pose) -> Result<Mask> {
    Ok(rasterize(spec, pose, "")?.skin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posekit::PoseSequence;
    use crate::synthdata::{motion::rest_pose, sample_pose_sequence, AttributeLabels, Ethnicity, SkinTone};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(tone: SkinTone, gender: Gender, eth: Ethnicity) -> SignerSpec {
        SignerSpec {
            labels: AttributeLabels {
                skin_tone: tone,
                gender,
                ethnicity: eth,
            },
            clothing_color: [0.2, 0.4, 0.8],
            body_scale: 1.0,
        }
    }

    fn poses(seed: u64, n: usize) -> PoseSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_pose_sequence(&mut rng, n, 1.0, &BodyShape::standard(64)).unwrap()
    }

    #[test]
    fn masks_partition_the_foreground() {
        for g in Gender::ALL {
            for pose in poses(1, 6).frames() {
                let rec = render_frame(&spec(SkinTone::Tone2, g, Ethnicity::E2), pose, "s").unwrap();
                let (h, w) = rec.mask_head.dim();
                for r in 0..h {
                    for c in 0..w {
                        let n = rec.mask_head[[r, c]] as u8 + rec.mask_hand[[r, c]] as u8 + rec.mask_torso[[r, c]] as u8;
                        let nonzero = (0..3).any(|ch| rec.image[[r, c, ch]] > 0.0);
                        assert!(n <= 1, "masks overlap at ({r}, {c})");
                        assert_eq!(n == 1, nonzero, "mask union differs from foreground at ({r}, {c})");
                    }
                }
                assert!(rec.mask_head.iter().any(|&m| m));
                assert!(rec.mask_hand.iter().any(|&m| m));
            }
        }
    }

    #[test]
    fn skin_tone_only_changes_skin_pixels() {
        for pose in poses(2, 4).frames() {
            let a = spec(SkinTone::Tone1, Gender::A, Ethnicity::E1);
            let b = spec(SkinTone::Tone4, Gender::A, Ethnicity::E1);
            let fa = render_frame(&a, pose, "a").unwrap();
            let fb = render_frame(&b, pose, "b").unwrap();
            let skin_a = skin_region(&a, pose).unwrap();
            let mut changed = 0;
            for ((r, c), &s) in skin_a.indexed_iter() {
                let differs = (0..3).any(|ch| fa.image[[r, c, ch]] != fb.image[[r, c, ch]]);
                if differs {
                    changed += 1;
                    assert!(s, "pixel ({r}, {c}) changed outside the skin region");
                }
            }
            assert!(changed > 50);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = spec(SkinTone::Tone3, Gender::B, Ethnicity::E1);
        let seq = poses(3, 1);
        let pose = &seq.frames()[0];
        assert_eq!(render_frame(&s, pose, "x").unwrap(), render_frame(&s, pose, "x").unwrap());
    }

    #[test]
    fn keypoints_lie_on_the_dilated_foreground() {
        let stroke = 2.0;
        for pose in poses(4, 8).frames() {
            let rec = render_frame(&spec(SkinTone::Tone1, Gender::A, Ethnicity::E2), pose, "s").unwrap();
            let fg = rec.foreground();
            for (kp, &vis) in pose.keypoints.iter().zip(&pose.visibility) {
                if !vis {
                    continue;
                }
                let near = fg.indexed_iter().any(|((r, c), &f)| {
                    f && ((c as f64 - kp[0]).powi(2) + (r as f64 - kp[1]).powi(2)).sqrt() <= stroke
                });
                assert!(near, "keypoint {kp:?} is off the figure");
            }
        }
    }

    #[test]
    fn rest_pose_renders_at_paper_resolution() {
        let pose = rest_pose(&BodyShape::standard(256));
        let rec = render_frame(&spec(SkinTone::Tone2, Gender::B, Ethnicity::E2), &pose, "s").unwrap();
        assert_eq!(rec.image.dim(), (256, 256, 3));
        assert!(rec.mask_head.iter().filter(|&&m| m).count() > 1000);
    }
}
