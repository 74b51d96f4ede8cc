use ndarray::{Array2, Array3};

use super::skeleton::{limb_flip_permutation, LIMBS};
use super::Pose;
use crate::error::{param, Result};

/// Supersampling factor per axis for anti-aliased rasterization.
pub const SUPERSAMPLE: usize = 4;

/// Limb colors, one RGB triple per entry of [`LIMBS`].
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    pub colors: Vec<[f32; 3]>,
}

impl Default for Palette {
    /// Evenly spaced hues at full saturation and value.
    fn default() -> Self {
        let n = LIMBS.len();
        let colors = (0..n)
            .map(|i| hsv_to_rgb(i as f32 / n as f32, 1.0, 1.0))
            .collect();
        Palette { colors }
    }
}

impl Palette {
    /// Palette with left/right limb colors exchanged, matching a flipped pose.
    pub fn mirrored(&self) -> Palette {
        let perm = limb_flip_permutation();
        Palette {
            colors: (0..self.colors.len()).map(|i| self.colors[perm[i]]).collect(),
        }
    }
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.fract() * 6.0).max(0.0);
    let sector = h6.floor() as u32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// RGB skeleton render, `(H, W, 3)`, black background.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonImage {
    pub pixels: Array3<f32>,
    pub palette: Palette,
    pub stroke_width: f64,
}

pub(crate) fn subpixel_center(i: usize) -> f64 {
    (i as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5
}

pub(crate) fn dist_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
    let (wx, wy) = (p[0] - a[0], p[1] - a[1]);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

/// Fraction of each pixel covered by a round-capped segment of the given
/// radius, estimated on a `SUPERSAMPLE x SUPERSAMPLE` grid.
pub fn segment_coverage(a: [f64; 2], b: [f64; 2], radius: f64, width: usize, height: usize) -> Array2<f32> {
    let mut cov = Array2::<f32>::zeros((height, width));
    let x0 = (a[0].min(b[0]) - radius - 1.0).floor().max(0.0) as usize;
    let y0 = (a[1].min(b[1]) - radius - 1.0).floor().max(0.0) as usize;
    let x1 = ((a[0].max(b[0]) + radius + 1.0).ceil().max(0.0) as usize).min(width.saturating_sub(1));
    let y1 = ((a[1].max(b[1]) + radius + 1.0).ceil().max(0.0) as usize).min(height.saturating_sub(1));
    if width == 0 || height == 0 || x0 > x1 || y0 > y1 {
        return cov;
    }
    let total = (SUPERSAMPLE * SUPERSAMPLE) as f32;
    for row in y0..=y1 {
        for col in x0..=x1 {
            let mut hits = 0u32;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let p = [col as f64 + subpixel_center(sx), row as f64 + subpixel_center(sy)];
                    if dist_to_segment(p, a, b) <= radius {
                        hits += 1;
                    }
                }
            }
            cov[[row, col]] = hits as f32 / total;
        }
    }
    cov
}

/// Draws every limb whose endpoints are both visible, in limb order, as an
/// anti-aliased stroke composited over a black background.
pub fn render_skeleton(pose: &Pose, palette: &Palette, stroke_width: f64) -> Result<SkeletonImage> {
    pose.validate()?;
    if palette.colors.len() < LIMBS.len() {
        return Err(param(format!(
            "palette has {} colors but the skeleton has {} limbs",
            palette.colors.len(),
            LIMBS.len()
        )));
    }
    if !(stroke_width > 0.0) {
        return Err(param("stroke width must be positive"));
    }
    let (w, h) = pose.canvas;
    let mut pixels = Array3::<f32>::zeros((h, w, 3));
    for (li, &(a, b)) in LIMBS.iter().enumerate() {
        if a >= pose.len() || b >= pose.len() || !pose.visibility[a] || !pose.visibility[b] {
            continue;
        }
        let cov = segment_coverage(pose.keypoints[a], pose.keypoints[b], stroke_width / 2.0, w, h);
        let color = palette.colors[li];
        for ((row, col), &c) in cov.indexed_iter() {
            if c > 0.0 {
                for ch in 0..3 {
                    let px = &mut pixels[[row, col, ch]];
                    *px = *px * (1.0 - c) + color[ch] * c;
                }
            }
        }
    }
    Ok(SkeletonImage {
        pixels,
        palette: palette.clone(),
        stroke_width,
    })
}

#[cfg(test)]
mod tests {
    use super::super::skeleton::NUM_KEYPOINTS;
    use super::*;

    fn pose_with_limb(a: [f64; 2], b: [f64; 2]) -> Pose {
        // nose -> left eye is limb 0
        let mut kps = vec![[0.0, 0.0]; NUM_KEYPOINTS];
        let mut vis = vec![false; NUM_KEYPOINTS];
        kps[0] = a;
        kps[1] = b;
        vis[0] = true;
        vis[1] = true;
        Pose::new(kps, vis, (32, 32)).unwrap()
    }

    #[test]
    fn palette_colors_are_distinct() {
        let p = Palette::default();
        for i in 0..p.colors.len() {
            for j in i + 1..p.colors.len() {
                assert_ne!(p.colors[i], p.colors[j]);
            }
        }
    }

    #[test]
    fn invisible_pose_renders_black() {
        let pose = Pose::new(vec![[3.0, 3.0]; NUM_KEYPOINTS], vec![false; NUM_KEYPOINTS], (16, 16)).unwrap();
        let img = render_skeleton(&pose, &Palette::default(), 2.0).unwrap();
        assert!(img.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_limb_matches_brute_force_line() {
        let pose = pose_with_limb([10.0, 12.0], [20.0, 12.0]);
        let img = render_skeleton(&pose, &Palette::default(), 1.0).unwrap();
        // brute-force: pixels whose center lies on the closed segment
        let expected: Vec<usize> = (0..32).filter(|&x| (10..=20).contains(&x)).collect();
        let lit: Vec<usize> = (0..32)
            .filter(|&x| (0..3).any(|c| img.pixels[[12, x, c]] > 0.0))
            .collect();
        assert!(lit.len() >= 10);
        for x in &expected {
            assert!(lit.contains(x), "pixel {x} on the segment is dark");
        }
        // nothing drawn far from the segment
        assert!((0..3).all(|c| img.pixels[[5, 15, c]] == 0.0));
    }

    #[test]
    fn rendering_is_deterministic() {
        let pose = pose_with_limb([3.3, 4.1], [20.7, 25.2]);
        let a = render_skeleton(&pose, &Palette::default(), 2.0).unwrap();
        let b = render_skeleton(&pose, &Palette::default(), 2.0).unwrap();
        assert_eq!(a.pixels, b.pixels);
    }

    #[test]
    fn short_palette_is_rejected() {
        let pose = pose_with_limb([3.0, 4.0], [8.0, 4.0]);
        let palette = Palette { colors: vec![[1.0, 0.0, 0.0]] };
        assert!(render_skeleton(&pose, &palette, 2.0).is_err());
    }
}
