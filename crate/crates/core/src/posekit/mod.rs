//! 2-D poses and their rasterized conditioning formats.

mod augment;
mod heatmap;
pub(crate) mod raster;
pub mod skeleton;

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

pub use augment::{augment, warp_image, warp_mask, AugmentParams, GeometricTransform};
pub use heatmap::{heatmap_value, render_heatmaps, HeatmapStack, PAPER_TAU};
pub use raster::{render_skeleton, segment_coverage, Palette, SkeletonImage, SUPERSAMPLE};
pub use skeleton::{Region, LIMBS, NUM_KEYPOINTS};

/// A single 2-D pose: `K` keypoints in pixel coordinates plus visibility.
///
/// Pixel `(col, row)` has its center at coordinate `(col, row)`, so visible
/// keypoints satisfy `0 <= x < W` and `0 <= y < H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub keypoints: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
    /// `(width, height)` in pixels.
    pub canvas: (usize, usize),
}

impl Pose {
    pub fn new(keypoints: Vec<[f64; 2]>, visibility: Vec<bool>, canvas: (usize, usize)) -> Result<Self> {
        let pose = Pose {
            keypoints,
            visibility,
            canvas,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Builds a pose, marking keypoints that fall outside the canvas invisible.
    pub fn clipped(keypoints: Vec<[f64; 2]>, mut visibility: Vec<bool>, canvas: (usize, usize)) -> Result<Self> {
        for (kp, vis) in keypoints.iter().zip(visibility.iter_mut()) {
            if !inside(*kp, canvas) {
                *vis = false;
            }
        }
        Pose::new(keypoints, visibility, canvas)
    }

    pub fn validate(&self) -> Result<()> {
        if self.keypoints.is_empty() {
            return Err(param("a pose needs at least one keypoint"));
        }
        if self.keypoints.len() != self.visibility.len() {
            return Err(param(format!(
                "{} keypoints but {} visibility flags",
                self.keypoints.len(),
                self.visibility.len()
            )));
        }
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return Err(param("canvas must be non-empty"));
        }
        for (i, (kp, &vis)) in self.keypoints.iter().zip(&self.visibility).enumerate() {
            if vis && !inside(*kp, self.canvas) {
                return Err(param(format!(
                    "visible keypoint {i} at ({}, {}) lies outside the {}x{} canvas",
                    kp[0], kp[1], self.canvas.0, self.canvas.1
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn width(&self) -> usize {
        self.canvas.0
    }

    pub fn height(&self) -> usize {
        self.canvas.1
    }

    /// Translates the given keypoints; those pushed off-canvas become invisible.
    pub fn translated(&self, joints: &[usize], dx: f64, dy: f64) -> Result<Pose> {
        let mut kps = self.keypoints.clone();
        for &j in joints {
            let kp = kps.get_mut(j).ok_or_else(|| param(format!("no keypoint {j}")))?;
            kp[0] += dx;
            kp[1] += dy;
        }
        Pose::clipped(kps, self.visibility.clone(), self.canvas)
    }

    /// Mean x coordinate over visible keypoints.
    pub fn mean_x(&self) -> f64 {
        let (sum, n) = self
            .keypoints
            .iter()
            .zip(&self.visibility)
            .filter(|(_, &v)| v)
            .fold((0.0, 0usize), |(s, n), (kp, _)| (s + kp[0], n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

pub(crate) fn inside(kp: [f64; 2], canvas: (usize, usize)) -> bool {
    kp[0].is_finite()
        && kp[1].is_finite()
        && kp[0] >= 0.0
        && kp[1] >= 0.0
        && kp[0] < canvas.0 as f64
        && kp[1] < canvas.1 as f64
}

/// Ordered poses sharing one keypoint count and canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    frames: Vec<Pose>,
}

impl PoseSequence {
    pub fn new(frames: Vec<Pose>) -> Result<Self> {
        if let Some(first) = frames.first() {
            for (t, f) in frames.iter().enumerate() {
                f.validate()?;
                if f.len() != first.len() || f.canvas != first.canvas {
                    return Err(param(format!("frame {t} disagrees on keypoint count or canvas")));
                }
            }
        }
        Ok(PoseSequence { frames })
    }

    pub fn frames(&self) -> &[Pose] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn into_frames(self) -> Vec<Pose> {
        self.frames
    }
}

/// One row of a pose JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub frame: u64,
    pub kp: Vec<[f64; 2]>,
    pub vis: Vec<bool>,
}

impl PoseRow {
    pub fn from_pose(frame: u64, pose: &Pose) -> Self {
        PoseRow {
            frame,
            kp: pose.keypoints.clone(),
            vis: pose.visibility.clone(),
        }
    }

    pub fn to_pose(&self, canvas: (usize, usize)) -> Result<Pose> {
        Pose::new(self.kp.clone(), self.vis.clone(), canvas)
    }
}

pub fn write_pose_rows(path: &Path, rows: &[PoseRow]) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| Error::io(path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pose_rows(path: &Path) -> Result<Vec<PoseRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: PoseRow = serde_json::from_str(&line)
            .map_err(|e| Error::io(path, format!("line {}: {e}", n + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visible_keypoints_must_be_on_canvas() {
        assert!(Pose::new(vec![[64.0, 3.0]], vec![true], (64, 64)).is_err());
        assert!(Pose::new(vec![[64.0, 3.0]], vec![false], (64, 64)).is_ok());
        assert!(Pose::new(vec![], vec![], (64, 64)).is_err());
        let clipped = Pose::clipped(vec![[-1.0, 3.0], [2.0, 2.0]], vec![true, true], (8, 8)).unwrap();
        assert_eq!(clipped.visibility, vec![false, true]);
    }

    #[test]
    fn sequence_rejects_mixed_canvases() {
        let a = Pose::new(vec![[1.0, 1.0]], vec![true], (8, 8)).unwrap();
        let b = Pose::new(vec![[1.0, 1.0]], vec![true], (16, 8)).unwrap();
        assert!(PoseSequence::new(vec![a.clone(), b]).is_err());
        assert_eq!(PoseSequence::new(vec![a.clone(), a]).unwrap().len(), 2);
    }

    #[test]
    fn pose_rows_use_the_jsonl_field_names() {
        let pose = Pose::new(vec![[1.5, 2.0]], vec![true], (8, 8)).unwrap();
        let text = serde_json::to_string(&PoseRow::from_pose(3, &pose)).unwrap();
        assert_eq!(text, r#"{"frame":3,"kp":[[1.5,2.0]],"vis":[true]}"#);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.jsonl");
        write_pose_rows(&path, &[PoseRow::from_pose(0, &pose), PoseRow::from_pose(1, &pose)]).unwrap();
        let rows = read_pose_rows(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].to_pose((8, 8)).unwrap(), pose);
    }
}
