use ndarray::Array3;

use super::Pose;
use crate::error::{param, Result};

/// Gaussian bandwidth used for heatmap conditioning at 256x256.
pub const PAPER_TAU: f64 = 6.0;

/// `K` Gaussian heatmaps, `(K, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub channels: Array3<f64>,
    pub tau: f64,
}

/// `exp(-|p - y|^2 / (2 tau^2))`.
pub fn heatmap_value(p: [f64; 2], keypoint: [f64; 2], tau: f64) -> f64 {
    let dx = p[0] - keypoint[0];
    let dy = p[1] - keypoint[1];
    (-(dx * dx + dy * dy) / (2.0 * tau * tau)).exp()
}

pub fn render_heatmaps(pose: &Pose, tau: f64) -> Result<HeatmapStack> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(param(format!("heatmap bandwidth must be positive, got {tau}")));
    }
    pose.validate()?;
    let (w, h) = pose.canvas;
    let mut channels = Array3::<f64>::zeros((pose.len(), h, w));
    for (k, (kp, &vis)) in pose.keypoints.iter().zip(&pose.visibility).enumerate() {
        if !vis {
            continue;
        }
        for row in 0..h {
            for col in 0..w {
                channels[[k, row, col]] = heatmap_value([col as f64, row as f64], *kp, tau);
            }
        }
    }
    Ok(HeatmapStack { channels, tau })
}

impl HeatmapStack {
    pub fn num_channels(&self) -> usize {
        self.channels.dim().0
    }

    /// `(row, col)` of the maximum of channel `k`.
    pub fn argmax(&self, k: usize) -> (usize, usize) {
        let ch = self.channels.index_axis(ndarray::Axis(0), k);
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for ((r, c), &v) in ch.indexed_iter() {
            if v > best_v {
                best_v = v;
                best = (r, c);
            }
        }
        best
    }
}
