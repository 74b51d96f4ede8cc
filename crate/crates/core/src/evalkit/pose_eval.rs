use serde::{Deserialize, Serialize};
use tch::Tensor;

use super::estimator::{distance, PoseEstimator};
use super::metrics::Summary;
use crate::error::{param, Result};
use crate::imageops::batch_to_tensor;
use crate::synthdata::FrameRecord;

pub const DEFAULT_HIT_THRESHOLD: f64 = 0.3;
pub const SAMPLES_PER_POSE: usize = 5;

/// Report regions and their joints: head, right hand, left hand, clothes.
pub const POSE_REGIONS: [(&str, &[usize]); 4] = [
    ("head", &[0, 1, 2, 3, 4]),
    ("r_hand", &[14, 16]),
    ("l_hand", &[11, 15]),
    ("clothes", &[5, 6, 7, 8, 9, 10, 12, 13]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPose {
    pub region: String,
    /// Pixel error of hits against the ground-truth keypoints.
    pub l2: Option<Summary>,
    /// Percentage of joint instances that are hits.
    pub hit_rate: f64,
    pub hits: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEvalReport {
    pub regions: Vec<RegionPose>,
    pub samples_per_pose: usize,
    pub hit_threshold: f64,
}

impl PoseEvalReport {
    pub fn region(&self, name: &str) -> Option<&RegionPose> {
        self.regions.iter().find(|r| r.region == name)
    }
}

/// Runs `generate(frames, sample)` for every sample index and batch of
/// frames, estimates poses on both the synthesis and the ground-truth
/// image, and scores each visible joint. A joint is a hit when both
/// confidences reach `hit_threshold`.
pub fn pose_eval<F>(frames: &[FrameRecord], mut generate: F, estimator: &PoseEstimator, n_samples: usize, hit_threshold: f64) -> Result<PoseEvalReport>
where
    F: FnMut(&[&FrameRecord], usize) -> Result<Tensor>,
{
    if n_samples == 0 {
        return Err(param("pose_eval needs at least one sample per pose"));
    }
    let mut l2: Vec<Vec<f64>> = vec![Vec::new(); POSE_REGIONS.len()];
    let mut hits = vec![0usize; POSE_REGIONS.len()];
    let mut totals = vec![0usize; POSE_REGIONS.len()];
    for chunk in frames.chunks(16) {
        let refs: Vec<&FrameRecord> = chunk.iter().collect();
        let gt = estimator.infer(&batch_to_tensor(&chunk.iter().map(|f| &f.image).collect::<Vec<_>>())?)?;
        for s in 0..n_samples {
            let images = generate(&refs, s)?;
            if images.size().first() != Some(&(chunk.len() as i64)) {
                return Err(param("generator returned the wrong number of images"));
            }
            let est = estimator.infer(&images)?;
            for ((f, e), g) in chunk.iter().zip(&est).zip(&gt) {
                for (ri, (_, joints)) in POSE_REGIONS.iter().enumerate() {
                    for &j in joints.iter() {
                        if !f.pose.visibility[j] {
                            continue;
                        }
                        totals[ri] += 1;
                        if e.confidence[j] >= hit_threshold && g.confidence[j] >= hit_threshold {
                            hits[ri] += 1;
                            l2[ri].push(distance(e.keypoints[j], f.pose.keypoints[j]));
                        }
                    }
                }
            }
        }
    }
    let regions = POSE_REGIONS
        .iter()
        .enumerate()
        .map(|(i, (name, _))| RegionPose {
            region: name.to_string(),
            l2: Summary::of(&l2[i]),
            hit_rate: if totals[i] == 0 { 0.0 } else { 100.0 * hits[i] as f64 / totals[i] as f64 },
            hits: hits[i],
            total: totals[i],
        })
        .collect();
    Ok(PoseEvalReport {
        regions,
        samples_per_pose: n_samples,
        hit_threshold,
    })
}
