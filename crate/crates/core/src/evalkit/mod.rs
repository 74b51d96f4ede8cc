//! Masked image metrics, FID, the toy pose estimator, pose evaluation and
//! the ablation harness.

mod ablation;
mod estimator;
mod fid;
mod metrics;
mod pose_eval;
mod probe;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

pub use ablation::{ablation_config, ablation_csv, comparison_grid, run_ablation, AblationResult, ABLATION_ROWS, EXTERNAL_BASELINES};
pub use estimator::{Estimate, EstimatorConfig, PoseEstimator};
pub use fid::{fid, fid_from_moments, moments, sqrtm_denman_beavers, sqrtm_symmetric, COVARIANCE_RIDGE};
pub use metrics::{bounding_box, masked_crop, pixel_metrics, psnr, ssim, PixelMetrics, Summary, PSNR_CAP};
pub use probe::linear_probe_r2;
pub use pose_eval::{pose_eval, PoseEvalReport, RegionPose, DEFAULT_HIT_THRESHOLD, POSE_REGIONS, SAMPLES_PER_POSE};

use crate::error::{param, Result};
use crate::imageops::{batch_to_tensor, tensor_to_rgb, Mask, Rgb};
use crate::losses::FeatureExtractor;
use crate::pevae::sample_prior;
use crate::synthdata::FrameRecord;
use crate::trainer::{Batch, TrainState};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionScores {
    pub ssim: Option<Summary>,
    pub psnr: Option<Summary>,
    /// Spread over the sample draws.
    pub fid: Option<Summary>,
}

/// Metrics on the whole composite and on the head, hand and torso masks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub composite: RegionScores,
    pub head: RegionScores,
    pub hand: RegionScores,
    pub torso: RegionScores,
}

fn zero_outside(img: &Rgb, mask: &Mask) -> Rgb {
    let mut out = img.clone();
    for ((r, c, _), v) in out.indexed_iter_mut() {
        if !mask[[r, c]] {
            *v = 0.0;
        }
    }
    out
}

fn embed(images: &[Rgb], extractor: &FeatureExtractor) -> Result<DMatrix<f64>> {
    let t = batch_to_tensor(&images.iter().collect::<Vec<_>>())?.to_kind(extractor_kind(extractor));
    let e = tch::no_grad(|| extractor.embed(&t)).to_kind(Kind::Double).contiguous();
    let (n, d) = (e.size()[0] as usize, e.size()[1] as usize);
    Ok(DMatrix::from_row_slice(n, d, &Vec::<f64>::try_from(&e.view([-1]))?))
}

fn extractor_kind(extractor: &FeatureExtractor) -> Kind {
    crate::nn::store_kind(&extractor.vs)
}

/// `draws[s][i]` is the synthesis for `frames[i]` in sample draw `s`.
/// SSIM/PSNR are summarized over every (frame, draw) pair; FID is computed
/// per draw against the ground-truth set with off-mask pixels zeroed.
pub fn region_metrics(frames: &[FrameRecord], draws: &[Vec<Rgb>], extractor: &FeatureExtractor) -> Result<RegionMetrics> {
    if frames.is_empty() || draws.is_empty() || draws.iter().any(|d| d.len() != frames.len()) {
        return Err(param("region metrics need one synthesis per frame in every draw"));
    }
    let masks: Vec<[Option<&Mask>; 4]> = frames.iter().map(|f| [None, Some(&f.mask_head), Some(&f.mask_hand), Some(&f.mask_torso)]).collect();
    let mut out = [RegionScores::default(); 4];
    for (ri, scores) in out.iter_mut().enumerate() {
        let (mut ss, mut ps, mut fids) = (Vec::new(), Vec::new(), Vec::new());
        for draw in draws {
            for ((f, fake), m) in frames.iter().zip(draw).zip(&masks) {
                if let Some(pm) = pixel_metrics(&f.image, fake, m[ri])? {
                    ss.push(pm.ssim);
                    ps.push(pm.psnr);
                }
            }
            if frames.len() >= 2 {
                let region = |img: &Rgb, m: Option<&Mask>| m.map_or_else(|| img.clone(), |m| zero_outside(img, m));
                let real: Vec<Rgb> = frames.iter().zip(&masks).map(|(f, m)| region(&f.image, m[ri])).collect();
                let fake: Vec<Rgb> = draw.iter().zip(&masks).map(|(x, m)| region(x, m[ri])).collect();
                fids.push(fid(&embed(&real, extractor)?, &embed(&fake, extractor)?)?);
            }
        }
        *scores = RegionScores {
            ssim: Summary::of(&ss),
            psnr: Summary::of(&ps),
            fid: Summary::of(&fids),
        };
    }
    Ok(RegionMetrics {
        composite: out[0],
        head: out[1],
        hand: out[2],
        torso: out[3],
    })
}

/// Composites for `frames` with latents drawn from the prior using `rng`.
pub fn sample_images<R: Rng + ?Sized>(state: &TrainState, frames: &[&FrameRecord], rng: &mut R) -> Result<Tensor> {
    let batch = Batch::from_frames(frames, &state.config)?;
    let z = sample_prior(rng, frames.len() as i64, state.config.latent, state.kind())?;
    Ok(state.synthesize(&batch, &z)?.1)
}

/// Splits an `(N, 3, H, W)` tensor into images.
pub fn to_images(t: &Tensor) -> Result<Vec<Rgb>> {
    (0..t.size()[0]).map(|i| tensor_to_rgb(t, i)).collect()
}

/// `n_samples` prior draws over every frame, batched by 16.
pub fn sample_draws<R: Rng + ?Sized>(state: &TrainState, frames: &[FrameRecord], n_samples: usize, rng: &mut R) -> Result<Vec<Vec<Rgb>>> {
    (0..n_samples)
        .map(|_| {
            let mut draw = Vec::with_capacity(frames.len());
            for chunk in frames.chunks(16) {
                let refs: Vec<&FrameRecord> = chunk.iter().collect();
                draw.extend(to_images(&sample_images(state, &refs, rng)?)?);
            }
            Ok(draw)
        })
        .collect()
}
