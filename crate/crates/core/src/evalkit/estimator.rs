use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::nn::{self, Module};
use tch::{Device, Kind, Tensor};

use crate::error::{param, Error, Result};
use crate::imageops::batch_to_tensor;
use crate::nn::{deterministic_init, downsample, lrelu, upsample};
use crate::posekit::{render_heatmaps, NUM_KEYPOINTS};
use crate::synthdata::FrameRecord;
use crate::trainer::Adam;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Bandwidth of the target heatmaps in pixels.
    pub tau: f64,
    /// Extra weight on target mass in the per-pixel presence loss.
    pub peak_weight: f64,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            steps: 1200,
            batch: 8,
            lr: 2e-3,
            tau: 1.5,
            peak_weight: 10.0,
            seed: 0x0e57_0001,
        }
    }
}

/// Per-image keypoint estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub keypoints: Vec<[f64; 2]>,
    /// Peak heatmap value per joint, in `[0, 1]`.
    pub confidence: Vec<f64>,
}

fn conv3(p: nn::Path, i: i64, o: i64) -> nn::Conv2D {
    nn::conv2d(
        p,
        i,
        o,
        3,
        nn::ConvConfig {
            padding: 1,
            ..Default::default()
        },
    )
}

/// Small four-level UNet with one logit map per joint. A spatial softmax
/// over each map localizes the joint and the sigmoid of its peak is the
/// confidence.
pub struct PoseEstimator {
    vs: nn::VarStore,
    e0: [nn::Conv2D; 2],
    e1: [nn::Conv2D; 2],
    e2: [nn::Conv2D; 2],
    e3: [nn::Conv2D; 2],
    d2: nn::Conv2D,
    d1: nn::Conv2D,
    d0: nn::Conv2D,
    head: nn::Conv2D,
    trained: bool,
    /// Mean keypoint error on the training frames, in pixels.
    pub train_error: Option<f64>,
}

impl PoseEstimator {
    pub fn new(seed: u64) -> Self {
        let vs = nn::VarStore::new(Device::Cpu);
        let p = vs.root();
        let e0 = [conv3(&p / "e0a", 3, 16), conv3(&p / "e0b", 16, 16)];
        let e1 = [conv3(&p / "e1a", 16, 32), conv3(&p / "e1b", 32, 32)];
        let e2 = [conv3(&p / "e2a", 32, 32), conv3(&p / "e2b", 32, 32)];
        let e3 = [conv3(&p / "e3a", 32, 32), conv3(&p / "e3b", 32, 32)];
        let d2 = conv3(&p / "d2", 64, 32);
        let d1 = conv3(&p / "d1", 64, 32);
        let d0 = conv3(&p / "d0", 48, 16);
        let head = nn::conv2d(&p / "head", 16, NUM_KEYPOINTS as i64, 1, Default::default());
        deterministic_init(&vs, seed);
        PoseEstimator {
            vs,
            e0,
            e1,
            e2,
            e3,
            d2,
            d1,
            d0,
            head,
            trained: false,
            train_error: None,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// `(B, K, H, W)` heatmaps in `[0, 1]` for `(B, 3, H, W)` images; sides
    /// must be divisible by 8.
    pub fn heatmaps(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.logits(x)?.sigmoid())
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.size();
        if s.len() != 4 || s[1] != 3 || s[2] % 8 != 0 || s[3] % 8 != 0 {
            return Err(param(format!("estimator expects (B, 3, H, W) with sides divisible by 8, got {s:?}")));
        }
        let x = x.to_kind(Kind::Float);
        let two = |c: &[nn::Conv2D; 2], h: &Tensor| lrelu(&c[1].forward(&lrelu(&c[0].forward(h))));
        let f0 = two(&self.e0, &x);
        let f1 = two(&self.e1, &downsample(&f0));
        let f2 = two(&self.e2, &downsample(&f1));
        let f3 = two(&self.e3, &downsample(&f2));
        let u2 = lrelu(&self.d2.forward(&Tensor::cat(&[&upsample(&f3), &f2], 1)));
        let u1 = lrelu(&self.d1.forward(&Tensor::cat(&[&upsample(&u2), &f1], 1)));
        let u0 = lrelu(&self.d0.forward(&Tensor::cat(&[&upsample(&u1), &f0], 1)));
        Ok(self.head.forward(&u0))
    }

    /// Fits the network on `frames` plus blank negatives (one per batch,
    /// constant gray with a random level) and records the training error.
    pub fn train(&mut self, frames: &[FrameRecord], config: &EstimatorConfig) -> Result<f64> {
        if frames.is_empty() || config.batch < 2 {
            return Err(param("estimator training needs frames and a batch of at least two"));
        }
        let images = batch_to_tensor(&frames.iter().map(|f| &f.image).collect::<Vec<_>>())?;
        let targets = Tensor::stack(
            &frames
                .iter()
                .map(|f| {
                    let hm = render_heatmaps(&f.pose, config.tau)?;
                    let (k, h, w) = hm.channels.dim();
                    let data: Vec<f32> = hm.channels.iter().map(|&v| v as f32).collect();
                    Ok(Tensor::from_slice(&data).view([k as i64, h as i64, w as i64]))
                })
                .collect::<Result<Vec<_>>>()?,
            0,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut opt = Adam::new(config.lr, 0.9, 0.999);
        let (h, w) = (images.size()[2], images.size()[3]);
        for _ in 0..config.steps {
            let idx: Vec<i64> = (0..config.batch - 1).map(|_| rng.gen_range(0..frames.len() as i64)).collect();
            let idx = Tensor::from_slice(&idx);
            let level: f64 = rng.gen_range(0.0..1.0);
            let x = Tensor::cat(&[images.index_select(0, &idx), Tensor::full([1, 3, h, w], level, (Kind::Float, Device::Cpu))], 0);
            let t = Tensor::cat(
                &[targets.index_select(0, &idx), Tensor::zeros([1, NUM_KEYPOINTS as i64, h, w], (Kind::Float, Device::Cpu))],
                0,
            );
            let logits = self.logits(&x)?;
            let n = config.batch as i64;
            let k = NUM_KEYPOINTS as i64;
            // location: cross-entropy against the normalized target per map;
            // absent joints and the blank have no target mass
            let flat_t = t.view([n, k, h * w]);
            let mass = flat_t.sum_dim_intlist(-1, true, Kind::Float).clamp_min(1e-12);
            let ce = -((&flat_t / mass) * logits.view([n, k, h * w]).log_softmax(-1, Kind::Float))
                .sum(Kind::Float)
                / (n * k) as f64;
            // presence: weighted per-pixel BCE, sets the confidence scale
            let bce = logits.binary_cross_entropy_with_logits::<Tensor>(&t, Some(&t * config.peak_weight + 1.0), None, tch::Reduction::Mean);
            let loss = ce + bce;
            Adam::zero_grad(&self.vs);
            loss.backward();
            opt.step(&self.vs);
        }
        self.vs.freeze();
        self.trained = true;
        let mut errors = Vec::new();
        for chunk in frames.chunks(32) {
            let x = batch_to_tensor(&chunk.iter().map(|f| &f.image).collect::<Vec<_>>())?;
            for (est, f) in self.infer(&x)?.iter().zip(chunk) {
                for k in 0..NUM_KEYPOINTS {
                    if f.pose.visibility[k] {
                        errors.push(distance(est.keypoints[k], f.pose.keypoints[k]));
                    }
                }
            }
        }
        let err = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
        self.train_error = Some(err);
        Ok(err)
    }

    /// Argmax location (refined by a 3×3 weighted centroid) and peak value
    /// of every joint heatmap.
    pub fn infer(&self, images: &Tensor) -> Result<Vec<Estimate>> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        let hm = tch::no_grad(|| self.heatmaps(images))?;
        let s = hm.size();
        let (b, k, h, w) = (s[0] as usize, s[1] as usize, s[2] as usize, s[3] as usize);
        let data = Vec::<f32>::try_from(&hm.contiguous().view([-1]))?;
        let mut out = Vec::with_capacity(b);
        for i in 0..b {
            let mut keypoints = Vec::with_capacity(k);
            let mut confidence = Vec::with_capacity(k);
            for j in 0..k {
                let map = &data[(i * k + j) * h * w..(i * k + j + 1) * h * w];
                let (best, &peak) = map
                    .iter()
                    .enumerate()
                    .fold((0, &f32::NEG_INFINITY), |acc, (n, v)| if *v > *acc.1 { (n, v) } else { acc });
                let (r, c) = (best / w, best % w);
                let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
                for rr in r.saturating_sub(1)..(r + 2).min(h) {
                    for cc in c.saturating_sub(1)..(c + 2).min(w) {
                        let v = map[rr * w + cc] as f64;
                        sw += v;
                        sx += v * cc as f64;
                        sy += v * rr as f64;
                    }
                }
                keypoints.push(if sw > 0.0 { [sx / sw, sy / sw] } else { [c as f64, r as f64] });
                confidence.push(peak as f64);
            }
            out.push(Estimate { keypoints, confidence });
        }
        Ok(out)
    }
}

pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
