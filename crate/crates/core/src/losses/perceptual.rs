use tch::{nn, nn::Module, Kind, Tensor};

use crate::error::{param, Result};
use crate::nn::{deterministic_init, lrelu};

const EXTRACTOR_SEED: u64 = 0xfea7_0001;
const WIDTHS: [i64; 5] = [16, 32, 64, 64, 64];
/// Smoothing inside the square root of each tap distance.
const EPS: f64 = 1e-8;

/// Frozen five-tap convolutional feature network with fixed random weights.
#[derive(Debug)]
pub struct FeatureExtractor {
    pub vs: nn::VarStore,
    convs: Vec<nn::Conv2D>,
}

impl FeatureExtractor {
    pub fn new(kind: Kind) -> Self {
        let mut vs = nn::VarStore::new(tch::Device::Cpu);
        let p = vs.root();
        let mut convs = Vec::new();
        let mut ch = 3;
        for (i, &w) in WIDTHS.iter().enumerate() {
            let cfg = nn::ConvConfig {
                stride: if i == 0 { 1 } else { 2 },
                padding: 1,
                ..Default::default()
            };
            convs.push(nn::conv2d(&p / format!("tap{i}"), ch, w, 3, cfg));
            ch = w;
        }
        vs.set_kind(kind);
        deterministic_init(&vs, EXTRACTOR_SEED);
        // He-style gain so activations keep their scale through the taps
        tch::no_grad(|| {
            for (name, mut v) in vs.variables() {
                if name.ends_with("weight") {
                    let _ = v.g_mul_scalar_(6f64.sqrt());
                }
            }
        });
        vs.freeze();
        FeatureExtractor { vs, convs }
    }

    pub fn num_taps(&self) -> usize {
        self.convs.len()
    }

    /// Width of the deepest tap, the pooled embedding size.
    pub fn embedding_dim(&self) -> i64 {
        WIDTHS[WIDTHS.len() - 1]
    }

    /// Sum of all tap widths, the pooled classifier feature size.
    pub fn pooled_dim(&self) -> i64 {
        WIDTHS.iter().sum()
    }

    /// Activations at every tap for images in `[0, 1]`.
    pub fn taps(&self, x: &Tensor) -> Vec<Tensor> {
        let mut h = x * 2.0 - 1.0;
        let mut out = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            h = lrelu(&c.forward(&h));
            out.push(h.shallow_clone());
        }
        out
    }

    /// Global-average-pooled taps, concatenated: `(B, pooled_dim)`.
    pub fn pooled(&self, x: &Tensor) -> Tensor {
        let pooled: Vec<Tensor> = self.taps(x).iter().map(|t| t.mean_dim([2i64, 3].as_slice(), false, None)).collect();
        Tensor::cat(&pooled, 1)
    }

    /// Pooled deepest tap, `(B, embedding_dim)`; the default FID embedding.
    pub fn embed(&self, x: &Tensor) -> Tensor {
        self.taps(x).pop().expect("five taps").mean_dim([2i64, 3].as_slice(), false, None)
    }
}

/// `Σ_l ‖F^l(x) − F^l(x̂)‖₂`, each norm divided by `√numel` of the tap so
/// taps of different size weigh alike, averaged over the batch.
pub fn perceptual_loss(x: &Tensor, x_hat: &Tensor, extractor: &FeatureExtractor) -> Result<Tensor> {
    if x.size() != x_hat.size() {
        return Err(param(format!("perceptual loss shapes differ: {:?} vs {:?}", x.size(), x_hat.size())));
    }
    let (fx, fy) = (extractor.taps(&x.detach()), extractor.taps(x_hat));
    let mut total: Option<Tensor> = None;
    for (a, b) in fx.iter().zip(&fy) {
        let ms = (a - b).square().mean_dim([1i64, 2, 3].as_slice(), false, None);
        let term = ((ms + EPS).sqrt() - EPS.sqrt()).mean(None);
        total = Some(match total {
            Some(t) => t + term,
            None => term,
        });
    }
    Ok(total.expect("five taps"))
}
