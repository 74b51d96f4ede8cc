//! Perceptual and edge losses, loss weights and the total generator loss.

mod edge;
mod perceptual;

use serde::{Deserialize, Serialize};
use tch::Tensor;

pub use edge::{edge_loss, edge_maps, edge_terms, filter, grayscale, EdgeMaps, LAPLACIAN, SOBEL_X, SOBEL_Y};
pub use perceptual::{perceptual_loss, FeatureExtractor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_edge: f64,
    pub lambda_attrib: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_edge: 0.01,
            lambda_attrib: 0.001,
            beta: 0.001,
        }
    }
}

/// Unweighted components of one generator step. `feat` already includes the
/// generator's adversarial term when that is enabled.
#[derive(Debug)]
pub struct LossComponents {
    pub perc: Tensor,
    pub feat: Tensor,
    pub edge: Tensor,
    pub attrib: Tensor,
    pub vae: Tensor,
}

/// One log record; every field is the unweighted component except `total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub perc: f64,
    pub feat: f64,
    pub edge: f64,
    pub attrib: f64,
    pub vae: f64,
    pub total: f64,
    pub d_loss: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.perc, self.feat, self.edge, self.attrib, self.vae, self.total, self.d_loss].iter().all(|v| v.is_finite())
    }
}

/// `L = L_perc + L_feat + λ_edge·L_edge + λ_attrib·L_attrib + β·L_VAE`.
pub fn total_generator_loss(c: &LossComponents, w: &LossWeights) -> (Tensor, LossReport) {
    let total = &c.perc + &c.feat + &c.edge * w.lambda_edge + &c.attrib * w.lambda_attrib + &c.vae * w.beta;
    let v = |t: &Tensor| t.double_value(&[]);
    let report = LossReport {
        step: 0,
        perc: v(&c.perc),
        feat: v(&c.feat),
        edge: v(&c.edge),
        attrib: v(&c.attrib),
        vae: v(&c.vae),
        total: v(&total),
        d_loss: 0.0,
    };
    (total, report)
}
