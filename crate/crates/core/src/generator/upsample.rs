use tch::{nn, nn::Module, Tensor};

use super::attribute::ATTRIBUTE_DIM;
use crate::error::{param, Result};
use crate::nn::lrelu;

const SEED_SIZE: i64 = 8;
const SEED_CHANNELS: i64 = 32;
const HIDDEN: i64 = 256;

/// `a↑`: four linear layers to an 8×8 seed map, then `log2(size/8)`
/// stride-2 transposed convolutions ending in a 3-channel `tanh` map of the
/// conditioning image's shape.
#[derive(Debug)]
pub struct AttributeUpsampler {
    mlp: Vec<nn::Linear>,
    deconvs: Vec<nn::ConvTranspose2D>,
    pub size: i64,
}

impl AttributeUpsampler {
    pub fn new(p: nn::Path, size: i64) -> Result<Self> {
        if size < SEED_SIZE || size % SEED_SIZE != 0 || !((size / SEED_SIZE) as u64).is_power_of_two() {
            return Err(param(format!("attribute map size {size} must be 8·2^k")));
        }
        let dims = [ATTRIBUTE_DIM as i64, HIDDEN, HIDDEN, HIDDEN, SEED_CHANNELS * SEED_SIZE * SEED_SIZE];
        let mlp = (0..4).map(|i| nn::linear(&p / format!("mlp{i}"), dims[i], dims[i + 1], Default::default())).collect();
        let n = (size / SEED_SIZE).trailing_zeros() as i64;
        let cfg = nn::ConvTransposeConfig {
            stride: 2,
            padding: 1,
            ..Default::default()
        };
        let mut deconvs = Vec::new();
        let mut ch = SEED_CHANNELS;
        for i in 0..n {
            let out = if i == n - 1 { 3 } else { (ch / 2).max(8) };
            deconvs.push(nn::conv_transpose2d(&p / format!("deconv{i}"), ch, out, 4, cfg));
            ch = out;
        }
        Ok(AttributeUpsampler { mlp, deconvs, size })
    }

    pub fn forward(&self, a: &Tensor) -> Tensor {
        let mut h = a.shallow_clone();
        for (i, l) in self.mlp.iter().enumerate() {
            h = l.forward(&h);
            if i + 1 < self.mlp.len() {
                h = lrelu(&h);
            }
        }
        let b = h.size()[0];
        h = h.view([b, SEED_CHANNELS, SEED_SIZE, SEED_SIZE]);
        let n = self.deconvs.len();
        for (i, d) in self.deconvs.iter().enumerate() {
            h = d.forward(&h);
            if i + 1 < n {
                h = lrelu(&h);
            }
        }
        if n == 0 {
            h = h.narrow(1, 0, 3);
        }
        h.tanh()
    }
}
