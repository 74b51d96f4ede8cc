use tch::{nn, nn::Module, Tensor};

use super::lrelu;
use crate::error::{param, Result};

/// Channel concatenation followed by a 3×3, stride-1, pad-1 convolution and
/// LeakyReLU(0.2).
#[derive(Debug)]
pub struct ConvFuse {
    conv: nn::Conv2D,
    in_a: i64,
    in_b: i64,
}

impl ConvFuse {
    pub fn new(p: nn::Path, in_a: i64, in_b: i64, out: i64) -> Self {
        let cfg = nn::ConvConfig {
            padding: 1,
            ..Default::default()
        };
        ConvFuse {
            conv: nn::conv2d(&p / "conv", in_a + in_b, out, 3, cfg),
            in_a,
            in_b,
        }
    }

    pub fn forward(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.size(), b.size());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] || sa[1] != self.in_a || sb[1] != self.in_b {
            return Err(param(format!("conv_fuse inputs misaligned: {sa:?} vs {sb:?}")));
        }
        Ok(lrelu(&self.conv.forward(&Tensor::cat(&[a, b], 1))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::{Device, Kind};

    #[test]
    fn preserves_spatial_size_and_slopes_negatives() {
        let vs = nn::VarStore::new(Device::Cpu);
        let f = ConvFuse::new(vs.root(), 2, 3, 1);
        let a = Tensor::ones([1, 2, 5, 7], (Kind::Float, Device::Cpu));
        let b = Tensor::ones([1, 3, 5, 7], (Kind::Float, Device::Cpu));
        assert_eq!(f.forward(&a, &b).unwrap().size(), [1, 1, 5, 7]);
        assert!(f.forward(&a, &Tensor::ones([1, 3, 4, 7], (Kind::Float, Device::Cpu))).is_err());

        tch::no_grad(|| {
            for (name, mut v) in vs.variables() {
                let _ = if name.ends_with("weight") { v.zero_() } else { v.fill_(-2.5) };
            }
        });
        let out = f.forward(&a, &b).unwrap();
        assert!(out.allclose(&(Tensor::ones_like(&out) * -0.5), 1e-7, 1e-7, false));
        tch::no_grad(|| {
            for (_, mut v) in vs.variables() {
                let _ = v.zero_();
            }
        });
        assert_eq!(f.forward(&a, &b).unwrap().abs().max().double_value(&[]), 0.0);
    }
}
