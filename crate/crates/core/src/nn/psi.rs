use tch::{nn, nn::Module, Tensor};

use super::{instance_norm, lrelu};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiKind {
    /// Instance-normalize, then `(1 + s(z_a))·x + b(z_a)` per channel.
    Modulate,
    /// Concatenate a broadcast projection of `z_a` and convolve, no modulation.
    Conv,
}

/// Style injection applied to a decoder feature map; shape preserving.
#[derive(Debug)]
pub enum Psi {
    Modulate { scale: nn::Linear, shift: nn::Linear },
    Conv { proj: nn::Linear, conv: nn::Conv2D, style_channels: i64 },
}

impl Psi {
    pub fn new(p: nn::Path, kind: PsiKind, channels: i64, style_dim: i64) -> Self {
        match kind {
            PsiKind::Modulate => Psi::Modulate {
                scale: nn::linear(&p / "scale", style_dim, channels, Default::default()),
                shift: nn::linear(&p / "shift", style_dim, channels, Default::default()),
            },
            PsiKind::Conv => {
                let style_channels = channels.min(32);
                let cfg = nn::ConvConfig {
                    padding: 1,
                    ..Default::default()
                };
                Psi::Conv {
                    proj: nn::linear(&p / "proj", style_dim, style_channels, Default::default()),
                    conv: nn::conv2d(&p / "conv", channels + style_channels, channels, 3, cfg),
                    style_channels,
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor, z_a: &Tensor) -> Tensor {
        match self {
            Psi::Modulate { scale, shift } => {
                let s = scale.forward(z_a).unsqueeze(-1).unsqueeze(-1);
                let b = shift.forward(z_a).unsqueeze(-1).unsqueeze(-1);
                instance_norm(x) * (s + 1.0) + b
            }
            Psi::Conv { proj, conv, style_channels } => {
                let sz = x.size();
                let style = proj
                    .forward(z_a)
                    .view([sz[0], *style_channels, 1, 1])
                    .expand([sz[0], *style_channels, sz[2], sz[3]], false);
                lrelu(&conv.forward(&Tensor::cat(&[x.shallow_clone(), style], 1)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::{Device, Kind};

    fn set(vs: &nn::VarStore, f: impl Fn(&str) -> Option<f64>) {
        tch::no_grad(|| {
            for (name, mut v) in vs.variables() {
                if let Some(value) = f(&name) {
                    let _ = v.fill_(value);
                }
            }
        });
    }

    #[test]
    fn zero_affine_maps_give_plain_normalization() {
        let mut vs = nn::VarStore::new(Device::Cpu);
        let psi = Psi::new(vs.root(), PsiKind::Modulate, 4, 6);
        vs.double();
        set(&vs, |_| Some(0.0));
        tch::manual_seed(1);
        let x = Tensor::randn([2, 4, 5, 5], (Kind::Double, Device::Cpu));
        let z = Tensor::randn([2, 6], (Kind::Double, Device::Cpu));
        assert!(psi.forward(&x, &z).allclose(&instance_norm(&x), 0.0, 0.0, false));
    }

    #[test]
    fn unit_scale_doubles_the_normalized_feature() {
        let mut vs = nn::VarStore::new(Device::Cpu);
        let psi = Psi::new(vs.root(), PsiKind::Modulate, 3, 2);
        vs.double();
        set(&vs, |name| Some(if name == "scale.bias" { 1.0 } else { 0.0 }));
        tch::manual_seed(2);
        let x = Tensor::randn([1, 3, 4, 4], (Kind::Double, Device::Cpu));
        let z = Tensor::randn([1, 2], (Kind::Double, Device::Cpu));
        assert!(psi.forward(&x, &z).allclose(&(instance_norm(&x) * 2.0), 1e-12, 1e-12, false));
    }

    #[test]
    fn distinct_styles_give_distinct_outputs() {
        for kind in [PsiKind::Modulate, PsiKind::Conv] {
            let vs = nn::VarStore::new(Device::Cpu);
            let psi = Psi::new(vs.root(), kind, 4, 6);
            crate::nn::deterministic_init(&vs, 3);
            tch::manual_seed(3);
            let x = Tensor::randn([1, 4, 6, 6], (Kind::Float, Device::Cpu));
            let z1 = Tensor::randn([1, 6], (Kind::Float, Device::Cpu));
            let z2 = Tensor::randn([1, 6], (Kind::Float, Device::Cpu));
            let (a, b) = (psi.forward(&x, &z1), psi.forward(&x, &z2));
            assert_eq!(a.size(), x.size());
            assert!((a - b).abs().max().double_value(&[]) > 1e-4);
        }
    }
}
