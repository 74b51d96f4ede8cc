use tch::{nn, nn::Module, Tensor};

use super::attribute::ATTRIBUTE_DIM;
use crate::error::Result;
use crate::nn::MhaFuse;

/// `z_a = MHA(z, a)`: both projected to `d` and fused as a two-token
/// sequence; the class-token output is the style code.
#[derive(Debug)]
pub struct StyleFusion {
    z_proj: nn::Linear,
    a_proj: nn::Linear,
    pub mha: MhaFuse,
}

impl StyleFusion {
    pub fn new(p: nn::Path, latent: i64, d: i64, heads: i64, layers: usize) -> Result<Self> {
        Ok(StyleFusion {
            z_proj: nn::linear(&p / "z_proj", latent, d, Default::default()),
            a_proj: nn::linear(&p / "a_proj", ATTRIBUTE_DIM as i64, d, Default::default()),
            mha: MhaFuse::new(&p / "mha", d, heads, layers)?,
        })
    }

    /// Without `a` the style is fused from `z` alone.
    pub fn forward(&self, z: &Tensor, a: Option<&Tensor>) -> Result<Tensor> {
        let zt = self.z_proj.forward(z).unsqueeze(1);
        match a {
            Some(a) => {
                let at = self.a_proj.forward(a).unsqueeze(1);
                self.mha.forward(&[&zt, &at])
            }
            None => self.mha.forward(&[&zt]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::{Device, Kind};

    #[test]
    fn style_depends_on_both_inputs() {
        let vs = nn::VarStore::new(Device::Cpu);
        let s = StyleFusion::new(vs.root(), 4, 8, 2, 2).unwrap();
        crate::nn::deterministic_init(&vs, 2);
        tch::manual_seed(1);
        let z1 = Tensor::randn([1, 4], (Kind::Float, Device::Cpu));
        let z2 = Tensor::randn([1, 4], (Kind::Float, Device::Cpu));
        let a1 = Tensor::randn([1, 512], (Kind::Float, Device::Cpu));
        let a2 = Tensor::randn([1, 512], (Kind::Float, Device::Cpu));
        let base = s.forward(&z1, Some(&a1)).unwrap();
        assert!((&base - s.forward(&z2, Some(&a1)).unwrap()).abs().max().double_value(&[]) > 0.0);
        assert!((&base - s.forward(&z1, Some(&a2)).unwrap()).abs().max().double_value(&[]) > 0.0);
    }

    #[test]
    fn zeroed_fusion_returns_the_class_token() {
        let vs = nn::VarStore::new(Device::Cpu);
        let s = StyleFusion::new(vs.root(), 4, 8, 2, 2).unwrap();
        crate::nn::deterministic_init(&vs, 3);
        tch::no_grad(|| {
            for (name, mut v) in vs.variables() {
                if name.starts_with("mha.stack") {
                    let _ = v.zero_();
                }
            }
        });
        let z = Tensor::randn([3, 4], (Kind::Float, Device::Cpu));
        let a = Tensor::randn([3, 512], (Kind::Float, Device::Cpu));
        let out = s.forward(&z, Some(&a)).unwrap();
        let cls = s.mha.cls.view([1, 8]).expand([3, 8], false);
        assert!(out.allclose(&cls, 0.0, 0.0, false));
    }
}
