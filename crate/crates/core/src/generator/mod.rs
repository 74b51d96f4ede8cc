//! PENet: attribute embedding, style fusion, the shared pose encoder with
//! per-part decoders, mask composition and the attribute upsampler.

mod attribute;
mod compose;
mod style;
mod upsample;

use tch::{nn, Tensor};

pub use attribute::{all_labels, embed_batch, encode_attribute, AttributeEncoder, AttributeMode, OrthogonalStub, ATTRIBUTE_DIM};
pub use compose::{compose, GeneratorOutput, PartMasks};
pub use style::StyleFusion;
pub use upsample::AttributeUpsampler;

use crate::error::{param, Result};
use crate::nn::{Decoder, Encoder, PsiKind, SkipMode, UNetConfig};
use crate::pevae::{PosteriorConfig, PosteriorEncoder, PosteriorParams};

/// Which part decoders exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartDecoders {
    /// One decoder paints every part.
    Single,
    /// Head decoder plus a torso decoder that also paints the hands.
    HeadTorso,
    /// Separate head, hand and torso decoders.
    Full,
}

impl PartDecoders {
    fn count(self) -> usize {
        match self {
            PartDecoders::Single => 1,
            PartDecoders::HeadTorso => 2,
            PartDecoders::Full => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub unet: UNetConfig,
    pub skip: SkipMode,
    pub psi: PsiKind,
    pub parts: PartDecoders,
    pub d: i64,
    pub heads: i64,
    pub style_layers: usize,
    pub latent: i64,
    pub attributes: AttributeMode,
    pub posterior: PosteriorConfig,
}

/// Generator and posterior, built under one variable-store path so both are
/// updated by the generator step.
#[derive(Debug)]
pub struct Penet {
    pub config: GeneratorConfig,
    pub encoder: Encoder,
    decoders: Vec<Decoder>,
    pub style: StyleFusion,
    pub upsampler: Option<AttributeUpsampler>,
    pub posterior: PosteriorEncoder,
}

impl Penet {
    pub fn new(p: nn::Path, config: &GeneratorConfig) -> Result<Self> {
        let c = config;
        if c.posterior.latent != c.latent || c.posterior.image_size != c.unet.size {
            return Err(param("posterior and generator disagree on latent size or image size"));
        }
        let encoder = Encoder::new(&p / "encoder", &c.unet)?;
        let names = ["decoder_head", "decoder_torso", "decoder_hand"];
        let decoders = (0..c.parts.count())
            .map(|i| Decoder::new(&p / names[i], &c.unet, c.skip, c.psi, c.d, 3))
            .collect::<Result<_>>()?;
        let style = StyleFusion::new(&p / "style", c.latent, c.d, c.heads, c.style_layers)?;
        let upsampler = if c.posterior.attribute_map {
            if c.attributes == AttributeMode::None {
                return Err(param("the attribute map needs attribute conditioning"));
            }
            Some(AttributeUpsampler::new(&p / "upsample", c.unet.size)?)
        } else {
            None
        };
        let posterior = PosteriorEncoder::new(&p / "posterior", &c.posterior)?;
        Ok(Penet {
            config: c.clone(),
            encoder,
            decoders,
            style,
            upsampler,
            posterior,
        })
    }

    /// Pose-encoder features of `y`, top level first.
    pub fn encode_pose(&self, y: &Tensor) -> Result<Vec<Tensor>> {
        self.encoder.forward(y)
    }

    pub fn upsample_attribute(&self, a: &Tensor) -> Option<Tensor> {
        self.upsampler.as_ref().map(|u| u.forward(a))
    }

    pub fn encode_posterior(&self, x: &Tensor, y: &Tensor, pose_feats: &[Tensor], a: Option<&Tensor>) -> Result<PosteriorParams> {
        let a_map = match a {
            Some(a) => self.upsample_attribute(a),
            None => None,
        };
        self.posterior.encode(x, y, pose_feats.last(), a_map.as_ref())
    }

    pub fn fuse_style(&self, z: &Tensor, a: Option<&Tensor>) -> Result<Tensor> {
        self.style.forward(z, a)
    }

    pub fn decode(&self, pose_feats: &[Tensor], z_a: &Tensor) -> Result<GeneratorOutput> {
        let outs = self.decoders.iter().map(|d| d.forward(pose_feats, z_a)).collect::<Result<Vec<_>>>()?;
        Ok(match self.config.parts {
            PartDecoders::Single => GeneratorOutput {
                head: outs[0].shallow_clone(),
                hand: outs[0].shallow_clone(),
                torso: outs[0].shallow_clone(),
            },
            PartDecoders::HeadTorso => GeneratorOutput {
                head: outs[0].shallow_clone(),
                hand: outs[1].shallow_clone(),
                torso: outs[1].shallow_clone(),
            },
            PartDecoders::Full => GeneratorOutput {
                head: outs[0].shallow_clone(),
                torso: outs[1].shallow_clone(),
                hand: outs[2].shallow_clone(),
            },
        })
    }

    /// Part images for conditioning image `y` and style `z_a`.
    pub fn generate(&self, y: &Tensor, z_a: &Tensor) -> Result<GeneratorOutput> {
        let feats = self.encode_pose(y)?;
        self.decode(&feats, z_a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pevae::{FuseKind, FusionScheme};
    use tch::{Device, Kind};

    fn config(parts: PartDecoders, scheme: FusionScheme) -> GeneratorConfig {
        let unet = UNetConfig {
            in_channels: 3,
            channels: vec![4, 6, 8],
            size: 16,
        };
        GeneratorConfig {
            unet: unet.clone(),
            skip: SkipMode::Full,
            psi: PsiKind::Modulate,
            parts,
            d: 8,
            heads: 2,
            style_layers: 2,
            latent: 4,
            attributes: AttributeMode::All,
            posterior: PosteriorConfig {
                scheme,
                pose_in_posterior: true,
                fuse: FuseKind::Mha,
                attribute_map: false,
                image_size: 16,
                pose_channels: 3,
                patch: 4,
                d: 8,
                heads: 2,
                fuse_layers: 2,
                latent: 4,
                pose_unet: unet,
            },
        }
    }

    #[test]
    fn parts_have_the_input_shape_and_are_deterministic() {
        let vs = nn::VarStore::new(Device::Cpu);
        let g = Penet::new(vs.root(), &config(PartDecoders::Full, FusionScheme::Separate)).unwrap();
        crate::nn::deterministic_init(&vs, 1);
        let y = Tensor::rand([2, 3, 16, 16], (Kind::Float, Device::Cpu));
        let z_a = Tensor::randn([2, 8], (Kind::Float, Device::Cpu));
        let out = g.generate(&y, &z_a).unwrap();
        for t in [&out.head, &out.hand, &out.torso] {
            assert_eq!(t.size(), [2, 3, 16, 16]);
        }
        let again = g.generate(&y, &z_a).unwrap();
        assert!(out.head.equal(&again.head) && out.torso.equal(&again.torso));
        assert!(g.generate(&Tensor::rand([2, 3, 8, 8], (Kind::Float, Device::Cpu)), &z_a).is_err());
    }

    #[test]
    fn shared_scheme_ties_the_pose_encoder() {
        for (scheme, tied) in [(FusionScheme::Shared, true), (FusionScheme::Separate, false)] {
            let vs = nn::VarStore::new(Device::Cpu);
            let g = Penet::new(vs.root(), &config(PartDecoders::Single, scheme)).unwrap();
            crate::nn::deterministic_init(&vs, 2);
            tch::manual_seed(3);
            let x = Tensor::rand([1, 3, 16, 16], (Kind::Float, Device::Cpu));
            let y = Tensor::rand([1, 3, 16, 16], (Kind::Float, Device::Cpu));
            let mu = |g: &Penet| {
                let feats = g.encode_pose(&y).unwrap();
                g.encode_posterior(&x, &y, &feats, None).unwrap().mu
            };
            let before = mu(&g);
            tch::no_grad(|| {
                for (name, mut v) in vs.variables() {
                    if name.starts_with("encoder.") {
                        let _ = v.g_add_scalar_(0.05);
                    }
                }
            });
            let changed = (before - mu(&g)).abs().max().double_value(&[]) > 0.0;
            assert_eq!(changed, tied, "{scheme:?}");
        }
    }

    #[test]
    fn head_loss_reaches_the_shared_encoder() {
        let vs = nn::VarStore::new(Device::Cpu);
        let g = Penet::new(vs.root(), &config(PartDecoders::Full, FusionScheme::Separate)).unwrap();
        crate::nn::deterministic_init(&vs, 4);
        let y = Tensor::rand([1, 3, 16, 16], (Kind::Float, Device::Cpu));
        let z_a = Tensor::randn([1, 8], (Kind::Float, Device::Cpu));
        let out = g.generate(&y, &z_a).unwrap();
        out.head.mean(None).backward();
        let vars = vs.variables();
        let enc_grad: f64 = vars
            .iter()
            .filter(|(n, _)| n.starts_with("encoder."))
            .map(|(_, v)| v.grad().abs().sum(None).double_value(&[]))
            .sum();
        assert!(enc_grad > 0.0);
        let hand_grad = vars["decoder_hand.out.weight"].grad();
        assert!(!hand_grad.defined() || hand_grad.abs().sum(None).double_value(&[]) == 0.0);
    }
}
