//! Pose-encoding posterior `q(z | x, y[, a])` under the three fusion schemes,
//! reparameterization, prior sampling and the KL term.

use rand::Rng;
use rand_distr::StandardNormal;
use tch::{nn, nn::Module, Kind, Tensor};

use crate::error::{param, shape, Result};
use crate::nn::{lrelu, ConvFuse, Encoder, MhaFuse, PatchEmbed, UNetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionScheme {
    /// One encoder over `x ⊕ y`.
    Early,
    /// Pose tokens come from the generator's own pose encoder.
    Shared,
    /// Pose tokens come from a dedicated, untied copy of the pose encoder.
    Separate,
}

/// How image and pose tokens are combined into `f_xy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuseKind {
    Mha,
    /// Tokens reshaped to maps, `conv_fuse`, then global average pooling.
    Conv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorConfig {
    pub scheme: FusionScheme,
    /// When false, `q` sees the image only and the scheme is ignored.
    pub pose_in_posterior: bool,
    pub fuse: FuseKind,
    /// Concatenate the upsampled attribute map to `y` (early and separate only).
    pub attribute_map: bool,
    pub image_size: i64,
    pub pose_channels: i64,
    pub patch: i64,
    pub d: i64,
    pub heads: i64,
    pub fuse_layers: usize,
    pub latent: i64,
    /// Layout of the pose encoder; the separate scheme builds its own copy.
    pub pose_unet: UNetConfig,
}

impl PosteriorConfig {
    fn pose_input_channels(&self) -> i64 {
        self.pose_channels + if self.attribute_map { 3 } else { 0 }
    }

    fn uses_pose_tokens(&self) -> bool {
        self.pose_in_posterior && self.scheme != FusionScheme::Early
    }

    pub fn validate(&self) -> Result<()> {
        self.pose_unet.validate()?;
        if self.latent < 1 {
            return Err(param("latent dimension must be at least 1"));
        }
        let grid = self.image_size / self.patch;
        if self.uses_pose_tokens() && self.fuse == FuseKind::Conv && grid != self.pose_unet.bottleneck_size() {
            return Err(param(format!(
                "conv fusion needs the patch grid ({grid}) to match the pose bottleneck ({})",
                self.pose_unet.bottleneck_size()
            )));
        }
        if self.fuse == FuseKind::Conv && !self.uses_pose_tokens() {
            return Err(param("conv fusion needs separate or shared pose tokens"));
        }
        Ok(())
    }
}

/// `(μ, log σ²)`, each `(B, M)`.
#[derive(Debug)]
pub struct PosteriorParams {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl PosteriorParams {
    pub fn latent_dim(&self) -> i64 {
        self.mu.size()[1]
    }
}

#[derive(Debug)]
struct PoseTokens {
    encoder: Option<Encoder>,
    proj: nn::Linear,
    pos: Tensor,
}

#[derive(Debug)]
enum Fusion {
    Mha(MhaFuse),
    Conv(ConvFuse),
}

#[derive(Debug)]
struct Head {
    hidden: nn::Linear,
    out: nn::Linear,
}

impl Head {
    fn new(p: nn::Path, d: i64, m: i64) -> Self {
        Head {
            hidden: nn::linear(&p / "hidden", d, d, Default::default()),
            out: nn::linear(&p / "out", d, m, Default::default()),
        }
    }

    fn forward(&self, f: &Tensor) -> Tensor {
        self.out.forward(&lrelu(&self.hidden.forward(f)))
    }
}

#[derive(Debug)]
pub struct PosteriorEncoder {
    pub config: PosteriorConfig,
    image_embed: PatchEmbed,
    pose_tokens: Option<PoseTokens>,
    fusion: Fusion,
    mu_head: Head,
    log_var_head: Head,
}

impl PosteriorEncoder {
    pub fn new(p: nn::Path, config: &PosteriorConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let early = c.pose_in_posterior && c.scheme == FusionScheme::Early;
        let image_channels = 3 + if early { c.pose_input_channels() } else { 0 };
        let image_embed = PatchEmbed::new(&p / "image", image_channels, (c.image_size, c.image_size), c.patch, c.d, true)?;
        let pose_tokens = if c.uses_pose_tokens() {
            let q = &p / "pose";
            let encoder = match c.scheme {
                FusionScheme::Separate => {
                    let cfg = UNetConfig {
                        in_channels: c.pose_input_channels(),
                        ..c.pose_unet.clone()
                    };
                    Some(Encoder::new(&q / "encoder", &cfg)?)
                }
                _ => None,
            };
            let n = c.pose_unet.bottleneck_size().pow(2);
            Some(PoseTokens {
                encoder,
                proj: nn::linear(&q / "proj", c.pose_unet.bottleneck_channels(), c.d, Default::default()),
                pos: q.var("pos", &[1, n, c.d], nn::Init::Const(0.0)),
            })
        } else {
            None
        };
        let fusion = match c.fuse {
            FuseKind::Mha => Fusion::Mha(MhaFuse::new(&p / "fuse", c.d, c.heads, c.fuse_layers)?),
            FuseKind::Conv => Fusion::Conv(ConvFuse::new(&p / "fuse", c.d, c.d, c.d)),
        };
        Ok(PosteriorEncoder {
            config: c.clone(),
            image_embed,
            pose_tokens,
            fusion,
            mu_head: Head::new(&p / "mu", c.d, c.latent),
            log_var_head: Head::new(&p / "log_var", c.d, c.latent),
        })
    }

    fn image_tokens(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.image_embed.num_patches();
        Ok(self.image_embed.forward(x)?.narrow(1, 1, n))
    }

    /// `generator_bottleneck` is the generator encoder's deepest feature map
    /// of `y`; the shared scheme reads its pose tokens from it.
    pub fn encode(&self, x: &Tensor, y: &Tensor, generator_bottleneck: Option<&Tensor>, attribute_map: Option<&Tensor>) -> Result<PosteriorParams> {
        let c = &self.config;
        let (sx, sy) = (x.size(), y.size());
        if sx.len() != 4 || sy.len() != 4 || sx[0] != sy[0] || sx[2..] != sy[2..] {
            return Err(param(format!("posterior inputs disagree: x {sx:?}, y {sy:?}")));
        }
        let pose_input = || -> Result<Tensor> {
            match (c.attribute_map, attribute_map) {
                (true, Some(a)) => Ok(Tensor::cat(&[y, a], 1)),
                (true, None) => Err(param("posterior expects an attribute map")),
                (false, _) => Ok(y.shallow_clone()),
            }
        };
        let image_seq = if c.pose_in_posterior && c.scheme == FusionScheme::Early {
            self.image_tokens(&Tensor::cat(&[x.shallow_clone(), pose_input()?], 1))?
        } else {
            self.image_tokens(x)?
        };
        let pose_seq = match &self.pose_tokens {
            None => None,
            Some(pt) => {
                let bottleneck = match (&pt.encoder, generator_bottleneck) {
                    (Some(enc), _) => enc.forward(&pose_input()?)?.pop().expect("at least one level"),
                    (None, Some(b)) => b.shallow_clone(),
                    (None, None) => return Err(param("shared scheme needs the generator's pose bottleneck")),
                };
                let tokens = bottleneck.flatten(2, 3).transpose(1, 2);
                Some(pt.proj.forward(&tokens) + &pt.pos)
            }
        };
        let f = match (&self.fusion, &pose_seq) {
            (Fusion::Mha(m), Some(p)) => m.forward(&[&image_seq, p])?,
            (Fusion::Mha(m), None) => m.forward(&[&image_seq])?,
            (Fusion::Conv(conv), Some(p)) => {
                let to_map = |t: &Tensor| {
                    let s = t.size();
                    let g = (s[1] as f64).sqrt() as i64;
                    t.transpose(1, 2).reshape([s[0], s[2], g, g])
                };
                conv.forward(&to_map(&image_seq), &to_map(p))?.mean_dim([2i64, 3].as_slice(), false, None)
            }
            (Fusion::Conv(_), None) => return Err(shape("conv fusion without pose tokens")),
        };
        Ok(PosteriorParams {
            mu: self.mu_head.forward(&f),
            log_var: self.log_var_head.forward(&f),
        })
    }
}

/// `(rows, cols)` standard normal draws from `rng`, in row-major order.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, rows: i64, cols: i64, kind: Kind) -> Tensor {
    let v: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_slice(&v).reshape([rows, cols]).to_kind(kind)
}

/// `z = μ + exp(log σ² / 2)·ε`; differentiable in `μ` and `log σ²`.
pub fn reparameterize_with(params: &PosteriorParams, eps: &Tensor) -> Tensor {
    &params.mu + (&params.log_var * 0.5).exp() * eps
}

pub fn reparameterize<R: Rng + ?Sized>(params: &PosteriorParams, rng: &mut R) -> Tensor {
    let s = params.mu.size();
    let eps = gaussian(rng, s[0], s[1], params.mu.kind());
    reparameterize_with(params, &eps)
}

/// `batch` i.i.d. draws from `N(0, I_M)`.
pub fn sample_prior<R: Rng + ?Sized>(rng: &mut R, batch: i64, m: i64, kind: Kind) -> Result<Tensor> {
    if m < 1 || batch < 1 {
        return Err(param("prior sample needs positive batch and dimension"));
    }
    Ok(gaussian(rng, batch, m, kind))
}

/// `½ Σ_m (μ² + σ² − 1 − log σ²)`, averaged over the batch; never negative.
pub fn kl_loss(params: &PosteriorParams) -> Tensor {
    let per = params.mu.square() + params.log_var.exp() - 1.0 - &params.log_var;
    per.sum_dim_intlist([1i64].as_slice(), false, None).mean(None) * 0.5
}
