use tch::{nn, nn::Module, Tensor};

use super::{downsample, lrelu, upsample, Psi, PsiKind};
use crate::error::{param, shape, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UNetConfig {
    pub in_channels: i64,
    /// Width of each level, top (full resolution) first. `L = channels.len()`.
    pub channels: Vec<i64>,
    pub size: i64,
}

impl UNetConfig {
    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn bottleneck_size(&self) -> i64 {
        self.size >> (self.levels() - 1)
    }

    pub fn bottleneck_channels(&self) -> i64 {
        *self.channels.last().expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.levels();
        if l == 0 || l > 8 {
            return Err(param(format!("UNet needs 1..=8 levels, got {l}")));
        }
        if self.size % (1 << (l - 1)) != 0 {
            return Err(param(format!("size {} is not divisible by 2^{}", self.size, l - 1)));
        }
        if self.channels.iter().any(|&c| c < 1) || self.in_channels < 1 {
            return Err(param("channel counts must be positive"));
        }
        Ok(())
    }
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

/// Two 3×3 conv + LeakyReLU per level, 2×2 average pooling between levels.
#[derive(Debug)]
pub struct Encoder {
    levels: Vec<(nn::Conv2D, nn::Conv2D)>,
    pub config: UNetConfig,
}

impl Encoder {
    pub fn new(p: nn::Path, config: &UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut levels = Vec::new();
        let mut prev = config.in_channels;
        for (i, &c) in config.channels.iter().enumerate() {
            let q = &p / format!("level{i}");
            levels.push((conv3(&q / "a", prev, c), conv3(&q / "b", c, c)));
            prev = c;
        }
        Ok(Encoder {
            levels,
            config: config.clone(),
        })
    }

    /// Feature of every level; the last one is the bottleneck.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let s = x.size();
        if s.len() != 4 || s[1] != self.config.in_channels || s[2] != self.config.size || s[3] != self.config.size {
            return Err(param(format!(
                "encoder expects (B, {}, {size}, {size}), got {s:?}",
                self.config.in_channels,
                size = self.config.size
            )));
        }
        let mut feats: Vec<Tensor> = Vec::with_capacity(self.levels.len());
        for (i, (a, b)) in self.levels.iter().enumerate() {
            let input = if i == 0 { x.shallow_clone() } else { downsample(&feats[i - 1]) };
            let h = lrelu(&a.forward(&input));
            feats.push(lrelu(&b.forward(&h)));
        }
        Ok(feats)
    }
}

/// How the encoder skips and the style enter each decoder level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipMode {
    /// `Ψ(f_E^i ⊕ f_D^{L-i}, z_a)` at every level.
    Full,
    /// No encoder skip; `Ψ(f_D^{L-i}, z_a)` at every level.
    NoSkip,
    /// No encoder skip and no per-level style; `z_a` enters at the bottleneck only.
    NoSkipNoPsi,
}

#[derive(Debug)]
struct DecoderLevel {
    up: nn::Conv2D,
    psi: Option<Psi>,
    merge: nn::Conv2D,
}

/// Mirror of the encoder ending in a 1×1 convolution and a sigmoid.
#[derive(Debug)]
pub struct Decoder {
    bottleneck_psi: Psi,
    levels: Vec<DecoderLevel>,
    out: nn::Conv2D,
    pub skip: SkipMode,
    channels: Vec<i64>,
}

impl Decoder {
    pub fn new(p: nn::Path, config: &UNetConfig, skip: SkipMode, psi: PsiKind, style_dim: i64, out_channels: i64) -> Result<Self> {
        config.validate()?;
        let ch = &config.channels;
        let l = ch.len();
        let bottleneck_psi = Psi::new(&p / "psi_bottleneck", psi, ch[l - 1], style_dim);
        let mut levels = Vec::new();
        for i in (0..l - 1).rev() {
            let q = &p / format!("level{i}");
            let merged = if skip == SkipMode::Full { 2 * ch[i] } else { ch[i] };
            levels.push(DecoderLevel {
                up: conv3(&q / "up", ch[i + 1], ch[i]),
                psi: (skip != SkipMode::NoSkipNoPsi).then(|| Psi::new(&q / "psi", psi, merged, style_dim)),
                merge: conv3(&q / "merge", merged, ch[i]),
            });
        }
        let out = nn::conv2d(&p / "out", ch[0], out_channels, 1, Default::default());
        Ok(Decoder {
            bottleneck_psi,
            levels,
            out,
            skip,
            channels: ch.clone(),
        })
    }

    /// Output of every level, coarse to fine, before the output head.
    pub fn features(&self, feats: &[Tensor], z_a: &Tensor) -> Result<Vec<Tensor>> {
        if feats.len() != self.channels.len() {
            return Err(shape(format!("decoder has {} levels, got {} features", self.channels.len(), feats.len())));
        }
        let l = feats.len();
        let mut h = self.bottleneck_psi.forward(&feats[l - 1], z_a);
        let mut outs = vec![h.shallow_clone()];
        for (level, i) in self.levels.iter().zip((0..l - 1).rev()) {
            let u = lrelu(&level.up.forward(&upsample(&h)));
            let merged = match self.skip {
                SkipMode::Full => Tensor::cat(&[&feats[i], &u], 1),
                _ => u,
            };
            let styled = match &level.psi {
                Some(psi) => psi.forward(&merged, z_a),
                None => merged,
            };
            h = lrelu(&level.merge.forward(&styled));
            outs.push(h.shallow_clone());
        }
        Ok(outs)
    }

    pub fn forward(&self, feats: &[Tensor], z_a: &Tensor) -> Result<Tensor> {
        let outs = self.features(feats, z_a)?;
        Ok(self.out.forward(outs.last().expect("at least one level")).sigmoid())
    }
}
