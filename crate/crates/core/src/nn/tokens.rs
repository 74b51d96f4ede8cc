use tch::{nn, nn::Module, Tensor};

use crate::error::{param, shape, Result};

/// `⌊h/patch⌋ · ⌊w/patch⌋`.
pub fn num_patches(h: i64, w: i64, patch: i64) -> i64 {
    (h / patch) * (w / patch)
}

/// Non-overlapping patch projection with a prepended class token and an
/// optional learned positional embedding. Output is `(B, N + 1, d)`.
#[derive(Debug)]
pub struct PatchEmbed {
    proj: nn::Conv2D,
    pub cls: Tensor,
    pub pos: Option<Tensor>,
    pub patch: i64,
    pub d: i64,
    pub in_channels: i64,
    pub image: (i64, i64),
}

impl PatchEmbed {
    /// A stride-`patch` convolution is the per-patch linear map `E·x_i`;
    /// trailing rows and columns that do not fill a patch are dropped.
    pub fn new(p: nn::Path, in_channels: i64, image: (i64, i64), patch: i64, d: i64, positional: bool) -> Result<Self> {
        if patch < 1 || patch > image.0 || patch > image.1 {
            return Err(param(format!("patch {patch} does not fit a {}x{} image", image.0, image.1)));
        }
        let n = num_patches(image.0, image.1, patch);
        let cfg = nn::ConvConfig {
            stride: patch,
            ..Default::default()
        };
        let proj = nn::conv2d(&p / "proj", in_channels, d, patch, cfg);
        let cls = p.var("cls", &[1, 1, d], nn::Init::Const(0.0));
        let pos = positional.then(|| p.var("pos", &[1, n + 1, d], nn::Init::Const(0.0)));
        Ok(PatchEmbed {
            proj,
            cls,
            pos,
            patch,
            d,
            in_channels,
            image,
        })
    }

    pub fn num_patches(&self) -> i64 {
        num_patches(self.image.0, self.image.1, self.patch)
    }

    /// Patch tokens without class token or positional term, `(B, N, d)`.
    pub fn patch_tokens(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.size();
        if s.len() != 4 || s[1] != self.in_channels || (s[2], s[3]) != self.image {
            return Err(shape(format!(
                "patch embed expects (B, {}, {}, {}), got {s:?}",
                self.in_channels, self.image.0, self.image.1
            )));
        }
        Ok(self.proj.forward(x).flatten(2, 3).transpose(1, 2))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let tokens = self.patch_tokens(x)?;
        let b = tokens.size()[0];
        let cls = self.cls.expand([b, 1, self.d], false);
        let seq = Tensor::cat(&[cls, tokens], 1);
        Ok(match &self.pos {
            Some(pos) => seq + pos,
            None => seq,
        })
    }
}
