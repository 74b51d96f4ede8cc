//! Network building blocks shared by the posterior, the generator and the
//! critics. Every block runs in either `f32` or `f64`, following the kind of
//! its variable store.

pub mod fuse;
pub mod init;
pub mod psi;
pub mod tokens;
pub mod transformer;
pub mod unet;

use tch::Tensor;

pub use fuse::ConvFuse;
pub use init::{deterministic_init, store_kind};
pub use psi::{Psi, PsiKind};
pub use tokens::{num_patches, PatchEmbed};
pub use transformer::{Attention, MhaFuse, Transformer, TransformerLayer};
pub use unet::{Decoder, Encoder, SkipMode, UNetConfig};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Leaky ReLU with slope 0.2.
pub fn lrelu(x: &Tensor) -> Tensor {
    x.maximum(&(x * LEAKY_SLOPE))
}

/// Per-sample, per-channel standardization over the spatial axes.
pub fn instance_norm(x: &Tensor) -> Tensor {
    let mean = x.mean_dim([2i64, 3].as_slice(), true, None);
    let centered = x - &mean;
    let var = (&centered * &centered).mean_dim([2i64, 3].as_slice(), true, None);
    centered / (var + 1e-5).sqrt()
}

pub fn downsample(x: &Tensor) -> Tensor {
    x.avg_pool2d([2i64, 2], [2i64, 2], [0i64, 0], false, true, None)
}

pub fn upsample(x: &Tensor) -> Tensor {
    let s = x.size();
    x.upsample_nearest2d([s[2] * 2, s[3] * 2], None, None)
}
