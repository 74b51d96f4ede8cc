use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::critics::DiscriminatorConfig;
use crate::error::{param, Error, Result};
use crate::generator::{AttributeMode, GeneratorConfig, PartDecoders};
use crate::losses::LossWeights;
use crate::nn::{PsiKind, SkipMode, UNetConfig};
use crate::pevae::{FuseKind, FusionScheme, PosteriorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseFormat {
    Skeleton,
    Heatmap,
}

impl PoseFormat {
    pub fn channels(self) -> i64 {
        match self {
            PoseFormat::Skeleton => 3,
            PoseFormat::Heatmap => crate::posekit::NUM_KEYPOINTS as i64,
        }
    }
}

/// Every training setting, serialized as flat `key = value` lines. The
/// SHA-256 of the canonical text identifies the configuration in
/// checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub corpus: String,
    pub size: i64,
    pub batch: usize,
    pub steps: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weights: LossWeights,
    pub fusion: FusionScheme,
    pub pose_in_posterior: bool,
    pub fuse: FuseKind,
    pub pose_format: PoseFormat,
    pub stroke_width: f64,
    pub tau: f64,
    pub skip: SkipMode,
    pub psi: PsiKind,
    pub parts: PartDecoders,
    pub attributes: AttributeMode,
    pub attribute_map: bool,
    pub adversarial: bool,
    pub augment: bool,
    pub channels: Vec<i64>,
    pub d_model: i64,
    pub heads: i64,
    pub fuse_layers: usize,
    pub latent: i64,
    pub patch: i64,
    pub disc_channels: i64,
    pub disc_scales: usize,
    pub disc_layers: usize,
    pub classifier_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            corpus: String::new(),
            size: 64,
            batch: 4,
            steps: 2000,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            weights: LossWeights::default(),
            fusion: FusionScheme::Separate,
            pose_in_posterior: true,
            fuse: FuseKind::Mha,
            pose_format: PoseFormat::Skeleton,
            stroke_width: 1.5,
            tau: 6.0,
            skip: SkipMode::Full,
            psi: PsiKind::Modulate,
            parts: PartDecoders::Full,
            attributes: AttributeMode::All,
            attribute_map: false,
            adversarial: true,
            augment: false,
            channels: vec![8, 16, 32, 64, 64],
            d_model: 256,
            heads: 4,
            fuse_layers: 2,
            latent: 64,
            patch: 16,
            disc_channels: 16,
            disc_scales: 2,
            disc_layers: 4,
            classifier_steps: 300,
            seed: 0,
        }
    }
}

fn fusion_text(f: FusionScheme) -> &'static str {
    match f {
        FusionScheme::Early => "early",
        FusionScheme::Shared => "shared",
        FusionScheme::Separate => "separate",
    }
}

fn skip_text(s: SkipMode) -> &'static str {
    match s {
        SkipMode::Full => "full",
        SkipMode::NoSkip => "none",
        SkipMode::NoSkipNoPsi => "none_no_psi",
    }
}

fn parts_text(p: PartDecoders) -> &'static str {
    match p {
        PartDecoders::Single => "single",
        PartDecoders::HeadTorso => "head_torso",
        PartDecoders::Full => "full",
    }
}

fn attributes_text(a: AttributeMode) -> &'static str {
    match a {
        AttributeMode::All => "all",
        AttributeMode::SkinTone => "skin_tone",
        AttributeMode::None => "none",
    }
}

fn bad(key: &str, value: &str) -> Error {
    param(format!("invalid value `{value}` for `{key}`"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

impl TrainConfig {
    /// Canonical text: one `key = value` line per field in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("corpus", self.corpus.clone());
        line("size", self.size.to_string());
        line("batch", self.batch.to_string());
        line("steps", self.steps.to_string());
        line("lr_g", self.lr_g.to_string());
        line("lr_d", self.lr_d.to_string());
        line("beta1", self.beta1.to_string());
        line("beta2", self.beta2.to_string());
        line("lambda_edge", self.weights.lambda_edge.to_string());
        line("lambda_attrib", self.weights.lambda_attrib.to_string());
        line("beta", self.weights.beta.to_string());
        line("fusion", fusion_text(self.fusion).into());
        line("pose_in_posterior", self.pose_in_posterior.to_string());
        line("fuse", if self.fuse == FuseKind::Mha { "mha" } else { "conv" }.into());
        line("pose_format", if self.pose_format == PoseFormat::Skeleton { "skeleton" } else { "heatmap" }.into());
        line("stroke_width", self.stroke_width.to_string());
        line("tau", self.tau.to_string());
        line("skip", skip_text(self.skip).into());
        line("psi", if self.psi == PsiKind::Modulate { "modulate" } else { "conv" }.into());
        line("parts", parts_text(self.parts).into());
        line("attributes", attributes_text(self.attributes).into());
        line("attribute_map", self.attribute_map.to_string());
        line("adversarial", self.adversarial.to_string());
        line("augment", self.augment.to_string());
        line("channels", self.channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
        line("d_model", self.d_model.to_string());
        line("heads", self.heads.to_string());
        line("fuse_layers", self.fuse_layers.to_string());
        line("latent", self.latent.to_string());
        line("patch", self.patch.to_string());
        line("disc_channels", self.disc_channels.to_string());
        line("disc_scales", self.disc_scales.to_string());
        line("disc_layers", self.disc_layers.to_string());
        line("classifier_steps", self.classifier_steps.to_string());
        line("seed", self.seed.to_string());
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "corpus" => self.corpus = v.to_string(),
            "size" => self.size = num(key, v)?,
            "batch" => self.batch = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "lr_g" => self.lr_g = num(key, v)?,
            "lr_d" => self.lr_d = num(key, v)?,
            "beta1" => self.beta1 = num(key, v)?,
            "beta2" => self.beta2 = num(key, v)?,
            "lambda_edge" => self.weights.lambda_edge = num(key, v)?,
            "lambda_attrib" => self.weights.lambda_attrib = num(key, v)?,
            "beta" => self.weights.beta = num(key, v)?,
            "fusion" => {
                self.fusion = match v {
                    "early" => FusionScheme::Early,
                    "shared" => FusionScheme::Shared,
                    "separate" => FusionScheme::Separate,
                    _ => return Err(bad(key, v)),
                }
            }
            "pose_in_posterior" => self.pose_in_posterior = boolean(key, v)?,
            "fuse" => {
                self.fuse = match v {
                    "mha" => FuseKind::Mha,
                    "conv" => FuseKind::Conv,
                    _ => return Err(bad(key, v)),
                }
            }
            "pose_format" => {
                self.pose_format = match v {
                    "skeleton" => PoseFormat::Skeleton,
                    "heatmap" => PoseFormat::Heatmap,
                    _ => return Err(bad(key, v)),
                }
            }
            "stroke_width" => self.stroke_width = num(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "skip" => {
                self.skip = match v {
                    "full" => SkipMode::Full,
                    "none" => SkipMode::NoSkip,
                    "none_no_psi" => SkipMode::NoSkipNoPsi,
                    _ => return Err(bad(key, v)),
                }
            }
            "psi" => {
                self.psi = match v {
                    "modulate" => PsiKind::Modulate,
                    "conv" => PsiKind::Conv,
                    _ => return Err(bad(key, v)),
                }
            }
            "parts" => {
                self.parts = match v {
                    "single" => PartDecoders::Single,
                    "head_torso" => PartDecoders::HeadTorso,
                    "full" => PartDecoders::Full,
                    _ => return Err(bad(key, v)),
                }
            }
            "attributes" => {
                self.attributes = match v {
                    "all" => AttributeMode::All,
                    "skin_tone" => AttributeMode::SkinTone,
                    "none" => AttributeMode::None,
                    _ => return Err(bad(key, v)),
                }
            }
            "attribute_map" => self.attribute_map = boolean(key, v)?,
            "adversarial" => self.adversarial = boolean(key, v)?,
            "augment" => self.augment = boolean(key, v)?,
            "channels" => {
                self.channels = v.split(',').map(|c| num(key, c.trim())).collect::<Result<_>>()?;
            }
            "d_model" => self.d_model = num(key, v)?,
            "heads" => self.heads = num(key, v)?,
            "fuse_layers" => self.fuse_layers = num(key, v)?,
            "latent" => self.latent = num(key, v)?,
            "patch" => self.patch = num(key, v)?,
            "disc_channels" => self.disc_channels = num(key, v)?,
            "disc_scales" => self.disc_scales = num(key, v)?,
            "disc_layers" => self.disc_layers = num(key, v)?,
            "classifier_steps" => self.classifier_steps = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            other => return Err(param(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Defaults overridden by the lines of `text`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| param(format!("line {}: expected `key = value`", n + 1)))?;
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(param("batch must be at least 1"));
        }
        if [self.lr_g, self.lr_d, self.weights.lambda_edge, self.weights.lambda_attrib, self.weights.beta]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(param("learning rates and loss weights must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(param("moment decay rates must lie in [0, 1)"));
        }
        if self.tau <= 0.0 || self.stroke_width <= 0.0 {
            return Err(param("tau and stroke width must be positive"));
        }
        if self.attribute_map && self.attributes == AttributeMode::None {
            return Err(param("attribute_map needs attribute conditioning"));
        }
        self.generator_config().posterior.validate()?;
        self.unet().validate()
    }

    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            in_channels: self.pose_format.channels(),
            channels: self.channels.clone(),
            size: self.size,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        let unet = self.unet();
        GeneratorConfig {
            unet: unet.clone(),
            skip: self.skip,
            psi: self.psi,
            parts: self.parts,
            d: self.d_model,
            heads: self.heads,
            style_layers: self.fuse_layers,
            latent: self.latent,
            attributes: self.attributes,
            posterior: PosteriorConfig {
                scheme: self.fusion,
                pose_in_posterior: self.pose_in_posterior,
                fuse: self.fuse,
                attribute_map: self.attribute_map,
                image_size: self.size,
                pose_channels: self.pose_format.channels(),
                patch: self.patch,
                d: self.d_model,
                heads: self.heads,
                fuse_layers: self.fuse_layers,
                latent: self.latent,
                pose_unet: unet,
            },
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            n_scales: self.disc_scales,
            layers_per_scale: self.disc_layers,
            in_channels: self.pose_format.channels() + 9,
            base_channels: self.disc_channels,
        }
    }
}
