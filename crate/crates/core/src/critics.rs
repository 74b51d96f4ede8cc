//! Multi-scale conditional discriminator, adversarial and feature-matching
//! objectives, and the frozen attribute classifier.

use tch::{nn, nn::Module, Kind, Tensor};

use crate::error::{param, Result};
use crate::losses::FeatureExtractor;
use crate::nn::{downsample, lrelu};
use crate::synthdata::AttributeLabels;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub n_scales: usize,
    /// Feature maps returned per scale, the last being the patch logits.
    pub layers_per_scale: usize,
    pub in_channels: i64,
    pub base_channels: i64,
}

impl DiscriminatorConfig {
    /// Pose channels plus the nine channels of the three stacked parts.
    pub fn for_pose_channels(pose_channels: i64) -> Self {
        DiscriminatorConfig {
            n_scales: 2,
            layers_per_scale: 4,
            in_channels: pose_channels + 9,
            base_channels: 32,
        }
    }
}

/// Output of one pyramid level.
#[derive(Debug)]
pub struct ScaleOutput {
    pub logits: Tensor,
    pub features: Vec<Tensor>,
}

#[derive(Debug)]
pub struct Discriminator {
    scales: Vec<Vec<nn::Conv2D>>,
    pub config: DiscriminatorConfig,
}

impl Discriminator {
    pub fn new(p: nn::Path, config: &DiscriminatorConfig) -> Result<Self> {
        if config.n_scales < 1 || config.layers_per_scale < 2 {
            return Err(param("discriminator needs at least one scale and two layers"));
        }
        let mut scales = Vec::new();
        for s in 0..config.n_scales {
            let q = &p / format!("scale{s}");
            let mut layers = Vec::new();
            let mut ch = config.in_channels;
            for l in 0..config.layers_per_scale {
                let last = l + 1 == config.layers_per_scale;
                let out = if last { 1 } else { config.base_channels << l.min(3) };
                // two strided layers, then stride-1 layers
                let (k, stride, padding) = if l < 2 { (4, 2, 1) } else { (3, 1, 1) };
                let cfg = nn::ConvConfig {
                    stride,
                    padding,
                    ..Default::default()
                };
                layers.push(nn::conv2d(&q / format!("conv{l}"), ch, out, k, cfg));
                ch = out;
            }
            scales.push(layers);
        }
        Ok(Discriminator {
            scales,
            config: config.clone(),
        })
    }

    /// `y ⊕ parts` is halved once per scale after the first.
    pub fn forward(&self, y: &Tensor, parts: &Tensor) -> Result<Vec<ScaleOutput>> {
        let (sy, sp) = (y.size(), parts.size());
        if sy.len() != 4 || sp.len() != 4 || sy[0] != sp[0] || sy[2..] != sp[2..] || sy[1] + sp[1] != self.config.in_channels {
            return Err(param(format!(
                "discriminator expects {} input channels, got pose {sy:?} and parts {sp:?}",
                self.config.in_channels
            )));
        }
        let mut input = Tensor::cat(&[y, parts], 1);
        let mut out = Vec::with_capacity(self.scales.len());
        for (s, layers) in self.scales.iter().enumerate() {
            if s > 0 {
                input = downsample(&input);
            }
            let mut h = input.shallow_clone();
            let mut features = Vec::with_capacity(layers.len());
            for (l, conv) in layers.iter().enumerate() {
                h = conv.forward(&h);
                if l + 1 < layers.len() {
                    h = lrelu(&h);
                }
                features.push(h.shallow_clone());
            }
            out.push(ScaleOutput {
                logits: h,
                features,
            });
        }
        Ok(out)
    }
}

/// Stacks masked parts into the nine-channel discriminator input.
pub fn stack_parts(hand: &Tensor, head: &Tensor, torso: &Tensor) -> Tensor {
    Tensor::cat(&[hand, head, torso], 1)
}

/// `Σ_scales Σ_layers mean_{b,h,w} Σ_c |tr − pr|`. Real features are
/// treated as constants.
pub fn feature_matching_loss(real: &[ScaleOutput], fake: &[ScaleOutput]) -> Result<Tensor> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(param(format!("feature lists differ in scale count: {} vs {}", real.len(), fake.len())));
    }
    let mut total: Option<Tensor> = None;
    for (r, f) in real.iter().zip(fake) {
        if r.features.len() != f.features.len() {
            return Err(param("feature lists differ in layer count"));
        }
        for (tr, pr) in r.features.iter().zip(&f.features) {
            if tr.size() != pr.size() {
                return Err(param(format!("feature shapes differ: {:?} vs {:?}", tr.size(), pr.size())));
            }
            let term = (tr.detach() - pr).abs().sum_dim_intlist([1i64].as_slice(), false, None).mean(None);
            total = Some(match total {
                Some(t) => t + term,
                None => term,
            });
        }
    }
    Ok(total.expect("non-empty"))
}

/// Non-saturating losses summed over scales:
/// `d = −E log σ(real) − E log(1 − σ(fake))`, `g = −E log σ(fake)`.
pub fn adversarial_losses(real: &[Tensor], fake: &[Tensor]) -> Result<(Tensor, Tensor)> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(param("adversarial losses need matching, non-empty logit lists"));
    }
    let softplus = |t: &Tensor| t.softplus();
    let mut d: Option<Tensor> = None;
    let mut g: Option<Tensor> = None;
    for (r, f) in real.iter().zip(fake) {
        let dt = softplus(&-r).mean(None) + softplus(f).mean(None);
        let gt = softplus(&-f).mean(None);
        d = Some(match d {
            Some(x) => x + dt,
            None => dt,
        });
        g = Some(match g {
            Some(x) => x + gt,
            None => gt,
        });
    }
    Ok((d.expect("non-empty"), g.expect("non-empty")))
}

/// Mean cross-entropy of integer targets under `logits` `(B, C)`.
pub fn cross_entropy(logits: &Tensor, targets: &Tensor) -> Tensor {
    let logp = logits.log_softmax(-1, None);
    -logp.gather(1, &targets.unsqueeze(1), false).mean(None)
}

pub const TONE_CLASSES: i64 = 4;
pub const BINARY_CLASSES: i64 = 2;

/// Which heads contribute to the attribute loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttributeHeads {
    pub skin_tone: bool,
    pub gender: bool,
    pub ethnicity: bool,
}

impl AttributeHeads {
    pub const ALL: AttributeHeads = AttributeHeads {
        skin_tone: true,
        gender: true,
        ethnicity: true,
    };
    pub const NONE: AttributeHeads = AttributeHeads {
        skin_tone: false,
        gender: false,
        ethnicity: false,
    };
}

/// Frozen feature backbone, pooled, followed by three linear heads. The
/// heads are fit once on the corpus and then frozen as well.
#[derive(Debug)]
pub struct AttributeClassifier {
    pub vs: nn::VarStore,
    tone: nn::Linear,
    gender: nn::Linear,
    ethnicity: nn::Linear,
}

impl AttributeClassifier {
    pub fn new(feature_dim: i64, kind: Kind) -> Self {
        let mut vs = nn::VarStore::new(tch::Device::Cpu);
        let p = vs.root();
        let tone = nn::linear(&p / "tone", feature_dim, TONE_CLASSES, Default::default());
        let gender = nn::linear(&p / "gender", feature_dim, BINARY_CLASSES, Default::default());
        let ethnicity = nn::linear(&p / "ethnicity", feature_dim, BINARY_CLASSES, Default::default());
        vs.set_kind(kind);
        tch::no_grad(|| {
            for (_, mut v) in vs.variables() {
                let _ = v.zero_();
            }
        });
        AttributeClassifier {
            vs,
            tone,
            gender,
            ethnicity,
        }
    }

    /// Logits of the three heads from pooled backbone features.
    pub fn logits(&self, features: &Tensor) -> [Tensor; 3] {
        [self.tone.forward(features), self.gender.forward(features), self.ethnicity.forward(features)]
    }

    pub fn freeze(&mut self) {
        self.vs.freeze();
    }
}

pub fn label_targets(labels: &[AttributeLabels]) -> [Tensor; 3] {
    let t: Vec<i64> = labels.iter().map(|l| l.skin_tone.index() as i64).collect();
    let g: Vec<i64> = labels.iter().map(|l| l.gender as i64).collect();
    let e: Vec<i64> = labels.iter().map(|l| l.ethnicity as i64).collect();
    [Tensor::from_slice(&t), Tensor::from_slice(&g), Tensor::from_slice(&e)]
}

/// Sum of the active heads' cross-entropies on `image`.
pub fn attribute_loss(
    image: &Tensor,
    labels: &[AttributeLabels],
    classifier: &AttributeClassifier,
    backbone: &FeatureExtractor,
    heads: AttributeHeads,
) -> Result<Tensor> {
    if image.size()[0] != labels.len() as i64 {
        return Err(param("one label per image is required"));
    }
    let logits = classifier.logits(&backbone.pooled(image));
    let targets = label_targets(labels);
    let mut total = image.zeros_like().sum(None);
    for (i, on) in [heads.skin_tone, heads.gender, heads.ethnicity].into_iter().enumerate() {
        if on {
            total = total + cross_entropy(&logits[i], &targets[i]);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::Device;

    #[test]
    fn adversarial_closed_forms() {
        let zero = [Tensor::zeros([2, 1, 3, 3], (Kind::Double, Device::Cpu))];
        let (d, g) = adversarial_losses(&zero, &zero).unwrap();
        assert!((d.double_value(&[]) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((g.double_value(&[]) - 2f64.ln()).abs() < 1e-12);
        let big = [Tensor::full([1, 1, 2, 2], 60.0, (Kind::Double, Device::Cpu))];
        let small = [Tensor::full([1, 1, 2, 2], -60.0, (Kind::Double, Device::Cpu))];
        assert!(adversarial_losses(&big, &small).unwrap().0.double_value(&[]) < 1e-20);
        let mut last = f64::INFINITY;
        for v in [-3.0, -1.0, 0.0, 2.0, 5.0] {
            let f = [Tensor::full([1, 1, 1, 1], v, (Kind::Double, Device::Cpu))];
            let g = adversarial_losses(&zero, &f).unwrap().1.double_value(&[]);
            assert!(g < last);
            last = g;
        }
    }

    fn single(values: &[f64]) -> Vec<ScaleOutput> {
        let t = Tensor::from_slice(values).reshape([1, values.len() as i64, 1, 1]);
        vec![ScaleOutput {
            logits: t.shallow_clone(),
            features: vec![t],
        }]
    }

    #[test]
    fn feature_matching_closed_forms() {
        let loss = feature_matching_loss(&single(&[1.0, 0.0]), &single(&[0.0, 0.0])).unwrap();
        assert!((loss.double_value(&[]) - 1.0).abs() < 1e-12);
        let flipped = feature_matching_loss(&single(&[0.0, 0.0]), &single(&[1.0, 0.0])).unwrap();
        assert_eq!(loss.double_value(&[]), flipped.double_value(&[]));
        assert_eq!(feature_matching_loss(&single(&[0.3, 2.0]), &single(&[0.3, 2.0])).unwrap().double_value(&[]), 0.0);
        assert!(feature_matching_loss(&single(&[1.0]), &[]).is_err());
    }

    #[test]
    fn uniform_prediction_costs_log_c() {
        let logits = Tensor::zeros([3, 4], (Kind::Double, Device::Cpu));
        let targets = Tensor::from_slice(&[0i64, 3, 1]);
        assert!((cross_entropy(&logits, &targets).double_value(&[]) - 4f64.ln()).abs() < 1e-12);
        let sharp = Tensor::from_slice(&[100.0f64, 0.0, 0.0, 0.0]).reshape([1, 4]);
        assert!(cross_entropy(&sharp, &Tensor::from_slice(&[0i64])).double_value(&[]) < 1e-12);
    }

    #[test]
    fn scales_and_layers_follow_config() {
        let vs = nn::VarStore::new(Device::Cpu);
        let d = Discriminator::new(vs.root(), &DiscriminatorConfig::for_pose_channels(3)).unwrap();
        let y = Tensor::rand([2, 3, 32, 32], (Kind::Float, Device::Cpu));
        let parts = Tensor::rand([2, 9, 32, 32], (Kind::Float, Device::Cpu));
        let out = d.forward(&y, &parts).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].features.len(), 4);
        assert_eq!(out[0].logits.size(), [2, 1, 8, 8]);
        assert_eq!(out[1].logits.size(), [2, 1, 4, 4]);
        let again = d.forward(&y, &parts).unwrap();
        assert!(out[1].logits.equal(&again[1].logits));
        assert!(d.forward(&y, &y).is_err());
    }
}
