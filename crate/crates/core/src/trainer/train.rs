use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tch::{nn, Device, Kind, Tensor};

use super::adam::Adam;
use super::checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
use super::config::TrainConfig;
use super::data::{Batch, TrainData};
use crate::critics::{
    adversarial_losses, attribute_loss, cross_entropy, feature_matching_loss, label_targets, stack_parts, AttributeClassifier,
    AttributeHeads, Discriminator, ScaleOutput,
};
use crate::error::{Error, Result};
use crate::generator::{compose, embed_batch, AttributeMode, GeneratorOutput, OrthogonalStub, PartMasks, Penet};
use crate::losses::{edge_loss, perceptual_loss, total_generator_loss, FeatureExtractor, LossComponents, LossReport};
use crate::nn::{deterministic_init, store_kind};
use crate::pevae::{gaussian, kl_loss, reparameterize_with, PosteriorParams};
use crate::synthdata::AttributeLabels;

const GENERATOR_SALT: u64 = 0x6e6e_0001;
const DISCRIMINATOR_SALT: u64 = 0x6e6e_0002;
const RUN_STREAM: u64 = 7;
const CLASSIFIER_LR: f64 = 1e-2;

/// All networks of one run. The feature extractor is fixed; the attribute
/// classifier is fit once and then frozen.
pub struct Models {
    pub vs_g: nn::VarStore,
    pub generator: Penet,
    pub vs_d: nn::VarStore,
    pub discriminator: Discriminator,
    pub extractor: FeatureExtractor,
    pub classifier: AttributeClassifier,
    pub attributes: OrthogonalStub,
}

impl Models {
    pub fn build(config: &TrainConfig, kind: Kind) -> Result<Self> {
        config.validate()?;
        let mut vs_g = nn::VarStore::new(Device::Cpu);
        let generator = Penet::new(vs_g.root(), &config.generator_config())?;
        let mut vs_d = nn::VarStore::new(Device::Cpu);
        let discriminator = Discriminator::new(vs_d.root(), &config.discriminator_config())?;
        vs_g.set_kind(kind);
        vs_d.set_kind(kind);
        deterministic_init(&vs_g, config.seed ^ GENERATOR_SALT);
        deterministic_init(&vs_d, config.seed ^ DISCRIMINATOR_SALT);
        let extractor = FeatureExtractor::new(kind);
        let classifier = AttributeClassifier::new(extractor.pooled_dim(), kind);
        Ok(Models {
            vs_g,
            generator,
            vs_d,
            discriminator,
            extractor,
            classifier,
            attributes: OrthogonalStub::default(),
        })
    }

    pub fn kind(&self) -> Kind {
        store_kind(&self.vs_g)
    }
}

fn attribute_heads(mode: AttributeMode) -> AttributeHeads {
    match mode {
        AttributeMode::All => AttributeHeads::ALL,
        AttributeMode::SkinTone => AttributeHeads {
            skin_tone: true,
            gender: false,
            ethnicity: false,
        },
        AttributeMode::None => AttributeHeads::NONE,
    }
}

/// Intermediate results of one generator pass.
#[derive(Debug)]
pub struct Forward {
    pub posterior: PosteriorParams,
    pub parts: GeneratorOutput,
    pub fake: Tensor,
}

fn masked_parts(hand: &Tensor, head: &Tensor, torso: &Tensor, masks: &PartMasks) -> Tensor {
    let [m_head, m_hand, m_torso] = masks.to_kind(hand.kind());
    stack_parts(&(hand * m_hand), &(head * m_head), &(torso * m_torso))
}

fn logits(outs: &[ScaleOutput]) -> Vec<Tensor> {
    outs.iter().map(|o| o.logits.shallow_clone()).collect()
}

pub struct TrainState {
    pub config: TrainConfig,
    pub models: Models,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub history: Vec<LossReport>,
}

impl TrainState {
    /// Fresh run: deterministic initialization, then the attribute
    /// classifier is fit on `data` and frozen.
    pub fn new(config: &TrainConfig, data: &TrainData, kind: Kind) -> Result<Self> {
        let mut models = Models::build(config, kind)?;
        fit_classifier(&mut models, data.all(), config.classifier_steps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(RUN_STREAM);
        Ok(TrainState {
            config: config.clone(),
            models,
            adam_g: Adam::new(config.lr_g, config.beta1, config.beta2),
            adam_d: Adam::new(config.lr_d, config.beta1, config.beta2),
            step: 0,
            rng,
            history: Vec::new(),
        })
    }

    pub fn kind(&self) -> Kind {
        self.models.kind()
    }

    /// Text embedding of each label under the configured attribute mode.
    pub fn attribute_embedding(&self, labels: &[AttributeLabels]) -> Result<Option<Tensor>> {
        embed_batch(&self.models.attributes, self.config.attributes, labels, self.kind())
    }

    /// Posterior, reparameterized latent with noise `eps`, part images and
    /// the composite.
    pub fn forward(&self, batch: &Batch, eps: &Tensor) -> Result<Forward> {
        let g = &self.models.generator;
        let a = self.attribute_embedding(&batch.labels)?;
        let feats = g.encode_pose(&batch.y)?;
        let a_map = if self.config.attribute_map { a.as_ref() } else { None };
        let posterior = g.encode_posterior(&batch.x, &batch.y, &feats, a_map)?;
        let z = reparameterize_with(&posterior, eps);
        let z_a = g.fuse_style(&z, a.as_ref())?;
        let parts = g.decode(&feats, &z_a)?;
        let fake = compose(&parts, &batch.masks)?;
        Ok(Forward { posterior, parts, fake })
    }

    fn real_parts(batch: &Batch) -> Tensor {
        masked_parts(&batch.x, &batch.x, &batch.x, &batch.masks)
    }

    fn fake_parts(f: &Forward, batch: &Batch) -> Tensor {
        masked_parts(&f.parts.hand, &f.parts.head, &f.parts.torso, &batch.masks)
    }

    /// Unweighted generator loss terms for a completed forward pass.
    pub fn components(&self, batch: &Batch, f: &Forward) -> Result<LossComponents> {
        let m = &self.models;
        let d_fake = m.discriminator.forward(&batch.y, &Self::fake_parts(f, batch))?;
        let d_real = tch::no_grad(|| m.discriminator.forward(&batch.y, &Self::real_parts(batch)))?;
        let mut feat = feature_matching_loss(&d_real, &d_fake)?;
        if self.config.adversarial {
            let (_, g_adv) = adversarial_losses(&logits(&d_real), &logits(&d_fake))?;
            feat = feat + g_adv;
        }
        Ok(LossComponents {
            perc: perceptual_loss(&batch.x, &f.fake, &m.extractor)?,
            feat,
            edge: edge_loss(&batch.x, &f.fake)?,
            attrib: attribute_loss(&f.fake, &batch.labels, &m.classifier, &m.extractor, attribute_heads(self.config.attributes))?,
            vae: kl_loss(&f.posterior),
        })
    }

    /// Weighted total generator loss and its report for fixed noise `eps`.
    pub fn generator_loss(&self, batch: &Batch, eps: &Tensor) -> Result<(Tensor, LossReport)> {
        let f = self.forward(batch, eps)?;
        let c = self.components(batch, &f)?;
        Ok(total_generator_loss(&c, &self.config.weights))
    }

    fn discriminator_loss(&self, batch: &Batch, f: &Forward) -> Result<Tensor> {
        let d = &self.models.discriminator;
        let real = d.forward(&batch.y, &Self::real_parts(batch))?;
        let fake = d.forward(&batch.y, &Self::fake_parts(f, batch).detach())?;
        Ok(adversarial_losses(&logits(&real), &logits(&fake))?.0)
    }

    /// One discriminator update followed by one generator-and-posterior
    /// update on the same batch. A non-finite loss aborts before any
    /// weights change.
    pub fn train_step(&mut self, data: &TrainData) -> Result<LossReport> {
        let kind = self.kind();
        let mut batch = data.sample(&mut self.rng)?;
        if kind != Kind::Float {
            batch = batch.to_kind(kind);
        }
        let eps = gaussian(&mut self.rng, batch.len() as i64, self.config.latent, kind);
        let f = self.forward(&batch, &eps)?;
        let d_loss = self.discriminator_loss(&batch, &f)?;
        let d_value = d_loss.double_value(&[]);
        let step = self.step + 1;
        if !d_value.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("discriminator loss {d_value}"),
            });
        }
        Adam::zero_grad(&self.models.vs_d);
        d_loss.backward();
        self.adam_d.step(&self.models.vs_d);

        let c = self.components(&batch, &f)?;
        let (total, mut report) = total_generator_loss(&c, &self.config.weights);
        report.step = step;
        report.d_loss = d_value;
        if !report.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: serde_json::to_string(&report).unwrap_or_default(),
            });
        }
        Adam::zero_grad(&self.models.vs_g);
        total.backward();
        self.adam_g.step(&self.models.vs_g);
        debug_assert!(self.frozen_untouched(), "frozen networks received gradients");
        self.step = step;
        self.history.push(report);
        Ok(report)
    }

    /// True when neither the feature extractor nor the attribute classifier
    /// holds a nonzero gradient.
    pub fn frozen_untouched(&self) -> bool {
        [&self.models.extractor.vs, &self.models.classifier.vs].iter().all(|vs| {
            vs.variables().values().all(|t| {
                let g = t.grad();
                !t.requires_grad() && (!g.defined() || g.abs().max().double_value(&[]) == 0.0)
            })
        })
    }

    /// Posterior parameters of `batch.x`, without gradient.
    pub fn posterior(&self, batch: &Batch) -> Result<PosteriorParams> {
        tch::no_grad(|| {
            let g = &self.models.generator;
            let a = self.attribute_embedding(&batch.labels)?;
            let feats = g.encode_pose(&batch.y)?;
            let a_map = if self.config.attribute_map { a.as_ref() } else { None };
            g.encode_posterior(&batch.x, &batch.y, &feats, a_map)
        })
    }

    /// Composite from the posterior mean of `batch.x`.
    pub fn reconstruct(&self, batch: &Batch) -> Result<Tensor> {
        let post = self.posterior(batch)?;
        tch::no_grad(|| {
            let g = &self.models.generator;
            let a = self.attribute_embedding(&batch.labels)?;
            let feats = g.encode_pose(&batch.y)?;
            let z_a = g.fuse_style(&post.mu, a.as_ref())?;
            compose(&g.decode(&feats, &z_a)?, &batch.masks)
        })
    }

    /// Part images and composite for pose `batch.y`, attributes
    /// `batch.labels` and latent `z`; `batch.x` is not read.
    pub fn synthesize(&self, batch: &Batch, z: &Tensor) -> Result<(GeneratorOutput, Tensor)> {
        tch::no_grad(|| {
            let g = &self.models.generator;
            let a = self.attribute_embedding(&batch.labels)?;
            let z_a = g.fuse_style(&z.to_kind(self.kind()), a.as_ref())?;
            let parts = g.generate(&batch.y.to_kind(self.kind()), &z_a)?;
            let fake = compose(&parts, &batch.masks)?;
            Ok((parts, fake))
        })
    }

    /// Per-head accuracy of the frozen classifier on `batch.x`.
    pub fn classifier_accuracy(&self, batch: &Batch) -> [f64; 3] {
        let m = &self.models;
        let logits = tch::no_grad(|| m.classifier.logits(&m.extractor.pooled(&batch.x.to_kind(self.kind()))));
        let targets = label_targets(&batch.labels);
        let acc = |i: usize| logits[i].argmax(1, false).eq_tensor(&targets[i]).to_kind(Kind::Double).mean(None).double_value(&[]);
        [acc(0), acc(1), acc(2)]
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (prefix, vs) in [("g/", &self.models.vs_g), ("d/", &self.models.vs_d), ("cls/", &self.models.classifier.vs)] {
            let mut vars: Vec<_> = vs.variables().into_iter().collect();
            vars.sort_by(|a, b| a.0.cmp(&b.0));
            out.extend(vars.into_iter().map(|(n, t)| (format!("{prefix}{n}"), t)));
        }
        for (prefix, opt) in [("adam_g", &self.adam_g), ("adam_d", &self.adam_d)] {
            for (n, t) in &opt.m {
                out.push((format!("{prefix}/m/{n}"), t.shallow_clone()));
            }
            for (n, t) in &opt.v {
                out.push((format!("{prefix}/v/{n}"), t.shallow_clone()));
            }
        }
        out
    }

    /// Writes weights, optimizer moments, RNG position, step and loss
    /// history.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            config_text: self.config.to_text(),
            config_hash: self.config.hash(),
            step: self.step,
            rng: self.rng.clone(),
            adam_g_steps: self.adam_g.steps,
            adam_d_steps: self.adam_d.steps,
            history: self.history.clone(),
            tensors: Vec::new(),
        };
        write_checkpoint(path, header, &self.named_tensors())
    }

    /// Restores a run. With `expected`, the checkpoint's config hash must
    /// match it exactly.
    pub fn load(path: &Path, expected: Option<&TrainConfig>) -> Result<Self> {
        let (header, mut tensors) = read_checkpoint(path)?;
        if let Some(e) = expected {
            if e.hash() != header.config_hash {
                return Err(Error::Checkpoint(format!(
                    "config hash {} does not match checkpoint hash {}",
                    e.hash(),
                    header.config_hash
                )));
            }
        }
        let config = TrainConfig::parse(&header.config_text)?;
        if config.hash() != header.config_hash {
            return Err(Error::Checkpoint("stored config does not reproduce its hash".into()));
        }
        let kind = tensors.values().next().map(|t| t.kind()).unwrap_or(Kind::Float);
        let mut models = Models::build(&config, kind)?;
        let mut take = |name: &str, target: &Tensor| -> Result<()> {
            let src = tensors.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if src.size() != target.size() {
                return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}, expected {:?}", src.size(), target.size())));
            }
            tch::no_grad(|| target.shallow_clone().copy_(&src));
            Ok(())
        };
        for (prefix, vs) in [("g/", &models.vs_g), ("d/", &models.vs_d), ("cls/", &models.classifier.vs)] {
            for (n, t) in vs.variables() {
                take(&format!("{prefix}{n}"), &t)?;
            }
        }
        models.classifier.freeze();
        let mut restore = |prefix: &str, steps: u64, lr: f64| -> Adam {
            let mut opt = Adam::new(lr, config.beta1, config.beta2);
            opt.steps = steps;
            let keys: Vec<String> = tensors.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
            for k in keys {
                let t = tensors.remove(&k).unwrap();
                let rest = &k[prefix.len()..];
                if let Some(n) = rest.strip_prefix("m/") {
                    opt.m.insert(n.to_string(), t);
                } else if let Some(n) = rest.strip_prefix("v/") {
                    opt.v.insert(n.to_string(), t);
                }
            }
            opt
        };
        let adam_g = restore("adam_g/", header.adam_g_steps, config.lr_g);
        let adam_d = restore("adam_d/", header.adam_d_steps, config.lr_d);
        Ok(TrainState {
            config,
            models,
            adam_g,
            adam_d,
            step: header.step,
            rng: header.rng,
            history: header.history,
        })
    }
}

/// Full-batch fit of the linear attribute heads on frozen pooled features,
/// then freezes them.
fn fit_classifier(models: &mut Models, all: &Batch, steps: usize) -> Result<()> {
    let kind = models.kind();
    let feats = tch::no_grad(|| {
        let x = all.x.to_kind(kind);
        let chunks: Vec<Tensor> = x.split(256, 0).iter().map(|c| models.extractor.pooled(c)).collect();
        Tensor::cat(&chunks, 0)
    });
    let targets = label_targets(&all.labels);
    let mut opt = Adam::new(CLASSIFIER_LR, 0.9, 0.999);
    for _ in 0..steps {
        Adam::zero_grad(&models.classifier.vs);
        let l = models.classifier.logits(&feats);
        let loss = cross_entropy(&l[0], &targets[0]) + cross_entropy(&l[1], &targets[1]) + cross_entropy(&l[2], &targets[2]);
        loss.backward();
        opt.step(&models.classifier.vs);
    }
    Adam::zero_grad(&models.classifier.vs);
    models.classifier.freeze();
    Ok(())
}

/// Trains until `state.step == until`, appending one JSON record per step
/// to `log`. On a non-finite loss a dump is written next to the log and
/// the error is returned.
pub fn run(state: &mut TrainState, data: &TrainData, until: u64, log: Option<&Path>) -> Result<()> {
    let mut writer = match log {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let f = std::fs::OpenOptions::new().create(true).append(true).open(p).map_err(|e| Error::io(p, e))?;
            Some(std::io::BufWriter::new(f))
        }
        None => None,
    };
    while state.step < until {
        match state.train_step(data) {
            Ok(report) => {
                if let (Some(w), Some(p)) = (writer.as_mut(), log) {
                    let line = serde_json::to_string(&report).map_err(|e| Error::io(p, e))?;
                    writeln!(w, "{line}").map_err(|e| Error::io(p, e))?;
                }
                if report.step % 100 == 0 {
                    log::info!("step {} total {:.4} d {:.4}", report.step, report.total, report.d_loss);
                }
            }
            Err(err @ Error::NonFinite { .. }) => {
                if let Some(p) = log {
                    let dump = p.with_file_name("nonfinite_dump.json");
                    let body = serde_json::json!({
                        "error": err.to_string(),
                        "config_hash": state.config.hash(),
                        "recent": state.history.iter().rev().take(20).collect::<Vec<_>>(),
                    });
                    std::fs::write(&dump, body.to_string()).map_err(|e| Error::io(&dump, e))?;
                }
                return Err(err);
            }
            Err(e) => return Err(e),
        }
    }
    if let (Some(w), Some(p)) = (writer.as_mut(), log) {
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}
