use rand::Rng;
use tch::{Kind, Tensor};

use super::config::{PoseFormat, TrainConfig};
use crate::error::{param, Result};
use crate::generator::PartMasks;
use crate::imageops::{batch_to_tensor, masks_to_tensor};
use crate::posekit::{augment, render_heatmaps, render_skeleton, AugmentParams, Palette, Pose};
use crate::synthdata::{weights_from_keys, AttributeLabels, Corpus, FrameRecord, WeightedSampler};

/// Conditioning image for one pose, `(C, H, W)` float.
pub fn conditioning(pose: &Pose, config: &TrainConfig) -> Result<Tensor> {
    match config.pose_format {
        PoseFormat::Skeleton => {
            let sk = render_skeleton(pose, &Palette::default(), config.stroke_width)?;
            Ok(batch_to_tensor(&[&sk.pixels])?.squeeze_dim(0))
        }
        PoseFormat::Heatmap => {
            let hm = render_heatmaps(pose, config.tau)?;
            let (k, h, w) = hm.channels.dim();
            let data: Vec<f32> = hm.channels.iter().map(|&v| v as f32).collect();
            Ok(Tensor::from_slice(&data).view([k as i64, h as i64, w as i64]))
        }
    }
}

/// One minibatch. `masks` are the composition masks used in training:
/// disjoint, with the torso extended over the background.
#[derive(Debug)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub masks: PartMasks,
    pub labels: Vec<AttributeLabels>,
    pub indices: Vec<usize>,
}

impl Batch {
    /// Builds tensors directly from frame records.
    pub fn from_frames(frames: &[&FrameRecord], config: &TrainConfig) -> Result<Batch> {
        if frames.is_empty() {
            return Err(param("a batch needs at least one frame"));
        }
        let size = config.size as usize;
        for f in frames {
            if f.pose.canvas != (size, size) {
                return Err(param(format!("frame {}x{} does not match configured size {size}", f.pose.canvas.0, f.pose.canvas.1)));
            }
        }
        let images: Vec<_> = frames.iter().map(|f| &f.image).collect();
        let x = batch_to_tensor(&images)?;
        let y = Tensor::stack(&frames.iter().map(|f| conditioning(&f.pose, config)).collect::<Result<Vec<_>>>()?, 0);
        let m = |sel: fn(&FrameRecord) -> &crate::imageops::Mask| -> Result<Tensor> {
            Ok(masks_to_tensor(&frames.iter().map(|f| sel(f)).collect::<Vec<_>>())?.to_kind(Kind::Bool))
        };
        let raw = PartMasks {
            head: m(|f| &f.mask_head)?,
            hand: m(|f| &f.mask_hand)?,
            torso: m(|f| &f.mask_torso)?,
        };
        Ok(Batch {
            x,
            y,
            masks: raw.torso_to_background(),
            labels: frames.iter().map(|f| f.attributes).collect(),
            indices: Vec::new(),
        })
    }

    pub fn to_kind(&self, kind: Kind) -> Batch {
        Batch {
            x: self.x.to_kind(kind),
            y: self.y.to_kind(kind),
            masks: PartMasks {
                head: self.masks.head.shallow_clone(),
                hand: self.masks.hand.shallow_clone(),
                torso: self.masks.torso.shallow_clone(),
            },
            labels: self.labels.clone(),
            indices: self.indices.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// The whole training set as stacked tensors plus the balanced sampler.
/// With augmentation on, frames are kept and batches are rebuilt per draw.
pub struct TrainData {
    all: Batch,
    frames: Option<Vec<FrameRecord>>,
    pub sampler: WeightedSampler,
    config: TrainConfig,
}

impl TrainData {
    pub fn new(corpus: &Corpus, config: &TrainConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(param("training corpus is empty"));
        }
        let refs: Vec<&FrameRecord> = corpus.frames.iter().collect();
        let all = Batch::from_frames(&refs, config)?;
        let keys: Vec<String> = corpus.frames.iter().map(|f| f.attributes.combination_key()).collect();
        Ok(TrainData {
            all,
            frames: config.augment.then(|| corpus.frames.clone()),
            sampler: weights_from_keys(&keys)?,
            config: config.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.all.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all.is_empty()
    }

    /// Every frame, in corpus order.
    pub fn all(&self) -> &Batch {
        &self.all
    }

    /// Rows `indices` of the precomputed tensors.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let idx = Tensor::from_slice(&indices.iter().map(|&i| i as i64).collect::<Vec<_>>());
        let pick = |t: &Tensor| t.index_select(0, &idx);
        Batch {
            x: pick(&self.all.x),
            y: pick(&self.all.y),
            masks: PartMasks {
                head: pick(&self.all.masks.head),
                hand: pick(&self.all.masks.hand),
                torso: pick(&self.all.masks.torso),
            },
            labels: indices.iter().map(|&i| self.all.labels[i]).collect(),
            indices: indices.to_vec(),
        }
    }

    /// Draws a balanced batch; augmentation consumes `rng` after the indices.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Batch> {
        let indices = self.sampler.batch(rng, self.config.batch);
        match &self.frames {
            None => Ok(self.select(&indices)),
            Some(frames) => {
                let params = AugmentParams::default();
                let aug = indices.iter().map(|&i| augment(&frames[i], &params, rng)).collect::<Result<Vec<_>>>()?;
                let mut b = Batch::from_frames(&aug.iter().collect::<Vec<_>>(), &self.config)?;
                b.indices = indices;
                Ok(b)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_corpus, CorpusConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus() -> Corpus {
        generate_corpus(&CorpusConfig {
            signers: 4,
            frames: 3,
            size: 32,
            seed: 5,
            amplitude: 1.0,
        })
        .unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            size: 32,
            batch: 5,
            channels: vec![4, 8, 8],
            patch: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batches_have_consistent_shapes_and_partition_masks() {
        let c = corpus();
        let data = TrainData::new(&c, &config()).unwrap();
        assert_eq!(data.len(), 12);
        let b = data.sample(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(b.x.size(), [5, 3, 32, 32]);
        assert_eq!(b.y.size(), [5, 3, 32, 32]);
        let cover = b.masks.head.to_kind(Kind::Int) + b.masks.hand.to_kind(Kind::Int) + b.masks.torso.to_kind(Kind::Int);
        assert!(cover.eq(1).all().int64_value(&[]) == 1);
        // selected rows equal the frames they came from
        let direct = Batch::from_frames(&[&c.frames[b.indices[0]]], &config()).unwrap();
        assert!(direct.x.equal(&b.x.narrow(0, 0, 1)));
    }

    #[test]
    fn heatmap_conditioning_has_one_channel_per_keypoint() {
        let c = corpus();
        let cfg = TrainConfig {
            pose_format: PoseFormat::Heatmap,
            tau: 1.5,
            ..config()
        };
        let y = conditioning(&c.frames[0].pose, &cfg).unwrap();
        assert_eq!(y.size(), [crate::posekit::NUM_KEYPOINTS as i64, 32, 32]);
    }

    #[test]
    fn augmented_sampling_is_reproducible() {
        let c = corpus();
        let cfg = TrainConfig { augment: true, ..config() };
        let data = TrainData::new(&c, &cfg).unwrap();
        let a = data.sample(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = data.sample(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(a.x.equal(&b.x) && a.y.equal(&b.y));
        assert!(data.sample(&mut ChaCha8Rng::seed_from_u64(4)).is_ok());
    }
}
