use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tch::{Kind, Tensor};

use crate::error::{shape, Result};
use crate::synthdata::{AttributeLabels, Ethnicity, Gender, SkinTone};

pub const ATTRIBUTE_DIM: usize = 512;
const COMBINATIONS: usize = 16;
const STUB_SEED: u64 = 0x5eed_a77b;

/// Which labels condition the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributeMode {
    All,
    /// Gender and ethnicity are held at their first value before embedding.
    SkinTone,
    /// Unconditional: the style is fused from `z` alone.
    None,
}

impl AttributeMode {
    pub fn project(self, labels: &AttributeLabels) -> Option<AttributeLabels> {
        match self {
            AttributeMode::All => Some(*labels),
            AttributeMode::SkinTone => Some(AttributeLabels {
                skin_tone: labels.skin_tone,
                gender: Gender::A,
                ethnicity: Ethnicity::E1,
            }),
            AttributeMode::None => None,
        }
    }
}

/// Maps attribute labels to a 512-vector. Implementations must be frozen:
/// the same labels always give the same vector.
pub trait AttributeEncoder: Send + Sync {
    fn embed(&self, labels: &AttributeLabels) -> Result<Vec<f32>>;
}

/// Fixed random orthonormal projection of the one-hot label combination,
/// scaled by `√512` so entries have unit variance. Distinct combinations are
/// orthogonal.
#[derive(Debug, Clone)]
pub struct OrthogonalStub {
    basis: DMatrix<f64>,
}

impl Default for OrthogonalStub {
    fn default() -> Self {
        OrthogonalStub::new(STUB_SEED)
    }
}

impl OrthogonalStub {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::<f64>::from_fn(ATTRIBUTE_DIM, COMBINATIONS, |_, _| StandardNormal.sample(&mut rng));
        let basis = g.qr().q() * (ATTRIBUTE_DIM as f64).sqrt();
        OrthogonalStub { basis }
    }

    fn combination_index(labels: &AttributeLabels) -> usize {
        labels.skin_tone.index() * 4 + labels.gender as usize * 2 + labels.ethnicity as usize
    }
}

impl AttributeEncoder for OrthogonalStub {
    fn embed(&self, labels: &AttributeLabels) -> Result<Vec<f32>> {
        let col = self.basis.column(Self::combination_index(labels));
        Ok(col.iter().map(|&v| v as f32).collect())
    }
}

/// Parses text labels and embeds them.
pub fn encode_attribute(encoder: &dyn AttributeEncoder, skin_tone: &str, gender: &str, ethnicity: &str) -> Result<Vec<f32>> {
    encoder.embed(&AttributeLabels::parse(skin_tone, gender, ethnicity)?)
}

/// `(B, 512)` embedding batch, or `None` in unconditional mode.
pub fn embed_batch(encoder: &dyn AttributeEncoder, mode: AttributeMode, labels: &[AttributeLabels], kind: Kind) -> Result<Option<Tensor>> {
    let mut data = Vec::with_capacity(labels.len() * ATTRIBUTE_DIM);
    for l in labels {
        match mode.project(l) {
            Some(p) => {
                let v = encoder.embed(&p)?;
                if v.len() != ATTRIBUTE_DIM {
                    return Err(shape(format!("attribute encoder returned {} values, expected {ATTRIBUTE_DIM}", v.len())));
                }
                data.extend(v);
            }
            None => return Ok(None),
        }
    }
    Ok(Some(Tensor::from_slice(&data).reshape([labels.len() as i64, ATTRIBUTE_DIM as i64]).to_kind(kind)))
}

/// All sixteen label combinations, tone slowest.
pub fn all_labels() -> Vec<AttributeLabels> {
    let mut out = Vec::new();
    for skin_tone in SkinTone::ALL {
        for gender in Gender::ALL {
            for ethnicity in Ethnicity::ALL {
                out.push(AttributeLabels {
                    skin_tone,
                    gender,
                    ethnicity,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn stub_is_frozen_and_orthogonal() {
        let stub = OrthogonalStub::default();
        let labels = all_labels();
        assert_eq!(labels.len(), 16);
        let embs: Vec<Vec<f32>> = labels.iter().map(|l| stub.embed(l).unwrap()).collect();
        assert_eq!(embs[0].len(), 512);
        assert_eq!(embs[3], OrthogonalStub::default().embed(&labels[3]).unwrap());
        for i in 0..16 {
            let norm: f64 = embs[i].iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 512f64.sqrt()).abs() < 1e-3);
            for j in 0..i {
                assert!(cosine(&embs[i], &embs[j]).abs() < 0.5);
            }
        }
    }

    #[test]
    fn unknown_text_label_is_a_vocabulary_error() {
        let stub = OrthogonalStub::default();
        assert!(matches!(encode_attribute(&stub, "tone7", "A", "E1"), Err(Error::Vocabulary { .. })));
        assert!(encode_attribute(&stub, "tone1", "A", "E1").is_ok());
    }
}
