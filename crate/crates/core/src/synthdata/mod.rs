//! Procedural synthetic signer corpus: appearance vocabulary, motion model,
//! rasterizer, on-disk layout and the class-balancing sampler.

mod corpus;
mod motion;
mod render;
mod sampler;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::imageops::{Mask, Rgb};
use crate::posekit::Pose;

pub use corpus::{
    generate_corpus, read_corpus, read_manifest, signer_id, signer_spec, write_corpus, Corpus, CorpusConfig, CorpusManifest, RecordEntry,
    SignerEntry,
};
pub use motion::{limb_lengths, rest_pose, sample_pose_sequence, BodyShape};
pub use render::{render_frame, skin_region, RenderedFrame};
pub use sampler::{weighted_sampler, weights_from_keys, WeightedSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkinTone {
    Tone1,
    Tone2,
    Tone3,
    Tone4,
}

impl SkinTone {
    pub const ALL: [SkinTone; 4] = [SkinTone::Tone1, SkinTone::Tone2, SkinTone::Tone3, SkinTone::Tone4];

    /// Palette RGB for the tone.
    pub fn rgb(self) -> [f32; 3] {
        match self {
            SkinTone::Tone1 => [0.96, 0.80, 0.69],
            SkinTone::Tone2 => [0.85, 0.64, 0.47],
            SkinTone::Tone3 => [0.62, 0.42, 0.28],
            SkinTone::Tone4 => [0.36, 0.23, 0.15],
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    A,
    B,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::A, Gender::B];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ethnicity {
    E1,
    E2,
}

impl Ethnicity {
    pub const ALL: [Ethnicity; 2] = [Ethnicity::E1, Ethnicity::E2];
}

macro_rules! label_text {
    ($ty:ty, $attr:literal, $($variant:path => $text:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self, Error> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(Error::Vocabulary { attribute: $attr.into(), label: other.into() }),
                }
            }
        }
    };
}

label_text!(SkinTone, "skin_tone", SkinTone::Tone1 => "tone1", SkinTone::Tone2 => "tone2", SkinTone::Tone3 => "tone3", SkinTone::Tone4 => "tone4");
label_text!(Gender, "gender_proxy", Gender::A => "A", Gender::B => "B");
label_text!(Ethnicity, "ethnicity_proxy", Ethnicity::E1 => "E1", Ethnicity::E2 => "E2");

/// Categorical attribute labels of one signer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeLabels {
    pub skin_tone: SkinTone,
    pub gender: Gender,
    pub ethnicity: Ethnicity,
}

impl AttributeLabels {
    /// `"tone1/A/E1"` style key of the full combination.
    pub fn combination_key(&self) -> String {
        format!("{}/{}/{}", self.skin_tone, self.gender, self.ethnicity)
    }

    /// `attribute:value` keys, one per attribute.
    pub fn value_keys(&self) -> [String; 3] {
        [
            format!("skin_tone:{}", self.skin_tone),
            format!("gender_proxy:{}", self.gender),
            format!("ethnicity_proxy:{}", self.ethnicity),
        ]
    }

    pub fn parse(skin_tone: &str, gender: &str, ethnicity: &str) -> Result<Self, Error> {
        Ok(AttributeLabels {
            skin_tone: skin_tone.parse()?,
            gender: gender.parse()?,
            ethnicity: ethnicity.parse()?,
        })
    }
}

/// Full appearance description; rendering is a pure function of this and a
/// pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignerSpec {
    pub labels: AttributeLabels,
    pub clothing_color: [f32; 3],
    pub body_scale: f64,
}

impl SignerSpec {
    pub fn skin_rgb(&self) -> [f32; 3] {
        self.labels.skin_tone.rgb()
    }

    /// Torso and shoulder width multiplier.
    pub fn width_factor(&self) -> f64 {
        match self.labels.gender {
            Gender::A => 0.88,
            Gender::B => 1.12,
        }
    }

    pub fn hair_rgb(&self) -> [f32; 3] {
        match self.labels.ethnicity {
            Ethnicity::E1 => [0.30, 0.18, 0.08],
            Ethnicity::E2 => [0.07, 0.06, 0.06],
        }
    }
}

/// One synthetic training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub image: Rgb,
    pub pose: Pose,
    pub mask_head: Mask,
    pub mask_hand: Mask,
    pub mask_torso: Mask,
    pub attributes: AttributeLabels,
    pub signer_id: String,
}

impl FrameRecord {
    /// Union of the three part masks.
    pub fn foreground(&self) -> Mask {
        let mut fg = self.mask_head.clone();
        fg.zip_mut_with(&self.mask_hand, |a, &b| *a |= b);
        fg.zip_mut_with(&self.mask_torso, |a, &b| *a |= b);
        fg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip_through_text() {
        for t in SkinTone::ALL {
            assert_eq!(t.to_string().parse::<SkinTone>().unwrap(), t);
        }
        assert!(matches!("tone9".parse::<SkinTone>(), Err(Error::Vocabulary { .. })));
        let l = AttributeLabels::parse("tone2", "B", "E1").unwrap();
        assert_eq!(l.combination_key(), "tone2/B/E1");
        assert!(AttributeLabels::parse("tone2", "C", "E1").is_err());
    }
}
