use tch::Tensor;

use crate::error::{param, Result};

/// The three part images, each `(B, 3, H, W)` in `[0, 1]`.
#[derive(Debug)]
pub struct GeneratorOutput {
    pub head: Tensor,
    pub hand: Tensor,
    pub torso: Tensor,
}

/// Boolean part masks, each `(B, 1, H, W)`.
#[derive(Debug)]
pub struct PartMasks {
    pub head: Tensor,
    pub hand: Tensor,
    pub torso: Tensor,
}

impl PartMasks {
    /// Applies hand ≻ head ≻ torso so the masks become disjoint.
    pub fn disjoint(&self) -> PartMasks {
        let hand = self.hand.shallow_clone();
        let head = self.head.logical_and(&hand.logical_not());
        let torso = self.torso.logical_and(&hand.logical_or(&head).logical_not());
        PartMasks { head, hand, torso }
    }

    /// Torso extended to every pixel that is neither hand nor head.
    pub fn torso_to_background(&self) -> PartMasks {
        let d = self.disjoint();
        let torso = d.hand.logical_or(&d.head).logical_not();
        PartMasks {
            head: d.head,
            hand: d.hand,
            torso,
        }
    }

    pub fn to_kind(&self, kind: tch::Kind) -> [Tensor; 3] {
        [self.head.to_kind(kind), self.hand.to_kind(kind), self.torso.to_kind(kind)]
    }
}

/// `x̂ = x̂_hand·m_hand + x̂_head·m_head + x̂_torso·m_torso` after the
/// priority rule. Selection is done with `where`, so each pixel is copied
/// bit-for-bit from exactly one part (or is 0).
pub fn compose(parts: &GeneratorOutput, masks: &PartMasks) -> Result<Tensor> {
    let s = parts.head.size();
    for (name, t) in [("hand", &parts.hand), ("torso", &parts.torso)] {
        if t.size() != s {
            return Err(param(format!("{name} part has shape {:?}, head has {s:?}", t.size())));
        }
    }
    for (name, m) in [("head", &masks.head), ("hand", &masks.hand), ("torso", &masks.torso)] {
        let ms = m.size();
        if ms.len() != 4 || ms[0] != s[0] || ms[1] != 1 || ms[2..] != s[2..] {
            return Err(param(format!("{name} mask has shape {ms:?}, parts are {s:?}")));
        }
    }
    let as_bool = |m: &Tensor| m.to_kind(tch::Kind::Bool);
    let zero = parts.head.zeros_like();
    let torso = parts.torso.where_self(&as_bool(&masks.torso), &zero);
    let head = parts.head.where_self(&as_bool(&masks.head), &torso);
    Ok(parts.hand.where_self(&as_bool(&masks.hand), &head))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::{Device, Kind};

    fn part(v: f64) -> Tensor {
        Tensor::full([1, 3, 2, 2], v, (Kind::Float, Device::Cpu))
    }

    fn mask(bits: [bool; 4]) -> Tensor {
        Tensor::from_slice(&bits).reshape([1, 1, 2, 2])
    }

    #[test]
    fn priority_and_background() {
        let parts = GeneratorOutput {
            head: part(0.2),
            hand: part(0.5),
            torso: part(0.9),
        };
        let masks = PartMasks {
            head: mask([true, true, false, false]),
            hand: mask([true, false, false, false]),
            torso: mask([true, true, true, false]),
        };
        let out = compose(&parts, &masks).unwrap();
        let got = Vec::<f32>::try_from(&out.get(0).get(0).flatten(0, 1)).unwrap();
        assert_eq!(got, vec![0.5, 0.2, 0.9, 0.0]);
        let none = PartMasks {
            head: mask([false; 4]),
            hand: mask([false; 4]),
            torso: mask([false; 4]),
        };
        assert_eq!(compose(&parts, &none).unwrap().abs().max().double_value(&[]), 0.0);
    }

    #[test]
    fn disjoint_masks_partition() {
        let masks = PartMasks {
            head: mask([true, true, false, false]),
            hand: mask([true, false, false, true]),
            torso: mask([true, true, true, true]),
        };
        let d = masks.disjoint();
        let sum = d.head.to_kind(Kind::Int64) + d.hand.to_kind(Kind::Int64) + d.torso.to_kind(Kind::Int64);
        assert_eq!(sum.max().int64_value(&[]), 1);
        let bg = masks.torso_to_background();
        let cover = bg.head.logical_or(&bg.hand).logical_or(&bg.torso);
        assert!(bool::try_from(cover.all()).unwrap());
    }
}
