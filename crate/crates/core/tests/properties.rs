mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use tch::{nn, Device, Kind, Tensor};

use penet::critics::{adversarial_losses, feature_matching_loss, Discriminator, DiscriminatorConfig, ScaleOutput};
use penet::evalkit::pixel_metrics;
use penet::generator::{compose, GeneratorOutput, PartMasks};
use penet::losses::{edge_loss, perceptual_loss, FeatureExtractor};
use penet::nn::deterministic_init;
use penet::pevae::{gaussian, kl_loss, reparameterize_with, PosteriorParams};
use penet::posekit::{render_heatmaps, Pose, NUM_KEYPOINTS};
use penet::synthdata::{generate_corpus, weighted_sampler, CorpusConfig};
use penet::trainer::Adam;

use common::{fd_check, uniform};

fn params(mu: Vec<f64>, lv: Vec<f64>) -> PosteriorParams {
    let m = mu.len() as i64;
    PosteriorParams {
        mu: Tensor::from_slice(&mu).view([1, m]).set_requires_grad(true),
        log_var: Tensor::from_slice(&lv).view([1, m]).set_requires_grad(true),
    }
}

fn image(seed: u64, shape: &[i64]) -> Tensor {
    uniform(&mut ChaCha8Rng::seed_from_u64(seed), shape, 0.0, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heatmaps_stay_in_the_unit_interval(
        kps in prop::collection::vec((0.0f64..40.0, 0.0f64..30.0, any::<bool>()), NUM_KEYPOINTS),
        tau in 0.3f64..12.0,
    ) {
        let pose = Pose::new(kps.iter().map(|k| [k.0, k.1]).collect(), kps.iter().map(|k| k.2).collect(), (41, 31)).unwrap();
        let hm = render_heatmaps(&pose, tau).unwrap();
        prop_assert!(hm.channels.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    /// KL is non-negative and vanishes only at the standard normal.
    #[test]
    fn kl_is_nonnegative(entries in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..8)) {
        let (mu, lv): (Vec<f64>, Vec<f64>) = entries.iter().cloned().unzip();
        let at_origin = entries.iter().all(|(m, l)| *m == 0.0 && *l == 0.0);
        let kl = kl_loss(&params(mu, lv)).double_value(&[]);
        prop_assert!(kl >= 0.0);
        prop_assert_eq!(kl == 0.0, at_origin);
    }

    /// d KL / dμ = μ and d KL / d log σ² = (σ² − 1) / 2, analytically and
    /// against finite differences.
    #[test]
    fn kl_gradients_are_closed_form(entries in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..6), seed in any::<u64>()) {
        let (mu, lv): (Vec<f64>, Vec<f64>) = entries.iter().cloned().unzip();
        let p = params(mu.clone(), lv.clone());
        kl_loss(&p).backward();
        let gm = Vec::<f64>::try_from(&p.mu.grad().view([-1])).unwrap();
        let gl = Vec::<f64>::try_from(&p.log_var.grad().view([-1])).unwrap();
        for i in 0..mu.len() {
            prop_assert!((gm[i] - mu[i]).abs() <= 1e-12);
            prop_assert!((gl[i] - 0.5 * (lv[i].exp() - 1.0)).abs() <= 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let loss = || kl_loss(&PosteriorParams { mu: p.mu.shallow_clone(), log_var: p.log_var.shallow_clone() }).double_value(&[]);
        let (e1, _) = fd_check(&p.mu, 2, &mut rng, &loss, &p.mu.grad());
        let (e2, _) = fd_check(&p.log_var, 2, &mut rng, &loss, &p.log_var.grad());
        prop_assert!(e1 < 1e-4 && e2 < 1e-4, "{} {}", e1, e2);
    }

    /// Every reconstruction loss is non-negative and exactly zero on
    /// identical inputs.
    #[test]
    fn losses_vanish_on_identical_inputs(a in any::<u64>(), b in any::<u64>()) {
        let ext = FeatureExtractor::new(Kind::Double);
        let (x, y) = (image(a, &[1, 3, 16, 16]), image(b, &[1, 3, 16, 16]));
        prop_assert_eq!(perceptual_loss(&x, &x, &ext).unwrap().double_value(&[]), 0.0);
        prop_assert_eq!(edge_loss(&x, &x).unwrap().double_value(&[]), 0.0);
        prop_assert!(perceptual_loss(&x, &y, &ext).unwrap().double_value(&[]) >= 0.0);
        prop_assert!(edge_loss(&x, &y).unwrap().double_value(&[]) >= 0.0);
        let feats = |t: &Tensor| vec![ScaleOutput { logits: t.shallow_clone(), features: vec![t.shallow_clone(), t * 2.0] }];
        prop_assert_eq!(feature_matching_loss(&feats(&x), &feats(&x)).unwrap().double_value(&[]), 0.0);
        prop_assert!(feature_matching_loss(&feats(&x), &feats(&y)).unwrap().double_value(&[]) >= 0.0);
    }

    /// With disjoint masks each part is copied bitwise into its own mask.
    #[test]
    fn composition_copies_each_part_inside_its_mask(seed in any::<u64>(), h in 2i64..10, w in 2i64..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = GeneratorOutput {
            head: uniform(&mut rng, &[1, 3, h, w], 0.0, 1.0).to_kind(Kind::Float),
            hand: uniform(&mut rng, &[1, 3, h, w], 0.0, 1.0).to_kind(Kind::Float),
            torso: uniform(&mut rng, &[1, 3, h, w], 0.0, 1.0).to_kind(Kind::Float),
        };
        // one label per pixel: 0 head, 1 hand, 2 torso, 3 background
        let label = uniform(&mut rng, &[1, 1, h, w], 0.0, 4.0).floor();
        let m = |k: f64| label.eq(k);
        let masks = PartMasks { head: m(0.0), hand: m(1.0), torso: m(2.0) };
        let out = compose(&parts, &masks).unwrap();
        for (part, mask) in [(&parts.head, &masks.head), (&parts.hand, &masks.hand), (&parts.torso, &masks.torso)] {
            let sel = mask.expand_as(part);
            prop_assert!(out.masked_select(&sel).equal(&part.masked_select(&sel)));
        }
        let bg = m(3.0).expand_as(&out);
        prop_assert!(out.masked_select(&bg).eq(0.0).all().int64_value(&[]) == 1);
    }
}

#[test]
fn masked_ssim_of_identical_images_is_one_per_region() {
    let corpus = generate_corpus(&CorpusConfig {
        signers: 2,
        frames: 2,
        size: 64,
        seed: 3,
        amplitude: 1.0,
    })
    .unwrap();
    for f in &corpus.frames {
        for m in [&f.mask_head, &f.mask_hand, &f.mask_torso] {
            if let Some(pm) = pixel_metrics(&f.image, &f.image, Some(m)).unwrap() {
                assert!((pm.ssim - 1.0).abs() < 1e-12);
            }
        }
    }
}

/// Combination frequencies under the weighted sampler pass a χ² test for
/// uniformity over 10,000 draws.
#[test]
fn weighted_sampler_balances_combinations() {
    let corpus = generate_corpus(&CorpusConfig {
        signers: 7,
        frames: 2,
        size: 32,
        seed: 11,
        amplitude: 1.0,
    })
    .unwrap();
    let keys: Vec<String> = corpus.manifest.records.iter().map(|r| r.attributes.combination_key()).collect();
    let sampler = weighted_sampler(&corpus.manifest).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut counts: BTreeMap<&str, f64> = keys.iter().map(|k| (k.as_str(), 0.0)).collect();
    let draws = 10_000;
    for i in sampler.batch(&mut rng, draws) {
        *counts.get_mut(keys[i].as_str()).unwrap() += 1.0;
    }
    let k = counts.len();
    assert!(k >= 2, "corpus has a single combination");
    let expected = draws as f64 / k as f64;
    let stat: f64 = counts.values().map(|c| (c - expected).powi(2) / expected).sum();
    let p = ChiSquared::new((k - 1) as f64).unwrap().sf(stat);
    assert!(p > 0.01, "χ² = {stat:.2} over {k} combinations, p = {p:.4}");
}

/// Averaged pathwise gradients of the reparameterized draw: identity in μ,
/// zero in log σ².
#[test]
fn reparameterization_gradient_is_unbiased() {
    let m = 4;
    let mut mu = Tensor::from_slice(&[0.3f64, -1.0, 2.0, 0.0]).view([1, m]).set_requires_grad(true);
    let mut lv = Tensor::from_slice(&[0.0f64, 0.5, -0.7, 1.2]).view([1, m]).set_requires_grad(true);
    let n = 10_000;
    let eps = gaussian(&mut ChaCha8Rng::seed_from_u64(13), n, m, Kind::Double);
    let p = PosteriorParams {
        mu: mu.expand([n, m], false),
        log_var: lv.expand([n, m], false),
    };
    for j in 0..m {
        let z = reparameterize_with(&p, &eps);
        mu.zero_grad();
        lv.zero_grad();
        (z.select(1, j).sum(Kind::Double) / n as f64).backward();
        let gm = Vec::<f64>::try_from(&mu.grad().view([-1])).unwrap();
        let gl = Vec::<f64>::try_from(&lv.grad().view([-1])).unwrap();
        for i in 0..m as usize {
            let want = if i == j as usize { 1.0 } else { 0.0 };
            assert!((gm[i] - want).abs() <= 0.05, "dz_{j}/dmu_{i} = {}", gm[i]);
            assert!(gl[i].abs() <= 0.05, "dz_{j}/dlogvar_{i} = {}", gl[i]);
        }
    }
}

/// A critic fitted to separate two fixed batches scores worse when their
/// labels are swapped.
#[test]
fn flipped_labels_raise_the_critic_loss() {
    let mut vs = nn::VarStore::new(Device::Cpu);
    let cfg = DiscriminatorConfig {
        n_scales: 2,
        layers_per_scale: 4,
        in_channels: 12,
        base_channels: 4,
    };
    let d = Discriminator::new(vs.root(), &cfg).unwrap();
    vs.double();
    deterministic_init(&vs, 14);
    let y = image(15, &[2, 3, 16, 16]);
    let real = image(16, &[2, 9, 16, 16]);
    let fake = image(17, &[2, 9, 16, 16]) * 0.3;
    let logits = |parts: &Tensor| d.forward(&y, parts).unwrap().into_iter().map(|s| s.logits).collect::<Vec<_>>();
    let mut opt = Adam::new(2e-3, 0.5, 0.999);
    for _ in 0..30 {
        Adam::zero_grad(&vs);
        adversarial_losses(&logits(&real), &logits(&fake)).unwrap().0.backward();
        opt.step(&vs);
    }
    let (lr, lf) = tch::no_grad(|| (logits(&real), logits(&fake)));
    let fitted = adversarial_losses(&lr, &lf).unwrap().0.double_value(&[]);
    let flipped = adversarial_losses(&lf, &lr).unwrap().0.double_value(&[]);
    assert!(flipped > fitted, "flipped {flipped} vs fitted {fitted}");
}
