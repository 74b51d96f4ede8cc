use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::imageops::{Mask, Rgb};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub ssim: f64,
    pub psnr: f64,
}

/// `10·log10(1 / MSE)` for unit-range images, capped at [`PSNR_CAP`].
pub fn psnr(x: &Rgb, y: &Rgb) -> Result<f64> {
    if x.dim() != y.dim() || x.is_empty() {
        return Err(param(format!("psnr needs equal non-empty shapes, got {:?} and {:?}", x.dim(), y.dim())));
    }
    let mse = x.iter().zip(y).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / x.len() as f64;
    Ok(if mse <= 0.0 { PSNR_CAP } else { (-10.0 * mse.log10()).min(PSNR_CAP) })
}

/// Normalized 1-D Gaussian of odd length `n`.
fn gaussian_window(n: usize) -> Vec<f64> {
    let c = (n / 2) as f64;
    let w: Vec<f64> = (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|v| v / sum).collect()
}

/// Separable "valid" filtering.
fn filter_valid(img: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let n = w.len();
    let (h, wd) = img.dim();
    let rows: Array2<f64> = Array2::from_shape_fn((h, wd + 1 - n), |(r, c)| (0..n).map(|k| w[k] * img[[r, c + k]]).sum::<f64>());
    Array2::from_shape_fn((h + 1 - n, wd + 1 - n), |(r, c)| (0..n).map(|k| w[k] * rows[[r + k, c]]).sum::<f64>())
}

fn ssim_channel(x: &Array2<f64>, y: &Array2<f64>, w: &[f64]) -> f64 {
    let mx = filter_valid(x, w);
    let my = filter_valid(y, w);
    let sxx = filter_valid(&(x * x), w) - &mx * &mx;
    let syy = filter_valid(&(y * y), w) - &my * &my;
    let sxy = filter_valid(&(x * y), w) - &mx * &my;
    let num = (&mx * &my * 2.0 + C1) * (sxy * 2.0 + C2);
    let den = (&mx * &mx + &my * &my + C1) * (sxx + syy + C2);
    (num / den).mean().unwrap_or(1.0)
}

/// Mean SSIM over channels with an 11×11 Gaussian window (σ 1.5) over the
/// valid region. Crops smaller than the window use the largest odd window
/// that fits.
pub fn ssim(x: &Rgb, y: &Rgb) -> Result<f64> {
    if x.dim() != y.dim() || x.is_empty() {
        return Err(param(format!("ssim needs equal non-empty shapes, got {:?} and {:?}", x.dim(), y.dim())));
    }
    let (h, w, c) = x.dim();
    let mut n = WINDOW.min(h).min(w);
    if n % 2 == 0 {
        n -= 1;
    }
    let win = gaussian_window(n);
    let total: f64 = (0..c)
        .map(|ch| {
            let a = x.index_axis(Axis(2), ch).mapv(|v| v as f64);
            let b = y.index_axis(Axis(2), ch).mapv(|v| v as f64);
            ssim_channel(&a, &b, &win)
        })
        .sum();
    Ok(total / c as f64)
}

/// Bounding box `(r0, r1, c0, c1)` (exclusive ends) of a mask.
pub fn bounding_box(mask: &Mask) -> Option<(usize, usize, usize, usize)> {
    let mut bb: Option<(usize, usize, usize, usize)> = None;
    for ((r, c), &m) in mask.indexed_iter() {
        if m {
            bb = Some(match bb {
                None => (r, r + 1, c, c + 1),
                Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r + 1), c0.min(c), c1.max(c + 1)),
            });
        }
    }
    bb
}

/// Bounding-box crop of `img` with pixels outside `mask` zeroed.
pub fn masked_crop(img: &Rgb, mask: &Mask) -> Option<Rgb> {
    let (r0, r1, c0, c1) = bounding_box(mask)?;
    let mut crop = img.slice(s![r0..r1, c0..c1, ..]).to_owned();
    for ((r, c, _), v) in crop.indexed_iter_mut() {
        if !mask[[r0 + r, c0 + c]] {
            *v = 0.0;
        }
    }
    Some(crop)
}

/// SSIM and PSNR, optionally on the masked crop; `None` for an empty mask.
pub fn pixel_metrics(x: &Rgb, x_hat: &Rgb, mask: Option<&Mask>) -> Result<Option<PixelMetrics>> {
    if x.dim() != x_hat.dim() {
        return Err(param(format!("image shapes differ: {:?} vs {:?}", x.dim(), x_hat.dim())));
    }
    let (a, b) = match mask {
        None => (x.clone(), x_hat.clone()),
        Some(m) => {
            if m.dim() != (x.dim().0, x.dim().1) {
                return Err(param("mask does not match image size"));
            }
            match (masked_crop(x, m), masked_crop(x_hat, m)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Ok(None),
            }
        }
    };
    Ok(Some(PixelMetrics {
        ssim: ssim(&a, &b)?,
        psnr: psnr(&a, &b)?,
    }))
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    /// `None` when `values` is empty.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Summary {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Rgb {
        Array3::from_shape_fn((h, w, 3), |(r, c, k)| f(r, c, k))
    }

    #[test]
    fn identical_images_hit_the_caps() {
        let a = img(20, 24, |r, c, k| ((r * 7 + c * 3 + k) % 11) as f32 / 10.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let shifted = a.mapv(|v| v + 0.1);
        assert!((ssim(&shifted, &shifted).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_of_a_known_mse() {
        let a = img(8, 8, |_, _, _| 0.5);
        let b = img(8, 8, |_, _, _| 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn ssim_matches_a_direct_windowed_sum() {
        let a = img(13, 12, |r, c, k| (((r * 5 + c * 11 + k * 3) % 17) as f32) / 16.0);
        let b = img(13, 12, |r, c, k| (((r * 3 + c * 7 + k) % 13) as f32) / 12.0);
        // window shrinks to 11 (min dim 12 → 11): evaluate every valid offset directly
        let w = gaussian_window(11);
        let mut total = 0.0;
        for ch in 0..3 {
            let mut acc = 0.0;
            let mut count = 0.0;
            for r0 in 0..=2 {
                for c0 in 0..=1 {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let g = w[i] * w[j];
                            let (x, y) = (a[[r0 + i, c0 + j, ch]] as f64, b[[r0 + i, c0 + j, ch]] as f64);
                            mx += g * x;
                            my += g * y;
                            xx += g * x * x;
                            yy += g * y * y;
                            xy += g * x * y;
                        }
                    }
                    let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    acc += (2.0 * mx * my + C1) * (2.0 * cxy + C2) / ((mx * mx + my * my + C1) * (vx + vy + C2));
                    count += 1.0;
                }
            }
            total += acc / count;
        }
        assert!((ssim(&a, &b).unwrap() - total / 3.0).abs() < 1e-12);
    }

    #[test]
    fn masked_metrics_use_the_zeroed_bounding_box() {
        let a = img(10, 10, |r, c, _| (r + c) as f32 / 20.0);
        let mut b = a.clone();
        b[[0, 0, 0]] = 1.0; // outside the mask: must not matter
        let mut m = Mask::from_elem((10, 10), false);
        for r in 3..7 {
            for c in 2..5 {
                m[[r, c]] = true;
            }
        }
        m[[3, 2]] = false;
        assert_eq!(bounding_box(&m), Some((3, 7, 2, 5)));
        let crop = masked_crop(&a, &m).unwrap();
        assert_eq!(crop.dim(), (4, 3, 3));
        assert_eq!(crop[[0, 0, 1]], 0.0);
        let pm = pixel_metrics(&a, &b, Some(&m)).unwrap().unwrap();
        assert_eq!(pm.psnr, PSNR_CAP);
        assert!(pixel_metrics(&a, &b, Some(&Mask::from_elem((10, 10), false))).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn ssim_is_bounded_and_symmetric(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = img(12, 14, |_, _, _| rng.gen::<f32>());
            let b = img(12, 14, |r, c, k| a[[r, c, k]] * 0.5 + (r as f32) * 0.01 + (k as f32) * 0.1);
            let s1 = ssim(&a, &b).unwrap();
            let s2 = ssim(&b, &a).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s1));
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!(psnr(&a, &b).unwrap() >= 0.0);
        }
    }
}
