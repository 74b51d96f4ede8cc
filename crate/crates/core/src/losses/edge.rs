use tch::Tensor;

use crate::error::{param, Result};

/// Smoothing for magnitudes, `√(v² + ε) − √ε`.
const EPS: f64 = 1e-6;
const CANNY_LOW: f64 = 0.1;
const CANNY_HIGH: f64 = 0.2;
const CANNY_TEMPERATURE: f64 = 0.02;
/// Sharpness of the direction softmax.
const DIRECTION_SHARPNESS: f64 = 4.0;

/// Non-negative single-channel maps, each `(B, 1, H, W)`.
#[derive(Debug)]
pub struct EdgeMaps {
    pub sobel: Tensor,
    pub laplacian: Tensor,
    pub canny: Tensor,
}

/// ITU-R 601 luma.
pub fn grayscale(x: &Tensor) -> Tensor {
    let w = Tensor::from_slice(&[0.299, 0.587, 0.114]).to_kind(x.kind()).view([1, 3, 1, 1]);
    (x * w).sum_dim_intlist([1i64].as_slice(), true, None)
}

fn kernel(values: &[f64], k: i64, like: &Tensor) -> Tensor {
    Tensor::from_slice(values).to_kind(like.kind()).view([1, 1, k, k])
}

/// Correlation with a square kernel under replicate padding.
pub fn filter(g: &Tensor, values: &[f64], k: i64) -> Tensor {
    let r = k / 2;
    let padded = g.replication_pad2d([r, r, r, r]);
    padded.conv2d(&kernel(values, k, g), None::<Tensor>, [1i64, 1], [0i64, 0], [1i64, 1], 1)
}

pub const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
pub const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
pub const LAPLACIAN: [f64; 9] = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];

fn gaussian5() -> Vec<f64> {
    let g: Vec<f64> = (-2..=2).map(|i: i32| (-(i * i) as f64 / 2.0).exp()).collect();
    let s: f64 = g.iter().sum();
    let mut out = Vec::with_capacity(25);
    for a in &g {
        for b in &g {
            out.push(a * b / (s * s));
        }
    }
    out
}

fn smooth_abs(v: &Tensor) -> Tensor {
    (v.square() + EPS).sqrt() - EPS.sqrt()
}

/// Neighbor at offset `(dx, dy)` under replicate padding.
fn shifted(m: &Tensor, dx: i64, dy: i64) -> Tensor {
    let s = m.size();
    m.replication_pad2d([1, 1, 1, 1]).narrow(2, 1 + dy, s[2]).narrow(3, 1 + dx, s[3])
}

/// Differentiable Canny: Gaussian blur, Sobel, non-maximum suppression
/// softened by a softmax over the four quantized gradient directions, and a
/// sigmoid double threshold scaled by the thinned magnitude.
fn soft_canny(g: &Tensor) -> Tensor {
    let blurred = filter(g, &gaussian5(), 5);
    let gx = filter(&blurred, &SOBEL_X, 3);
    let gy = filter(&blurred, &SOBEL_Y, 3);
    let sq = gx.square() + gy.square();
    // a unit step has Sobel magnitude 4
    let mag = ((&sq + EPS).sqrt() - EPS.sqrt()) / 4.0;
    let cos2 = (gx.square() - gy.square()) / (&sq + EPS);
    let sin2 = (&gx * &gy * 2.0) / (&sq + EPS);
    let scores = Tensor::cat(&[&cos2, &sin2, &(-&cos2), &(-&sin2)], 1) * DIRECTION_SHARPNESS;
    let weights = scores.softmax(1, None);
    // gradient directions 0°, 45°, 90°, 135° (image y points down)
    let offsets = [(1, 0), (1, 1), (0, 1), (-1, 1)];
    let mut nms = mag.zeros_like();
    for (k, (dx, dy)) in offsets.iter().enumerate() {
        let n = shifted(&mag, *dx, *dy).maximum(&shifted(&mag, -dx, -dy));
        let keep = ((&mag - n) / CANNY_TEMPERATURE).sigmoid();
        nms = nms + weights.narrow(1, k as i64, 1) * keep;
    }
    let thin = &mag * nms;
    let strength = ((&thin - CANNY_LOW) / CANNY_TEMPERATURE).sigmoid() * 0.5 + ((&thin - CANNY_HIGH) / CANNY_TEMPERATURE).sigmoid() * 0.5;
    thin * strength
}

pub fn edge_maps(image: &Tensor) -> EdgeMaps {
    let g = grayscale(image);
    let gx = filter(&g, &SOBEL_X, 3);
    let gy = filter(&g, &SOBEL_Y, 3);
    let sobel = (gx.square() + gy.square() + EPS).sqrt() - EPS.sqrt();
    let laplacian = smooth_abs(&filter(&g, &LAPLACIAN, 3));
    let canny = soft_canny(&g);
    EdgeMaps { sobel, laplacian, canny }
}

/// Per-operator mean absolute difference of the edge maps, summed.
pub fn edge_loss(x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
    if x.size() != x_hat.size() {
        return Err(param(format!("edge loss shapes differ: {:?} vs {:?}", x.size(), x_hat.size())));
    }
    let (a, b) = (edge_maps(&x.detach()), edge_maps(x_hat));
    Ok((a.sobel - b.sobel).abs().mean(None) + (a.laplacian - b.laplacian).abs().mean(None) + (a.canny - b.canny).abs().mean(None))
}

/// Per-operator terms, for reporting and gradient checks.
pub fn edge_terms(x: &Tensor, x_hat: &Tensor) -> [Tensor; 3] {
    let (a, b) = (edge_maps(x), edge_maps(x_hat));
    [(a.sobel - b.sobel).abs().mean(None), (a.laplacian - b.laplacian).abs().mean(None), (a.canny - b.canny).abs().mean(None)]
}


#[cfg(test)]
mod tests {
    use super::*;
    use tch::{Device, Kind};

    fn constant(v: f64) -> Tensor {
        Tensor::full([1, 3, 12, 12], v, (Kind::Double, Device::Cpu))
    }

    fn step(h: f64) -> Tensor {
        let col = Tensor::arange(12, (Kind::Double, Device::Cpu)).ge(6).to_kind(Kind::Double) * h;
        col.view([1, 1, 1, 12]).expand([1, 3, 12, 12], false).contiguous()
    }

    #[test]
    fn constant_images_have_no_edges() {
        let m = edge_maps(&constant(0.4));
        for t in [&m.sobel, &m.laplacian, &m.canny] {
            assert!(t.abs().max().double_value(&[]) < 1e-12);
        }
    }

    #[test]
    fn sobel_matches_direct_convolution() {
        let h = 0.7;
        let img = step(h);
        let m = edge_maps(&img);
        let g: Vec<f64> = (0..12).map(|c| if c >= 6 { h } else { 0.0 }).collect();
        for row in 0..12usize {
            for col in 0..12usize {
                let px = |r: i64, c: i64| g[c.clamp(0, 11) as usize] + 0.0 * r as f64;
                let mut gx = 0.0;
                let mut gy = 0.0;
                for i in 0..3i64 {
                    for j in 0..3i64 {
                        let v = px(row as i64 + i - 1, col as i64 + j - 1);
                        gx += SOBEL_X[(i * 3 + j) as usize] * v;
                        gy += SOBEL_Y[(i * 3 + j) as usize] * v;
                    }
                }
                let expected = (gx * gx + gy * gy + EPS).sqrt() - EPS.sqrt();
                let got = m.sobel.double_value(&[0, 0, row as i64, col as i64]);
                assert!((got - expected).abs() < 1e-9);
            }
        }
        let peak = m.sobel.max().double_value(&[]);
        assert!((peak - 4.0 * h).abs() < 1e-3);
    }

    #[test]
    fn laplacian_vanishes_on_a_ramp_interior() {
        let ramp = (Tensor::arange(12, (Kind::Double, Device::Cpu)) / 12.0).view([1, 1, 1, 12]).expand([1, 3, 12, 12], false).contiguous();
        let lap = edge_maps(&ramp).laplacian;
        assert!(lap.narrow(3, 1, 10).abs().max().double_value(&[]) < 1e-9);
    }

    #[test]
    fn edge_loss_is_symmetric_and_positive() {
        let (a, b) = (constant(0.5), step(0.5) + 0.25);
        assert_eq!(edge_loss(&a, &a).unwrap().double_value(&[]), 0.0);
        let ab = edge_loss(&a, &b).unwrap().double_value(&[]);
        let ba = edge_loss(&b, &a).unwrap().double_value(&[]);
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-15);
        let canny = edge_maps(&step(1.0)).canny;
        // blurred unit step: thinned magnitude ~0.32 at the edge
        assert!(canny.max().double_value(&[]) > 0.25);
        assert!(canny.narrow(3, 0, 3).max().double_value(&[]) < 1e-3);
        assert!(canny.min().double_value(&[]) >= 0.0);
    }
}
