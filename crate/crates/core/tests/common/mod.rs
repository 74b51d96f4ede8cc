//! Finite-difference gradient checking shared by the integration targets.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tch::{nn, Kind, Tensor};

pub const STEP: f64 = 1e-5;
/// One-sided slopes differ by `h·f''` on smooth stretches, so the gap at
/// `STEP` minus twice the gap at `STEP / 2` is O(STEP³) there; a kink leaves
/// its slope jump. Residuals above this (relative) mark one.
pub const KINK: f64 = 1e-3;
/// Central differences at `STEP` and `STEP / 2` agree to O(STEP²) on smooth
/// stretches; a larger gap (relative) means a kink inside the stencil.
pub const STENCIL: f64 = 1e-4;

/// Uniform f64 tensor on `[lo, hi)`.
pub fn uniform(rng: &mut ChaCha8Rng, shape: &[i64], lo: f64, hi: f64) -> Tensor {
    let n: i64 = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_slice(&v).view(shape)
}

/// Worst relative error between analytic and central-difference
/// derivatives over `count` entries of `param`, and how many drawn entries
/// were replaced because the loss has a kink there. NaN when no smooth
/// entry turned up.
///
/// The first entry is the largest-gradient element of a random slice of 64,
/// later ones are uniform. A kink shows as a slope jump that survives the
/// curvature correction, or as central differences that change with the
/// step when kinks sit on both sides. Neither depends on the analytic value, so the filter cannot
/// hide a wrong gradient.
pub fn fd_check(param: &Tensor, count: usize, rng: &mut ChaCha8Rng, loss: &dyn Fn() -> f64, grad: &Tensor) -> (f64, usize) {
    let flat = param.view([-1]);
    let g = grad.view([-1]);
    let n = flat.size()[0];
    let (mut worst, mut done, mut kinks): (f64, usize, usize) = (0.0, 0, 0);
    let mid = loss();
    while done < count && kinks < 10 * count {
        let start = rng.gen_range(0..n);
        let len = 64.min(n - start);
        let i = if done == 0 && kinks == 0 {
            start + g.narrow(0, start, len).abs().argmax(0, false).int64_value(&[])
        } else {
            start
        };
        let analytic = g.double_value(&[i]);
        let orig = flat.double_value(&[i]);
        let set = |v: f64| {
            let _ = tch::no_grad(|| flat.get(i).fill_(v));
        };
        set(orig + STEP);
        let up = loss();
        set(orig - STEP);
        let down = loss();
        set(orig + STEP / 2.0);
        let up_half = loss();
        set(orig - STEP / 2.0);
        let down_half = loss();
        set(orig);
        let gap = (up - mid) / STEP - (mid - down) / STEP;
        let gap_half = (up_half - mid) / (STEP / 2.0) - (mid - down_half) / (STEP / 2.0);
        let numeric = (up - down) / (2.0 * STEP);
        let numeric_half = (up_half - down_half) / STEP;
        let scale = analytic.abs().max(numeric.abs());
        if scale <= 1e-10 {
            done += 1;
            continue;
        }
        if (gap - 2.0 * gap_half).abs() / scale > KINK || (numeric - numeric_half).abs() / scale > STENCIL {
            kinks += 1;
            continue;
        }
        worst = worst.max((analytic - numeric).abs() / scale);
        done += 1;
    }
    if done < count {
        worst = f64::NAN;
    }
    (worst, kinks)
}

/// Outcome of checking one block.
#[derive(Debug, Default)]
pub struct BlockCheck {
    pub worst: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Checks `sum(f(inputs) · R)` for a fixed random `R` against finite
/// differences, over every input and every variable of `vs` (f64).
pub fn check_block(vs: &nn::VarStore, inputs: &[Tensor], rng: &mut ChaCha8Rng, f: &dyn Fn(&[Tensor]) -> Tensor) -> BlockCheck {
    let out = f(inputs);
    let r = uniform(rng, &out.size(), -1.0, 1.0);
    let loss = || tch::no_grad(|| (f(inputs) * &r).sum(Kind::Double).double_value(&[]));
    (out * &r).sum(Kind::Double).backward();
    let mut vars: Vec<(String, Tensor)> = vs.variables().into_iter().filter(|(_, t)| t.requires_grad()).collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    let mut res = BlockCheck::default();
    let targets = inputs
        .iter()
        // an input the block ignores has no gradient
        .filter(|t| t.requires_grad() && t.grad().defined())
        .map(|t| ("input", t, 3))
        .chain(vars.iter().map(|(n, t)| (n.as_str(), t, 1)));
    for (name, t, count) in targets {
        let g = t.grad();
        assert!(g.defined(), "{name} received no gradient");
        match fd_check(t, count, rng, &loss, &g).0 {
            e if e.is_nan() => res.skipped += 1,
            e => {
                res.worst = res.worst.max(e);
                res.checked += 1;
            }
        }
    }
    res
}
