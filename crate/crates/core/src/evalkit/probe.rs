use nalgebra::{DMatrix, DVector};

use crate::error::{param, Error, Result};

/// Cross-validated R² of a ridge regression from `features` (rows are
/// samples) to `targets`. Features are standardized on each training fold,
/// so a probe sees directions of tiny variance as readily as large ones.
/// Folds are contiguous blocks of rows.
pub fn linear_probe_r2(features: &DMatrix<f64>, targets: &DVector<f64>, folds: usize, ridge: f64) -> Result<f64> {
    let (n, d) = features.shape();
    if targets.len() != n || folds < 2 || n < folds {
        return Err(param(format!("probe needs one target per row and at least {folds} rows")));
    }
    let mut predictions = DVector::<f64>::zeros(n);
    for f in 0..folds {
        let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
        let train: Vec<usize> = (0..n).filter(|&i| i < lo || i >= hi).collect();
        let mean = DVector::from_fn(d, |c, _| train.iter().map(|&i| features[(i, c)]).sum::<f64>() / train.len() as f64);
        let std = DVector::from_fn(d, |c, _| {
            let v = train.iter().map(|&i| (features[(i, c)] - mean[c]).powi(2)).sum::<f64>() / train.len() as f64;
            let s = v.sqrt();
            if s > 1e-12 { s } else { 1.0 }
        });
        let design = |rows: &[usize]| {
            DMatrix::from_fn(rows.len(), d + 1, |r, c| if c == d { 1.0 } else { (features[(rows[r], c)] - mean[c]) / std[c] })
        };
        let x = design(&train);
        let y = DVector::from_fn(train.len(), |r, _| targets[train[r]]);
        let mut gram = x.transpose() * &x;
        for c in 0..d {
            gram[(c, c)] += ridge;
        }
        let w = gram
            .cholesky()
            .ok_or_else(|| Error::Numerical("probe normal equations are not positive definite".into()))?
            .solve(&(x.transpose() * y));
        let test: Vec<usize> = (lo..hi).collect();
        let p = design(&test) * w;
        for (k, &i) in test.iter().enumerate() {
            predictions[i] = p[k];
        }
    }
    let mean = targets.mean();
    let sst: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    if sst <= 0.0 {
        return Err(param("probe targets are constant"));
    }
    let sse: f64 = targets.iter().zip(predictions.iter()).map(|(t, p)| (t - p).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_signal_is_recovered_and_noise_is_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 120;
        let x = DMatrix::from_fn(n, 6, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(n, |r, _| 3.0 * x[(r, 0)] - 0.001 * x[(r, 4)] + 5.0);
        assert!(linear_probe_r2(&x, &y, 5, 1e-6).unwrap() > 0.999);
        let noise = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        assert!(linear_probe_r2(&x, &noise, 5, 1e-6).unwrap() < 0.1);
        // tiny-scale features are standardized before the fit
        let tiny = &x * 1e-7;
        assert!(linear_probe_r2(&tiny, &y, 5, 1e-6).unwrap() > 0.999);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = DMatrix::from_element(4, 2, 1.0);
        assert!(linear_probe_r2(&x, &DVector::from_element(3, 1.0), 2, 1.0).is_err());
        assert!(linear_probe_r2(&x, &DVector::from_element(4, 1.0), 2, 1.0).is_err());
    }
}
