//! Sample moments with delete-one jackknife standard errors.

use serde::{Deserialize, Serialize};

/// Mean and variance of a sample, each with a jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub mean_se: f64,
    /// Unbiased sample variance.
    pub var: f64,
    pub var_se: f64,
}

/// Jackknife moments in O(n). Leave-one-out variances use the identity
/// `Σ_{j≠i} (x_j - m_(i))² = S - n d_i² / (n-1)` with `d_i = x_i - m`.
pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len();
    assert!(n >= 3, "jackknife moments need at least three samples");
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let var = ss / (nf - 1.0);

    // For the mean, the jackknife SE equals s / sqrt(n).
    let mean_se = (var / nf).sqrt();

    let loo = |d: f64| (ss - nf * d * d / (nf - 1.0)) / (nf - 2.0);
    let loo_mean = xs.iter().map(|x| loo(x - mean)).sum::<f64>() / nf;
    let spread: f64 = xs.iter().map(|x| (loo(x - mean) - loo_mean).powi(2)).sum();
    let var_se = ((nf - 1.0) / nf * spread).sqrt();

    Moments {
        n,
        mean,
        mean_se,
        var,
        var_se,
    }
}

/// `mean((x - reference)²)` and its jackknife standard error.
pub fn mean_squared_error(xs: &[f64], reference: f64) -> (f64, f64) {
    let sq: Vec<f64> = xs.iter().map(|x| (x - reference).powi(2)).collect();
    let m = moments(&sq);
    (m.mean, m.mean_se)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(n²) jackknife, the definition.
    fn brute_var_se(xs: &[f64]) -> f64 {
        let n = xs.len();
        let thetas: Vec<f64> = (0..n)
            .map(|i| {
                let rest: Vec<f64> = xs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, &x)| x).collect();
                let m = rest.iter().sum::<f64>() / rest.len() as f64;
                rest.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (rest.len() - 1) as f64
            })
            .collect();
        let tbar = thetas.iter().sum::<f64>() / n as f64;
        ((n - 1) as f64 / n as f64 * thetas.iter().map(|t| (t - tbar).powi(2)).sum::<f64>()).sqrt()
    }

    #[test]
    fn closed_form_jackknife_matches_definition() {
        let xs: Vec<f64> = (0..57).map(|i| ((i * 37 % 23) as f64).sqrt() - (i as f64 * 0.1).sin()).collect();
        let m = moments(&xs);
        assert!((m.var_se - brute_var_se(&xs)).abs() < 1e-12);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((m.mean - mean).abs() < 1e-15);
    }

    #[test]
    fn mse_about_reference() {
        let (mse, se) = mean_squared_error(&[1.0, 2.0, 3.0, 4.0], 2.0);
        assert_eq!(mse, (1.0 + 0.0 + 1.0 + 4.0) / 4.0);
        assert!(se > 0.0);
    }
}
