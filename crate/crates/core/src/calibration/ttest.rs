use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: usize,
    pub mean_s: f64,
    pub mean_0: f64,
    pub pooled_std: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Pooled two-sample t statistic comparing watermarked scores `s_s` with
/// null scores `s_0`.
pub fn t_test(s_s: &[f64], s_0: &[f64]) -> Result<TTestResult> {
    let (n_s, n_0) = (s_s.len(), s_0.len());
    if n_s < 2 || n_0 < 2 {
        return Err(Error::Parameter(format!(
            "t-test needs at least 2 samples per side, got {n_s} and {n_0}"
        )));
    }
    if s_s.iter().chain(s_0).any(|v| !v.is_finite()) {
        return Err(Error::Data("t-test samples must be finite".into()));
    }
    let (mean_s, var_s) = mean_var(s_s);
    let (mean_0, var_0) = mean_var(s_0);
    let df = n_s + n_0 - 2;
    let pooled_var = ((n_s - 1) as f64 * var_s + (n_0 - 1) as f64 * var_0) / df as f64;
    if pooled_var <= 0.0 {
        return Err(Error::Data("both samples are constant; t statistic undefined".into()));
    }
    let pooled_std = pooled_var.sqrt();
    let t = (mean_s - mean_0) / (pooled_std * (1.0 / n_s as f64 + 1.0 / n_0 as f64).sqrt());
    Ok(TTestResult {
        t,
        df,
        mean_s,
        mean_0,
        pooled_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn hand_example() {
        let r = t_test(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        // pooled var (8 + 2) / 4 = 2.5, se = sqrt(2.5 * 2/3)
        assert!((r.t - 2.0 / (2.5f64 * 2.0 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(r.df, 4);
    }

    #[test]
    fn antisymmetric_and_zero_on_identical() {
        let a = [0.3, 0.1, 0.7, 0.2];
        let b = [0.05, 0.0, 0.02, 0.1, 0.04];
        let ab = t_test(&a, &b).unwrap().t;
        let ba = t_test(&b, &a).unwrap().t;
        assert!((ab + ba).abs() < 1e-12);
        assert_eq!(t_test(&a, &a).unwrap().t, 0.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(t_test(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::Data(_))));
        assert!(matches!(t_test(&[1.0], &[2.0, 3.0]), Err(Error::Parameter(_))));
    }

    #[test]
    fn null_rejection_rate() {
        let crit = StudentsT::new(0.0, 1.0, 18.0).unwrap().inverse_cdf(0.975);
        assert!((crit - 2.100_922).abs() < 1e-5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 20_000;
        let mut rejections = 0;
        for _ in 0..trials {
            let a: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut rng)).collect();
            if t_test(&a, &b).unwrap().t.abs() > crit {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / trials as f64;
        assert!((rate - 0.05).abs() < 0.01, "{rate}");
    }
}
