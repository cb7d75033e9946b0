//! Peaks-over-threshold tail model.
//!
//! Exceedances `Y = S - u` over a high empirical quantile `u` are modelled as
//! Generalized Pareto with shape `xi` and scale `beta`, giving
//! `P(S > s) ~ p_u (1 + xi (s - u) / beta)^(-1/xi)` for `s >= u`.
//!
//! Maximum likelihood uses the profile along `theta = xi / beta`: for fixed
//! `theta` the optimal shape is `xi(theta) = mean(ln(1 + theta y))`, which
//! is strictly increasing in `theta`. Inverting that map lets the search run
//! directly over `xi` in a fixed bracket, with `beta = xi / theta(xi)` and
//! profile log-likelihood `-n_u (ln beta + 1 + xi)`.

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_QUANTILE: f64 = 0.97;
pub const MIN_NULL_SAMPLES: usize = 1000;
pub const MIN_EXCEEDANCES: usize = 30;
/// Below this `|xi|` the exponential (log-linear) form is used.
pub const XI_ZERO_TOL: f64 = 1e-6;
pub const XI_BRACKET: (f64, f64) = (-0.5, 1.0);

const GRID_STEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GpdFit {
    pub u: f64,
    pub xi: f64,
    pub beta: f64,
    pub p_hat_u: f64,
    pub n: usize,
    pub n_u: usize,
}

impl GpdFit {
    /// Modelled `P(S > s)` for `s >= u`.
    pub fn survival(&self, s: f64) -> f64 {
        let y = (s - self.u).max(0.0);
        if self.xi.abs() < XI_ZERO_TOL {
            self.p_hat_u * (-y / self.beta).exp()
        } else {
            let base = 1.0 + self.xi * y / self.beta;
            if base <= 0.0 {
                0.0
            } else {
                self.p_hat_u * base.powf(-1.0 / self.xi)
            }
        }
    }
}

fn mean_log1p(y: &[f64], theta: f64) -> f64 {
    y.iter().map(|&v| (theta * v).ln_1p()).sum::<f64>() / y.len() as f64
}

/// `theta` with `mean(ln(1 + theta y)) = xi`, by bisection.
fn theta_for_xi(y: &[f64], y_max: f64, xi: f64) -> f64 {
    let (mut lo, mut hi) = if xi > 0.0 {
        let mut hi = 1.0 / y_max;
        while mean_log1p(y, hi) < xi {
            hi *= 2.0;
        }
        (0.0, hi)
    } else {
        (-1.0 / y_max, 0.0)
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        // the lower end for xi < 0 sits on a pole where ln_1p(-1) = -inf
        if mean_log1p(y, mid) < xi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `(beta, log-likelihood)` on the profile curve at shape `xi`.
fn profile(y: &[f64], y_max: f64, mean: f64, xi: f64) -> (f64, f64) {
    let n = y.len() as f64;
    if xi == 0.0 {
        return (mean, -n * (mean.ln() + 1.0));
    }
    let theta = theta_for_xi(y, y_max, xi);
    let beta = xi / theta;
    if !(beta > 0.0 && beta.is_finite()) {
        return (f64::NAN, f64::NEG_INFINITY);
    }
    (beta, -n * (beta.ln() + 1.0 + xi))
}

/// Maximum-likelihood GPD fit to exceedances (all strictly positive).
pub fn fit_exceedances(y: &[f64]) -> Result<(f64, f64)> {
    if y.is_empty() || y.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Calibration("exceedances must be positive and finite".into()));
    }
    let y_max = y.iter().cloned().fold(0.0, f64::max);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ll = |xi: f64| profile(y, y_max, mean, xi).1;

    let (lo, hi) = XI_BRACKET;
    let steps = ((hi - lo) / GRID_STEP).round() as usize;
    let mut best_xi = lo;
    let mut best_ll = f64::NEG_INFINITY;
    for i in 0..=steps {
        let xi = lo + i as f64 * GRID_STEP;
        let xi = if xi.abs() < 1e-12 { 0.0 } else { xi };
        let v = ll(xi);
        if v > best_ll {
            best_ll = v;
            best_xi = xi;
        }
    }

    // golden-section refinement inside the neighbouring grid cells
    let mut a = (best_xi - GRID_STEP).max(lo);
    let mut b = (best_xi + GRID_STEP).min(hi);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (ll(c), ll(d));
    for _ in 0..60 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = ll(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = ll(d);
        }
    }
    let refined = 0.5 * (a + b);
    let xi = if ll(refined) >= best_ll { refined } else { best_xi };
    let (beta, _) = profile(y, y_max, mean, xi);
    Ok((xi, beta))
}

/// Fits the tail of `null_scores` above their empirical `quantile_q`.
///
/// `u` is the order statistic of rank `ceil(q n)`; exceedances are the
/// scores strictly above it.
pub fn fit_tail(null_scores: &[f64], quantile_q: f64) -> Result<GpdFit> {
    if !(0.95..=0.99).contains(&quantile_q) {
        return Err(Error::Parameter(format!(
            "tail quantile must lie in [0.95, 0.99], got {quantile_q}"
        )));
    }
    let n = null_scores.len();
    if n < MIN_NULL_SAMPLES {
        return Err(Error::Parameter(format!(
            "tail calibration needs at least {MIN_NULL_SAMPLES} null scores, got {n}"
        )));
    }
    if null_scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("null scores must be finite".into()));
    }
    let mut sorted = null_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((quantile_q * n as f64).ceil() as usize).clamp(1, n);
    let u = sorted[rank - 1];
    let exceedances: Vec<f64> = sorted.iter().filter(|&&s| s > u).map(|&s| s - u).collect();
    let n_u = exceedances.len();
    if n_u < MIN_EXCEEDANCES {
        return Err(Error::Calibration(format!(
            "only {n_u} scores exceed the {quantile_q} quantile (need {MIN_EXCEEDANCES}); \
             collect more null samples or lower the quantile"
        )));
    }
    let (xi, beta) = fit_exceedances(&exceedances)?;
    Ok(GpdFit {
        u,
        xi,
        beta,
        p_hat_u: n_u as f64 / n as f64,
        n,
        n_u,
    })
}

/// Threshold with modelled tail probability `alpha`.
///
/// `u + (beta/xi) ((p_u/alpha)^xi - 1)`, or `u + beta ln(p_u/alpha)` when
/// `|xi| < XI_ZERO_TOL`. `alpha = p_u` returns `u`; larger `alpha` is
/// outside the tail model and rejected.
pub fn solve_threshold(fit: &GpdFit, alpha: f64) -> Result<f64> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
    }
    if alpha > fit.p_hat_u {
        return Err(Error::Parameter(format!(
            "alpha {alpha} exceeds the empirical tail probability {}; no extrapolation needed",
            fit.p_hat_u
        )));
    }
    if fit.beta.is_nan() || fit.beta <= 0.0 {
        return Err(Error::Parameter(format!("scale must be positive, got {}", fit.beta)));
    }
    let ratio = fit.p_hat_u / alpha;
    Ok(if fit.xi.abs() < XI_ZERO_TOL {
        fit.u + fit.beta * ratio.ln()
    } else {
        fit.u + fit.beta / fit.xi * (ratio.powf(fit.xi) - 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp};

    fn fit(u: f64, xi: f64, beta: f64, p: f64) -> GpdFit {
        GpdFit { u, xi, beta, p_hat_u: p, n: 10_000, n_u: (p * 10_000.0) as usize }
    }

    #[test]
    fn exponential_branch_value() {
        let tau = solve_threshold(&fit(0.001, 0.0, 0.0005, 0.01), 1e-6).unwrap();
        // 0.001 + 0.0005 ln(1e4)
        assert!((tau - 0.005_605_170_185_988_091).abs() < 1e-15, "{tau}");
    }

    #[test]
    fn continuity_near_zero_shape() {
        let a = solve_threshold(&fit(0.001, 0.0, 0.0005, 0.01), 1e-6).unwrap();
        let b = solve_threshold(&fit(0.001, 1e-8, 0.0005, 0.01), 1e-6).unwrap();
        let c = solve_threshold(&fit(0.001, 2e-6, 0.0005, 0.01), 1e-6).unwrap();
        assert!(((a - b) / a).abs() < 1e-6);
        // second-order term beta xi ln(p/alpha)^2 / 2
        let bound = 0.0005 * 2e-6 * 1e4f64.ln().powi(2);
        assert!((c - a) > 0.0 && (c - a) < bound);
    }

    #[test]
    fn boundary_and_errors() {
        let f = fit(0.25, 0.0, 0.1, 0.03);
        assert_eq!(solve_threshold(&f, 0.03).unwrap(), 0.25);
        assert!(matches!(solve_threshold(&f, 0.05), Err(Error::Parameter(_))));
        assert!(matches!(solve_threshold(&f, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn monotonicity() {
        let alphas = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7];
        for xi in [-0.3, 0.0, 0.2, 0.7] {
            let taus: Vec<f64> = alphas
                .iter()
                .map(|&a| solve_threshold(&fit(0.1, xi, 0.02, 0.03), a).unwrap())
                .collect();
            assert!(taus.windows(2).all(|w| w[1] > w[0]), "xi={xi}: {taus:?}");
        }
        for xi in [0.0, 0.2, 0.7] {
            let taus: Vec<f64> = [0.01, 0.02, 0.03, 0.05]
                .iter()
                .map(|&p| solve_threshold(&fit(0.1, xi, 0.02, p), 1e-6).unwrap())
                .collect();
            assert!(taus.windows(2).all(|w| w[1] > w[0]), "xi={xi}: {taus:?}");
        }
    }

    #[test]
    fn survival_inverts_threshold() {
        for xi in [-0.2, 0.0, 0.4] {
            let f = fit(0.3, xi, 0.05, 0.03);
            let tau = solve_threshold(&f, 1e-5).unwrap();
            assert!((f.survival(tau) / 1e-5 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn exponential_null_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let exp = Exp::new(100.0).unwrap();
        let scores: Vec<f64> = (0..10_000).map(|_| exp.sample(&mut rng)).collect();
        let f = fit_tail(&scores, 0.97).unwrap();
        assert!(f.xi.abs() < 0.1, "xi {}", f.xi);
        assert!((f.beta - 0.01).abs() < 0.002, "beta {}", f.beta);
        assert_eq!(f.n, 10_000);
        assert_eq!(f.n_u, 300);
        assert!((f.p_hat_u - 0.03).abs() < 1e-12);
    }

    #[test]
    fn recovers_known_shapes() {
        // inverse-CDF GPD samples: y = beta/xi ((1-U)^-xi - 1)
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &(xi, beta) in &[(0.3, 2.0), (-0.25, 1.0)] {
            let y: Vec<f64> = (0..20_000)
                .map(|_| {
                    let u: f64 = rng.random();
                    beta / xi * ((1.0 - u).powf(-xi) - 1.0)
                })
                .filter(|&v| v > 0.0)
                .collect();
            let (xi_hat, beta_hat) = fit_exceedances(&y).unwrap();
            assert!((xi_hat - xi).abs() < 0.05, "xi {xi_hat} vs {xi}");
            assert!((beta_hat / beta - 1.0).abs() < 0.08, "beta {beta_hat} vs {beta}");
        }
    }

    #[test]
    fn degenerate_inputs() {
        let constant = vec![0.5; 5000];
        assert!(matches!(fit_tail(&constant, 0.97), Err(Error::Calibration(_))));
        assert!(matches!(fit_tail(&[0.1; 999], 0.97), Err(Error::Parameter(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ok: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        assert!(matches!(fit_tail(&ok, 0.5), Err(Error::Parameter(_))));
        let mut bad = ok.clone();
        bad[3] = f64::NAN;
        assert!(matches!(fit_tail(&bad, 0.97), Err(Error::Data(_))));
    }

    #[test]
    fn order_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let exp = Exp::new(10.0).unwrap();
        let scores: Vec<f64> = (0..4000).map(|_| exp.sample(&mut rng)).collect();
        let mut reversed = scores.clone();
        reversed.reverse();
        assert_eq!(fit_tail(&scores, 0.96).unwrap(), fit_tail(&reversed, 0.96).unwrap());
    }
}
