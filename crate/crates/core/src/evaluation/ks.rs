use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, LogNormal};

use crate::error::{Error, Result};
use crate::graph_prior::LogNormalParams;

pub const KS_MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub mu_ln: f64,
    pub sigma_ln: f64,
}

/// Asymptotic Kolmogorov tail `P(K > lambda)`, first 100 series terms.
pub fn kolmogorov_p(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut s = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = (-2.0 * j * j * lambda * lambda).exp();
        s += if j as u64 % 2 == 1 { term } else { -term };
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in x.iter().enumerate() {
        let f = cdf(*v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

fn check_samples(samples: &[f64]) -> Result<()> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(Error::Validation(format!(
            "KS test needs at least {KS_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("log-normal samples must be positive, got {bad}")));
    }
    Ok(())
}

/// KS test against a fixed log-normal.
pub fn ks_against(samples: &[f64], params: LogNormalParams) -> Result<KsReport> {
    check_samples(samples)?;
    let sigma = params.sigma_ln.max(f64::MIN_POSITIVE);
    let dist = LogNormal::new(params.mu_ln, sigma).map_err(|e| Error::Domain(e.to_string()))?;
    let d = ks_statistic(samples, |x| dist.cdf(x));
    let n = samples.len();
    Ok(KsReport {
        n,
        statistic: d,
        p_value: kolmogorov_p((n as f64).sqrt() * d),
        mu_ln: params.mu_ln,
        sigma_ln: params.sigma_ln,
    })
}

/// Log-normal fitted by moments of the log-values (population std), then
/// tested with KS. The p-value ignores that parameters were estimated.
pub fn ks_lognormal(samples: &[f64]) -> Result<KsReport> {
    check_samples(samples)?;
    ks_against(samples, fit_lognormal(samples)?)
}

pub fn fit_lognormal(samples: &[f64]) -> Result<LogNormalParams> {
    check_samples(samples)?;
    let logs: Vec<f64> = samples.iter().map(|v| v.ln()).collect();
    let n = logs.len() as f64;
    let mu = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / n;
    Ok(LogNormalParams {
        mu_ln: mu,
        sigma_ln: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Distribution;

    #[test]
    fn kolmogorov_tail_values() {
        // Standard critical values of the Kolmogorov distribution.
        assert!((kolmogorov_p(1.358_1) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_p(1.627_6) - 0.01).abs() < 1e-3);
        assert_eq!(kolmogorov_p(0.0), 1.0);
        assert!(kolmogorov_p(5.0) < 1e-20);
    }

    #[test]
    fn statistic_of_perfect_grid() {
        // Points at (i - 0.5)/n under U(0,1): D = 1/(2n).
        let n = 50;
        let s: Vec<f64> = (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect();
        let d = ks_statistic(&s, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.01).abs() < 1e-12);
    }

    #[test]
    fn lognormal_draws_pass() {
        let mut pass = 0;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dist = rand_distr::LogNormal::new(1.2, 0.4).unwrap();
            let s: Vec<f64> = (0..200).map(|_| dist.sample(&mut rng)).collect();
            if ks_lognormal(&s).unwrap().p_value > 0.05 {
                pass += 1;
            }
        }
        assert!(pass >= 45, "{pass}/50");
    }

    #[test]
    fn shifted_uniform_fails_against_heavy_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let heavy = rand_distr::LogNormal::new(0.5, 1.5).unwrap();
        let target: Vec<f64> = (0..200).map(|_| heavy.sample(&mut rng)).collect();
        let fit = fit_lognormal(&target).unwrap();
        let s: Vec<f64> = (0..200).map(|_| 1.0 + rng.random::<f64>()).collect();
        assert!(ks_against(&s, fit).unwrap().p_value < 0.05);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(ks_lognormal(&[1.0; 10]), Err(Error::Validation(_))));
        let mut s = vec![1.0; 30];
        s[4] = 0.0;
        assert!(matches!(ks_lognormal(&s), Err(Error::Domain(_))));
    }
}
