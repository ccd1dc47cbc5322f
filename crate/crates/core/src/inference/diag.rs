//! Chain diagnostics: effective sample size, deviance information criterion
//! and reproduction numbers.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{CompartmentModel, Params};

/// Effective sample size estimate.
#[derive(Debug, Clone, Copy)]
pub struct Ess {
    pub value: f64,
    /// Set when the chain is constant (zero variance), in which case the
    /// value is reported as 0.
    pub degenerate: bool,
}

/// Effective sample size via the integrated autocorrelation time with
/// initial-positive-sequence truncation: autocorrelations are summed in pairs
/// while the pair sums stay positive, and `ESS = n / (1 + 2 sum rho_k)`.
pub fn ess(x: &[f64]) -> Result<Ess> {
    let n = x.len();
    if n < 10 {
        return Err(Error::invalid("effective sample size needs at least 10 draws"));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let c0 = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    if c0 == 0.0 || !c0.is_finite() {
        return Ok(Ess { value: 0.0, degenerate: true });
    }
    let acf = |k: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n - k {
            s += (x[i] - mean) * (x[i + k] - mean);
        }
        s / nf / c0
    };

    // Geyer pairs: Gamma_m = rho_{2m} + rho_{2m+1}, summed while positive.
    let mut sum_pairs = 0.0;
    let mut m = 0usize;
    loop {
        let k0 = 2 * m;
        let k1 = 2 * m + 1;
        if k1 >= n {
            break;
        }
        let gamma = acf(k0) + acf(k1);
        if gamma <= 0.0 {
            break;
        }
        sum_pairs += gamma;
        m += 1;
    }
    // iat = 2 * sum(Gamma) - 1 = 1 + 2 sum_{k>=1} rho_k under the truncation.
    let iat = (2.0 * sum_pairs - 1.0).max(1.0);
    Ok(Ess { value: nf / iat, degenerate: false })
}

/// Deviance information criterion from stored per-draw log-likelihoods:
///
/// ```text
/// DIC = -2 E[log lik] + p_D,   p_D = -2 E[log lik] + 2 log lik(theta_bar)
/// ```
///
/// where `theta_bar` is the posterior mean of the draws on the transformed
/// scale and `loglik_fn` evaluates the observed-data log-likelihood there.
pub fn dic<F>(draws: &[DVector<f64>], logliks: &[f64], loglik_fn: F) -> Result<(f64, f64)>
where
    F: FnOnce(&DVector<f64>) -> Result<f64>,
{
    if draws.is_empty() || draws.len() != logliks.len() {
        return Err(Error::invalid("DIC needs matching non-empty draws and log-likelihoods"));
    }
    let mean_ll = logliks.iter().sum::<f64>() / logliks.len() as f64;
    let dim = draws[0].len();
    let mut mean = DVector::zeros(dim);
    for d in draws {
        mean += d;
    }
    mean /= draws.len() as f64;
    let ll_at_mean = loglik_fn(&mean)?;
    let p_d = -2.0 * mean_ll + 2.0 * ll_at_mean;
    let dic = -2.0 * mean_ll + p_d;
    Ok((dic, p_d))
}

/// Basic reproduction number `npop * beta / gamma`. For time-varying-rate
/// models the rate is `exp(log_beta_t)` (defaults to the initial log rate).
pub fn r0(model: &CompartmentModel, params: &Params, log_beta_t: Option<f64>) -> Result<f64> {
    if !(params.gamma > 0.0) {
        return Err(Error::invalid("r0 requires gamma > 0"));
    }
    let beta = match log_beta_t {
        Some(lb) => lb.exp(),
        None if model.tv_beta => params.log_beta0.exp(),
        None => params.beta,
    };
    Ok(model.npop * beta / params.gamma)
}

/// Mean and (population) standard deviation.
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Empirical quantile by linear interpolation of the order statistics.
pub fn quantile(x: &[f64], q: f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    }
}
