//! Shared test oracles, independent of the library's integration and filter
//! code paths: closed forms for the pure-removal (linear-death) process, a
//! hand-rolled augmented Kalman filter, a deterministic quadrature filter and
//! small statistical test helpers.

#![allow(dead_code)]

/// Closed-form one-interval transition of the pure-removal model restarted at
/// removal count `a`: mean `eta(a)`, slope `g = exp(-gamma delta)` and process
/// variance `q(a)` of the LNA (exact for linear hazards).
pub struct DeathTransition {
    pub g: f64,
    pub c: f64,
    pub i0: f64,
    pub decay: f64,
}

impl DeathTransition {
    pub fn new(i0: f64, gamma: f64, delta: f64) -> Self {
        let decay = (-gamma * delta).exp();
        DeathTransition { g: decay, c: i0 * (1.0 - decay), i0, decay }
    }

    /// Mean of the next removal count given the current one.
    pub fn mean(&self, a: f64) -> f64 {
        self.g * a + self.c
    }

    /// Process variance of the restarted transition (zero once `a >= i0`,
    /// where the hazard clamps to zero and the state freezes).
    pub fn var(&self, a: f64) -> f64 {
        ((self.i0 - a) * self.decay * (1.0 - self.decay)).max(0.0)
    }
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

/// Textbook Kalman filter on the augmented state `(n, dn)` for the
/// pure-removal model with gaussian observations `y = dn + eps`,
/// `eps ~ N(0, sigma2)`. This is the exact likelihood of the
/// Gaussian-projected state-space model (process noise evaluated at the
/// filtered mean), coded with scalar algebra only.
pub fn death_kalman_loglik(i0: f64, gamma: f64, delta: f64, sigma2: f64, y: &[f64]) -> f64 {
    let tr = DeathTransition::new(i0, gamma, delta);
    // Filtered mean and variance of n_t (the removal count).
    let mut a = 0.0f64;
    let mut c = 0.0f64;
    let mut loglik = 0.0;
    for &obs in y {
        let q = tr.var(a);
        // Joint prediction of (n_{t+1}, dn_{t+1}) given y_{1:t}:
        // n_{t+1}  = g n_t + cst + w
        // dn_{t+1} = (g-1) n_t + cst + w
        let m_n = tr.mean(a);
        let m_dn = m_n - a;
        let var_n = tr.g * tr.g * c + q;
        let var_dn = (tr.g - 1.0) * (tr.g - 1.0) * c + q;
        let cov_n_dn = tr.g * (tr.g - 1.0) * c + q;
        // Observation on dn.
        let s = var_dn + sigma2;
        loglik += ln_normal(obs, m_dn, s);
        let k_n = cov_n_dn / s;
        a = m_n + k_n * (obs - m_dn);
        c = (var_n - k_n * cov_n_dn).max(0.0);
    }
    loglik
}

/// Deterministic quadrature filter for the exact model the particle filter
/// targets on the pure-removal case: scalar state `x` (removal count),
/// transition `N(eta(x), q(x))` for `x < i0` and a frozen point mass for
/// `x >= i0`, observation `y ~ N(x' - x, sigma2)`. The grid covers spill-over
/// above `i0`; the returned value is the exact log-likelihood up to quadrature
/// error.
pub fn death_grid_loglik(
    i0: f64,
    gamma: f64,
    delta: f64,
    sigma2: f64,
    y: &[f64],
    n_grid: usize,
) -> f64 {
    let tr = DeathTransition::new(i0, gamma, delta);
    let lo = -25.0;
    let hi = i0 + 30.0;
    let h = (hi - lo) / n_grid as f64;
    // Midpoint grid, offset so no point sits exactly on i0.
    let xs: Vec<f64> = (0..n_grid).map(|j| lo + (j as f64 + 0.5) * h).collect();

    let mut loglik = 0.0;
    // After the first step the state is a density on the grid; the first step
    // starts from the point mass at x = 0.
    let mut density: Vec<f64> = {
        let q0 = tr.var(0.0);
        let m0 = tr.mean(0.0);
        let w: Vec<f64> = xs
            .iter()
            .map(|&xp| (ln_normal(xp, m0, q0) + ln_normal(y[0], xp, sigma2)).exp())
            .collect();
        let norm: f64 = w.iter().sum::<f64>() * h;
        loglik += norm.ln();
        w.iter().map(|v| v / norm).collect()
    };

    for &obs in &y[1..] {
        let mut next = vec![0.0f64; n_grid];
        for (j, &x) in xs.iter().enumerate() {
            let mass = density[j];
            if mass == 0.0 {
                continue;
            }
            if x >= i0 {
                // Frozen source: the delta kernel maps the density through
                // pointwise, weighted by the observation density at dn = 0.
                next[j] += mass * ln_normal(obs, 0.0, sigma2).exp();
            } else {
                let m = tr.mean(x);
                let q = tr.var(x);
                let sd = q.sqrt();
                // Only grid points within 10 sd contribute.
                let jlo = (((m - 10.0 * sd) - lo) / h).floor().max(0.0) as usize;
                let jhi = ((((m + 10.0 * sd) - lo) / h).ceil() as usize).min(n_grid);
                for jp in jlo..jhi {
                    let xp = xs[jp];
                    let k = (ln_normal(xp, m, q) + ln_normal(obs, xp - x, sigma2)).exp();
                    // Midpoint rule over the source coordinate.
                    next[jp] += mass * h * k;
                }
            }
        }
        let norm: f64 = next.iter().sum::<f64>() * h;
        loglik += norm.ln();
        density = next.iter().map(|v| v / norm).collect();
    }
    loglik
}

/// Two-sided Kolmogorov-Smirnov p-value (asymptotic) for statistic `d` with
/// effective sample size `n_eff`.
pub fn ks_pvalue(d: f64, n_eff: f64) -> f64 {
    let lambda = (n_eff.sqrt() + 0.12 + 0.11 / n_eff.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        p += 2.0 * (-1.0f64).powi(k + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

/// One-sample KS test against a supplied CDF.
pub fn ks_test_cdf<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> (f64, f64) {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let c = cdf(*x);
        d = d.max((c - i as f64 / n).abs()).max(((i as f64 + 1.0) / n - c).abs());
    }
    (d, ks_pvalue(d, n))
}

/// Two-sample KS test.
pub fn ks_test_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len(), sb.len());
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let xa = sa[i];
        let xb = sb[j];
        if xa <= xb {
            i += 1;
        }
        if xb <= xa {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let n_eff = (na * nb) as f64 / (na + nb) as f64;
    (d, ks_pvalue(d, n_eff))
}

/// Standard normal CDF for KS checks.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Mean and standard error of the mean.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
