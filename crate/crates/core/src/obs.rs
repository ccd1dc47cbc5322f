//! Observation models linking latent incidence increments to noisy counts:
//! additive Gaussian noise, Binomial under-reporting and Negative Binomial
//! overdispersion. Provides exact log-densities for particle weighting and
//! first/second-moment Gaussian approximations for the analytic filter.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::stats::{ln_gamma, ln_normal_pdf};

/// Floor applied to means/variances so that degenerate reporting and slightly
/// negative latent increments keep the approximate observation variance positive.
pub const VAR_FLOOR: f64 = 1e-8;

/// Which event count an observation reports on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsTarget {
    /// New infections in a window (selects the first counting component).
    Infections,
    /// New removals in a window (selects the second counting component).
    Removals,
}

impl ObsTarget {
    pub fn index(self) -> usize {
        match self {
            ObsTarget::Infections => 0,
            ObsTarget::Removals => 1,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "infections" => Ok(ObsTarget::Infections),
            "removals" => Ok(ObsTarget::Removals),
            other => Err(Error::invalid(format!(
                "unknown observation target '{other}' (expected 'infections' or 'removals')"
            ))),
        }
    }
}

/// Distribution of an observed count given the latent increment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObsKind {
    /// y ~ N(m, sigma2) where m is the selected increment.
    Gaussian { sigma2: f64 },
    /// y ~ Bin(m, lambda), continuously relaxed in the trial count m.
    Binomial { lambda: f64 },
    /// y ~ NegBin with mean lambda*m and variance mu + phi*mu^2.
    NegBinomial { lambda: f64, phi: f64 },
}

/// Observation model: distribution plus the reported event type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsParams {
    pub kind: ObsKind,
    pub target: ObsTarget,
}

impl ObsParams {
    pub fn new(kind: ObsKind, target: ObsTarget) -> Result<Self> {
        let p = ObsParams { kind, target };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ObsKind::Gaussian { sigma2 } => {
                if !(sigma2 > 0.0) || !sigma2.is_finite() {
                    return Err(Error::invalid("gaussian observation variance must be positive"));
                }
            }
            ObsKind::Binomial { lambda } => {
                if !(lambda > 0.0 && lambda <= 1.0) {
                    return Err(Error::invalid("binomial reporting proportion must lie in (0, 1]"));
                }
            }
            ObsKind::NegBinomial { lambda, phi } => {
                if !(lambda > 0.0 && lambda <= 1.0) {
                    return Err(Error::invalid(
                        "negative binomial reporting proportion must lie in (0, 1]",
                    ));
                }
                if !(phi >= 0.0) || !phi.is_finite() {
                    return Err(Error::invalid("negative binomial overdispersion must be >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Reporting proportion, or 1 for the Gaussian model.
    pub fn scale(&self) -> f64 {
        match self.kind {
            ObsKind::Gaussian { .. } => 1.0,
            ObsKind::Binomial { lambda } | ObsKind::NegBinomial { lambda, .. } => lambda,
        }
    }

    /// Selected component of an increment vector.
    pub fn select(&self, delta_n: &DVector<f64>) -> f64 {
        delta_n[self.target.index()]
    }

    /// Log density of the observed count `y` given the latent increment.
    ///
    /// Binomial weights with fewer (real-valued) trials than successes are
    /// exactly zero (`-inf`), preserving the support constraint.
    pub fn logdensity(&self, y: f64, delta_n: &DVector<f64>) -> Result<f64> {
        self.validate()?;
        if delta_n.len() <= self.target.index() {
            return Err(Error::invalid("increment vector shorter than observation target index"));
        }
        let m = self.select(delta_n);
        match self.kind {
            ObsKind::Gaussian { sigma2 } => Ok(ln_normal_pdf(y, m, sigma2)),
            ObsKind::Binomial { lambda } => {
                if y < 0.0 {
                    return Err(Error::invalid("binomial observation must be a nonnegative count"));
                }
                if m < 0.0 || m < y {
                    return Ok(f64::NEG_INFINITY);
                }
                if lambda == 1.0 {
                    // Certain reporting: unit mass on y = m.
                    return Ok(if (m - y).abs() < 1e-9 { 0.0 } else { f64::NEG_INFINITY });
                }
                // Continuous relaxation of the Binomial pmf in the trial count:
                // exact at integer m, smooth in between.
                Ok(ln_gamma(m + 1.0) - ln_gamma(y + 1.0) - ln_gamma(m - y + 1.0)
                    + y * lambda.ln()
                    + (m - y) * (1.0 - lambda).ln())
            }
            ObsKind::NegBinomial { lambda, phi } => {
                if y < 0.0 {
                    return Err(Error::invalid(
                        "negative binomial observation must be a nonnegative count",
                    ));
                }
                let mu = lambda * m.max(VAR_FLOOR);
                if phi == 0.0 {
                    // Poisson limit.
                    return Ok(y * mu.ln() - mu - ln_gamma(y + 1.0));
                }
                let r = 1.0 / phi;
                let p = r / (r + mu);
                Ok(ln_gamma(y + r) - ln_gamma(r) - ln_gamma(y + 1.0)
                    + r * p.ln()
                    + y * (1.0 - p).ln())
            }
        }
    }

    /// First/second-moment Gaussian approximation used by the analytic filter:
    /// returns `(scale, variance)` such that y ≈ N(scale * m, scale^2 * Var(m) + variance),
    /// with the variance evaluated at the expected increment `delta_n_hat`.
    pub fn gaussian_approx(&self, delta_n_hat: &DVector<f64>) -> (f64, f64) {
        let m_hat = self.select(delta_n_hat);
        match self.kind {
            ObsKind::Gaussian { sigma2 } => (1.0, sigma2),
            ObsKind::Binomial { lambda } => {
                let v = lambda * (1.0 - lambda) * m_hat.max(VAR_FLOOR);
                (lambda, v.max(VAR_FLOOR))
            }
            ObsKind::NegBinomial { lambda, phi } => {
                let mu = lambda * m_hat.max(VAR_FLOOR);
                (lambda, (mu + phi * mu * mu).max(VAR_FLOOR))
            }
        }
    }
}
